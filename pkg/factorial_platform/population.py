"""
Population - finite-population science tables of binary potential outcomes.

A table holds Y_i(j) for every unit i and treatment j. Every derived
quantity (P_j, S_j², S_{jj'}, unit effects, τ^FP, heterogeneity and the true
covariance of τ̂ under complete randomization) is available both as exact
rationals and as floats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .design import ContrastMatrix, FactorialDesign, build_contrast_matrix, describe_treatment
from .errors import DesignError, InfeasibleError, InputError
from .rng import PERMUTE_STREAM, make_generator

logger = logging.getLogger(__name__)

FEASIBLE_SEARCH_SPAN = 10000

Matrix = Tuple[Tuple[Fraction, ...], ...]


def _to_floats(matrix: Matrix) -> np.ndarray:
    return np.array([[float(value) for value in row] for row in matrix])


@dataclass(frozen=True, eq=False)
class PotentialOutcomesTable:
    """
    N×J binary science table.

    Example:
        table = construct_population(96, p, design)
        table.tau_fp          # equals the effects estimated from p
    """

    design: FactorialDesign
    Y: np.ndarray

    def __post_init__(self):
        Y = np.array(self.Y, dtype=np.int64, copy=True)
        if Y.ndim != 2 or Y.shape[1] != self.design.J:
            raise DesignError(
                f"A science table for a 2^{self.design.K} design needs {self.design.J} columns, "
                f"got shape {Y.shape}"
            )
        if Y.shape[0] < 2:
            raise DesignError(f"A science table needs at least 2 units, got {Y.shape[0]}")
        if not np.all((Y == 0) | (Y == 1)):
            raise InputError("Potential outcomes must be 0 or 1")
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self) -> int:
        return int(self.Y.shape[0])

    @property
    def J(self) -> int:
        return self.design.J

    @cached_property
    def contrasts(self) -> ContrastMatrix:
        return build_contrast_matrix(self.design)

    @cached_property
    def ones(self) -> np.ndarray:
        """Number of units with Y_i(j) = 1, per treatment."""
        return self.Y.sum(axis=0)

    # ---------- column marginals ----------

    @cached_property
    def P_exact(self) -> Tuple[Fraction, ...]:
        return tuple(Fraction(int(c), self.N) for c in self.ones)

    @property
    def P(self) -> np.ndarray:
        return self.ones / self.N

    @cached_property
    def S2_exact(self) -> Tuple[Fraction, ...]:
        """S_j² = N/(N-1) P_j(1-P_j)."""
        N = self.N
        return tuple(Fraction(int(c) * (N - int(c)), N * (N - 1)) for c in self.ones)

    @property
    def S2(self) -> np.ndarray:
        return np.array([float(v) for v in self.S2_exact])

    # ---------- cross-column quantities ----------

    @cached_property
    def covariance_matrix_exact(self) -> Matrix:
        """S_{jj'} = (N-1)^{-1} Σ_i (Y_i(j) - P_j)(Y_i(j') - P_{j'})."""
        N = self.N
        gram = self.Y.T @ self.Y
        ones = [int(c) for c in self.ones]
        return tuple(
            tuple(Fraction(N * int(gram[j, k]) - ones[j] * ones[k], N * (N - 1)) for k in range(self.J))
            for j in range(self.J)
        )

    @property
    def covariance_matrix(self) -> np.ndarray:
        return _to_floats(self.covariance_matrix_exact)

    @cached_property
    def difference_variances_exact(self) -> Matrix:
        """S²_{j-j'}, the variance of the unit-level differences Y_i(j) - Y_i(j')."""
        S = self.covariance_matrix_exact
        return tuple(
            tuple(S[j][j] + S[k][k] - 2 * S[j][k] for k in range(self.J)) for j in range(self.J)
        )

    @property
    def difference_variances(self) -> np.ndarray:
        return _to_floats(self.difference_variances_exact)

    # ---------- effects ----------

    @cached_property
    def _effect_sums(self) -> np.ndarray:
        """M = Y L, the integer numerators of the unit-level effect vectors."""
        return self.Y @ self.contrasts.as_int()

    @property
    def unit_effects(self) -> np.ndarray:
        """N×J matrix whose row i is (2τ_{i,0}, τ_{i,1}, ..., τ_{i,J-1})."""
        return self._effect_sums / 2 ** (self.design.K - 1)

    @cached_property
    def tau_fp_exact(self) -> Tuple[Fraction, ...]:
        """τ^FP = 2^{-(K-1)} Lᵀ P without the mean entry."""
        totals = self._effect_sums.sum(axis=0)
        scale = self.N * 2 ** (self.design.K - 1)
        return tuple(Fraction(int(total), scale) for total in totals[1:])

    @property
    def tau_fp(self) -> np.ndarray:
        return np.array([float(v) for v in self.tau_fp_exact])

    @cached_property
    def _effect_scatter(self) -> Matrix:
        """(N-1)^{-1} Σ_i (τ_i - τ̄)(τ_i - τ̄)ᵀ over all J entries, as rationals."""
        M = self._effect_sums.astype(object)
        totals = M.sum(axis=0)
        products = M.T @ M
        N = self.N
        denominator = N * (N - 1) * 4 ** (self.design.K - 1)
        return tuple(
            tuple(
                Fraction(N * products[a, b] - totals[a] * totals[b], denominator)
                for b in range(self.J)
            )
            for a in range(self.J)
        )

    @property
    def heterogeneity_exact(self) -> Tuple[Fraction, ...]:
        """S²_{τ_ℓ}, the finite-population variance of unit-level effect ℓ."""
        scatter = self._effect_scatter
        return tuple(scatter[l][l] for l in range(1, self.J))

    @property
    def heterogeneity(self) -> np.ndarray:
        return np.array([float(v) for v in self.heterogeneity_exact])

    def _check_counts(self, counts: Sequence[int]) -> Tuple[int, ...]:
        counts = tuple(int(c) for c in counts)
        if len(counts) != self.J:
            raise DesignError(f"Plan has {len(counts)} arms but the table has {self.J} treatments")
        if sum(counts) != self.N:
            raise DesignError(
                f"Plan allocates {sum(counts)} units but the table has N = {self.N}"
            )
        for j, count in enumerate(counts, start=1):
            if count < 1:
                raise DesignError(
                    f"Treatment {describe_treatment(self.design, j)} has no units in the plan"
                )
        return counts

    def true_covariance_exact(self, counts: Sequence[int]) -> Matrix:
        """
        Exact covariance of the J-1 effect estimates under complete randomization:

            V = 4^{-(K-1)} Σ_j S_j²/N_j λ~_j λ~_jᵀ - S²_τ / N
        """
        counts = self._check_counts(counts)
        lam = self.contrasts.as_int()
        weights = [s2 / n for s2, n in zip(self.S2_exact, counts)]
        scale = 4 ** (self.design.K - 1)
        scatter = self._effect_scatter
        return tuple(
            tuple(
                sum(weights[j] * int(lam[j, a]) * int(lam[j, b]) for j in range(self.J)) / scale
                - scatter[a][b] / self.N
                for b in range(1, self.J)
            )
            for a in range(1, self.J)
        )

    def true_covariance(self, counts: Sequence[int]) -> np.ndarray:
        return _to_floats(self.true_covariance_exact(counts))

    def true_variance(self, counts: Sequence[int]) -> np.ndarray:
        """Diagonal of :meth:`true_covariance`."""
        return np.diag(self.true_covariance(counts)).copy()

    # ---------- interchange ----------

    def to_frame(self) -> pd.DataFrame:
        columns = [f"Y{j}" for j in range(1, self.J + 1)]
        return pd.DataFrame(self.Y, columns=columns)

    def with_outcomes(self, Y: np.ndarray) -> "PotentialOutcomesTable":
        return PotentialOutcomesTable(self.design, Y)


def _is_whole(value: Union[float, Fraction]) -> bool:
    if isinstance(value, Fraction):
        return value.denominator == 1
    return abs(value - round(value)) < 1e-6


def _feasible(N: int, proportions: Sequence[Union[float, Fraction]]) -> bool:
    return all(_is_whole(N * p) for p in proportions)


def nearest_feasible_sizes(
    N: int, proportions: Sequence[Union[float, Fraction]]
) -> Tuple[Optional[int], Optional[int]]:
    """Closest population sizes below and above N for which every N·P~_j is whole."""
    lower = next((n for n in range(N - 1, 1, -1) if _feasible(n, proportions)), None)
    upper = next(
        (n for n in range(N + 1, N + FEASIBLE_SEARCH_SPAN) if _feasible(n, proportions)), None
    )
    return lower, upper


def construct_population(
    N: int, target_P: Sequence[Union[float, Fraction]], design: FactorialDesign
) -> PotentialOutcomesTable:
    """
    Build an N-unit table whose column j has exactly N·P~_j ones.

    Columns share a common unit order (ones first), the comonotone coupling
    that :func:`permute_population` then randomizes.

    Raises:
        InfeasibleError: if some N·P~_j is not a whole number
    """
    target = list(target_P)
    if len(target) != design.J:
        raise InputError(f"Expected {design.J} target proportions, got {len(target)}")
    for j, p in enumerate(target, start=1):
        if not 0 <= p <= 1:
            raise InputError(
                f"Target proportion for treatment {describe_treatment(design, j)} must be in [0, 1], got {p}"
            )
    if N < 2:
        raise InputError(f"A population needs at least 2 units, got N = {N}")
    if not _feasible(N, target):
        lower, upper = nearest_feasible_sizes(N, target)
        nearest = ", ".join(str(n) for n in (lower, upper) if n is not None) or "none found"
        raise InfeasibleError(
            f"N = {N} cannot match the target proportions exactly (N·P_j must be whole). "
            f"Nearest feasible N: {nearest}"
        )
    Y = np.zeros((N, design.J), dtype=np.int64)
    for j, p in enumerate(target):
        Y[: int(round(N * p)), j] = 1
    logger.debug("Constructed comonotone population with N=%d", N)
    return PotentialOutcomesTable(design, Y)


def permute_population(table: PotentialOutcomesTable, rng_seed: int, *stream: int) -> PotentialOutcomesTable:
    """Permute every column independently; column marginals are preserved."""
    rng = make_generator(rng_seed, PERMUTE_STREAM, *stream)
    columns: List[np.ndarray] = [rng.permutation(table.Y[:, j]) for j in range(table.J)]
    return table.with_outcomes(np.column_stack(columns))
