"""
Power Design - analytic power, sample sizes and optimal allocations.

Power uses the conservative standard error

    SE~ = sqrt( 4^{-(K-1)} Σ_j S~_j² / N_j )

built from guessed (or pilot) variances, so computed powers are upper bounds
on what the Neymanian test will achieve once heterogeneity is accounted for.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .design import ContrastMatrix, FactorialDesign, build_contrast_matrix, describe_treatment
from .errors import DegenerateInferenceError, DesignError, InfeasibleError, InputError
from .estimation import (
    Alternative,
    Correction,
    GroupSummary,
    check_alpha,
    upper_point,
)

logger = logging.getLogger(__name__)

MIN_ARM_SIZE = 2


class AllocationRule(str, Enum):
    D = "d"
    A = "a"
    E = "e"
    EXPLICIT = "explicit"

    @classmethod
    def parse(cls, value: Union[str, "AllocationRule"]) -> "AllocationRule":
        if isinstance(value, str) and value.lower() in ("balanced", "d-optimal"):
            return cls.D
        try:
            return cls(value.lower() if isinstance(value, str) else value)
        except ValueError:
            raise InputError(
                f"Unknown allocation rule '{value}'. Choose one of: d (balanced), a, e"
            ) from None


# ==================== Inputs ====================

@dataclass(frozen=True)
class VarianceGuess:
    """
    Guessed per-treatment variances S~_j².

    ``proportions`` is kept when the guess came from proportions so that
    :func:`sample_size` can apply the N/(N-1) finite-population factor exactly.
    """

    design: FactorialDesign
    variances: Tuple[float, ...]
    proportions: Optional[Tuple[float, ...]] = None
    source: str = "variances"

    def __post_init__(self):
        variances = tuple(float(v) for v in self.variances)
        if len(variances) != self.design.J:
            raise InputError(
                f"Expected {self.design.J} variance guesses, got {len(variances)}"
            )
        for j, value in enumerate(variances, start=1):
            if not math.isfinite(value) or value < 0:
                raise InputError(
                    f"Variance guess for treatment {describe_treatment(self.design, j)} "
                    f"must be finite and >= 0, got {value}"
                )
        object.__setattr__(self, "variances", variances)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.variances, dtype=float)

    @classmethod
    def from_variances(cls, design: FactorialDesign, variances: Sequence[float]) -> "VarianceGuess":
        return cls(design, tuple(variances))

    @classmethod
    def from_proportions(
        cls,
        design: FactorialDesign,
        proportions: Sequence[float],
        population_size: Optional[int] = None,
    ) -> "VarianceGuess":
        """S~_j² = N/(N-1) P~_j(1-P~_j); the factor is omitted when N is unknown."""
        p = _check_proportions(design, proportions)
        factor = 1.0
        if population_size is not None:
            if population_size < 2:
                raise InputError(f"Population size must be >= 2, got {population_size}")
            factor = population_size / (population_size - 1)
        return cls(design, tuple(factor * p * (1 - p)), tuple(p), "proportions")

    def at_size(self, population_size: int) -> "VarianceGuess":
        """Proportion guesses rebuilt with the N/(N-1) factor for N units; other guesses unchanged."""
        if self.source != "proportions" or self.proportions is None:
            return self
        return VarianceGuess.from_proportions(self.design, self.proportions, population_size)

    @classmethod
    def from_pilot(
        cls, design: FactorialDesign, proportions: Sequence[float], pilot_arm_size: int
    ) -> "VarianceGuess":
        """Pilot variances s_j² = r0/(r0-1) p_j(1-p_j) for a pilot with r0 units per arm."""
        if pilot_arm_size < 2:
            raise InputError(f"Pilot arm size must be >= 2, got {pilot_arm_size}")
        p = _check_proportions(design, proportions)
        factor = pilot_arm_size / (pilot_arm_size - 1)
        return cls(design, tuple(factor * p * (1 - p)), None, "pilot")

    @classmethod
    def from_summary(cls, summary: GroupSummary) -> "VarianceGuess":
        return cls(summary.design, tuple(summary.s2), None, "pilot")


def _check_proportions(design: FactorialDesign, proportions: Sequence[float]) -> np.ndarray:
    p = np.asarray(proportions, dtype=float)
    if p.shape != (design.J,):
        raise InputError(f"Expected {design.J} proportions, got {p.size}")
    if not np.all((p >= 0) & (p <= 1)):
        raise InputError(f"Proportions must lie in [0, 1], got {p.tolist()}")
    return p


@dataclass(frozen=True)
class AllocationPlan:
    """Arm sizes N_j summing to N, with at least two units per arm."""

    counts: Tuple[int, ...]
    rule: AllocationRule = AllocationRule.EXPLICIT

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        for j, count in enumerate(counts, start=1):
            if count < MIN_ARM_SIZE:
                raise DesignError(
                    f"Treatment j={j} is allocated {count} units; every arm needs at least "
                    f"{MIN_ARM_SIZE}"
                )
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "rule", AllocationRule.parse(self.rule))

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def J(self) -> int:
        return len(self.counts)

    @property
    def deltas(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.N

    @classmethod
    def balanced(cls, J: int, N: int) -> "AllocationPlan":
        if N % J:
            lower = max((N // J) * J, MIN_ARM_SIZE * J)
            upper = (N // J + 1) * J
            raise InfeasibleError(
                f"A balanced design needs N divisible by J = {J}; got N = {N}. "
                f"Nearest feasible N: {lower} or {upper}"
            )
        return cls(tuple([N // J] * J), AllocationRule.D)

    def to_dict(self) -> Dict[str, Any]:
        return {"rule": self.rule.value, "N": self.N, "counts": list(self.counts)}


@dataclass(frozen=True)
class PowerSpec:
    """A hypothesized effect size τ*_ℓ for one factorial effect."""

    label: str
    tau_star: float
    alpha: float = 0.05
    alternative: Alternative = Alternative.TWO_SIDED
    correction: Correction = Correction.IER
    groups: Optional[int] = None

    def __post_init__(self):
        check_alpha(self.alpha)
        object.__setattr__(self, "alternative", Alternative.parse(self.alternative))
        object.__setattr__(self, "correction", Correction.parse(self.correction))
        if self.groups is not None and self.groups < 1:
            raise InputError(f"Bonferroni family size must be >= 1, got {self.groups}")

    def family_size(self, design: FactorialDesign) -> int:
        """G = 1 under IER; J-1 (or the configured G) under Bonferroni."""
        if self.correction is Correction.IER:
            return 1
        return self.groups if self.groups is not None else design.J - 1


# ==================== Power functions ====================

def _check_se(se: float) -> float:
    if not se > 0:
        raise DegenerateInferenceError(
            f"Power needs a positive standard error, got {se}"
        )
    return float(se)


def se_tilde(
    guess: VarianceGuess, plan: Union[AllocationPlan, Sequence[int]], K: Optional[int] = None
) -> float:
    """sqrt(4^{-(K-1)} Σ_j S~_j² / N_j)."""
    counts = plan.counts if isinstance(plan, AllocationPlan) else tuple(int(c) for c in plan)
    K = guess.design.K if K is None else K
    if len(counts) != guess.design.J:
        raise DesignError(
            f"Plan has {len(counts)} arms but the design has {guess.design.J} treatments"
        )
    for j, count in enumerate(counts, start=1):
        if count < 1:
            raise DesignError(
                f"Treatment {describe_treatment(guess.design, j)} has no units in the plan"
            )
    return math.sqrt(float(np.sum(guess.array / np.asarray(counts, dtype=float))) / 4 ** (K - 1))


def power_two_sided(tau_star: float, se: float, alpha: float = 0.05, groups: int = 1) -> float:
    """
    β = 2 - Φ(z - τ*/SE~) - Φ(z + τ*/SE~) with z = z_{α/(2G)}.

    Example:
        power_two_sided(0.1875, 0.0917)   # ~0.534
    """
    se = _check_se(se)
    z = upper_point(check_alpha(alpha) / (2 * groups))
    ratio = tau_star / se
    return float(ndtr(ratio - z) + ndtr(-z - ratio))


def power_one_sided(
    tau_star: float,
    se: float,
    alpha: float = 0.05,
    direction: Union[str, Alternative] = Alternative.GREATER,
    groups: int = 1,
) -> float:
    """Power of the one-sided test, z = z_{α/G}."""
    se = _check_se(se)
    direction = Alternative.parse(direction)
    if direction is Alternative.TWO_SIDED:
        raise InputError("power_one_sided needs direction 'greater' or 'less'")
    z = upper_point(check_alpha(alpha) / groups)
    ratio = tau_star / se
    if direction is Alternative.GREATER:
        return float(ndtr(ratio - z))
    return float(ndtr(-z - ratio))


def power(tau_star: float, se: float, alpha: float, alternative: Alternative, groups: int = 1) -> float:
    if alternative is Alternative.TWO_SIDED:
        return power_two_sided(tau_star, se, alpha, groups)
    return power_one_sided(tau_star, se, alpha, alternative, groups)


def power_exact(
    table,
    plan: AllocationPlan,
    effect: Union[int, str],
    alpha: float = 0.05,
    groups: int = 1,
) -> float:
    """
    Two-sided power from the true science table.

    With V the exact variance of τ̂_ℓ and SE the conservative limit computed
    from the true S_j²:

        β = 2 - Φ((SE/√V) z - τ_ℓ/√V) - Φ((SE/√V) z + τ_ℓ/√V)
    """
    design = table.design
    index = effect if isinstance(effect, int) else design.effect_index(effect)
    if not 1 <= index < design.J:
        raise InputError(f"Effect index must be in 1..{design.J - 1}, got {index}")
    variance = float(table.true_covariance(plan.counts)[index - 1, index - 1])
    if variance <= 0:
        raise DegenerateInferenceError(
            f"The true variance of effect {design.effect_labels[index - 1]} is 0 under this plan"
        )
    conservative = se_tilde(VarianceGuess(design, tuple(table.S2)), plan)
    root = math.sqrt(variance)
    z = upper_point(check_alpha(alpha) / (2 * groups)) * conservative / root
    shift = float(table.tau_fp[index - 1]) / root
    return float(ndtr(shift - z) + ndtr(-z - shift))


# ==================== Allocation ====================

def allocation_weights(criterion: Union[str, AllocationRule], guess: VarianceGuess) -> np.ndarray:
    """Continuous optimal proportions δ_j (D: 1/J, A: ∝ S~_j, E: ∝ S~_j²)."""
    criterion = AllocationRule.parse(criterion)
    J = guess.design.J
    if criterion is AllocationRule.D:
        return np.full(J, 1.0 / J)
    if criterion is AllocationRule.EXPLICIT:
        raise InputError("Explicit plans have no optimal weights; pass the counts directly")
    raw = np.sqrt(guess.array) if criterion is AllocationRule.A else guess.array
    total = raw.sum()
    if total <= 0:
        raise InfeasibleError(
            f"{criterion.name}-optimal allocation needs at least one positive variance guess"
        )
    return raw / total


def _integerize(quotas: np.ndarray, N: int) -> List[int]:
    counts = np.maximum(np.floor(quotas).astype(int), MIN_ARM_SIZE)
    remaining = N - int(counts.sum())
    remainders = quotas - counts
    if remaining > 0:
        order = sorted(range(len(quotas)), key=lambda j: (-remainders[j], j))
        for step in range(remaining):
            counts[order[step % len(order)]] += 1
    while remaining < 0:
        eligible = [j for j in range(len(quotas)) if counts[j] > MIN_ARM_SIZE]
        eligible.sort(key=lambda j: (quotas[j] - counts[j], j))
        for j in eligible[: -remaining]:
            counts[j] -= 1
        remaining = N - int(counts.sum())
    return counts.tolist()


def allocate_optimal(
    criterion: Union[str, AllocationRule], guess: VarianceGuess, N: int
) -> AllocationPlan:
    """
    Allocate N units to the J arms under the D, A or E criterion.

    Raises:
        InfeasibleError: if N < 2J, or N is not a multiple of J under D,
            or every guess is 0 under A/E
    """
    criterion = AllocationRule.parse(criterion)
    J = guess.design.J
    if N < MIN_ARM_SIZE * J:
        raise InfeasibleError(
            f"N = {N} cannot give every one of the {J} arms {MIN_ARM_SIZE} units; "
            f"use N >= {MIN_ARM_SIZE * J}"
        )
    if criterion is AllocationRule.D:
        return AllocationPlan.balanced(J, N)
    quotas = allocation_weights(criterion, guess) * N
    counts = _integerize(quotas, N)
    logger.debug("%s-optimal quotas %s integerized to %s", criterion.name, quotas.round(3).tolist(), counts)
    return AllocationPlan(tuple(counts), criterion)


@dataclass(frozen=True)
class DesignCriteria:
    determinant: float
    trace: float
    max_eigenvalue: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "determinant": self.determinant,
            "trace": self.trace,
            "max_eigenvalue": self.max_eigenvalue,
        }


def estimable_covariance(
    guess: VarianceGuess, plan: AllocationPlan, L: Optional[ContrastMatrix] = None
) -> np.ndarray:
    """V~ = 4^{-(K-1)} Σ_j S~_j²/N_j λ~_j λ~_jᵀ over all J contrasts."""
    L = build_contrast_matrix(guess.design) if L is None else L
    lam = L.as_int().astype(float)
    weights = guess.array / np.asarray(plan.counts, dtype=float)
    return lam.T @ (weights[:, None] * lam) / 4 ** (guess.design.K - 1)


def design_criteria(
    guess: VarianceGuess, plan: AllocationPlan, L: Optional[ContrastMatrix] = None
) -> DesignCriteria:
    covariance = estimable_covariance(guess, plan, L)
    return DesignCriteria(
        determinant=float(np.linalg.det(covariance)),
        trace=float(np.trace(covariance)),
        max_eigenvalue=float(np.linalg.eigvalsh(covariance).max()),
    )


# ==================== Power curves ====================

def default_grid(J: int, start: Optional[int] = None, stop: int = 1600) -> List[int]:
    """Multiples of J from max(start, 2J) up to stop."""
    start = MIN_ARM_SIZE * J if start is None else max(start, MIN_ARM_SIZE * J)
    first = -(-start // J) * J
    return list(range(first, stop + 1, J))


@dataclass(frozen=True)
class PowerCurveRow:
    N: int
    feasible: bool
    counts: Tuple[int, ...] = ()
    se: Optional[float] = None
    powers: Dict[str, float] = field(default_factory=dict)
    joint: Optional[float] = None
    reason: str = ""

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"N": self.N, "feasible": self.feasible, "se": self.se}
        for label, value in self.powers.items():
            record[f"power[{label}]"] = value
        record["joint"] = self.joint
        record["reason"] = self.reason
        return record


@dataclass(frozen=True)
class PowerCurve:
    specs: Tuple[PowerSpec, ...]
    rule: AllocationRule
    rows: Tuple[PowerCurveRow, ...]
    target: float

    @property
    def smallest_n(self) -> Optional[int]:
        """Smallest grid N whose joint power reaches the target."""
        for row in self.rows:
            if row.feasible and row.joint is not None and row.joint >= self.target:
                return row.N
        return None

    def row(self, N: int) -> PowerCurveRow:
        for row in self.rows:
            if row.N == N:
                return row
        raise InputError(f"N = {N} is not on the evaluated grid")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.to_record() for row in self.rows])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rule": self.rule.value,
            "target": self.target,
            "smallest_n": self.smallest_n,
            "grid": [row.N for row in self.rows],
            "specs": [
                {
                    "effect": spec.label,
                    "tau_star": spec.tau_star,
                    "alpha": spec.alpha,
                    "alternative": spec.alternative.value,
                    "correction": spec.correction.value,
                    "groups": spec.groups,
                }
                for spec in self.specs
            ],
            "rows": [
                {**row.to_record(), "counts": list(row.counts), "powers": dict(row.powers)}
                for row in self.rows
            ],
        }


def _evaluate_point(
    N: int, specs: Sequence[PowerSpec], guess: VarianceGuess, rule: AllocationRule
) -> PowerCurveRow:
    try:
        plan = allocate_optimal(rule, guess, N)
    except InfeasibleError as exc:
        logger.warning("Power curve point N=%d is infeasible: %s", N, exc)
        return PowerCurveRow(N=N, feasible=False, reason=str(exc))
    # D/A/E weights are scale free, so the factor only enters the SE
    guess = guess.at_size(N)
    se = se_tilde(guess, plan)
    design = guess.design
    powers = {
        spec.label: power(spec.tau_star, se, spec.alpha, spec.alternative, spec.family_size(design))
        for spec in specs
    }
    return PowerCurveRow(
        N=N,
        feasible=True,
        counts=plan.counts,
        se=se,
        powers=powers,
        joint=float(np.prod(list(powers.values()))),
    )


def power_curve(
    specs: Sequence[PowerSpec],
    guess: VarianceGuess,
    rule: Union[str, AllocationRule] = AllocationRule.D,
    n_grid: Optional[Sequence[int]] = None,
    target: float = 0.8,
    max_workers: int = 1,
) -> PowerCurve:
    """
    Per-effect and joint power over a grid of total sample sizes.

    Joint power is the product of the marginal powers. Infeasible grid points
    are kept with ``feasible=False`` and the reason.

    Args:
        specs: Hypothesized effects, at least one, with distinct labels
        guess: Variance guesses
        rule: Allocation rule applied at every N
        n_grid: Total sample sizes (multiples of J by default)
        target: Joint power the smallest N must reach
        max_workers: Threads used to evaluate grid points
    """
    specs = tuple(specs)
    if not specs:
        raise InputError("A power curve needs at least one effect")
    labels = [spec.label for spec in specs]
    if len(set(labels)) != len(labels):
        raise InputError(f"Power curve effects must be distinct, got {labels}")
    for label in labels:
        guess.design.effect_index(label)
    if not 0.0 < target < 1.0:
        raise InputError(f"Target power must lie in (0, 1), got {target}")
    rule = AllocationRule.parse(rule)
    if rule is AllocationRule.EXPLICIT:
        raise InputError("Power curves need an allocation rule (d, a or e)")
    grid = list(n_grid) if n_grid is not None else default_grid(guess.design.J)

    def evaluate(N: int) -> PowerCurveRow:
        return _evaluate_point(int(N), specs, guess, rule)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = tuple(pool.map(evaluate, grid))
    else:
        rows = tuple(evaluate(N) for N in grid)
    return PowerCurve(specs, rule, rows, target)


# ==================== Sample size ====================

@dataclass(frozen=True)
class SampleSizeResult:
    raw: float
    ceiling: int
    feasible: int
    deltas: Tuple[float, ...]
    mode: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "raw": self.raw,
            "ceiling": self.ceiling,
            "feasible": self.feasible,
            "deltas": list(self.deltas),
            "mode": self.mode,
        }


def limiting_variance(values: Sequence[float], deltas: Sequence[float], K: int) -> float:
    """4^{-(K-1)} Σ_j values_j / δ_j, the squared limit of √N SE~."""
    return float(np.sum(np.asarray(values, dtype=float) / np.asarray(deltas, dtype=float))) / 4 ** (K - 1)


def sample_size(
    tau_star: float,
    guess: VarianceGuess,
    alpha: float = 0.05,
    beta_target: float = 0.8,
    deltas: Optional[Sequence[float]] = None,
    mode: Optional[str] = None,
    groups: int = 1,
) -> SampleSizeResult:
    """
    Conservative sample size for a one-sided level-α test with power β.

    Pilot mode solves N = V (z_α - z_β)² / τ*² with V = 4^{-(K-1)} Σ_j s_j²/δ_j.
    Proportion-guess mode carries S~_j² = N/(N-1) P~_j(1-P~_j), which gives
    N = V_P (z_α - z_β)² / τ*² + 1 with V_P built from P~_j(1-P~_j).

    Args:
        tau_star: Effect size to detect (sign ignored, must be non-zero)
        guess: Variance guess; proportion guesses select proportion-guess mode
        alpha: Test level, replaced by α/G for a Bonferroni family of G effects
        beta_target: Desired power, must exceed max(α, 0.5)
        deltas: Allocation proportions summing to 1 (balanced by default)
        mode: "pilot" or "proportion-guess"; inferred from the guess if omitted
        groups: Bonferroni family size G

    Returns:
        SampleSizeResult with the raw value, its ceiling, and the smallest
        allocation-feasible N at or above the ceiling
    """
    alpha = check_alpha(alpha)
    if not max(alpha, 0.5) < beta_target < 1.0:
        raise InputError(
            f"Target power must exceed max(alpha, 0.5) = {max(alpha, 0.5)} and be below 1, "
            f"got {beta_target}"
        )
    if tau_star == 0:
        raise InputError("Effect size tau* must be non-zero")
    if groups < 1:
        raise InputError(f"Bonferroni family size must be >= 1, got {groups}")

    J, K = guess.design.J, guess.design.K
    balanced = deltas is None
    deltas = np.full(J, 1.0 / J) if deltas is None else np.asarray(deltas, dtype=float)
    if deltas.shape != (J,) or np.any(deltas <= 0) or not math.isclose(deltas.sum(), 1.0, abs_tol=1e-9):
        raise InputError(f"Allocation proportions must be {J} positive values summing to 1")

    if mode is None:
        mode = "proportion-guess" if guess.proportions is not None else "pilot"
    factor = ((upper_point(alpha / groups) - upper_point(beta_target)) / tau_star) ** 2
    if mode == "proportion-guess":
        if guess.proportions is None:
            raise InputError("Proportion-guess mode needs a guess built from proportions")
        p = np.asarray(guess.proportions)
        raw = limiting_variance(p * (1 - p), deltas, K) * factor + 1.0
    elif mode == "pilot":
        raw = limiting_variance(guess.array, deltas, K) * factor
    else:
        raise InputError(f"Unknown sample-size mode '{mode}'. Choose pilot or proportion-guess")

    ceiling = max(int(math.ceil(raw - 1e-9)), 1)
    feasible = max(ceiling, MIN_ARM_SIZE * J)
    if balanced:
        feasible = -(-feasible // J) * J
    return SampleSizeResult(raw, ceiling, feasible, tuple(deltas.tolist()), mode)
