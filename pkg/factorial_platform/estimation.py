"""
Estimation - unbiased factorial effects and Neymanian inference.

Summaries keep the raw counts, so proportions, sample variances and the
linear effect estimates are available as exact rationals; floats are derived
from them only at the end.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import ndtr, ndtri

from .design import ContrastMatrix, FactorialDesign, build_contrast_matrix, describe_treatment
from .errors import (
    DegenerateInferenceError,
    DesignError,
    InputError,
    VarianceUndefinedError,
)

logger = logging.getLogger(__name__)


class Alternative(str, Enum):
    TWO_SIDED = "two-sided"
    GREATER = "greater"
    LESS = "less"

    @classmethod
    def parse(cls, value: Union[str, "Alternative"]) -> "Alternative":
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(member.value for member in cls)
            raise InputError(f"Unknown alternative '{value}'. Choose one of: {choices}") from None


class Correction(str, Enum):
    IER = "ier"
    BONFERRONI = "bonferroni"

    @classmethod
    def parse(cls, value: Union[str, "Correction"]) -> "Correction":
        if isinstance(value, str) and value.lower() == "eer":
            return cls.BONFERRONI
        try:
            return cls(value.lower() if isinstance(value, str) else value)
        except ValueError:
            raise InputError(
                f"Unknown correction '{value}'. Choose one of: ier, bonferroni"
            ) from None


# ==================== Normal distribution ====================

def normal_cdf(x: float) -> float:
    """Standard normal CDF Φ(x)."""
    return float(ndtr(x))


def normal_quantile(q: float) -> float:
    """Inverse of :func:`normal_cdf` for q strictly inside (0, 1)."""
    if not (0.0 < q < 1.0):
        raise InputError(f"Normal quantile needs 0 < q < 1, got {q}")
    return float(ndtri(q))


def upper_point(a: float) -> float:
    """z_a, the upper-a point of the standard normal."""
    if not (0.0 < a < 1.0):
        raise InputError(f"Upper point needs 0 < a < 1, got {a}")
    return float(-ndtri(a))


def check_alpha(alpha: float) -> float:
    if not (0.0 < alpha < 1.0):
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


# ==================== Observed data ====================

@dataclass(frozen=True)
class ObservedDataset:
    """Per-unit treatment assignments (1-based) and binary outcomes."""

    design: FactorialDesign
    treatments: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        treatments = np.asarray(self.treatments, dtype=np.int64).ravel()
        outcomes = np.asarray(self.outcomes, dtype=np.int64).ravel()
        if treatments.size != outcomes.size:
            raise InputError(
                f"Got {treatments.size} treatments but {outcomes.size} outcomes"
            )
        bad = np.flatnonzero((treatments < 1) | (treatments > self.design.J))
        if bad.size:
            raise InputError(
                f"Treatment index {treatments[bad[0]]} of unit {bad[0] + 1} "
                f"is outside 1..{self.design.J}"
            )
        bad = np.flatnonzero((outcomes != 0) & (outcomes != 1))
        if bad.size:
            raise InputError(f"Outcome of unit {bad[0] + 1} must be 0 or 1, got {outcomes[bad[0]]}")
        treatments.setflags(write=False)
        outcomes.setflags(write=False)
        object.__setattr__(self, "treatments", treatments)
        object.__setattr__(self, "outcomes", outcomes)

    @classmethod
    def from_records(
        cls, design: FactorialDesign, records: Iterable[Tuple[int, int]]
    ) -> "ObservedDataset":
        records = list(records)
        treatments = [treatment for treatment, _ in records]
        outcomes = [outcome for _, outcome in records]
        return cls(design, np.array(treatments, dtype=np.int64), np.array(outcomes, dtype=np.int64))

    @property
    def N(self) -> int:
        return int(self.treatments.size)


@dataclass(frozen=True)
class GroupSummary:
    """
    Per-treatment counts N_j and n_{j1}.

    Proportions and sample variances are derived from the counts; ``s2``
    raises :class:`VarianceUndefinedError` while any group has one unit.
    """

    design: FactorialDesign
    n: Tuple[int, ...]
    n1: Tuple[int, ...]

    def __post_init__(self):
        n = tuple(int(value) for value in self.n)
        n1 = tuple(int(value) for value in self.n1)
        if len(n) != self.design.J or len(n1) != self.design.J:
            raise DesignError(
                f"A 2^{self.design.K} design has {self.design.J} treatments; "
                f"got {len(n)} group sizes and {len(n1)} success counts"
            )
        for j, (size, ones) in enumerate(zip(n, n1), start=1):
            if size < 1:
                raise DesignError(
                    f"Treatment group {describe_treatment(self.design, j)} is empty"
                )
            if not 0 <= ones <= size:
                raise InputError(
                    f"Treatment {describe_treatment(self.design, j)}: "
                    f"n1 = {ones} must lie in 0..n = {size}"
                )
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "n1", n1)

    @property
    def J(self) -> int:
        return self.design.J

    @property
    def N(self) -> int:
        return sum(self.n)

    @property
    def n0(self) -> Tuple[int, ...]:
        return tuple(size - ones for size, ones in zip(self.n, self.n1))

    @property
    def p_exact(self) -> Tuple[Fraction, ...]:
        return tuple(Fraction(ones, size) for size, ones in zip(self.n, self.n1))

    @property
    def p(self) -> np.ndarray:
        return np.array([float(value) for value in self.p_exact])

    def require_variances(self) -> None:
        for j, size in enumerate(self.n, start=1):
            if size < 2:
                raise VarianceUndefinedError(
                    f"Treatment {describe_treatment(self.design, j)} has a single unit; "
                    "its sample variance is undefined (N_j >= 2 required)"
                )

    @property
    def s2_exact(self) -> Tuple[Fraction, ...]:
        """s_j² = N_j/(N_j-1) p_j(1-p_j) = n_{j1} n_{j0} / (N_j (N_j-1))."""
        self.require_variances()
        return tuple(
            Fraction(ones * zeros, size * (size - 1))
            for size, ones, zeros in zip(self.n, self.n1, self.n0)
        )

    @property
    def s2(self) -> np.ndarray:
        return np.array([float(value) for value in self.s2_exact])

    def to_records(self) -> List[Dict[str, Any]]:
        from .design import level_string

        variances: Sequence[Optional[float]]
        try:
            variances = self.s2.tolist()
        except VarianceUndefinedError:
            variances = [None] * self.J
        return [
            {
                "treatment": j,
                "levels": level_string(self.design, j),
                "n": size,
                "n1": ones,
                "n0": size - ones,
                "p": float(Fraction(ones, size)),
                "s2": variances[j - 1],
            }
            for j, (size, ones) in enumerate(zip(self.n, self.n1), start=1)
        ]


def summarize(data: ObservedDataset) -> GroupSummary:
    """Reduce unit-level data to per-treatment counts."""
    J = data.design.J
    n = np.bincount(data.treatments, minlength=J + 1)[1:]
    n1 = np.bincount(data.treatments, weights=data.outcomes, minlength=J + 1)[1:]
    for j in range(1, J + 1):
        if n[j - 1] == 0:
            raise DesignError(f"Treatment group {describe_treatment(data.design, j)} is empty")
    summary = GroupSummary(data.design, tuple(int(v) for v in n), tuple(int(round(v)) for v in n1))
    summary.require_variances()
    logger.debug("Summarized %d units into %d treatment groups", data.N, J)
    return summary


# ==================== Point estimates ====================

def _contrasts(summary: GroupSummary, L: Optional[ContrastMatrix]) -> ContrastMatrix:
    if L is None:
        return build_contrast_matrix(summary.design)
    if L.design.J != summary.J:
        raise DesignError(
            f"Contrast matrix is {L.design.J}×{L.design.J} but the summary has {summary.J} treatments"
        )
    return L


def estimate_effects_exact(
    summary: GroupSummary, L: Optional[ContrastMatrix] = None
) -> Tuple[Fraction, ...]:
    """τ̂ = 2^{-(K-1)} Lᵀ p without the mean entry, in exact rationals."""
    L = _contrasts(summary, L)
    p = np.array(summary.p_exact, dtype=object)
    scale = Fraction(1, 2 ** (summary.design.K - 1))
    return tuple(Fraction(value) * scale for value in L.effects.T.astype(object) @ p)


def estimate_effects(summary: GroupSummary, L: Optional[ContrastMatrix] = None) -> np.ndarray:
    """Unbiased estimates of the J-1 factorial effects."""
    return np.array([float(value) for value in estimate_effects_exact(summary, L)])


def estimate_mean(summary: GroupSummary) -> float:
    """The grand mean τ̂_0, i.e. the average of the p_j."""
    return float(sum(summary.p_exact) / summary.J)


def neyman_variance_exact(summary: GroupSummary) -> Fraction:
    """2^{-2(K-1)} Σ_j s_j²/N_j as a rational."""
    total = sum(s2 / size for s2, size in zip(summary.s2_exact, summary.n))
    return Fraction(total) / 4 ** (summary.design.K - 1)


def neyman_se(summary: GroupSummary) -> float:
    """Conservative standard error shared by every factorial effect."""
    return math.sqrt(neyman_variance_exact(summary))


def neyman_covariance(summary: GroupSummary, L: Optional[ContrastMatrix] = None) -> np.ndarray:
    """Conservative covariance estimate of the J-1 effect estimates."""
    L = _contrasts(summary, L)
    weights = summary.s2 / np.asarray(summary.n, dtype=float)
    lam = L.effects.astype(float)
    return lam.T @ (weights[:, None] * lam) / 4 ** (summary.design.K - 1)


# ==================== Inference ====================

@dataclass(frozen=True)
class EffectRow:
    index: int
    label: str
    estimate: float
    std_error: float
    statistic: float
    lower: float
    upper: float
    p_raw: float
    p_adjusted: float
    reject: bool

    def to_record(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "effect": self.label,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "statistic": self.statistic,
            "lower": finite_or_none(self.lower),
            "upper": finite_or_none(self.upper),
            "p_raw": self.p_raw,
            "p_adjusted": self.p_adjusted,
            "reject": self.reject,
        }


@dataclass(frozen=True)
class EffectInference:
    """Inference table for the tested factorial effects."""

    rows: Tuple[EffectRow, ...]
    alpha: float
    alternative: Alternative
    correction: Correction
    family_size: int

    def row(self, label: str) -> EffectRow:
        for row in self.rows:
            if row.label == label:
                return row
        raise InputError(f"Effect '{label}' is not part of this inference table")

    def to_records(self) -> List[Dict[str, Any]]:
        return [row.to_record() for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.to_records())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "alternative": self.alternative.value,
            "correction": self.correction.value,
            "family_size": self.family_size,
            "effects": self.to_records(),
        }


def finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def p_values(statistics: np.ndarray, alternative: Alternative) -> np.ndarray:
    """Normal-approximation p-values for observed test statistics."""
    statistics = np.asarray(statistics, dtype=float)
    if alternative is Alternative.TWO_SIDED:
        return np.minimum(2.0 * ndtr(-np.abs(statistics)), 1.0)
    if alternative is Alternative.GREATER:
        return ndtr(-statistics)
    return ndtr(statistics)


def adjust_pvalues(p_raw: np.ndarray, correction: Correction, family_size: int) -> np.ndarray:
    """Bonferroni: min{G p, 1}; IER leaves p unchanged."""
    p_raw = np.asarray(p_raw, dtype=float)
    if correction is Correction.BONFERRONI:
        return np.minimum(family_size * p_raw, 1.0)
    return p_raw.copy()


def intervals(
    estimates: np.ndarray,
    std_errors: np.ndarray,
    alpha: float,
    alternative: Alternative,
    bounds: Optional[Tuple[float, float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Two-sided intervals or one-sided half-lines, optionally clipped to ``bounds``."""
    estimates = np.asarray(estimates, dtype=float)
    std_errors = np.asarray(std_errors, dtype=float)
    if alternative is Alternative.TWO_SIDED:
        half = upper_point(alpha / 2) * std_errors
        lower, upper = estimates - half, estimates + half
    elif alternative is Alternative.GREATER:
        lower = estimates - upper_point(alpha) * std_errors
        upper = np.full_like(estimates, np.inf)
    else:
        lower = np.full_like(estimates, -np.inf)
        upper = estimates + upper_point(alpha) * std_errors
    if bounds is not None:
        lower = np.clip(lower, *bounds)
        upper = np.clip(upper, *bounds)
    return lower, upper


def infer(
    summary: GroupSummary,
    L: Optional[ContrastMatrix] = None,
    alpha: float = 0.05,
    alternative: Union[str, Alternative] = Alternative.TWO_SIDED,
    correction: Union[str, Correction] = Correction.IER,
    family: Optional[Sequence[str]] = None,
    clip: bool = False,
) -> EffectInference:
    """
    Neymanian inference for every factorial effect.

    Args:
        summary: Observed group counts
        L: Contrast matrix (built from the summary's design when omitted)
        alpha: Level of tests and intervals
        alternative: "two-sided", "greater" or "less"
        correction: "ier" or "bonferroni"
        family: Optional subset of effect labels to test; the Bonferroni
            divisor becomes its size and only these rows are reported
        clip: Truncate interval endpoints to [-1, 1]

    Returns:
        EffectInference with one row per tested effect

    Raises:
        DegenerateInferenceError: if the standard error is zero
    """
    alpha = check_alpha(alpha)
    alternative = Alternative.parse(alternative)
    correction = Correction.parse(correction)
    L = _contrasts(summary, L)
    design = summary.design

    se = neyman_se(summary)
    if se == 0.0:
        raise DegenerateInferenceError(
            "Every treatment group has a zero sample variance, so the standard error is 0 "
            "and the normal-approximation tests are degenerate; use exact enumeration instead"
        )

    if family:
        indices = sorted({design.effect_index(label) for label in family})
    else:
        indices = list(range(1, design.J))
    family_size = len(indices)

    estimates = estimate_effects(summary, L)[[i - 1 for i in indices]]
    std_errors = np.full(estimates.shape, se)
    statistics = estimates / se
    p_raw = p_values(statistics, alternative)
    p_adjusted = adjust_pvalues(p_raw, correction, family_size)
    lower, upper = intervals(
        estimates, std_errors, alpha, alternative, bounds=(-1.0, 1.0) if clip else None
    )

    rows = tuple(
        EffectRow(
            index=index,
            label=design.effect_labels[index - 1],
            estimate=float(estimates[k]),
            std_error=se,
            statistic=float(statistics[k]),
            lower=float(lower[k]),
            upper=float(upper[k]),
            p_raw=float(p_raw[k]),
            p_adjusted=float(p_adjusted[k]),
            reject=bool(p_adjusted[k] <= alpha),
        )
        for k, index in enumerate(indices)
    )
    return EffectInference(rows, alpha, alternative, correction, family_size)
