"""
Nonlinear - logarithmic and logit factorial effects for binary outcomes.

Both estimands are factorial contrasts of a transformed proportion, log p_j
(logFE) or log p_j/(1-p_j) (logitFE). Plug-in variances follow the delta
method with the non-estimable S²_{j-j'} terms dropped.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .design import ContrastMatrix, build_contrast_matrix, describe_treatment
from .errors import (
    DegenerateInferenceError,
    DesignError,
    EstimandUndefinedError,
    InputError,
    NegativeVarianceWarning,
)
from .estimation import (
    Alternative,
    Correction,
    GroupSummary,
    adjust_pvalues,
    check_alpha,
    finite_or_none,
    intervals,
    p_values,
    upper_point,
)

logger = logging.getLogger(__name__)

HALDANE_PSEUDOCOUNT = 0.5


class Kind(str, Enum):
    LOGFE = "logfe"
    LOGITFE = "logitfe"

    @classmethod
    def parse(cls, value: Union[str, "Kind"]) -> "Kind":
        try:
            return cls(value.lower() if isinstance(value, str) else value)
        except ValueError:
            raise InputError(f"Unknown non-linear estimand '{value}'. Choose logfe or logitfe") from None


def _contrasts(summary: GroupSummary, L: Optional[ContrastMatrix]) -> ContrastMatrix:
    if L is None:
        return build_contrast_matrix(summary.design)
    if L.design.J != summary.J:
        raise DesignError(
            f"Contrast matrix is {L.design.J}×{L.design.J} but the summary has {summary.J} treatments"
        )
    return L


def plugin_proportions(summary: GroupSummary, haldane: bool = False) -> np.ndarray:
    """p_j, or (n_{j1} + 0.5)/(N_j + 1) under the Haldane-Anscombe correction."""
    n = np.asarray(summary.n, dtype=float)
    n1 = np.asarray(summary.n1, dtype=float)
    if haldane:
        return (n1 + HALDANE_PSEUDOCOUNT) / (n + 2 * HALDANE_PSEUDOCOUNT)
    return n1 / n


def plugin_variances(summary: GroupSummary, haldane: bool = False) -> np.ndarray:
    """s_j² = N_j/(N_j-1) p_j(1-p_j), evaluated at the (possibly corrected) p_j."""
    summary.require_variances()
    if not haldane:
        return summary.s2
    p = plugin_proportions(summary, haldane=True)
    n = np.asarray(summary.n, dtype=float)
    return n / (n - 1) * p * (1 - p)


def _check_defined(summary: GroupSummary, p: np.ndarray, kind: Kind) -> None:
    for j, value in enumerate(p, start=1):
        if value <= 0.0 or (kind is Kind.LOGITFE and value >= 1.0):
            scale = "log" if kind is Kind.LOGFE else "logit"
            raise EstimandUndefinedError(
                f"Treatment {describe_treatment(summary.design, j)} has p = {value:g}, so its "
                f"{scale} is undefined; enable the Haldane correction (--haldane) to proceed"
            )


def _transform(p: np.ndarray, kind: Kind) -> np.ndarray:
    if kind is Kind.LOGFE:
        return np.log(p)
    return np.log(p) - np.log1p(-p)


def _estimate(summary: GroupSummary, L: Optional[ContrastMatrix], kind: Kind, haldane: bool) -> np.ndarray:
    L = _contrasts(summary, L)
    p = plugin_proportions(summary, haldane)
    _check_defined(summary, p, kind)
    return L.effects.T.astype(float) @ _transform(p, kind) / 2 ** (summary.design.K - 1)


def estimate_logfe(
    summary: GroupSummary, L: Optional[ContrastMatrix] = None, haldane: bool = False
) -> np.ndarray:
    """η̂_ℓ = 2^{-(K-1)} Σ_j λ_{ℓj} log p_j for every effect ℓ."""
    return _estimate(summary, L, Kind.LOGFE, haldane)


def estimate_logitfe(
    summary: GroupSummary, L: Optional[ContrastMatrix] = None, haldane: bool = False
) -> np.ndarray:
    """θ̂_ℓ = 2^{-(K-1)} Σ_j λ_{ℓj} log(p_j/(1-p_j)) for every effect ℓ."""
    return _estimate(summary, L, Kind.LOGITFE, haldane)


def estimate_nonlinear(
    summary: GroupSummary,
    kind: Union[str, Kind],
    L: Optional[ContrastMatrix] = None,
    haldane: bool = False,
) -> np.ndarray:
    return _estimate(summary, L, Kind.parse(kind), haldane)


def crr(summary: GroupSummary, haldane: bool = False) -> float:
    """Log causal risk ratio log p_2 - log p_1 of a single-factor experiment."""
    if summary.design.K != 1:
        raise DesignError(f"The causal risk ratio needs K = 1, got K = {summary.design.K}")
    p = plugin_proportions(summary, haldane)
    _check_defined(summary, p, Kind.LOGFE)
    return float(math.log(p[1]) - math.log(p[0]))


def cor(summary: GroupSummary, haldane: bool = False) -> float:
    """Log causal odds ratio of a single-factor experiment."""
    if summary.design.K != 1:
        raise DesignError(f"The causal odds ratio needs K = 1, got K = {summary.design.K}")
    p = plugin_proportions(summary, haldane)
    _check_defined(summary, p, Kind.LOGITFE)
    odds = p / (1 - p)
    return float(math.log(odds[1]) - math.log(odds[0]))


def nonlinear_variance_estimate(
    summary: GroupSummary,
    L: Optional[ContrastMatrix] = None,
    kind: Union[str, Kind] = Kind.LOGFE,
    haldane: bool = False,
) -> np.ndarray:
    """
    Plug-in delta-method variance of every logFE or logitFE estimate.

    With g_j = p_j (logFE) or p_j(1-p_j) (logitFE), the variance of effect ℓ is

        4^{-(K-1)} [ Σ_j (N-N_j) s_j² / (N N_j g_j²)
                     - (1/N) Σ_{j<j'} λ_{ℓj} λ_{ℓj'} (s_j² + s_{j'}²) / (g_j g_{j'}) ]

    The pair sum is evaluated as (λ·a)(λ·w) - Σ_j a_j w_j with a = s²/g and
    w = 1/g. Negative results are clamped to 0 with a warning.

    Raises:
        EstimandUndefinedError: if some g_j is 0 (use haldane=True)
    """
    kind = Kind.parse(kind)
    L = _contrasts(summary, L)
    p = plugin_proportions(summary, haldane)
    _check_defined(summary, p, kind)
    s2 = plugin_variances(summary, haldane)

    n = np.asarray(summary.n, dtype=float)
    N = float(summary.N)
    g = p if kind is Kind.LOGFE else p * (1 - p)
    a = s2 / g
    w = 1.0 / g

    own = np.sum((N - n) * s2 / (N * n * g ** 2))
    lam = L.effects.astype(float)
    cross = (lam.T @ a) * (lam.T @ w) - np.sum(a * w)
    variances = (own - cross / N) / 4 ** (summary.design.K - 1)

    negative = np.flatnonzero(variances < 0)
    if negative.size:
        labels = ", ".join(summary.design.effect_labels[i] for i in negative)
        message = f"Negative plug-in {kind.value} variance for {labels} clamped to 0"
        warnings.warn(message, NegativeVarianceWarning, stacklevel=2)
        variances = np.maximum(variances, 0.0)
    return variances


# ==================== Inference ====================

@dataclass(frozen=True)
class NonlinearEstimand:
    kind: Kind
    index: int
    label: str
    estimate: float
    variance: float
    std_error: float
    statistic: float
    lower: float
    upper: float
    two_sided: Tuple[float, float]
    greater: Tuple[float, float]
    less: Tuple[float, float]
    p_raw: float
    p_adjusted: float
    reject: bool

    def to_record(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "index": self.index,
            "effect": self.label,
            "estimate": self.estimate,
            "variance": self.variance,
            "std_error": self.std_error,
            "statistic": self.statistic,
            "lower": finite_or_none(self.lower),
            "upper": finite_or_none(self.upper),
            "two_sided": [finite_or_none(v) for v in self.two_sided],
            "greater": [finite_or_none(v) for v in self.greater],
            "less": [finite_or_none(v) for v in self.less],
            "p_raw": self.p_raw,
            "p_adjusted": self.p_adjusted,
            "reject": self.reject,
        }


@dataclass(frozen=True)
class NonlinearInference:
    kind: Kind
    rows: Tuple[NonlinearEstimand, ...]
    alpha: float
    alternative: Alternative
    correction: Correction
    haldane: bool
    family_size: int = 0

    def row(self, label: str) -> NonlinearEstimand:
        for row in self.rows:
            if row.label == label:
                return row
        raise InputError(f"Effect '{label}' is not part of this inference table")

    def to_records(self) -> List[Dict[str, Any]]:
        return [row.to_record() for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.to_records())
        return frame.drop(columns=["two_sided", "greater", "less"])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "alpha": self.alpha,
            "alternative": self.alternative.value,
            "correction": self.correction.value,
            "haldane": self.haldane,
            "family_size": self.family_size,
            "effects": self.to_records(),
        }


def nonlinear_infer(
    summary: GroupSummary,
    L: Optional[ContrastMatrix] = None,
    kind: Union[str, Kind] = Kind.LOGFE,
    alpha: float = 0.05,
    alternative: Union[str, Alternative] = Alternative.TWO_SIDED,
    correction: Union[str, Correction] = Correction.IER,
    haldane: bool = False,
    family: Optional[Sequence[str]] = None,
) -> NonlinearInference:
    """
    Normal-approximation intervals and p-values for logFE or logitFE.

    Every row carries the two-sided interval and both half-lines; ``lower`` and
    ``upper`` hold the interval of the requested alternative. ``family``
    restricts the reported effects and sets the Bonferroni divisor, as in
    :func:`~factorial_platform.estimation.infer`.
    """
    alpha = check_alpha(alpha)
    kind = Kind.parse(kind)
    alternative = Alternative.parse(alternative)
    correction = Correction.parse(correction)
    L = _contrasts(summary, L)

    design = summary.design
    if family:
        indices = sorted({design.effect_index(label) for label in family})
    else:
        indices = list(range(1, design.J))
    selected = [i - 1 for i in indices]

    estimates = _estimate(summary, L, kind, haldane)[selected]
    variances = nonlinear_variance_estimate(summary, L, kind, haldane)[selected]
    if not np.all(np.isfinite(variances)) or np.any(variances <= 0):
        raise DegenerateInferenceError(
            f"The plug-in {kind.value} variance is zero or undefined for some effect; "
            "normal-approximation inference is not available"
        )
    std_errors = np.sqrt(variances)
    statistics = estimates / std_errors
    p_raw = p_values(statistics, alternative)
    p_adjusted = adjust_pvalues(p_raw, correction, len(indices))

    two_lo, two_hi = intervals(estimates, std_errors, alpha, Alternative.TWO_SIDED)
    gt_lo, gt_hi = intervals(estimates, std_errors, alpha, Alternative.GREATER)
    lt_lo, lt_hi = intervals(estimates, std_errors, alpha, Alternative.LESS)
    chosen = {
        Alternative.TWO_SIDED: (two_lo, two_hi),
        Alternative.GREATER: (gt_lo, gt_hi),
        Alternative.LESS: (lt_lo, lt_hi),
    }[alternative]

    logger.debug(
        "%s inference at alpha=%s with z=%.4f", kind.value, alpha, upper_point(alpha / 2)
    )
    rows = tuple(
        NonlinearEstimand(
            kind=kind,
            index=index,
            label=design.effect_labels[index - 1],
            estimate=float(estimates[i]),
            variance=float(variances[i]),
            std_error=float(std_errors[i]),
            statistic=float(statistics[i]),
            lower=float(chosen[0][i]),
            upper=float(chosen[1][i]),
            two_sided=(float(two_lo[i]), float(two_hi[i])),
            greater=(float(gt_lo[i]), float(gt_hi[i])),
            less=(float(lt_lo[i]), float(lt_hi[i])),
            p_raw=float(p_raw[i]),
            p_adjusted=float(p_adjusted[i]),
            reject=bool(p_adjusted[i] <= alpha),
        )
        for i, index in enumerate(indices)
    )
    return NonlinearInference(kind, rows, alpha, alternative, correction, haldane, len(indices))
