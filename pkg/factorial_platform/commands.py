"""
Commands - the analysis and planning workflows behind the CLI and the design service.

Each command takes a resolved :class:`RunConfig` and returns a
:class:`CommandResult` holding the human-readable text, the machine-readable
payload (which always embeds the configuration) and a flat table for CSV.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional

import pandas as pd

from .config import RunConfig
from .design import FactorialDesign, build_contrast_matrix, level_string, treatment_levels
from .errors import InputError
from .estimation import Correction, GroupSummary, estimate_mean, infer, summarize
from .nonlinear import nonlinear_infer
from .dataio import read_population_csv, read_summary, read_unit_csv
from .population import PotentialOutcomesTable
from .power import (
    AllocationRule,
    PowerSpec,
    VarianceGuess,
    allocate_optimal,
    allocation_weights,
    default_grid,
    design_criteria,
    power_curve,
    sample_size,
)
from .simulator import (
    clt_condition_report,
    enumerate_randomizations,
    run_power_protocol,
    simulate,
    simulated_power_curve,
)

logger = logging.getLogger(__name__)

DEFAULT_GRID_STOP = 1600


def _fmt(value: Any) -> str:
    return f"{value:.4f}" if isinstance(value, float) else str(value)


def _render(frame: pd.DataFrame) -> str:
    if frame.empty:
        return "(no rows)"
    return frame.to_string(index=False, formatters={c: _fmt for c in frame.columns})


@dataclass
class CommandResult:
    text: str
    payload: Dict[str, Any]
    table: pd.DataFrame


# ==================== Shared loading ====================

def configured_design(config: RunConfig, J: Optional[int] = None) -> Optional[FactorialDesign]:
    if config.factors:
        design = FactorialDesign(config.factors)
        if J is not None and design.J != J:
            raise InputError(
                f"--factors names {design.K} factors ({design.J} treatments) but {J} values were given"
            )
        return design
    if J is not None:
        K = J.bit_length() - 1
        if 2 ** K != J or K < 1:
            raise InputError(f"{J} values do not describe a 2^K design")
        return FactorialDesign.with_default_names(K)
    return None


def load_summary(config: RunConfig) -> GroupSummary:
    """Summary from --input (unit level) or --summary (counts, CSV or JSON)."""
    design = configured_design(config)
    if config.input:
        return summarize(read_unit_csv(config.input, design))
    if config.summary:
        return read_summary(config.summary, design)
    raise InputError("No data given: pass --input (unit-level CSV) or --summary (counts CSV/JSON)")


def load_guess(config: RunConfig, summary: Optional[GroupSummary] = None) -> VarianceGuess:
    """Variance guesses from --proportions (with --pilot-arm-size for pilots) or pilot data."""
    if config.proportions:
        design = configured_design(config, len(config.proportions))
        if config.pilot_arm_size:
            return VarianceGuess.from_pilot(design, config.proportions, config.pilot_arm_size)
        return VarianceGuess.from_proportions(design, config.proportions)
    summary = summary or load_summary(config)
    return VarianceGuess.from_summary(summary)


def _family_groups(config: RunConfig) -> Optional[int]:
    """Bonferroni G: --groups, else the size of --family, else None (J-1)."""
    if config.groups:
        return config.groups
    return len(config.family) if config.family else None


def _base_payload(command: str, config: RunConfig) -> Dict[str, Any]:
    return {"command": command, "config": config.to_dict()}


# ==================== analyze ====================

def cmd_analyze(config: RunConfig, summary: Optional[GroupSummary] = None) -> CommandResult:
    """Linear inference, plus logFE/logitFE when requested."""
    summary = summary or load_summary(config)
    L = build_contrast_matrix(summary.design)
    linear = infer(
        summary,
        L,
        alpha=config.alpha,
        alternative=config.alternative,
        correction=config.correction,
        family=config.family,
        clip=config.clip,
    )
    payload = _base_payload("analyze", config)
    payload["summary"] = summary.to_records()
    payload["mean"] = estimate_mean(summary)
    payload["linear"] = linear.to_dict()

    frame = linear.to_frame()
    frame.insert(0, "estimand", "linear")
    frames = [frame]
    sections = [
        f"Factorial effects (alpha={config.alpha}, {config.alternative.value}, "
        f"{config.correction.value}); grand mean {payload['mean']:.4f}",
        _render(frame.drop(columns=["estimand", "index"])),
    ]
    for estimand in config.estimands:
        if estimand == "linear":
            continue
        result = nonlinear_infer(
            summary,
            L,
            kind=estimand,
            alpha=config.alpha,
            alternative=config.alternative,
            correction=config.correction,
            haldane=config.haldane,
            family=config.family,
        )
        payload[estimand] = result.to_dict()
        extra = result.to_frame().rename(columns={"kind": "estimand"})
        frames.append(extra)
        sections.append(f"\n{estimand} effects" + (" (Haldane corrected)" if config.haldane else ""))
        sections.append(_render(extra.drop(columns=["estimand", "index", "variance"])))

    table = pd.concat(frames, ignore_index=True, sort=False)
    return CommandResult("\n".join(sections), payload, table)


# ==================== plot-data ====================

def plot_points(summary: GroupSummary) -> pd.DataFrame:
    """
    Main-effect and two-factor interaction plot points.

    Each point averages p_j uniformly over the treatments at the given levels.
    """
    design = summary.design
    levels = [treatment_levels(design, j) for j in range(1, design.J + 1)]
    p = summary.p_exact
    rows: List[Dict[str, Any]] = []

    def mean_where(condition: Callable[[tuple], bool]) -> float:
        chosen = [p[j] for j in range(design.J) if condition(levels[j])]
        return float(sum(chosen, Fraction(0)) / len(chosen))

    for k, name in enumerate(design.factor_names):
        for level in (0, 1):
            rows.append(
                {
                    "plot": "main",
                    "factors": name,
                    "levels": str(level),
                    "mean": mean_where(lambda z: z[k] == level),
                }
            )
    for k, m in itertools.combinations(range(design.K), 2):
        for a, b in itertools.product((0, 1), repeat=2):
            rows.append(
                {
                    "plot": "interaction",
                    "factors": f"{design.factor_names[k]},{design.factor_names[m]}",
                    "levels": f"{a}{b}",
                    "mean": mean_where(lambda z: z[k] == a and z[m] == b),
                }
            )
    return pd.DataFrame(rows, columns=["plot", "factors", "levels", "mean"])


def cmd_plot_data(config: RunConfig, summary: Optional[GroupSummary] = None) -> CommandResult:
    summary = summary or load_summary(config)
    frame = plot_points(summary)
    payload = _base_payload("plot-data", config)
    payload["points"] = frame.to_dict(orient="records")
    return CommandResult(_render(frame), payload, frame)


# ==================== power-curve ====================

def _specs(config: RunConfig, design: FactorialDesign) -> List[PowerSpec]:
    if not config.effects:
        raise InputError("Pass the effects to detect with --effects, e.g. R=0.1875,G=0.1042")
    groups = _family_groups(config)
    specs = []
    for label, tau in config.effects.items():
        canonical = design.effect_labels[design.effect_index(label) - 1]
        specs.append(
            PowerSpec(
                canonical,
                tau,
                alpha=config.alpha,
                alternative=config.alternative,
                correction=config.correction,
                groups=groups,
            )
        )
    return specs


def cmd_power_curve(config: RunConfig, summary: Optional[GroupSummary] = None) -> CommandResult:
    """Analytic power of each effect and their joint power over a grid of N."""
    guess = load_guess(config, summary)
    design = guess.design
    specs = _specs(config, design)
    grid = list(config.n_grid) if config.n_grid else default_grid(design.J, stop=DEFAULT_GRID_STOP)
    curve = power_curve(
        specs, guess, config.criterion, grid, target=config.target_power, max_workers=config.workers
    )
    frame = curve.to_frame()
    payload = _base_payload("power-curve", config)
    payload["variance_guess"] = list(guess.variances)
    payload.update(curve.to_dict())

    smallest = curve.smallest_n
    verdict = (
        f"Smallest N with joint power >= {config.target_power}: {smallest}"
        if smallest is not None
        else f"No grid N reaches joint power {config.target_power}"
    )
    shown = frame[frame["feasible"]].drop(columns=["feasible", "reason"])
    text = "\n".join([_render(shown), verdict])
    return CommandResult(text, payload, frame)


# ==================== sample-size ====================

def cmd_sample_size(config: RunConfig, summary: Optional[GroupSummary] = None) -> CommandResult:
    """Closed-form conservative N for a one-sided test of one effect."""
    guess = load_guess(config, summary)
    design = guess.design
    tau = config.tau_star
    if tau is None and config.effects and len(config.effects) == 1:
        tau = next(iter(config.effects.values()))
    if tau is None:
        raise InputError("Pass the effect size to detect with --tau-star")

    deltas = None
    if config.criterion is not AllocationRule.D:
        deltas = allocation_weights(config.criterion, guess)
    groups = 1
    if config.correction is Correction.BONFERRONI:
        groups = _family_groups(config) or design.J - 1

    result = sample_size(
        tau, guess, alpha=config.alpha, beta_target=config.target_power, deltas=deltas, groups=groups
    )
    payload = _base_payload("sample-size", config)
    payload.update({"tau_star": tau, "groups": groups, **result.to_dict()})
    frame = pd.DataFrame([{"tau_star": tau, "groups": groups, **result.to_dict()}]).drop(columns=["deltas"])
    text = "\n".join(
        [
            f"Required N ({result.mode}, {config.criterion.name}-allocation, power {config.target_power}, "
            f"alpha {config.alpha}/{groups}): {result.raw:.2f}",
            f"Rounded up: {result.ceiling}",
            f"Allocation-feasible: {result.feasible}",
        ]
    )
    return CommandResult(text, payload, frame)


# ==================== allocate ====================

def cmd_allocate(config: RunConfig, summary: Optional[GroupSummary] = None) -> CommandResult:
    if config.n is None:
        raise InputError("Pass the total number of units with --n")
    guess = load_guess(config, summary)
    plan = allocate_optimal(config.criterion, guess, config.n)
    guess = guess.at_size(config.n)
    criteria = design_criteria(guess, plan)
    design = guess.design
    frame = pd.DataFrame(
        {
            "treatment": range(1, design.J + 1),
            "levels": [level_string(design, j) for j in range(1, design.J + 1)],
            "n": plan.counts,
            "delta": plan.deltas,
            "variance_guess": guess.variances,
        }
    )
    payload = _base_payload("allocate", config)
    payload["plan"] = plan.to_dict()
    payload["criteria"] = criteria.to_dict()
    payload["arms"] = frame.to_dict(orient="records")
    text = "\n".join(
        [
            f"{config.criterion.name}-optimal allocation of N = {plan.N}",
            _render(frame),
            f"det {criteria.determinant:.4e}  trace {criteria.trace:.4e}  "
            f"max eigenvalue {criteria.max_eigenvalue:.4e}",
        ]
    )
    return CommandResult(text, payload, frame)


# ==================== simulate / enumerate ====================

def _target_proportions(config: RunConfig, summary: Optional[GroupSummary]) -> tuple:
    if config.proportions:
        return configured_design(config, len(config.proportions)), list(config.proportions)
    summary = summary or load_summary(config)
    return summary.design, list(summary.p_exact)


def _load_population(config: RunConfig) -> PotentialOutcomesTable:
    return read_population_csv(config.population, configured_design(config))


def cmd_simulate(config: RunConfig, summary: Optional[GroupSummary] = None) -> CommandResult:
    """
    Finite-population simulation.

    With --population the given science table is simulated as is. Otherwise a
    population matching the target proportions is built and the permuted-
    populations protocol runs at --n, or over --n-grid.
    """
    payload = _base_payload("simulate", config)
    if config.population:
        table = _load_population(config)
        guess = VarianceGuess(table.design, tuple(table.S2))
        plan = allocate_optimal(config.criterion, guess, table.N)
        report = simulate(
            table,
            plan,
            draws=config.draws,
            alpha=config.alpha,
            alternative=config.alternative,
            rng_seed=config.seed,
            effects=list(config.effects) if config.effects else config.family,
            groups=_family_groups(config),
            max_workers=config.workers,
        )
        payload["plan"] = plan.to_dict()
        payload["report"] = report.to_dict()
        payload["clt"] = clt_condition_report(table, plan).to_dict()
        frame = report.to_frame()
        text = "\n".join(
            [
                f"{report.draws} draws (seed {report.seed}), {report.degenerate} degenerate",
                _render(frame),
                f"Joint rejection of {', '.join(report.joint_effects)}: "
                f"IER {report.joint_ier:.4f}, EER {report.joint_eer:.4f}",
            ]
        )
        return CommandResult(text, payload, frame)

    design, target = _target_proportions(config, summary)
    effects = list(config.effects) if config.effects else list(config.family or design.effect_labels)
    guess = VarianceGuess.from_proportions(design, [float(p) for p in target])
    if config.n_grid:
        curve = simulated_power_curve(
            target, design, effects, config.n_grid, config.criterion, config.correction.value,
            config.populations, config.draws, config.alpha, config.seed, config.target_power,
            guess, config.workers,
        )
        payload.update(curve.to_dict())
        frame = curve.to_frame()
        smallest = curve.smallest_n
        verdict = (
            f"Smallest N with mean joint power >= {config.target_power}: {smallest}"
            if smallest is not None
            else f"No grid N reaches mean joint power {config.target_power}"
        )
        return CommandResult("\n".join([_render(frame), verdict]), payload, frame)

    if config.n is None:
        raise InputError("Pass --n (or --n-grid) for a simulated power protocol")
    result = run_power_protocol(
        target, design, config.n, effects, config.criterion, config.populations, config.draws,
        config.alpha, config.seed, guess, config.workers,
    )
    payload["protocol"] = result.to_dict()
    frame = pd.DataFrame(
        {
            "population": range(len(result.joint_ier)),
            "joint_ier": result.joint_ier,
            "joint_eer": result.joint_eer,
        }
    )
    text = "\n".join(
        [
            _render(frame),
            f"Mean joint power at N = {result.N}: IER {result.mean_joint_ier:.4f}, "
            f"EER {result.mean_joint_eer:.4f}",
        ]
    )
    return CommandResult(text, payload, frame)


def cmd_enumerate(config: RunConfig, summary: Optional[GroupSummary] = None) -> CommandResult:
    """Exact randomization distribution of a small science table."""
    if not config.population:
        raise InputError("enumerate needs a science table: pass --population")
    table = _load_population(config)
    guess = VarianceGuess(table.design, tuple(table.S2))
    plan = allocate_optimal(config.criterion, guess, table.N)
    result = enumerate_randomizations(table, plan, cap=config.enumeration_cap)
    design = table.design
    frame = pd.DataFrame(
        {
            "effect": design.effect_labels,
            "tau_fp": [str(v) for v in table.tau_fp_exact],
            "mean_estimate": [str(v) for v in result.mean_tau],
            "variance": [str(result.cov_tau[i][i]) for i in range(design.J - 1)],
            "mean_se2": str(result.mean_se2),
        }
    )
    payload = _base_payload("enumerate", config)
    payload["plan"] = plan.to_dict()
    payload["enumeration"] = result.to_dict()
    text = "\n".join([f"{result.assignments} assignments of plan {list(plan.counts)}", _render(frame)])
    return CommandResult(text, payload, frame)


COMMANDS: Dict[str, Callable[..., CommandResult]] = {
    "analyze": cmd_analyze,
    "plot-data": cmd_plot_data,
    "power-curve": cmd_power_curve,
    "sample-size": cmd_sample_size,
    "allocate": cmd_allocate,
    "simulate": cmd_simulate,
    "enumerate": cmd_enumerate,
}
