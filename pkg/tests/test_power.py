import math

import numpy as np
import pytest
from scipy.special import ndtr

from factorial_platform.design import FactorialDesign, treatment_index
from factorial_platform.errors import DegenerateInferenceError, DesignError, InfeasibleError, InputError
from factorial_platform.estimation import Alternative, upper_point
from factorial_platform.population import PotentialOutcomesTable, construct_population
from factorial_platform.power import (
    AllocationPlan,
    AllocationRule,
    PowerSpec,
    VarianceGuess,
    allocate_optimal,
    allocation_weights,
    default_grid,
    design_criteria,
    limiting_variance,
    power_curve,
    power_exact,
    power_one_sided,
    power_two_sided,
    sample_size,
    se_tilde,
)
from conftest import LAWYER_N1

LAWYER_SPECS = (("R", 0.1875), ("G", 0.1042), ("G×I", 0.1042))


@pytest.fixture
def pilot_guess(lawyer_summary):
    return VarianceGuess.from_summary(lawyer_summary)


def specs(correction="ier"):
    return [PowerSpec(label, tau, correction=correction) for label, tau in LAWYER_SPECS]


def test_two_sided_power_values():
    assert power_two_sided(0.1875, 0.0917) == pytest.approx(0.534, abs=1e-3)
    assert power_two_sided(0.1042, 0.0917) == pytest.approx(0.206, abs=1e-3)


def test_power_at_zero_effect_is_alpha():
    assert power_two_sided(0.0, 0.05, alpha=0.05) == pytest.approx(0.05)
    assert power_one_sided(0.0, 0.05, alpha=0.05) == pytest.approx(0.05)


def test_power_is_monotone_in_effect():
    values = [power_two_sided(tau, 0.05) for tau in np.linspace(0, 0.3, 7)]
    assert values == sorted(values)


def test_one_sided_direction():
    assert power_one_sided(0.1, 0.05, direction="less") < 0.05
    with pytest.raises(InputError):
        power_one_sided(0.1, 0.05, direction=Alternative.TWO_SIDED)


def test_zero_se_is_degenerate():
    with pytest.raises(DegenerateInferenceError):
        power_two_sided(0.1, 0.0)


def test_se_tilde_balanced(pilot_guess):
    assert sum(pilot_guess.variances) == pytest.approx(1.6136, abs=1e-4)
    assert se_tilde(pilot_guess, AllocationPlan.balanced(8, 96)) == pytest.approx(0.0917, abs=1e-4)
    assert se_tilde(pilot_guess, AllocationPlan.balanced(8, 768)) == pytest.approx(0.032412, abs=1e-5)


def test_guess_constructors(lawyer_design):
    p = [0.5] * 8
    assert VarianceGuess.from_proportions(lawyer_design, p).variances == (0.25,) * 8
    assert VarianceGuess.from_proportions(lawyer_design, p, 5).variances[0] == pytest.approx(0.3125)
    assert VarianceGuess.from_pilot(lawyer_design, p, 12).variances[0] == pytest.approx(12 / 11 * 0.25)
    with pytest.raises(InputError):
        VarianceGuess.from_proportions(lawyer_design, [1.2] + [0.5] * 7)
    with pytest.raises(InputError):
        VarianceGuess.from_variances(lawyer_design, [0.1] * 7)


def test_balanced_allocation():
    plan = AllocationPlan.balanced(8, 96)
    assert plan.counts == (12,) * 8
    with pytest.raises(InfeasibleError, match="Nearest feasible N: 96 or 104"):
        AllocationPlan.balanced(8, 100)


def test_plan_needs_two_per_arm():
    with pytest.raises(DesignError):
        AllocationPlan((1, 3))


def test_a_and_e_weights(lawyer_design):
    guess = VarianceGuess.from_variances(lawyer_design, [1, 1, 1, 1, 4, 4, 4, 4])
    np.testing.assert_allclose(allocation_weights("a", guess), [1 / 12] * 4 + [2 / 12] * 4)
    np.testing.assert_allclose(allocation_weights("e", guess), [1 / 20] * 4 + [4 / 20] * 4)
    np.testing.assert_allclose(allocation_weights("balanced", guess), [1 / 8] * 8)


def test_integer_allocation_sums_to_n(pilot_guess):
    for rule in ("a", "e"):
        for N in (16, 97, 672, 1001):
            plan = allocate_optimal(rule, pilot_guess, N)
            assert plan.N == N
            assert min(plan.counts) >= 2
            assert plan.rule is AllocationRule.parse(rule)


def test_a_optimal_follows_weights(pilot_guess):
    plan = allocate_optimal("a", pilot_guess, 672)
    quotas = allocation_weights("a", pilot_guess) * 672
    assert np.all(np.abs(np.asarray(plan.counts) - quotas) < 1)


def test_allocation_too_small(pilot_guess):
    with pytest.raises(InfeasibleError):
        allocate_optimal("a", pilot_guess, 15)


def test_a_optimal_minimizes_trace(pilot_guess):
    balanced = design_criteria(pilot_guess, allocate_optimal("d", pilot_guess, 672))
    a_opt = design_criteria(pilot_guess, allocate_optimal("a", pilot_guess, 672))
    assert a_opt.trace <= balanced.trace
    assert balanced.determinant > 0


def test_default_grid():
    grid = default_grid(8, stop=64)
    assert grid == [16, 24, 32, 40, 48, 56, 64]


def test_ier_curve_threshold(pilot_guess):
    curve = power_curve(specs(), pilot_guess, "d", default_grid(8))
    assert curve.smallest_n == 768
    at_768 = curve.row(768)
    assert at_768.joint == pytest.approx(0.801, abs=2e-3)
    assert at_768.powers["G"] == pytest.approx(0.89, abs=6e-3)
    assert curve.row(760).joint < 0.8


def test_eer_curve_threshold(pilot_guess):
    curve = power_curve(specs("bonferroni"), pilot_guess, "balanced", default_grid(8))
    assert abs(curve.smallest_n - 1152) <= 8


def test_curve_threads_match_serial(pilot_guess):
    grid = list(range(96, 1000, 8))
    serial = power_curve(specs(), pilot_guess, "a", grid)
    threaded = power_curve(specs(), pilot_guess, "a", grid, max_workers=4)
    assert serial.to_dict() == threaded.to_dict()


def test_curve_marks_infeasible_points(pilot_guess):
    curve = power_curve(specs(), pilot_guess, "d", [12, 96, 100])
    feasible = [row.feasible for row in curve.rows]
    assert feasible == [False, True, False]
    assert "N = 12" in curve.rows[0].reason


def test_curve_validates_effects(pilot_guess):
    with pytest.raises(InputError):
        power_curve([], pilot_guess)
    with pytest.raises(InputError):
        power_curve([PowerSpec("R", 0.1), PowerSpec("R", 0.2)], pilot_guess)


def test_sample_size_pilot(pilot_guess):
    result = sample_size(0.1, pilot_guess, alpha=0.05, beta_target=0.9)
    assert result.mode == "pilot"
    assert result.raw == pytest.approx(690.93, abs=0.05)
    assert result.ceiling == 691
    assert result.feasible == 696


def test_sample_size_proportion_mode(lawyer_design):
    p = [0.5] * 8
    guess = VarianceGuess.from_proportions(lawyer_design, p)
    pilot = VarianceGuess.from_variances(lawyer_design, guess.variances)
    with_factor = sample_size(0.1, guess, beta_target=0.9)
    without = sample_size(0.1, pilot, beta_target=0.9)
    assert with_factor.mode == "proportion-guess"
    assert with_factor.raw == pytest.approx(without.raw + 1)


def test_sample_size_bonferroni_is_larger(pilot_guess):
    single = sample_size(0.1, pilot_guess, beta_target=0.9)
    family = sample_size(0.1, pilot_guess, beta_target=0.9, groups=7)
    assert family.raw > single.raw


@pytest.mark.parametrize("beta", [0.5, 0.04, 1.0])
def test_sample_size_rejects_bad_power(pilot_guess, beta):
    with pytest.raises(InputError):
        sample_size(0.1, pilot_guess, beta_target=beta)


def test_sample_size_rejects_zero_effect(pilot_guess):
    with pytest.raises(InputError):
        sample_size(0.0, pilot_guess)


def test_power_spec_family_size():
    design = FactorialDesign(("R", "G", "I"))
    assert PowerSpec("R", 0.1).family_size(design) == 1
    assert PowerSpec("R", 0.1, correction="bonferroni").family_size(design) == 7
    assert PowerSpec("R", 0.1, correction="bonferroni", groups=3).family_size(design) == 3


def test_power_exact_single_factor():
    table = PotentialOutcomesTable(FactorialDesign(("A",)), np.array([[1, 1], [1, 0], [0, 1], [0, 0]]))
    # true variance 1/6 against the conservative 1/3
    expected = 2 * ndtr(-upper_point(0.025) * math.sqrt(2))
    assert power_exact(table, AllocationPlan((2, 2)), "A") == pytest.approx(expected)


def test_power_exact_exceeds_conservative_power(lawyer_summary):
    table = construct_population(768, lawyer_summary.p_exact, lawyer_summary.design)
    plan = AllocationPlan.balanced(8, 768)
    conservative = power_two_sided(0.1875, se_tilde(VarianceGuess(table.design, tuple(table.S2)), plan))
    assert power_exact(table, plan, "R") >= conservative


def test_power_exact_zero_variance():
    table = PotentialOutcomesTable(FactorialDesign(("A",)), np.zeros((4, 2), dtype=int))
    with pytest.raises(DegenerateInferenceError):
        power_exact(table, AllocationPlan((2, 2)), 1)


def test_proportion_curve_applies_population_factor(lawyer_design):
    p = [n1 / 12 for n1 in LAWYER_N1]
    guess = VarianceGuess.from_proportions(lawyer_design, p)
    curve = power_curve([PowerSpec("R", 0.1875)], guess, "d", [16, 96])
    for N in (16, 96):
        expected = se_tilde(VarianceGuess.from_proportions(lawyer_design, p, N), AllocationPlan.balanced(8, N))
        assert curve.row(N).se == pytest.approx(expected)
    assert curve.row(16).se == pytest.approx(0.22205, abs=1e-5)
    assert curve.row(16).se > se_tilde(guess, AllocationPlan.balanced(8, 16))


def test_at_size_leaves_pilot_guesses(pilot_guess):
    assert pilot_guess.at_size(96) is pilot_guess


def test_sample_size_reaches_target_power(pilot_guess, lawyer_design):
    result = sample_size(0.1, pilot_guess, alpha=0.05, beta_target=0.9)
    se = math.sqrt(limiting_variance(pilot_guess.variances, [1 / 8] * 8, 3) / result.raw)
    assert power_one_sided(0.1, se, alpha=0.05) == pytest.approx(0.9, abs=1e-6)

    p = [0.2] * 4 + [0.6] * 4
    guess = VarianceGuess.from_proportions(lawyer_design, p)
    result = sample_size(0.1, guess, alpha=0.05, beta_target=0.9)
    scaled = guess.at_size(result.raw)
    se = math.sqrt(limiting_variance(scaled.variances, [1 / 8] * 8, 3) / result.raw)
    assert power_one_sided(0.1, se, alpha=0.05) == pytest.approx(0.9, abs=1e-6)


def test_a_optimal_weights_beat_relaxed_grid():
    design = FactorialDesign(("A", "B"))
    variances = np.array([0.09, 0.25, 0.16, 0.21])
    guess = VarianceGuess.from_variances(design, variances)

    def trace(deltas):
        return np.sum(variances / deltas, axis=-1)

    steps = np.arange(1, 100)
    a, b, c = np.meshgrid(steps, steps, steps, indexing="ij")
    d = 100 - a - b - c
    keep = d >= 1
    grid = np.stack([a[keep], b[keep], c[keep], d[keep]], axis=1) / 100.0
    values = trace(grid)
    best = grid[np.argmin(values)]

    weights = allocation_weights("a", guess)
    assert trace(weights) <= values.min() + 1e-12
    np.testing.assert_allclose(weights, best, atol=0.01)


def test_e_optimal_example(lawyer_design):
    guess = VarianceGuess.from_variances(lawyer_design, [1, 1, 1, 1, 2, 2, 2, 2])
    assert allocate_optimal("e", guess, 24).counts == (2, 2, 2, 2, 4, 4, 4, 4)


def test_power_exact_without_heterogeneity():
    design = FactorialDesign(("A", "B"))
    # every unit gains exactly one success from A, so the A effect is 1/2 for all
    only_high = np.zeros(4, dtype=int)
    only_high[treatment_index(design, (1, 0)) - 1] = 1
    three = np.zeros(4, dtype=int)
    for levels in ((1, 0), (1, 1), (0, 0)):
        three[treatment_index(design, levels) - 1] = 1
    table = PotentialOutcomesTable(design, np.array([only_high] * 4 + [three] * 4))
    index = design.effect_index("A") - 1
    assert table.heterogeneity[index] == 0
    assert table.tau_fp[index] == pytest.approx(0.5)

    plan = AllocationPlan((2, 2, 2, 2))
    se = se_tilde(VarianceGuess(design, tuple(table.S2)), plan)
    assert power_exact(table, plan, "A") == pytest.approx(power_two_sided(0.5, se))
