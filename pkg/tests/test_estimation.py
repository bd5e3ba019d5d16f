import math
from fractions import Fraction

import numpy as np
import pytest

from factorial_platform.design import FactorialDesign
from factorial_platform.errors import (
    DegenerateInferenceError,
    DesignError,
    InputError,
    VarianceUndefinedError,
)
from factorial_platform.estimation import (
    Alternative,
    Correction,
    GroupSummary,
    ObservedDataset,
    adjust_pvalues,
    estimate_effects,
    estimate_effects_exact,
    estimate_mean,
    infer,
    neyman_covariance,
    neyman_se,
    neyman_variance_exact,
    normal_cdf,
    normal_quantile,
    summarize,
    upper_point,
)

from conftest import LAWYER_EFFECTS


def test_effects_are_exact(lawyer_summary):
    assert estimate_effects_exact(lawyer_summary) == LAWYER_EFFECTS
    np.testing.assert_allclose(
        estimate_effects(lawyer_summary),
        [0.1875, 0.1042, -0.0208, 0.0625, -0.0625, 0.1042, 0.0625],
        atol=5e-5,
    )


def test_grand_mean(lawyer_summary):
    assert estimate_mean(lawyer_summary) == pytest.approx(27 / 96)


def test_neyman_se(lawyer_summary):
    assert neyman_se(lawyer_summary) == pytest.approx(0.0916753, abs=1e-6)
    assert neyman_variance_exact(lawyer_summary) == sum(lawyer_summary.s2_exact) / (12 * 16)


def test_neyman_covariance_diagonal(lawyer_summary):
    cov = neyman_covariance(lawyer_summary)
    np.testing.assert_allclose(np.diag(cov), neyman_se(lawyer_summary) ** 2)


def test_two_sided_ier_race_row(lawyer_summary):
    result = infer(lawyer_summary)
    race = result.row("R")
    assert race.estimate == pytest.approx(0.1875)
    assert race.std_error == pytest.approx(0.0917, abs=1e-4)
    assert race.statistic == pytest.approx(2.0447, abs=1e-3)
    assert race.lower == pytest.approx(0.0078, abs=5e-4)
    assert race.upper == pytest.approx(0.3672, abs=5e-4)
    assert race.p_raw == pytest.approx(0.0409, abs=5e-4)
    assert race.reject
    assert [row.reject for row in result.rows].count(True) == 1


def test_bonferroni(lawyer_summary):
    result = infer(lawyer_summary, correction="bonferroni")
    assert result.family_size == 7
    assert result.row("R").p_adjusted == pytest.approx(0.29, abs=5e-3)
    for row in result.rows[1:]:
        assert row.p_adjusted == 1.0
    assert not any(row.reject for row in result.rows)


def test_eer_alias():
    assert Correction.parse("EER") is Correction.BONFERRONI
    with pytest.raises(InputError):
        Correction.parse("holm")


def test_family_changes_divisor(lawyer_summary):
    result = infer(lawyer_summary, correction="bonferroni", family=["R", "G"])
    assert result.family_size == 2
    assert [row.label for row in result.rows] == ["R", "G"]
    assert result.row("R").p_adjusted == pytest.approx(2 * result.row("R").p_raw)


def test_one_sided_half_lines(lawyer_summary):
    greater = infer(lawyer_summary, alternative="greater").row("R")
    se = neyman_se(lawyer_summary)
    assert greater.lower == pytest.approx(0.1875 - upper_point(0.05) * se)
    assert math.isinf(greater.upper)
    assert greater.to_record()["upper"] is None
    assert greater.p_raw == pytest.approx(0.0409 / 2, abs=5e-4)

    less = infer(lawyer_summary, alternative=Alternative.LESS).row("R")
    assert math.isinf(less.lower)
    assert less.p_raw == pytest.approx(1 - greater.p_raw)


def test_clip(lawyer_summary):
    row = infer(lawyer_summary, alternative="greater", clip=True).row("R")
    assert row.upper == 1.0


def test_interval_midpoint(lawyer_summary):
    for row in infer(lawyer_summary).rows:
        assert (row.lower + row.upper) / 2 == pytest.approx(row.estimate)


def test_zero_variance_is_degenerate():
    design = FactorialDesign(("A",))
    summary = GroupSummary(design, (3, 3), (0, 3))
    with pytest.raises(DegenerateInferenceError):
        infer(summary)


def test_single_unit_group():
    design = FactorialDesign(("A",))
    summary = GroupSummary(design, (1, 3), (1, 2))
    with pytest.raises(VarianceUndefinedError):
        neyman_se(summary)
    assert summary.to_records()[0]["s2"] is None


def test_empty_group_names_treatment(lawyer_design):
    with pytest.raises(DesignError, match=r"j=2 \(001\)"):
        GroupSummary(lawyer_design, (12, 0, 12, 12, 12, 12, 12, 12), (2, 0, 2, 3, 5, 2, 5, 6))


def test_summarize_counts():
    design = FactorialDesign(("A",))
    data = ObservedDataset.from_records(design, [(1, 1), (1, 0), (2, 1), (2, 1), (2, 0)])
    summary = summarize(data)
    assert summary.n == (2, 3)
    assert summary.n1 == (1, 2)
    assert summary.s2_exact == (Fraction(1, 2), Fraction(1, 3))


def test_observed_dataset_validates():
    design = FactorialDesign(("A",))
    with pytest.raises(InputError):
        ObservedDataset(design, np.array([1, 3]), np.array([0, 1]))
    with pytest.raises(InputError):
        ObservedDataset(design, np.array([1, 2]), np.array([0, 2]))


def test_adjust_pvalues_caps_at_one():
    adjusted = adjust_pvalues(np.array([0.01, 0.3]), Correction.BONFERRONI, 7)
    np.testing.assert_allclose(adjusted, [0.07, 1.0])


def test_quantile_domain():
    with pytest.raises(InputError):
        normal_quantile(1.0)
    assert upper_point(0.025) == pytest.approx(1.959964, abs=1e-6)
    with pytest.raises(InputError):
        normal_quantile(0.0)


# Φ(x) to double precision
NORMAL_CDF_REFERENCE = [
    (-8.0, 6.220960574271785e-16),
    (-6.0, 9.865876450376946e-10),
    (-5.0, 2.866515718791939e-07),
    (-4.0, 3.167124183311992e-05),
    (-3.0, 0.0013498980316300946),
    (-2.5, 0.006209665325776132),
    (-2.0, 0.022750131948179195),
    (-1.96, 0.024997895148220435),
    (-1.5, 0.06680720126885807),
    (-1.0, 0.15865525393145705),
    (-0.5, 0.3085375387259869),
    (-0.25, 0.4012936743170763),
    (0.0, 0.5),
    (0.25, 0.5987063256829237),
    (0.5, 0.6914624612740131),
    (1.0, 0.8413447460685429),
    (1.5, 0.9331927987311419),
    (1.96, 0.9750021048517795),
    (2.0, 0.9772498680518208),
    (3.0, 0.9986501019683699),
]


@pytest.mark.parametrize("x, expected", NORMAL_CDF_REFERENCE)
def test_normal_cdf_reference_values(x, expected):
    assert abs(normal_cdf(x) - expected) <= 1e-10
    assert normal_cdf(x) == pytest.approx(expected, rel=1e-7)


def test_normal_cdf_matches_table_statistic():
    assert normal_cdf(2.0447) == pytest.approx(0.97955, abs=1e-5)
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)


def test_quantile_inverts_cdf():
    # the lower tail keeps full relative precision; the upper half uses Φ(-x) = 1 - Φ(x)
    for x in np.linspace(-6, 6, 121):
        if x <= 0:
            assert abs(normal_quantile(normal_cdf(x)) - x) <= 1e-9
        else:
            assert abs(-normal_quantile(normal_cdf(-x)) - x) <= 1e-9
            # direct composition loses the tail to rounding near q = 1
            assert abs(normal_quantile(normal_cdf(x)) - x) <= 2e-8
