from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from levysheet.field_approx import kac_stroock_kernels, kernel_grid
from levysheet.levy_char import Brownian, ThetaConfig
from levysheet.sheet_sim import RngStream, sample_sheet
from levysheet.stat_harness import (
    DegenerateVariance,
    MCEstimate,
    TestReport,
    WindowViolation,
    covariance_limit_test,
    fourth_moment_bound_scan,
    fourth_moment_ratio,
    functional_moment_inequality_test,
    increment_second_moment_test,
    kolmogorov_sf,
    ks_one_sample,
    ks_two_sample,
    mc_moments,
    normality_test,
)


def test_constant_sampler():
    est = mc_moments(lambda s: 2.0, 10, RngStream(0))
    assert (est.mean, est.variance, est.stderr) == (2.0, 0.0, 0.0)


def test_three_values():
    vals = iter([1.0, 2.0, 3.0])
    est = mc_moments(lambda s: next(vals), 3, RngStream(0))
    assert est.mean == 2.0 and est.variance == 1.0
    assert est.stderr == pytest.approx(math.sqrt(1 / 3))


def test_too_few_replicates():
    with pytest.raises(ValueError):
        mc_moments(lambda s: 1.0, 1, RngStream(0))


def test_standard_normal_mean():
    M = 100_000
    est = mc_moments(lambda s: s.generator().standard_normal(), M, RngStream(1))
    assert abs(est.mean) <= 5 / math.sqrt(M)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
@settings(max_examples=200, deadline=None)
def test_moments_match_two_pass_definition(xs):
    est = MCEstimate.from_samples(xs)
    mean = math.fsum(xs) / len(xs)
    var = math.fsum((x - mean) ** 2 for x in xs) / (len(xs) - 1)
    assert est.mean == pytest.approx(mean, rel=1e-9, abs=1e-6)
    assert est.variance == pytest.approx(var, rel=1e-7, abs=1e-3)
    assert est.stderr == pytest.approx(math.sqrt(var / len(xs)), rel=1e-7, abs=1e-3)


def test_thread_count_does_not_change_estimates():
    def sampler(s):
        return float(s.generator().standard_normal() ** 2)

    a = mc_moments(sampler, 500, RngStream(3), threads=1)
    b = mc_moments(sampler, 500, RngStream(3), threads=3)
    assert a == b


@pytest.mark.parametrize("lam", [0.3, 0.5, 0.8, 1.0, 1.36, 1.63, 2.5])
def test_kolmogorov_sf_against_scipy(lam):
    assert kolmogorov_sf(lam) == pytest.approx(special.kolmogorov(lam), abs=1e-12)


def test_ks_one_sample_statistic_against_scipy():
    x = np.random.default_rng(4).standard_normal(700)
    d, p = ks_one_sample(x, stats.norm.cdf)
    ref = stats.kstest(x, "norm")
    assert d == pytest.approx(ref.statistic, abs=1e-14)
    assert p == pytest.approx(ref.pvalue, abs=0.02)


def test_ks_two_sample_against_scipy():
    g = np.random.default_rng(5)
    a, b = g.standard_normal(800), g.standard_normal(600) + 0.1
    d, p = ks_two_sample(a, b)
    ref = stats.ks_2samp(a, b)
    assert d == pytest.approx(ref.statistic, abs=1e-14)
    assert p == pytest.approx(ref.pvalue, abs=0.02)


def test_ks_identical_samples():
    x = np.random.default_rng(6).standard_normal(100)
    d, p = ks_two_sample(x, x)
    assert d == 0.0 and p == pytest.approx(1.0)


def test_normality_passes_on_normals():
    x = np.random.default_rng(7).standard_normal(10_000)
    assert normality_test(x, 0.0, 1.0).passed


def test_normality_fails_on_constant():
    rep = normality_test(np.zeros(100), 0.0, 1.0)
    assert not rep.passed
    assert "D=0.50000" in rep.notes


def test_normality_degenerate_variance():
    with pytest.raises(DegenerateVariance):
        normality_test(np.zeros(10), 0.0, 0.0)


def test_covariance_targets():
    z = np.random.default_rng(8).standard_normal((4000, 2))
    values = z[:, 0] + 1j * z[:, 1]
    reports = covariance_limit_test(values, values, (1, 1), (1, 1))
    assert [r.target for r in reports] == [1.0, 1.0, 0.0]
    assert all(r.passed for r in reports)
    assert covariance_limit_test(values, values, (0.5, 1), (1, 0.5))[0].target == 0.25


def test_cross_tolerance_is_fixed_when_given():
    z = np.random.default_rng(9).standard_normal(1000) * (1 + 1j)
    rep = covariance_limit_test(z, z, (1, 1), (1, 1), cross_tol=0.1)[2]
    assert rep.tolerance == 0.1 and not rep.passed


def test_second_moment_targets():
    # Re and Im each carry variance equal to the area 0.25, so E|inc|^2 = 0.5
    z = np.random.default_rng(10).standard_normal((5000, 2)) * 0.5
    inc = z[:, 0] + 1j * z[:, 1]
    rep = increment_second_moment_test(inc, (0.25, 0.25, 0.75, 0.75))
    assert rep.target == 0.5 and rep.passed
    flat = increment_second_moment_test(np.zeros(10), (0.5, 0.5, 0.5, 1.0))
    assert flat.target == 0.0 and flat.estimate.mean == 0.0 and flat.passed


def test_fourth_moment_of_complex_gaussian():
    z = np.random.default_rng(11).standard_normal((200_000, 2))
    # components with variance equal to the area A give E|inc|^4 = 8 A^2
    inc = (z[:, 0] + 1j * z[:, 1]) * 0.5
    est = fourth_moment_ratio(inc, (0, 0, 0.5, 0.5))
    assert abs(est.mean - 8.0) <= 5 * est.stderr


def test_fourth_moment_scan_growth_rule():
    g = np.random.default_rng(12)
    rect = (0.0, 0.0, 1.0, 1.0)
    tame = {(e, rect): g.standard_normal(2000) for e in (0.2, 0.1, 0.05)}
    assert fourth_moment_bound_scan(tame).passed
    wild = dict(tame)
    wild[(0.02, rect)] = 3 * g.standard_normal(2000)
    assert not fourth_moment_bound_scan(wild).passed


@pytest.mark.parametrize(
    "window",
    [(0.2, 0.6, 0.5, 0.75), (0.5, 0.75, 0.3, 0.9), (0.5, 0.4, 0.5, 0.75), (0.6, 1.1, 0.5, 0.75), (0.0, 0.1, 0.5, 0.7)],
)
def test_window_violations(window):
    with pytest.raises(WindowViolation):
        functional_moment_inequality_test(lambda n, s: None, lambda s, y: 1.0 + 0 * s, 2, [window], [4], 2,
                                          RngStream(0))


def _sampler(n, stream):
    cfg = ThetaConfig(1.0, Brownian(2.0))
    return kac_stroock_kernels(sample_sheet(cfg.model, kernel_grid(cfg, n, 64), stream), cfg, n)


def test_zero_test_function():
    scan = functional_moment_inequality_test(_sampler, None, 4, [(0.5, 0.75, 0.5, 0.75)], [4, 16], 10, RngStream(1))
    assert scan.passed
    assert scan.reports[0].estimate.mean == 0.0


def test_second_moment_ratio_approaches_one():
    # f = 1: E (int_W theta)^2 tends to the window area, so the ratio tends to 1
    scan = functional_moment_inequality_test(
        _sampler, lambda s, y: np.ones(np.broadcast(s, y).shape), 2, [(0.5, 0.75, 0.5, 0.75)], [4, 64], 400,
        RngStream(2)
    )
    assert scan.passed
    last = scan.rows[-1]
    assert abs(last["ratio"] - 1.0) <= 5 * last["stderr"] + 0.15


def test_report_verdict():
    est = MCEstimate(1.1, 0.0, 0.0, 1)
    assert TestReport("x", 1.0, est, 0.1000001).passed
    assert not TestReport("x", 1.0, est, 0.05).passed
    assert TestReport("x", 1.0, est, 0.2).row()["verdict"] == "pass"
