from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from levysheet.field_approx import (
    FieldEvaluator,
    GridTooCoarse,
    NonIntegerDriver,
    approx_field,
    classic_kac_stroock,
    classic_kac_stroock_exact,
    exact_point_field,
    field_grid,
    field_mean,
    increment_from_corners,
    kac_stroock_kernels,
    kernel_grid,
)
from levysheet.levy_char import Brownian, Poisson, ThetaConfig, normalization_K
from levysheet.sheet_sim import GridSpec, RngStream, SheetPath, sample_points, sample_sheet

BROWNIAN = ThetaConfig(1.0, Brownian())
POISSON = ThetaConfig(math.pi / 2, Poisson(1.0, 1.0))


def zero_value(eps, h, s=1.0, t=1.0):
    grid = GridSpec(s / eps, t / eps, int(round(s / eps / h)), int(round(t / eps / h)))
    return approx_field(SheetPath.zeros(grid), BROWNIAN, eps, [(s, t)], K=1.0).values[0]


def test_zero_driver_closed_form():
    assert abs(zero_value(1.0, 1e-2) - 4 / 9) <= 1e-3 * 4 / 9
    assert abs(zero_value(0.5, 1e-2) - 16 / 9) <= 1e-3 * 16 / 9


def test_zero_driver_refinement():
    hs = [0.04, 0.02, 0.01, 0.005]
    errs = np.array([abs(zero_value(1.0, h) - 4 / 9) for h in hs])
    assert np.all(np.diff(errs) < 0)
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.0


def test_axes_give_zero():
    grid = GridSpec(10.0, 10.0, 100, 100)
    path = sample_sheet(Brownian(), grid, RngStream(1))
    vals = approx_field(path, BROWNIAN, 0.1, [(0.0, 0.7), (0.4, 0.0), (0.0, 0.0)]).values
    assert np.all(vals == 0)


def test_grid_too_coarse():
    grid = GridSpec(10.0, 10.0, 10, 10)
    path = SheetPath.zeros(grid)
    with pytest.raises(GridTooCoarse):
        approx_field(path, BROWNIAN, 1.0, [(2.0, 5.0)])


def test_window_beyond_grid():
    path = SheetPath.zeros(GridSpec(1.0, 1.0, 64, 64))
    with pytest.raises(ValueError):
        approx_field(path, BROWNIAN, 0.5, [(1.0, 1.0)])


def test_classic_rejects_real_driver():
    path = sample_sheet(Brownian(), GridSpec(5.0, 5.0, 50, 50), RngStream(2))
    with pytest.raises(NonIntegerDriver):
        classic_kac_stroock(path, 0.2, [(1.0, 1.0)])


def test_classic_zero_counts_closed_form():
    grid = GridSpec(1.0, 1.0, 100, 100)
    val = classic_kac_stroock(SheetPath.zeros(grid), 1.0, [(1.0, 1.0)])[0]
    assert abs(val - 4 / 9) <= 1e-3 * 4 / 9


@given(k=st.floats(0.1, 10.0), s=st.floats(0.05, 1.0))
@settings(max_examples=25, deadline=None)
def test_linear_in_K_and_vanishing_on_axis(k, s):
    grid = GridSpec(10.0, 10.0, 200, 200)
    path = sample_sheet(Brownian(), grid, RngStream(3))
    ev = FieldEvaluator(path, BROWNIAN.theta)
    one = approx_field(path, BROWNIAN, 0.1, [(s, 1.0)], K=1.0, evaluator=ev).values[0]
    many = approx_field(path, BROWNIAN, 0.1, [(s, 1.0), (s, 0.0)], K=k, evaluator=ev).values
    assert many[0] == pytest.approx(k * one, rel=1e-12, abs=1e-14)
    assert many[1] == 0


def test_conjugation_on_integer_driver():
    path = sample_sheet(Poisson(1.0, 1.0), GridSpec(10.0, 10.0, 200, 200), RngStream(4))
    pts = [(1.0, 1.0), (0.5, 0.8)]
    a = approx_field(path, ThetaConfig(math.pi / 2, Poisson(1.0, 1.0)), 0.1, pts).values
    b = approx_field(path, ThetaConfig(3 * math.pi / 2, Poisson(1.0, 1.0)), 0.1, pts).values
    assert np.allclose(b, np.conj(a), rtol=1e-12, atol=1e-14)


def test_kernel_integral_equals_field():
    n = 64
    cfg = BROWNIAN
    grid = GridSpec(math.sqrt(n), math.sqrt(n), 128, 128)
    path = sample_sheet(Brownian(), grid, RngStream(5))
    ker = kac_stroock_kernels(path, cfg, n)
    eps = n**-0.5
    for t, x in [(1.0, 1.0), (0.5, 0.75), (0.25, 1.0)]:
        direct = approx_field(path, cfg, eps, [(t, x)]).values[0]
        assert abs(ker.integral(t, x) - direct) <= 1e-10 * max(1.0, abs(direct))


def test_kernels_of_zero_driver():
    n = 16
    grid = GridSpec(4.0, 4.0, 32, 32)
    ker = kac_stroock_kernels(SheetPath.zeros(grid), BROWNIAN, n)
    K = normalization_K(BROWNIAN)
    assert np.allclose(ker.theta1, n * K * np.sqrt(np.outer(ker.s_mid, ker.y_mid)))
    assert not ker.theta2.any()


def test_kernel_pythagorean_identity():
    n = 16
    grid = GridSpec(4.0, 4.0, 32, 32)
    ker = kac_stroock_kernels(sample_sheet(Brownian(), grid, RngStream(6)), BROWNIAN, n)
    amp2 = (n * ker.K) ** 2 * np.outer(ker.s_mid, ker.y_mid)
    assert np.allclose(ker.theta1**2 + ker.theta2**2, amp2, rtol=1e-12)


def test_kernel_cell_averages():
    grid = GridSpec(4.0, 4.0, 32, 32)
    ker = kac_stroock_kernels(sample_sheet(Brownian(), grid, RngStream(7)), BROWNIAN, 16)
    coarse = ker.cell_averages(1, 8, 16)
    assert coarse.shape == (8, 16)
    assert coarse[0, 0] == pytest.approx(ker.theta1[:4, :2].mean())
    with pytest.raises(ValueError):
        ker.cell_averages(1, 12, 16)


def test_kernel_grid_rule():
    g = kernel_grid(ThetaConfig(1.0, Brownian(2.0)), 256, 128)
    assert g.nx == g.ny == 512 and g.x_max == 16.0
    assert kernel_grid(BROWNIAN, 16, 128).nx == 128


def test_field_grid_rule():
    g = field_grid(BROWNIAN, 0.02, 1.0, 1.0, phase_step=1.0, min_cells=64)
    assert g.nx == g.ny == 1250 and g.x_max == pytest.approx(50.0)
    assert field_grid(BROWNIAN, 0.2).nx == 64


def test_field_mean_against_double_integral():
    eps, s, t = 0.2, 1.0, 0.8
    K = normalization_K(BROWNIAN)
    a = BROWNIAN.a
    val, _ = integrate.dblquad(lambda y, x: math.sqrt(x * y) * math.exp(-a * x * y), 0, s / eps, 0, t / eps,
                               epsabs=1e-12, epsrel=1e-10)
    got = field_mean(BROWNIAN, eps, s, t)
    assert got.real == pytest.approx(eps * K * val, rel=1e-7)
    assert abs(got.imag) < 1e-14


def test_field_mean_matches_exact_point_ensemble():
    eps, M = 0.1, 2000
    root = RngStream(8)
    vals = np.array([
        exact_point_field(sample_points(Poisson(1.0, 1.0), 10.0, 10.0, root.replicate(r)), POISSON, eps,
                          [(1.0, 1.0)]).values[0]
        for r in range(M)
    ])
    target = field_mean(POISSON, eps, 1.0, 1.0)
    for got, tgt in ((vals.real, target.real), (vals.imag, target.imag)):
        assert abs(got.mean() - tgt) <= 5 * got.std(ddof=1) / math.sqrt(M)


def test_gridded_converges_to_exact_on_same_points():
    eps = 0.2
    pts = sample_points(Poisson(1.0, 1.0), 5.0, 5.0, RngStream(9))
    evals = [(1.0, 1.0), (0.6, 0.9)]
    exact = exact_point_field(pts, POISSON, eps, evals).values
    errs = []
    for cells in (50, 200, 800):
        path = pts.to_sheet(GridSpec(5.0, 5.0, cells, cells))
        errs.append(np.max(np.abs(approx_field(path, POISSON, eps, evals).values - exact)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.02


def test_classic_gridded_converges_to_exact():
    eps = 0.2
    pts = sample_points(Poisson(1.0, 1.0), 5.0, 5.0, RngStream(10))
    exact = classic_kac_stroock_exact(pts, eps, [(1.0, 1.0)])[0]
    errs = [
        abs(classic_kac_stroock(pts.to_sheet(GridSpec(5.0, 5.0, c, c)), eps, [(1.0, 1.0)])[0] - exact)
        for c in (50, 200, 800)
    ]
    assert errs[0] > errs[2] and errs[2] < 0.02


def test_exact_field_of_empty_sheet():
    pts = sample_points(Poisson(1e-9, 1.0), 2.0, 2.0, RngStream(11))
    assert len(pts.x) == 0
    val = exact_point_field(pts, POISSON, 1.0, [(1.0, 1.0)], K=1.0).values[0]
    assert val == pytest.approx(4 / 9, rel=1e-12)


def test_increment_from_corners():
    vals = {(0.5, 0.5): 1.0, (1.0, 0.5): 2.0, (0.5, 1.0): 3.0, (1.0, 1.0): 7.0}
    assert increment_from_corners(vals, 0.5, 0.5, 1.0, 1.0) == 7.0 - 3.0 - 2.0 + 1.0
