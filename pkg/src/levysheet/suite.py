"""The verification suite behind ``verify-convergence``.

Each check returns TestReports; checks sharing an expensive Monte Carlo run
(the Brownian X_eps ensemble, the white-noise reference) compute it once.
Every random stream is derived from the config seed and a fixed label, so the
suite output depends on nothing but the config.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import TEST_FUNCTIONS, ExperimentConfig
from .field_approx import (
    FieldEvaluator,
    approx_field,
    classic_kac_stroock_exact,
    field_grid,
    field_mean,
    increment_from_corners,
    kac_stroock_kernels,
    kernel_grid,
)
from .levy_char import Brownian, Poisson, ThetaConfig, exponent_a, exponent_b, model_from_dict, normalization_K
from .sheet_sim import GridSpec, RngStream, SheetPath, derive_seed, rect_increment, sample_increments, sample_points, sample_sheet
from .spde_solver import (
    Drift,
    HeatConfig,
    StepOperators,
    complex_brownian_sheet,
    compare_laws,
    green_function,
    kernel_driven_marginals,
    variance_quadrature,
    variance_series,
    white_noise_marginals,
)
from .parallel import parallel_map
from .stat_harness import (
    MCEstimate,
    TestReport,
    covariance_estimate,
    covariance_limit_test,
    fourth_moment_bound_scan,
    fourth_moment_ratio,
    functional_moment_inequality_test,
    increment_second_moment_test,
    normality_test,
)

__all__ = ["CriterionResult", "SuiteResult", "FieldRun", "run_field_ensemble", "verify_convergence", "CRITERIA"]

CRITERIA = {
    "C1": "exact identities",
    "C2": "sampler characteristic functions",
    "C3": "quadrature oracle",
    "C4": "limit covariances of X_eps",
    "C5": "increment second moment",
    "C6": "fourth-moment boundedness",
    "C7": "Gaussianity of Re X_eps",
    "C8": "classic real field variance",
    "C9": "heat equation variance and eigenfunction oracles",
    "C10": "kernel-driven solutions against white noise",
    "F": "functional moment inequalities",
}


@dataclass
class CriterionResult:
    key: str
    title: str
    reports: list[TestReport]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


@dataclass
class SuiteResult:
    seed: int
    criteria: list[CriterionResult]
    diagnostics: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def reports(self) -> list[TestReport]:
        return [r for c in self.criteria for r in c.reports]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def rows(self) -> list[dict]:
        out = []
        for c in self.criteria:
            for r in c.reports:
                row = r.row()
                row["test"] = f"{c.key}:{row['test']}"
                out.append(row)
        return out

    def fingerprint(self) -> str:
        """Digest of every reported number, bit for bit."""
        h = hashlib.sha256()
        for row in self.rows():
            for key in ("test", "target", "estimate", "stderr", "tolerance", "verdict"):
                v = row[key]
                h.update((float(v).hex() if isinstance(v, float) else str(v)).encode())
                h.update(b"|")
        for d in self.diagnostics:
            h.update(repr(sorted((k, float(v).hex() if isinstance(v, float) else str(v)) for k, v in d.items())).encode())
        return h.hexdigest()


def _stream(cfg: ExperimentConfig, *label) -> RngStream:
    return RngStream(derive_seed(cfg.seed, *label))


def _exact(name: str, error: float, tol: float, note: str = "") -> TestReport:
    return TestReport(name, 0.0, MCEstimate(float(error), 0.0, 0.0, 1), tol, note)


# ---------------------------------------------------------------- criterion 1


def check_exact_identities(cfg: ExperimentConfig) -> list[TestReport]:
    tc = cfg.field_theta()
    grid = GridSpec(4.0, 3.0, 40, 30)
    path = sample_sheet(tc.model, grid, _stream(cfg, "identities", "sheet"))
    out = [
        _exact("sheet_axis_vanishing", max(np.abs(path.cumulative[0]).max(), np.abs(path.cumulative[:, 0]).max()), 0.0),
    ]
    on_axes = approx_field(path, tc, 1.0, [(0.0, 2.0), (3.0, 0.0), (0.0, 0.0)]).values
    out.append(_exact("field_axis_vanishing", np.abs(on_axes).max(), 0.0))

    cum = path.cumulative
    full = rect_increment(cum, grid, 0, 0, 4, 3)
    xs, ys = (0.0, 1.2, 2.5, 4.0), (0.0, 0.9, 3.0)
    parts = sum(
        rect_increment(cum, grid, xs[a], ys[b], xs[a + 1], ys[b + 1]) for a in range(len(xs) - 1) for b in range(len(ys) - 1)
    )
    scale = max(1.0, np.abs(path.cell_increments).sum())
    out.append(_exact("additivity_real", abs(parts - full) / scale, 1e-10, "relative to sum |cell increments|"))

    pois = sample_sheet(Poisson(1.0, 1.0), grid, _stream(cfg, "identities", "poisson"))
    pc = pois.cumulative
    pfull = rect_increment(pc, grid, 0, 0, 4, 3)
    pparts = sum(
        rect_increment(pc, grid, xs[a], ys[b], xs[a + 1], ys[b + 1]) for a in range(len(xs) - 1) for b in range(len(ys) - 1)
    )
    out.append(_exact("additivity_integer", abs(pparts - pfull), 0.0, "bit-exact"))

    gen = _stream(cfg, "identities", "green").generator()
    t = gen.uniform(0.01, 1.0, 50)
    x = gen.uniform(0.0, 1.0, 50)
    y = gen.uniform(0.0, 1.0, 50)
    N = cfg.spde.green_terms
    sym = max(abs(green_function(a, b, c, N) - green_function(a, c, b, N)) for a, b, c in zip(t, x, y))
    out.append(_exact("green_symmetry", sym, 0.0))
    edge0 = max(abs(green_function(a, b, 0.0, N)) for a, b in zip(t, x))
    edge1 = max(abs(green_function(a, b, 1.0, N)) for a, b in zip(t, x))
    out.append(_exact("green_zero_at_y0", edge0, 0.0))
    out.append(_exact("green_zero_at_y1", edge1, 1e-12, "sin(n pi) rounds to ~1e-16 per term"))

    n = 16
    root = math.sqrt(n)
    ker = kac_stroock_kernels(sample_sheet(tc.model, GridSpec(root, root, 32, 32), _stream(cfg, "identities", "kernel")), tc, n)
    expect = n**2 * ker.K**2 * np.outer(ker.s_mid, ker.y_mid)
    pyth = np.abs(ker.theta1**2 + ker.theta2**2 - expect) / expect
    out.append(_exact("kernel_pythagorean", pyth.max(), 1e-10, "relative"))

    # cos even / sin odd in theta only modulo 2 pi, so the driver must be
    # integer valued; a unit Poisson driver has equal K at theta and 2 pi - theta
    ptc = ThetaConfig(math.pi / 2, Poisson(1.0, 1.0))
    qtc = ThetaConfig(2 * math.pi - math.pi / 2, Poisson(1.0, 1.0))
    pts = [(1.0, 1.0), (2.5, 0.7), (4.0, 3.0)]
    xp = approx_field(pois, ptc, 1.0, pts).values
    xq = approx_field(pois, qtc, 1.0, pts).values
    out.append(_exact("conjugation_re", np.abs(xp.real - xq.real).max(), 1e-10))
    out.append(_exact("conjugation_im", np.abs(xp.imag + xq.imag).max(), 1e-10))
    return out


# ---------------------------------------------------------------- criterion 2


def check_characteristic_functions(cfg: ExperimentConfig, threads: int = 1) -> list[TestReport]:
    ch, tol = cfg.charfn, cfg.tolerances

    def one(item):
        k, spec = item
        model = model_from_dict(spec)
        inc = sample_increments(model, 1.0, ch.replicates, _stream(cfg, "charfn", k).generator())
        reps = []
        for xi in ch.xis:
            a, b = float(exponent_a(model, xi)), float(exponent_b(model, xi))
            for part, vals, target in (
                ("re", np.cos(xi * inc), math.exp(-a) * math.cos(b)),
                ("im", np.sin(xi * inc), -math.exp(-a) * math.sin(b)),
            ):
                est = MCEstimate.from_samples(vals)
                reps.append(TestReport(f"ecf[{model.tag}][xi={xi:g}][{part}]", target, est, tol.n_se * est.stderr,
                                       f"{tol.n_se:g} SE"))
        return reps

    return [r for reps in parallel_map(one, list(enumerate(ch.models)), threads) for r in reps]


# ---------------------------------------------------------------- criterion 3


def zero_driver_error(eps: float, s: float, t: float, h: float) -> float:
    """Relative quadrature error of X_eps(s, t) for L = 0, K = 1."""
    xm, ym = s / eps, t / eps
    grid = GridSpec(xm, ym, int(round(xm / h)), int(round(ym / h)))
    val = approx_field(SheetPath.zeros(grid), ThetaConfig(1.0, Brownian()), eps, [(s, t)], K=1.0).values[0]
    exact = 4.0 / 9.0 * (s * t) ** 1.5 / eps**2
    return abs(val - exact) / exact


def check_quadrature(cfg: ExperimentConfig) -> list[TestReport]:
    rel = cfg.tolerances.quadrature_rel
    out = [
        _exact("zero_driver[eps=1](1,1)", zero_driver_error(1.0, 1.0, 1.0, 1e-2), rel, f"relative <= {rel:g}"),
        _exact("zero_driver[eps=0.5](1,1)", zero_driver_error(0.5, 1.0, 1.0, 1e-2), rel, f"relative <= {rel:g}"),
    ]
    hs = [0.04, 0.02, 0.01, 0.005]
    errs = np.array([zero_driver_error(1.0, 1.0, 1.0, h) for h in hs])
    out.append(_exact("zero_driver_refinement_monotone", float(np.sum(np.diff(errs) >= 0)), 0.0,
                      "count of refinements that failed to reduce the error"))
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    out.append(_exact("zero_driver_order_shortfall", max(0.0, 1.0 - order), 0.0, f"observed order {order:.3f} >= 1"))
    return out


# ---------------------------------------------------------- criteria 4 to 7


@dataclass
class FieldRun:
    """X_eps samples of one Brownian ensemble: values[eps] is (M, P) complex."""

    points: list[tuple[float, float]]
    values: dict[float, np.ndarray]
    grid: GridSpec

    def at(self, eps: float, point) -> np.ndarray:
        return self.values[eps][:, self.points.index(tuple(map(float, point)))]

    def increments(self, eps: float, rect) -> np.ndarray:
        s, t, s2, t2 = map(float, rect)
        corners = {p: self.at(eps, p) for p in ((s, t), (s2, t), (s, t2), (s2, t2))}
        return increment_from_corners(corners, s, t, s2, t2)


def _rect_corners(rect) -> list[tuple[float, float]]:
    s, t, s2, t2 = map(float, rect)
    return [(s, t), (s2, t), (s, t2), (s2, t2)]


def field_points(cfg: ExperimentConfig) -> list[tuple[float, float]]:
    f = cfg.field
    pts = {tuple(map(float, p)) for p in f.eval_points}
    pts.add((f.S, f.T))
    pts.update(tuple(map(float, p)) for p in f.covariance_pair)
    pts.update(_rect_corners(f.second_moment_rect))
    for rect in f.fourth_moment_rects:
        pts.update(_rect_corners(rect))
    return sorted(pts)


def run_field_ensemble(cfg: ExperimentConfig, threads: int = 1, M: int | None = None,
                       eps_list=None, points=None) -> FieldRun:
    """One sheet per replicate, fine enough for the smallest eps, evaluated at
    every eps and point."""
    f = cfg.field
    tc = cfg.field_theta()
    K = normalization_K(tc)
    eps_list = sorted({float(e) for e in (eps_list or [*f.scan_epsilons, f.epsilon])}, reverse=True)
    points = points or field_points(cfg)
    grid = field_grid(tc, min(eps_list), f.S, f.T, f.phase_step, f.min_cells)
    pts = np.array(points, dtype=float)
    M = f.replicates if M is None else M
    root = _stream(cfg, "field")

    def one(r: int) -> np.ndarray:
        path = sample_sheet(tc.model, grid, root.replicate(r))
        ev = FieldEvaluator(path, tc.theta)
        return np.stack([eps * K * ev.integrals(pts[:, 0] / eps, pts[:, 1] / eps) for eps in eps_list])

    stacked = np.stack(parallel_map(one, range(M), threads))  # (M, E, P)
    return FieldRun(list(points), {eps: stacked[:, k, :] for k, eps in enumerate(eps_list)}, grid)


def check_limit_covariances(cfg: ExperimentConfig, run: FieldRun) -> list[TestReport]:
    f, tol = cfg.field, cfg.tolerances
    p = (f.S, f.T)
    xp = run.at(f.epsilon, p)
    out = covariance_limit_test(xp, xp, p, p, tol.n_se, tol.bias, cross_tol=tol.cross_cov, name="cov")
    a, b = (tuple(map(float, q)) for q in f.covariance_pair)
    out += covariance_limit_test(run.at(f.epsilon, a), run.at(f.epsilon, b), a, b, tol.n_se, tol.bias, name="cov")
    return out


def check_second_moment(cfg: ExperimentConfig, run: FieldRun) -> list[TestReport]:
    rect = cfg.field.second_moment_rect
    return [increment_second_moment_test(run.increments(cfg.field.epsilon, rect), tuple(rect),
                                         cfg.tolerances.second_moment_rel)]


def check_fourth_moments(cfg: ExperimentConfig, run: FieldRun) -> tuple[list[TestReport], list[dict]]:
    f, tol = cfg.field, cfg.tolerances
    samples = {
        (eps, tuple(rect)): run.increments(eps, rect) for eps in f.scan_epsilons for rect in f.fourth_moment_rects
    }
    scan = fourth_moment_bound_scan(samples, tol.fourth_moment_cap, tol.growth)
    grid = GridSpec(1.0, 1.0, 4, 4)
    root = _stream(cfg, "gaussian_reference")
    inc = np.array([rect_increment(complex_brownian_sheet(grid, root.replicate(r)), grid, 0, 0, 1, 1)
                    for r in range(f.gaussian_replicates)])
    est = fourth_moment_ratio(inc, (0.0, 0.0, 1.0, 1.0))
    ref = TestReport("fourth_moment[complex_gaussian_reference]", 8.0, est, tol.n_se * est.stderr, f"{tol.n_se:g} SE")
    diags = [{"section": "fourth_moment", "eps": r["eps"], "rect": str(r["rect"]), "ratio": r["ratio"],
              "stderr": r["stderr"]} for r in scan.rows]
    return scan.reports + [ref], diags


def check_gaussianity(cfg: ExperimentConfig, run: FieldRun) -> tuple[list[TestReport], list[dict]]:
    f = cfg.field
    x = run.at(f.epsilon, (f.S, f.T))
    reports = [normality_test(x.real, 0.0, f.S * f.T, f"ks_normal[re]({f.S:g},{f.T:g})", cfg.tolerances.ks_alpha)]
    # X_eps is not centred at finite eps; record how far the exact mean
    # accounts for the KS distance
    exact = field_mean(cfg.field_theta(), f.epsilon, f.S, f.T)
    centred = normality_test(x.real, exact.real, f.S * f.T, "ks_normal_exact_mean", cfg.tolerances.ks_alpha)
    diags = [{
        "section": "field_mean", "eps": f.epsilon, "point": str((f.S, f.T)),
        "mean_re": float(x.real.mean()), "mean_im": float(x.imag.mean()),
        "mean_stderr_re": float(x.real.std(ddof=1) / math.sqrt(len(x))),
        "mean_stderr_im": float(x.imag.std(ddof=1) / math.sqrt(len(x))),
        "exact_mean_re": exact.real, "exact_mean_im": exact.imag,
        "ks_pvalue_about_exact_mean": centred.estimate.mean,
    }]
    return reports, diags


# ---------------------------------------------------------------- criterion 8


def classic_samples(cfg: ExperimentConfig, threads: int = 1, M: int | None = None) -> np.ndarray:
    c = cfg.classic
    s, t = map(float, c.point)
    model = Poisson(c.rate, 1.0)
    root = _stream(cfg, "classic")

    def one(r: int) -> float:
        pts = sample_points(model, s / c.epsilon, t / c.epsilon, root.replicate(r))
        return float(classic_kac_stroock_exact(pts, c.epsilon, [(s, t)])[0])

    return np.array(parallel_map(one, range(c.replicates if M is None else M), threads))


def check_classic(cfg: ExperimentConfig, threads: int = 1) -> list[TestReport]:
    tol = cfg.tolerances
    s, t = map(float, cfg.classic.point)
    x = classic_samples(cfg, threads)
    est = covariance_estimate(x, x)
    return [TestReport(f"classic_variance({s:g},{t:g})", s * t, est, tol.n_se * est.stderr + tol.bias,
                       f"{tol.n_se:g} SE + {tol.bias:g} bias allowance")]


# ---------------------------------------------------------- criteria 9 and 10


def _zero_heat(cfg: ExperimentConfig, u0=None) -> HeatConfig:
    sp = cfg.spde
    u0 = np.zeros(sp.nx + 1) if u0 is None else u0
    return HeatConfig(u0, Drift(), sp.nt, sp.nx, sp.green_terms)


def _probes(cfg: ExperimentConfig) -> list[tuple[float, float]]:
    return [tuple(map(float, p)) for p in cfg.spde.probes]


def white_reference(cfg: ExperimentConfig, label: str = "white", threads: int = 1) -> np.ndarray:
    sp = cfg.spde
    return white_noise_marginals(_zero_heat(cfg), _probes(cfg), sp.replicates, _stream(cfg, "spde", label),
                                 threads, sp.chunk)


def kernel_sampler(cfg: ExperimentConfig, n: int) -> Callable[[RngStream], object]:
    sp = cfg.spde
    tc = cfg.spde_theta()
    grid = kernel_grid(tc, n, math.lcm(sp.nt, sp.nx), sp.phase_step)
    return lambda stream: kac_stroock_kernels(sample_sheet(tc.model, grid, stream), tc, n)


def kernel_marginals(cfg: ExperimentConfig, n: int, threads: int = 1) -> np.ndarray:
    sp = cfg.spde
    return kernel_driven_marginals(_zero_heat(cfg), kernel_sampler(cfg, n), sp.component, _probes(cfg),
                                   sp.replicates, _stream(cfg, "spde", "kernel", n), threads, sp.chunk)


def check_heat_oracles(cfg: ExperimentConfig, ref: np.ndarray) -> list[TestReport]:
    sp, tol = cfg.spde, cfg.tolerances
    out = []
    for p, (t, x) in enumerate(_probes(cfg)):
        oracle = variance_quadrature(t, x, sp.green_terms)
        series = variance_series(t, x, sp.green_terms)
        out.append(_exact(f"variance_oracle_agreement({t:g},{x:g})", abs(oracle - series), 1e-9,
                          "quadrature vs series"))
        est = covariance_estimate(ref[:, p], ref[:, p])
        out.append(TestReport(f"white_noise_variance({t:g},{x:g})", oracle, est,
                              tol.n_se * est.stderr + tol.spde_rel * oracle,
                              f"{tol.n_se:g} SE + {tol.spde_rel:.0%} discretization allowance"))
    heat = _zero_heat(cfg, np.sin(np.pi * np.linspace(0.0, 1.0, sp.nx + 1)))
    sol = StepOperators(heat).run()
    for t, x in _probes(cfg):
        exact = math.exp(-math.pi**2 * t) * math.sin(math.pi * x)
        got = sol[int(round(t * sp.nt)), int(round(x * sp.nx))]
        out.append(_exact(f"eigenfunction_decay({t:g},{x:g})", abs(got - exact) / abs(exact), tol.eigen_rel, "relative"))
    return out


def check_kernel_convergence(cfg: ExperimentConfig, ref: np.ndarray, threads: int = 1) -> tuple[list[TestReport], list[dict]]:
    sp, tol = cfg.spde, cfg.tolerances
    probes = _probes(cfg)
    out = []
    ref2 = white_reference(cfg, "white-sanity", threads)
    for cmp in compare_laws(ref, ref2, probes):
        out += cmp.reports(tol.var_ratio, tol.ks_alpha, tol.n_se, name="same_law_sanity")
    diags = []
    n_top = max(sp.kernel_n)
    for n in sorted(sp.kernel_n):
        approx = kernel_marginals(cfg, n, threads)
        for p, cmp in enumerate(compare_laws(ref, approx, probes)):
            diags.append({"section": "kernel_scan", "n": n, "probe": str(cmp.probe), "mean": cmp.mean_approx.mean,
                          "mean_stderr": cmp.mean_approx.stderr, "var_ratio": cmp.var_ratio,
                          "ks_stat": cmp.ks_stat, "ks_pvalue": cmp.ks_pvalue})
            if n != n_top:
                continue
            name = f"kernel[n={n},i={sp.component}]"
            m = cmp.mean_approx
            out.append(TestReport(f"{name}[mean]{cmp.probe}", 0.0, m, tol.n_se * m.stderr, f"{tol.n_se:g} SE"))
            out += [r for r in cmp.reports(tol.var_ratio, tol.ks_alpha, tol.n_se, name=name) if "mean_diff" not in r.name]
    return out, diags


# ---------------------------------------------------------- functional check


def check_functional(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[TestReport], list[dict]]:
    fn, tol = cfg.functional, cfg.tolerances
    tc = cfg.spde_theta()
    grids = {n: kernel_grid(tc, n, 64, cfg.spde.phase_step) for n in fn.n_grid}

    def sampler(n, stream):
        return kac_stroock_kernels(sample_sheet(tc.model, grids[n], stream), tc, n)

    windows = [tuple(map(float, w)) for w in fn.windows]
    out, diags = [], []
    for order in fn.orders:
        scan = functional_moment_inequality_test(
            sampler, TEST_FUNCTIONS[fn.test_function], order, windows, fn.n_grid, fn.replicates,
            _stream(cfg, "functional"), cfg.spde.component, tol.functional_cap, tol.growth, threads,
        )
        out += scan.reports
        diags += [{"section": "functional", **{k: (str(v) if k == "window" else v) for k, v in r.items()}}
                  for r in scan.rows]
    return out, diags


# ---------------------------------------------------------------- the suite


def verify_convergence(cfg: ExperimentConfig, threads: int = 1, only: set[str] | None = None,
                       progress: Callable[[str], None] | None = None) -> SuiteResult:
    """Run the checks (all, or the keys in ``only``) and collect the reports."""
    start = time.perf_counter()
    results: list[CriterionResult] = []
    diagnostics: list[dict] = []
    want = (lambda key: only is None or key in only)

    def record(key: str, fn):
        t0 = time.perf_counter()
        got = fn()
        reports, diags = got if isinstance(got, tuple) else (got, [])
        diagnostics.extend(diags)
        res = CriterionResult(key, CRITERIA[key], reports, time.perf_counter() - t0)
        results.append(res)
        if progress:
            progress(f"{key} {res.title}: {'pass' if res.passed else 'FAIL'} ({res.seconds:.1f} s)")

    if want("C1"):
        record("C1", lambda: check_exact_identities(cfg))
    if want("C2"):
        record("C2", lambda: check_characteristic_functions(cfg, threads))
    if want("C3"):
        record("C3", lambda: check_quadrature(cfg))
    if any(want(k) for k in ("C4", "C5", "C6", "C7")):
        t0 = time.perf_counter()
        run = run_field_ensemble(cfg, threads)
        shared = time.perf_counter() - t0
        if progress:
            progress(f"field ensemble on a {run.grid.nx}x{run.grid.ny} grid ({shared:.1f} s)")
        if want("C4"):
            record("C4", lambda: check_limit_covariances(cfg, run))
        if want("C5"):
            record("C5", lambda: check_second_moment(cfg, run))
        if want("C6"):
            record("C6", lambda: check_fourth_moments(cfg, run))
        if want("C7"):
            record("C7", lambda: check_gaussianity(cfg, run))
    if want("C8"):
        record("C8", lambda: check_classic(cfg, threads))
    if want("C9") or want("C10"):
        ref = white_reference(cfg, "white", threads)
        if want("C9"):
            record("C9", lambda: check_heat_oracles(cfg, ref))
        if want("C10"):
            record("C10", lambda: check_kernel_convergence(cfg, ref, threads))
    if want("F"):
        record("F", lambda: check_functional(cfg, threads))
    return SuiteResult(cfg.seed, results, diagnostics, time.perf_counter() - start)
