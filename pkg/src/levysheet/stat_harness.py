"""Monte Carlo estimators and the statistical checks built on them.

Tolerance policy: a statistical check passes when the estimate lies within
``n_se`` standard errors plus an explicit bias allowance of its target.  The
limit theorems being checked carry no rates, so the allowance is an
engineering budget for finite-eps and discretization bias and is reported
with every verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .parallel import parallel_map
from .sheet_sim import RngStream, derive_seed

__all__ = [
    "MCEstimate",
    "TestReport",
    "ScanReport",
    "DegenerateVariance",
    "WindowViolation",
    "run_replicates",
    "mc_moments",
    "kolmogorov_sf",
    "ks_one_sample",
    "ks_two_sample",
    "normal_cdf",
    "covariance_estimate",
    "normality_test",
    "covariance_limit_test",
    "increment_second_moment_test",
    "fourth_moment_ratio",
    "fourth_moment_bound_scan",
    "check_window",
    "functional_moment_inequality_test",
]

KS_TERMS = 100


class DegenerateVariance(ValueError):
    pass


class WindowViolation(ValueError):
    pass


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    variance: float
    stderr: float
    n_samples: int

    @classmethod
    def from_samples(cls, samples) -> "MCEstimate":
        x = np.asarray(samples, dtype=float).ravel()
        n = x.size
        if n < 2:
            raise ValueError("need at least two samples")
        mean = float(np.mean(x))
        var = float(np.sum((x - mean) ** 2) / (n - 1))
        return cls(mean, var, math.sqrt(var / n), n)


@dataclass(frozen=True)
class TestReport:
    """One verdict.  ``passed`` holds iff |estimate.mean - target| <= tolerance."""

    __test__ = False  # keep pytest from collecting this class

    name: str
    target: float
    estimate: MCEstimate
    tolerance: float
    notes: str = ""

    @property
    def passed(self) -> bool:
        return bool(abs(self.estimate.mean - self.target) <= self.tolerance)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def row(self) -> dict:
        return {
            "test": self.name,
            "target": self.target,
            "estimate": self.estimate.mean,
            "stderr": self.estimate.stderr,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }


@dataclass(frozen=True)
class ScanReport:
    rows: list[dict]
    reports: list[TestReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def run_replicates(fn: Callable[[RngStream], object], M: int, rng: RngStream, threads: int = 1) -> list:
    """Evaluate ``fn`` on M independent replicate streams, in replicate order."""
    return parallel_map(lambda r: fn(rng.replicate(r)), range(M), threads)


def mc_moments(sampler: Callable[[RngStream], float], M: int, rng: RngStream, threads: int = 1) -> MCEstimate:
    if M < 2:
        raise ValueError("M must be at least 2")
    values = np.array(run_replicates(sampler, M, rng, threads), dtype=float)
    return MCEstimate.from_samples(values)


def kolmogorov_sf(lam: float, terms: int = KS_TERMS) -> float:
    """Asymptotic Kolmogorov tail 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lam^2)."""
    if lam <= 1e-3:
        return 1.0
    k = np.arange(1, terms + 1)
    p = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k**2 * lam**2))
    return float(min(1.0, max(0.0, p)))


def _effective_lambda(d: float, n_eff: float) -> float:
    en = math.sqrt(n_eff)
    return (en + 0.12 + 0.11 / en) * d


def normal_cdf(x, mu: float = 0.0, var: float = 1.0):
    from scipy.special import ndtr

    return ndtr((np.asarray(x, dtype=float) - mu) / math.sqrt(var))


def ks_one_sample(samples, cdf: Callable) -> tuple[float, float]:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    F = cdf(x)
    d_plus = np.max(np.arange(1, n + 1) / n - F)
    d_minus = np.max(F - np.arange(n) / n)
    d = float(max(d_plus, d_minus))
    return d, kolmogorov_sf(_effective_lambda(d, n))


def ks_two_sample(a, b) -> tuple[float, float]:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise ValueError("two-sample KS needs nonempty samples")
    both = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, both, side="right") / n
    cdf_b = np.searchsorted(b, both, side="right") / m
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    return d, kolmogorov_sf(_effective_lambda(d, n * m / (n + m)))


def covariance_estimate(a, b) -> MCEstimate:
    """Unbiased sample covariance with the standard error of the mean product."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    prod = (a - a.mean()) * (b - b.mean()) * (n / (n - 1))
    return MCEstimate.from_samples(prod)


def normality_test(samples, mu: float, var: float, name: str = "normality", alpha: float = 0.01) -> TestReport:
    """One-sample KS against Normal(mu, var); the reported estimate is the p-value."""
    if not var > 0:
        raise DegenerateVariance(f"variance must be > 0, got {var}")
    d, p = ks_one_sample(samples, lambda x: normal_cdf(x, mu, var))
    est = MCEstimate(p, 0.0, 0.0, int(np.size(samples)))
    # |p - 1| <= 1 - alpha  <=>  p >= alpha
    return TestReport(name, 1.0, est, 1.0 - alpha, f"KS D={d:.5f}; pass iff p >= {alpha}")


def _components(values) -> dict[str, np.ndarray]:
    v = np.asarray(values)
    return {"re": v.real.astype(float), "im": v.imag.astype(float)}


def covariance_limit_test(values_p, values_q, p, q, n_se: float = 5.0, bias: float = 0.05,
                          cross_tol: float | None = None, name: str = "covariance") -> list[TestReport]:
    """Compare Re/Re, Im/Im and Re/Im covariances with the complex Brownian sheet limit.

    ``values_p`` and ``values_q`` are replicate samples of X at points p and q.
    ``cross_tol`` replaces the statistical tolerance of the Re/Im check by a
    fixed bound.
    """
    target = min(p[0], q[0]) * min(p[1], q[1])
    cp, cq = _components(values_p), _components(values_q)
    out = []
    for label, x, y, tgt in (
        ("re,re", cp["re"], cq["re"], target),
        ("im,im", cp["im"], cq["im"], target),
        ("re,im", cp["re"], cq["im"], 0.0),
    ):
        est = covariance_estimate(x, y)
        if label == "re,im" and cross_tol is not None:
            tol, note = cross_tol, f"fixed bound {cross_tol:g}"
        else:
            tol, note = n_se * est.stderr + bias, f"{n_se:g} SE + {bias:g} bias allowance"
        out.append(TestReport(f"{name}[{label}]{tuple(p)}{tuple(q)}", tgt, est, tol, note))
    return out


def increment_second_moment_test(increments, rect, rel_tol: float = 0.15,
                                 name: str = "increment_second_moment") -> TestReport:
    """Mean of |Delta X|^2 over a rectangle against 2 (s'-s)(t'-t)."""
    s, t, s2, t2 = rect
    target = 2.0 * (s2 - s) * (t2 - t)
    est = MCEstimate.from_samples(np.abs(np.asarray(increments)) ** 2)
    return TestReport(f"{name}{tuple(rect)}", target, est, rel_tol * target,
                      f"{rel_tol:.0%} relative allowance")


def fourth_moment_ratio(increments, rect) -> MCEstimate:
    s, t, s2, t2 = rect
    area2 = ((s2 - s) * (t2 - t)) ** 2
    if area2 <= 0:
        raise ValueError("degenerate rectangle")
    return MCEstimate.from_samples(np.abs(np.asarray(increments)) ** 4 / area2)


def fourth_moment_bound_scan(increments: dict, cap: float = 50.0, growth: float = 2.0,
                             name: str = "fourth_moment") -> ScanReport:
    """Bound check for E|Delta X_eps|^4 / ((s'-s)^2 (t'-t)^2) over eps and rectangles.

    ``increments`` maps ``(eps, rect)`` to replicate samples of the increment.
    Passes when every ratio is at most ``cap`` and, for each rectangle, the
    ratio at the smallest eps is at most ``growth`` times the median over eps.
    """
    rows = []
    by_rect: dict[tuple, list[tuple[float, MCEstimate]]] = {}
    for (eps, rect), inc in increments.items():
        est = fourth_moment_ratio(inc, rect)
        rows.append({"eps": eps, "rect": tuple(rect), "ratio": est.mean, "stderr": est.stderr})
        by_rect.setdefault(tuple(rect), []).append((eps, est))
    ratios = np.array([r["ratio"] for r in rows])
    imax = int(np.argmax(ratios))
    top = MCEstimate(float(ratios[imax]), 0.0, rows[imax]["stderr"], len(rows))
    reports = [TestReport(f"{name}[max_ratio]", 0.0, top, cap, f"max ratio <= cap {cap:g}")]
    for rect, series in by_rect.items():
        series.sort(key=lambda item: -item[0])
        vals = np.array([e.mean for _, e in series])
        rel = float(vals[-1] / np.median(vals))
        reports.append(TestReport(f"{name}[growth]{rect}", 1.0, MCEstimate(rel, 0.0, 0.0, len(vals)),
                                  growth - 1.0, f"smallest-eps ratio <= {growth:g} x median"))
    return ScanReport(rows, reports)


def check_window(s0: float, s1: float, x0: float, x1: float) -> None:
    if not (0 < s0 < s1 < 2 * s0 and s1 <= 1):
        raise WindowViolation(f"time window ({s0}, {s1}) must satisfy 0 < s0 < s0' < 2 s0 and s0' <= 1")
    if not (0 < x0 < x1 < 2 * x0 and x1 <= 1):
        raise WindowViolation(f"space window ({x0}, {x1}) must satisfy 0 < x0 < x0' < 2 x0 and x0' <= 1")


def functional_moment_inequality_test(kernel_sampler: Callable, f: Callable | None, order: int,
                                      windows: Sequence[tuple], n_grid: Sequence[int], M: int,
                                      rng: RngStream, i: int = 1, cap: float = 50.0, growth: float = 2.0,
                                      threads: int = 1, name: str = "functional_moment") -> ScanReport:
    """Ratio E[(int_W f theta_n^i)^m] / (int_W f^2)^(m/2) across n for each window.

    ``kernel_sampler(n, stream)`` returns a KernelPath; ``f`` is vectorized in
    (s, y) or None for f = 0.  Passes when every ratio is at most ``cap`` and
    the ratio at the largest n is at most ``growth`` times the median over n.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    for w in windows:
        check_window(*w)
    rows, reports = [], []
    for w_idx, (s0, s1, x0, x1) in enumerate(windows):
        if f is None:
            reports.append(TestReport(f"{name}[m={order}]{(s0, s1, x0, x1)}", 0.0,
                                      MCEstimate(0.0, 0.0, 0.0, M), 0.0, "f = 0: moment and bound vanish"))
            continue
        norm = _f_norm2(f, s0, s1, x0, x1) ** (order / 2)
        ratios = []
        for n in n_grid:
            stream = RngStream(derive_seed(rng.seed, rng.stream_id, w_idx, int(n)))

            def one(st, n=n):
                return kernel_sampler(n, st).window_integral(s0, s1, x0, x1, f=f, i=i)

            vals = np.array(run_replicates(one, M, stream, threads), dtype=float)
            est = MCEstimate.from_samples(vals**order / norm)
            ratios.append(est)
            rows.append({"window": (s0, s1, x0, x1), "n": int(n), "order": order, "ratio": est.mean,
                         "stderr": est.stderr})
        vals = np.array([e.mean for e in ratios])
        worst = int(np.argmax(vals))
        label = f"{name}[m={order}]{(s0, s1, x0, x1)}"
        reports.append(TestReport(label + "[max_ratio]", 0.0, ratios[worst], cap, f"C_test={vals.max():.4g} <= {cap:g}"))
        rel = float(vals[-1] / np.median(vals))
        reports.append(TestReport(label + "[growth]", 1.0, MCEstimate(rel, 0.0, 0.0, len(vals)), growth - 1.0,
                                  f"largest-n ratio <= {growth:g} x median"))
    return ScanReport(rows, reports)


def _f_norm2(f: Callable, s0: float, s1: float, x0: float, x1: float, nodes: int = 64) -> float:
    """int_W f^2 by tensor Gauss-Legendre."""
    z, w = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (s1 - s0) * (z + 1) + s0
    y = 0.5 * (x1 - x0) * (z + 1) + x0
    vals = f(s[:, None], y[None, :]) ** 2
    return float(0.25 * (s1 - s0) * (x1 - x0) * (w @ np.broadcast_to(vals, (nodes, nodes)) @ w))
