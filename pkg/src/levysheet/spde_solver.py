"""Mild-form solver for the 1-D heat equation on [0,1] with Dirichlet data.

    dU/dt - d2U/dx2 = b(U) + noise,   U(0, .) = u0,   U(t, 0) = U(t, 1) = 0,  t in [0, 1]

Time stepping composes the mild form over one step of length dt using the
sine-series Green function truncated at N terms.  Every operator is diagonal
in the sine basis, with per-mode factors (lam_n = n^2 pi^2, z = lam_n dt)

    free evolution      exp(-z)
    step forcing        (1 - exp(-z)) / z               (forcing frozen over the step)
    white-noise step    sqrt((1 - exp(-2z)) / (2z))     (exact step variance)

so for b = 0 the white-noise solution has exactly the law of the truncated
mild solution at the grid nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .field_approx import KernelPath
from .parallel import chunk_ranges, parallel_map
from .sheet_sim import GridSpec, RngStream
from .stat_harness import MCEstimate, TestReport, ks_two_sample

__all__ = [
    "NonpositiveTime",
    "GridMismatch",
    "EmptySampleSet",
    "Drift",
    "HeatConfig",
    "SolutionField",
    "green_function",
    "green_tail_bound",
    "StepOperators",
    "solve_white_noise",
    "solve_kernel_driven",
    "white_noise_marginals",
    "kernel_driven_marginals",
    "variance_series",
    "variance_quadrature",
    "brownian_sheet",
    "complex_brownian_sheet",
    "LawComparison",
    "compare_laws",
]

TAIL_BOUND_MAX = 1e-12


class NonpositiveTime(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class EmptySampleSet(ValueError):
    pass


@dataclass(frozen=True)
class Drift:
    """Globally Lipschitz drift b: ``zero``, ``linear`` (c u) or
    ``clipped_affine`` (c u clipped to [-cap, cap])."""

    kind: str = "zero"
    c: float = 0.0
    cap: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "clipped_affine"):
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.kind == "clipped_affine" and not self.cap > 0:
            raise ValueError("clipped_affine drift needs cap > 0")

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.kind == "zero" else abs(self.c)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.c == 0.0

    def __call__(self, u):
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "linear":
            return self.c * u
        return np.clip(self.c * u, -self.cap, self.cap)

    def to_dict(self) -> dict:
        if self.kind == "zero":
            return {"kind": "zero"}
        if self.kind == "linear":
            return {"kind": "linear", "c": self.c}
        return {"kind": "clipped_affine", "c": self.c, "cap": self.cap}


def green_tail_bound(N: int, t: float) -> float:
    return math.exp(-(N**2) * math.pi**2 * t)


@dataclass(frozen=True, eq=False)
class HeatConfig:
    u0: np.ndarray
    drift: Drift = field(default_factory=Drift)
    nt: int = 128
    nx: int = 128
    green_terms: int = 64

    def __post_init__(self):
        if self.nt < 4 or self.nx < 4:
            raise ValueError("nt and nx must be at least 4")
        if not 1 <= self.green_terms < self.nx:
            raise ValueError("green_terms must satisfy 1 <= N < nx")
        if green_tail_bound(self.green_terms, 1.0 / self.nt) > TAIL_BOUND_MAX:
            raise ValueError(
                f"dt = 1/{self.nt} too small for N = {self.green_terms}: "
                f"tail bound exp(-N^2 pi^2 dt) exceeds {TAIL_BOUND_MAX:g}"
            )
        u0 = np.array(self.u0, dtype=float)
        if u0.shape != (self.nx + 1,):
            raise ValueError(f"u0 must have {self.nx + 1} node values")
        if abs(u0[0]) > 1e-12 or abs(u0[-1]) > 1e-12:
            raise ValueError("u0 must vanish at x = 0 and x = 1")
        u0[0] = u0[-1] = 0.0
        u0.setflags(write=False)
        object.__setattr__(self, "u0", u0)

    @classmethod
    def from_function(cls, u0, **kwargs) -> "HeatConfig":
        nx = kwargs.get("nx", 128)
        return cls(u0(np.linspace(0.0, 1.0, nx + 1)), **kwargs)

    @property
    def dt(self) -> float:
        return 1.0 / self.nt

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx + 1)

    @property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nt + 1)


@dataclass(frozen=True, eq=False)
class SolutionField:
    values: np.ndarray  # (nt + 1, nx + 1)
    config: HeatConfig
    noise: str  # "white", "none" or "kernel(n,i)"

    def at(self, t: float, x: float) -> float:
        i = int(round(t * self.config.nt))
        j = int(round(x * self.config.nx))
        return float(self.values[i, j])


def green_function(t, x, y, N: int = 64):
    """G_t(x, y) = 2 sum_{n<=N} sin(n pi x) sin(n pi y) exp(-n^2 pi^2 t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise NonpositiveTime("the Green function is defined for t > 0 only")
    n = np.arange(1, N + 1)
    x = np.asarray(x, dtype=float)[..., None]
    y = np.asarray(y, dtype=float)[..., None]
    terms = np.sin(n * np.pi * x) * np.sin(n * np.pi * y) * np.exp(-(n**2) * np.pi**2 * t[..., None])
    out = 2.0 * terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


class StepOperators:
    """One-step mild-form operators on the grid.

    Node-to-node maps act on the nx+1 node values; cell maps act on values
    attached to the nx cells (kernel and white-noise cells, taken at their
    midpoints).  Boundary rows are zero so Dirichlet data hold exactly.
    """

    def __init__(self, cfg: HeatConfig):
        self.cfg = cfg
        n = np.arange(1, cfg.green_terms + 1)
        lam = (n * np.pi) ** 2
        z = lam * cfg.dt
        decay = np.exp(-z)
        forcing = -np.expm1(-z) / z
        noise = np.sqrt(-np.expm1(-2 * z) / (2 * z))
        x = cfg.x_nodes
        mid = (np.arange(cfg.nx) + 0.5) * cfg.dx
        sx = np.sin(np.pi * np.outer(x, n))
        sx[0] = sx[-1] = 0.0
        sy_nodes = np.sin(np.pi * np.outer(x, n))
        sy_mid = np.sin(np.pi * np.outer(mid, n))
        h = cfg.dx
        self.evolve = 2.0 * h * (sx * decay) @ sy_nodes.T
        self.forcing_nodes = 2.0 * h * (sx * forcing) @ sy_nodes.T
        self.forcing_cells = 2.0 * h * (sx * forcing) @ sy_mid.T
        self.noise_cells = 2.0 * h * (sx * noise) @ sy_mid.T

    def run(self, forcing_cells=None, noise_cells=None, batch: int | None = None, record=None) -> np.ndarray:
        """Step from u0 to t = 1.

        ``forcing_cells`` is a callable k -> (nx,) or (nx, B) cell forcing for
        step k; ``noise_cells`` likewise returns standard normal cell draws.
        ``record`` is an optional list of (time index, node index) pairs; if
        given only those values are returned, otherwise the full field.
        """
        cfg = self.cfg
        shape = (cfg.nx + 1,) if batch is None else (cfg.nx + 1, batch)
        u = np.broadcast_to(cfg.u0.reshape(-1, *([1] * (len(shape) - 1))), shape).copy()
        dt, scale = cfg.dt, math.sqrt(cfg.dt / cfg.dx)
        drift = cfg.drift
        if record is None:
            out = np.empty((cfg.nt + 1,) + shape)
            out[0] = u
        else:
            out = np.empty((len(record),) + shape[1:])
            self._record(out, record, 0, u)
        for k in range(cfg.nt):
            nxt = self.evolve @ u
            if not drift.is_zero:
                nxt += dt * (self.forcing_nodes @ drift(u))
            if forcing_cells is not None:
                nxt += dt * (self.forcing_cells @ forcing_cells(k))
            if noise_cells is not None:
                nxt += scale * (self.noise_cells @ noise_cells(k))
            u = nxt
            if record is None:
                out[k + 1] = u
            else:
                self._record(out, record, k + 1, u)
        return out

    @staticmethod
    def _record(out, record, k, u):
        for p, (ti, xi) in enumerate(record):
            if ti == k:
                out[p] = u[xi]


def _probe_indices(cfg: HeatConfig, probes) -> list[tuple[int, int]]:
    idx = []
    for t, x in probes:
        ti, xi = t * cfg.nt, x * cfg.nx
        if abs(ti - round(ti)) > 1e-9 or abs(xi - round(xi)) > 1e-9 or not (0 <= t <= 1 and 0 <= x <= 1):
            raise GridMismatch(f"probe ({t}, {x}) is not a grid node")
        idx.append((int(round(ti)), int(round(xi))))
    return idx


def solve_white_noise(cfg: HeatConfig, rng: RngStream | None, *, ops: StepOperators | None = None) -> SolutionField:
    """One white-noise path; ``rng=None`` switches the noise off."""
    ops = ops or StepOperators(cfg)
    if rng is None:
        return SolutionField(ops.run(), cfg, "none")
    xi = rng.generator().standard_normal((cfg.nt, cfg.nx))
    return SolutionField(ops.run(noise_cells=lambda k: xi[k]), cfg, "white")


def _check_kernel_grid(cfg: HeatConfig, kernel: KernelPath) -> None:
    if kernel.grid.nx % cfg.nt or kernel.grid.ny % cfg.nx:
        raise GridMismatch(
            f"kernel grid {kernel.grid.nx}x{kernel.grid.ny} does not refine nt x nx = {cfg.nt}x{cfg.nx}"
        )


def solve_kernel_driven(cfg: HeatConfig, kernel: KernelPath, i: int, *, ops: StepOperators | None = None) -> SolutionField:
    """Path driven by theta_n^i.

    The kernel is averaged over each solver cell (time step x space cell), so
    the forcing integral over a cell is exact for the gridded kernel.
    """
    _check_kernel_grid(cfg, kernel)
    ops = ops or StepOperators(cfg)
    theta = kernel.cell_averages(i, cfg.nt, cfg.nx)
    return SolutionField(ops.run(forcing_cells=lambda k: theta[k]), cfg, f"kernel({kernel.n},{i})")


def white_noise_marginals(cfg: HeatConfig, probes, M: int, rng: RngStream, threads: int = 1,
                          chunk: int = 250) -> np.ndarray:
    """(M, P) samples of U at the probe points; replicate r uses rng.replicate(r)."""
    ops = StepOperators(cfg)
    record = _probe_indices(cfg, probes)

    def block(rows: range) -> np.ndarray:
        xi = np.stack([rng.replicate(r).generator().standard_normal((cfg.nt, cfg.nx)) for r in rows], axis=-1)
        return ops.run(noise_cells=lambda k: xi[k], batch=len(rows), record=record).T

    return np.concatenate(parallel_map(block, chunk_ranges(M, chunk), threads), axis=0)


def kernel_driven_marginals(cfg: HeatConfig, kernel_sampler, i: int, probes, M: int, rng: RngStream,
                            threads: int = 1, chunk: int = 250) -> np.ndarray:
    """(M, P) samples of U_n^i; ``kernel_sampler(stream)`` returns a KernelPath."""
    ops = StepOperators(cfg)
    record = _probe_indices(cfg, probes)

    def block(rows: range) -> np.ndarray:
        theta = np.empty((cfg.nt, cfg.nx, len(rows)))
        for col, r in enumerate(rows):
            ker = kernel_sampler(rng.replicate(r))
            _check_kernel_grid(cfg, ker)
            theta[:, :, col] = ker.cell_averages(i, cfg.nt, cfg.nx)
        return ops.run(forcing_cells=lambda k: theta[k], batch=len(rows), record=record).T

    return np.concatenate(parallel_map(block, chunk_ranges(M, chunk), threads), axis=0)


def variance_series(t: float, x: float, N: int = 64) -> float:
    """Var of the b = 0, u0 = 0 mild solution: sum sin^2(n pi x)(1 - e^{-2 lam t}) / lam."""
    n = np.arange(1, N + 1)
    lam = (n * np.pi) ** 2
    return float(np.sum(np.sin(n * np.pi * x) ** 2 * -np.expm1(-2 * lam * t) / lam))


def variance_quadrature(t: float, x: float, N: int = 64, y_nodes: int = 512) -> float:
    """int_0^t int_0^1 G_r(x, y)^2 dy dr by direct quadrature of the kernel.

    Substituting r = u^2 removes the r^{-1/2} behaviour near r = 0; the inner
    integral uses Gauss-Legendre nodes on [0, 1].
    """
    from scipy.integrate import quad

    z, w = np.polynomial.legendre.leggauss(y_nodes)
    y = 0.5 * (z + 1.0)
    w = 0.5 * w

    def inner(u: float) -> float:
        if u == 0.0:
            return 0.0
        g = green_function(u * u, x, y, N)
        return 2.0 * u * float(w @ (g * g))

    val, _ = quad(inner, 0.0, math.sqrt(t), limit=400, epsabs=1e-13, epsrel=1e-11)
    return val


def brownian_sheet(grid: GridSpec, rng: RngStream) -> np.ndarray:
    """Node values of a standard Brownian sheet on the grid."""
    g = rng.generator()
    inc = g.standard_normal((grid.nx, grid.ny)) * math.sqrt(grid.cell_area)
    out = np.zeros((grid.nx + 1, grid.ny + 1))
    out[1:, 1:] = inc.cumsum(axis=0).cumsum(axis=1)
    return out


def complex_brownian_sheet(grid: GridSpec, rng: RngStream) -> np.ndarray:
    """Node values of W1 + i W2 with independent Brownian sheets W1, W2."""
    return brownian_sheet(grid, RngStream(rng.seed, 2 * rng.stream_id)) + 1j * brownian_sheet(
        grid, RngStream(rng.seed, 2 * rng.stream_id + 1)
    )


@dataclass(frozen=True)
class LawComparison:
    probe: tuple[float, float]
    mean_ref: MCEstimate
    mean_approx: MCEstimate
    var_ref: float
    var_approx: float
    ks_stat: float
    ks_pvalue: float

    @property
    def mean_diff(self) -> float:
        return abs(self.mean_approx.mean - self.mean_ref.mean)

    @property
    def var_ratio(self) -> float:
        return self.var_approx / self.var_ref

    def reports(self, var_tol: float = 0.2, alpha: float = 0.01, n_se: float = 5.0, name: str = "law") -> list[TestReport]:
        p = self.probe
        se = math.hypot(self.mean_ref.stderr, self.mean_approx.stderr)
        diff = MCEstimate(self.mean_approx.mean - self.mean_ref.mean, 0.0, se, self.mean_ref.n_samples)
        return [
            TestReport(f"{name}[mean_diff]{p}", 0.0, diff, n_se * se, f"{n_se:g} SE"),
            TestReport(f"{name}[var_ratio]{p}", 1.0, MCEstimate(self.var_ratio, 0.0, 0.0, self.mean_ref.n_samples),
                       var_tol, f"ratio within 1 +/- {var_tol:g}"),
            TestReport(f"{name}[ks_p]{p}", 1.0, MCEstimate(self.ks_pvalue, 0.0, 0.0, self.mean_ref.n_samples),
                       1.0 - alpha, f"two-sample KS D={self.ks_stat:.5f}; pass iff p >= {alpha}"),
        ]


def _marginals(fields, probes) -> np.ndarray:
    if isinstance(fields, np.ndarray):
        arr = fields.reshape(len(fields), -1)
        if arr.shape[1] != len(probes):
            raise ValueError("marginal array must have one column per probe")
        return arr
    return np.array([[f.at(t, x) for t, x in probes] for f in fields])


def compare_laws(ref: Sequence[SolutionField] | np.ndarray, approx: Sequence[SolutionField] | np.ndarray,
                 probes) -> list[LawComparison]:
    """Marginal comparison at each probe: means, variance ratio and two-sample KS.

    ``ref`` and ``approx`` are sequences of SolutionField or (M, P) arrays of
    probe values.
    """
    if len(ref) == 0 or len(approx) == 0:
        raise EmptySampleSet("both sample sets must be nonempty")
    a = _marginals(ref, probes)
    b = _marginals(approx, probes)
    out = []
    for p, probe in enumerate(probes):
        d, pval = ks_two_sample(a[:, p], b[:, p])
        out.append(LawComparison(
            tuple(probe),
            MCEstimate.from_samples(a[:, p]) if len(a) > 1 else MCEstimate(float(a[0, p]), 0.0, 0.0, 1),
            MCEstimate.from_samples(b[:, p]) if len(b) > 1 else MCEstimate(float(b[0, p]), 0.0, 0.0, 1),
            float(np.var(a[:, p], ddof=1)) if len(a) > 1 else 0.0,
            float(np.var(b[:, p], ddof=1)) if len(b) > 1 else 0.0,
            d,
            pval,
        ))
    return out
