"""Realizations of the complex fields X_eps, the classic real field and the
Kac-Stroock kernels, all computed from one sheet path.

Quadrature rule used throughout: the sheet is frozen at the lower-left node
of each cell, the smooth weight sqrt(x y) is taken at the midpoint of the part
of the cell inside the integration window, and cells cut by the window edge
contribute their overlapping length only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .levy_char import ThetaConfig, normalization_K
from .sheet_sim import GridSpec, PointSheet, SheetPath, grid_index

__all__ = [
    "GridTooCoarse",
    "NonIntegerDriver",
    "ComplexFieldSample",
    "KernelPath",
    "FieldEvaluator",
    "field_grid",
    "kernel_grid",
    "field_mean",
    "window_weights",
    "approx_field",
    "classic_kac_stroock",
    "kac_stroock_kernels",
    "exact_point_field",
    "classic_kac_stroock_exact",
    "increment_from_corners",
]

MIN_CELLS_PER_SIDE = 4


class GridTooCoarse(ValueError):
    pass


class NonIntegerDriver(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ComplexFieldSample:
    points: np.ndarray  # (P, 2) array of (s, t)
    values: np.ndarray  # (P,) complex
    eps: float
    theta: float
    K: float
    model_tag: str

    def value_at(self, s: float, t: float) -> complex:
        hit = np.flatnonzero((self.points[:, 0] == s) & (self.points[:, 1] == t))
        if hit.size == 0:
            raise KeyError((s, t))
        return complex(self.values[hit[0]])


def field_grid(cfg: ThetaConfig, eps: float, S: float = 1.0, T: float = 1.0,
               phase_step: float = 1.0, min_cells: int = 64) -> GridSpec:
    """Sheet grid on [0, S/eps] x [0, T/eps] fine enough for X_eps.

    exp(i theta L) decorrelates over a length 1/(|Psi(theta)| y) in x at height
    y (and symmetrically in y), so the cell side is chosen so that this phase
    moves by at most ``phase_step`` per cell at the far corner.
    """
    x_max, y_max = S / eps, T / eps
    rate = cfg.psi_abs
    nx = max(min_cells, math.ceil(rate * y_max * x_max / phase_step))
    ny = max(min_cells, math.ceil(rate * x_max * y_max / phase_step))
    return GridSpec(x_max, y_max, nx, ny)


def kernel_grid(cfg: ThetaConfig, n: int, base_cells: int, phase_step: float = 1.0) -> GridSpec:
    """Sheet grid on [0, sqrt(n)]^2 for kac_stroock_kernels.

    The cell count per side is the smallest multiple of ``base_cells`` for
    which the phase moves by at most ``phase_step`` per cell at the far
    corner, so the kernel cells refine a base grid with that many cells.
    """
    root = math.sqrt(n)
    need = cfg.psi_abs * n / phase_step
    cells = base_cells * max(1, math.ceil(need / base_cells))
    return GridSpec(root, root, cells, cells)


def field_mean(cfg: ThetaConfig, eps: float, s: float, t: float, K: float | None = None) -> complex:
    """E[X_eps(s, t)] of the continuum field (no quadrature).

    E exp(i theta L(x, y)) = exp(-x y Psi(theta)), and substituting u = x y
    collapses the double integral to
    eps K int_0^W sqrt(u) exp(-Psi u) log(W / u) du with W = s t / eps^2.
    The mean is O(eps log(1/eps)), so it is visible at moderate eps.
    """
    from scipy.integrate import quad

    if s <= 0 or t <= 0:
        return 0j
    k = normalization_K(cfg) if K is None else float(K)
    psi = complex(cfg.a, cfg.b)
    W = s * t / eps**2

    def part(fn):
        def g(u):
            return fn(math.sqrt(u) * np.exp(-psi * u) * math.log(W / u)) if u > 0 else 0.0
        # the integrand decays like exp(-a u); split at a few multiples of 1/a
        cuts = [c for c in (1.0 / cfg.a, 10.0 / cfg.a, 50.0 / cfg.a) if c < W]
        return quad(g, 0.0, W, points=cuts or None, limit=500, epsabs=1e-13, epsrel=1e-10)[0]

    return eps * k * complex(part(lambda z: z.real), part(lambda z: z.imag))


def window_weights(step: float, n: int, upper: float) -> np.ndarray:
    """Weights of sqrt(x) dx over [0, upper] for cells [k step, (k+1) step)."""
    left = np.arange(n) * step
    overlap = np.clip(upper - left, 0.0, step)
    return overlap * np.sqrt(left + 0.5 * overlap)


def _check_window(upper: float, extent: float, step: float, min_cells: int, axis: str) -> None:
    if upper > extent * (1 + 1e-12):
        raise ValueError(f"{axis}-window {upper:g} exceeds the sheet grid extent {extent:g}")
    if 0 < upper < min_cells * step * (1 - 1e-12):
        raise GridTooCoarse(
            f"{axis}-window [0, {upper:g}] covers fewer than {min_cells} cells of size {step:g}"
        )


class FieldEvaluator:
    """Caches cos/sin(theta L) on one path so many windows can be integrated."""

    def __init__(self, path: SheetPath, theta: float):
        self.path = path
        self.theta = theta
        phase = theta * path.lower_left
        self.cos = np.cos(phase)
        self.sin = np.sin(phase)

    def integrals(self, uppers_x, uppers_y, min_cells: int = MIN_CELLS_PER_SIDE) -> np.ndarray:
        """Quadrature of sqrt(xy) exp(i theta L) over [0, ux] x [0, uy], pairwise."""
        g = self.path.grid
        ux = np.asarray(uppers_x, dtype=float)
        uy = np.asarray(uppers_y, dtype=float)
        for u in ux:
            _check_window(u, g.x_max, g.dx, min_cells, "x")
        for u in uy:
            _check_window(u, g.y_max, g.dy, min_cells, "y")
        out = np.zeros(ux.shape, dtype=complex)
        live = (ux > 0) & (uy > 0)
        if not live.any():
            return out
        ux_l, uy_l = ux[live], uy[live]
        xs, inv = np.unique(ux_l, return_inverse=True)
        wx = np.stack([window_weights(g.dx, g.nx, u) for u in xs])
        wy = np.stack([window_weights(g.dy, g.ny, u) for u in uy_l])
        re = (wx @ self.cos)[inv]
        im = (wx @ self.sin)[inv]
        out[live] = np.einsum("pj,pj->p", re, wy) + 1j * np.einsum("pj,pj->p", im, wy)
        return out


def _as_points(eval_points) -> np.ndarray:
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 2)
    if np.any(pts < 0):
        raise ValueError("evaluation points must be nonnegative")
    return pts


def approx_field(path: SheetPath, cfg: ThetaConfig, eps: float, eval_points, *, K: float | None = None,
                 evaluator: FieldEvaluator | None = None,
                 min_cells: int = MIN_CELLS_PER_SIDE) -> ComplexFieldSample:
    """X_eps(s,t) = eps K * int_0^{t/eps} int_0^{s/eps} sqrt(xy) e^{i theta L(x,y)} dx dy.

    The x-variable runs to s/eps and the y-variable to t/eps.  ``K`` overrides
    the normalization constant (used with forced drivers where K is undefined).
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    pts = _as_points(eval_points)
    k = normalization_K(cfg) if K is None else float(K)
    ev = evaluator if evaluator is not None else FieldEvaluator(path, cfg.theta)
    if ev.path is not path or ev.theta != cfg.theta:
        raise ValueError("evaluator was built for a different path or theta")
    vals = eps * k * ev.integrals(pts[:, 0] / eps, pts[:, 1] / eps, min_cells)
    return ComplexFieldSample(pts, vals, eps, cfg.theta, k, path.model_tag)


def classic_kac_stroock(path: SheetPath, eps: float, eval_points,
                        min_cells: int = MIN_CELLS_PER_SIDE) -> np.ndarray:
    """x_eps(s,t) = eps * int int sqrt(xy) (-1)^{N(x,y)} dx dy over a counting sheet."""
    if not path.is_integer_valued():
        raise NonIntegerDriver("classic mode needs an integer-valued (counting) sheet")
    pts = _as_points(eval_points)
    g = path.grid
    sign = 1.0 - 2.0 * (np.rint(path.lower_left).astype(np.int64) & 1)
    out = np.zeros(len(pts))
    for p, (s, t) in enumerate(pts):
        ux, uy = s / eps, t / eps
        _check_window(ux, g.x_max, g.dx, min_cells, "x")
        _check_window(uy, g.y_max, g.dy, min_cells, "y")
        if ux > 0 and uy > 0:
            out[p] = eps * (window_weights(g.dx, g.nx, ux) @ sign @ window_weights(g.dy, g.ny, uy))
    return out


@dataclass(frozen=True, eq=False)
class KernelPath:
    """Cell values of theta_n^1 and theta_n^2 on a uniform grid of [0,1]^2.

    Axis 0 is the time-like variable s, axis 1 the space-like variable y.
    """

    n: int
    theta: float
    K: float
    grid: GridSpec
    theta1: np.ndarray
    theta2: np.ndarray

    @property
    def s_mid(self) -> np.ndarray:
        return (np.arange(self.grid.nx) + 0.5) * self.grid.dx

    @property
    def y_mid(self) -> np.ndarray:
        return (np.arange(self.grid.ny) + 0.5) * self.grid.dy

    def component(self, i: int) -> np.ndarray:
        if i == 1:
            return self.theta1
        if i == 2:
            return self.theta2
        raise ValueError("kernel component must be 1 or 2")

    def window_integral(self, s0: float, s1: float, y0: float, y1: float, f=None, i: int | None = None):
        """int_{s0}^{s1} int_{y0}^{y1} f(s,y) theta_n(s,y) dy ds.

        ``i`` selects theta_n^1 or theta_n^2; with ``i=None`` the complex
        combination theta_n^1 + i theta_n^2 is integrated.
        """
        g = self.grid
        ws = np.clip(np.minimum(s1, np.arange(1, g.nx + 1) * g.dx) - np.maximum(s0, np.arange(g.nx) * g.dx), 0, None)
        wy = np.clip(np.minimum(y1, np.arange(1, g.ny + 1) * g.dy) - np.maximum(y0, np.arange(g.ny) * g.dy), 0, None)
        if i is None:
            field = self.theta1 + 1j * self.theta2
        else:
            field = self.component(i)
        if f is not None:
            field = field * f(self.s_mid[:, None], self.y_mid[None, :])
        return ws @ field @ wy

    def integral(self, t: float, x: float, i: int | None = None):
        return self.window_integral(0.0, t, 0.0, x, i=i)

    def cell_averages(self, i: int, ns: int, ny: int) -> np.ndarray:
        """Averages of theta_n^i over the cells of a coarser ns x ny grid.

        The kernel grid must refine the coarse grid by integer factors.
        """
        g = self.grid
        if ns < 1 or ny < 1 or g.nx % ns or g.ny % ny:
            raise ValueError(f"kernel grid {g.nx}x{g.ny} does not refine {ns}x{ny}")
        field = self.component(i)
        if (ns, ny) == (g.nx, g.ny):
            return field
        return field.reshape(ns, g.nx // ns, ny, g.ny // ny).mean(axis=(1, 3))


def kac_stroock_kernels(path: SheetPath, cfg: ThetaConfig, n: int, *, K: float | None = None) -> KernelPath:
    """theta_n^1 = n K sqrt(sy) cos(theta L(sqrt(n) s, sqrt(n) y)), theta_n^2 with sin.

    The path must carry grid nodes at sqrt(n) on both axes; the cells of
    [0, sqrt(n)]^2 become the kernel cells of [0, 1]^2.
    """
    if int(n) < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    root = math.sqrt(n)
    g = path.grid
    kx = grid_index(root, g.dx, g.nx)
    ky = grid_index(root, g.dy, g.ny)
    if kx < MIN_CELLS_PER_SIDE or ky < MIN_CELLS_PER_SIDE:
        raise GridTooCoarse(f"kernel grid would have only {kx}x{ky} cells")
    k = normalization_K(cfg) if K is None else float(K)
    kgrid = GridSpec(1.0, 1.0, kx, ky)
    s_mid = (np.arange(kx) + 0.5) * kgrid.dx
    y_mid = (np.arange(ky) + 0.5) * kgrid.dy
    amp = n * k * np.sqrt(np.outer(s_mid, y_mid))
    phase = cfg.theta * path.lower_left[:kx, :ky]
    return KernelPath(n, cfg.theta, k, kgrid, amp * np.cos(phase), amp * np.sin(phase))


@numba.njit(cache=True)
def _staircase_integrals(px, p_leaf, mult, xq, y_leaf_w, q_leaf):  # pragma: no cover - compiled
    # Sweep in x; phase[l] is exp(i theta L) on y-leaf l for the current x-slab.
    n_leaf = y_leaf_w.shape[0]
    nqx = xq.shape[0]
    nqy = q_leaf.shape[0]
    phase = np.ones(n_leaf, dtype=np.complex128)
    running = np.zeros(nqy, dtype=np.complex128)
    prefix = np.zeros(nqy, dtype=np.complex128)
    out = np.zeros((nqx, nqy), dtype=np.complex128)
    last = 0
    for q in range(nqy):
        if q_leaf[q] > last:
            last = q_leaf[q]
    x_prev = 0.0
    ip = 0
    iq = 0
    n_pts = px.shape[0]
    while iq < nqx:
        if ip < n_pts and px[ip] <= xq[iq]:
            xe = px[ip]
            is_point = True
        else:
            xe = xq[iq]
            is_point = False
        wx = (2.0 / 3.0) * (xe**1.5 - x_prev**1.5)
        if wx > 0.0:
            acc = 0.0 + 0.0j
            q = 0
            for l in range(last):
                while q < nqy and q_leaf[q] == l:
                    prefix[q] = acc
                    q += 1
                acc += phase[l] * y_leaf_w[l]
            while q < nqy:
                prefix[q] = acc
                q += 1
            for q in range(nqy):
                running[q] += wx * prefix[q]
        x_prev = xe
        if is_point:
            m = mult[ip]
            for l in range(p_leaf[ip], last):
                phase[l] *= m
            ip += 1
        else:
            for q in range(nqy):
                out[iq, q] = running[q]
            iq += 1
    return out


def _point_window_integrals(points: PointSheet, multipliers: np.ndarray, ux, uy) -> np.ndarray:
    """Exact int_0^ux int_0^uy sqrt(xy) prod(multipliers of points <= (x,y)) dx dy."""
    ux = np.asarray(ux, dtype=float)
    uy = np.asarray(uy, dtype=float)
    if np.any(ux > points.x_max * (1 + 1e-12)) or np.any(uy > points.y_max * (1 + 1e-12)):
        raise ValueError("window exceeds the sampled point region")
    xq = np.unique(ux)
    yq = np.unique(uy)
    keep = (points.x <= xq[-1]) & (points.y <= yq[-1])
    order = np.argsort(points.x[keep], kind="stable")
    px = points.x[keep][order]
    py = points.y[keep][order]
    mult = np.asarray(multipliers, dtype=complex)[keep][order]
    breaks = np.unique(np.concatenate(([0.0], py, yq)))
    g = (2.0 / 3.0) * breaks**1.5
    leaf_w = np.diff(g)
    p_leaf = np.searchsorted(breaks, py)
    q_leaf = np.searchsorted(breaks, yq)
    table = _staircase_integrals(px, p_leaf, mult, xq, leaf_w, q_leaf)
    return table[np.searchsorted(xq, ux), np.searchsorted(yq, uy)]


def exact_point_field(points: PointSheet, cfg: ThetaConfig, eps: float, eval_points, *,
                      K: float | None = None) -> ComplexFieldSample:
    """X_eps integrated exactly over a compound Poisson sheet given as points.

    exp(i theta L) is piecewise constant on the staircase cut out by the
    points, so the double integral has a closed form per piece.
    """
    pts = _as_points(eval_points)
    k = normalization_K(cfg) if K is None else float(K)
    mult = np.exp(1j * cfg.theta * points.marks)
    vals = eps * k * _point_window_integrals(points, mult, pts[:, 0] / eps, pts[:, 1] / eps)
    return ComplexFieldSample(pts, vals, eps, cfg.theta, k, "points")


def classic_kac_stroock_exact(points: PointSheet, eps: float, eval_points) -> np.ndarray:
    """Exact classic field over a unit-jump Poisson sheet given as points."""
    if not np.all(points.marks == np.round(points.marks)):
        raise NonIntegerDriver("classic mode needs integer marks")
    pts = _as_points(eval_points)
    mult = np.where(np.rint(points.marks).astype(np.int64) & 1, -1.0, 1.0).astype(complex)
    vals = _point_window_integrals(points, mult, pts[:, 0] / eps, pts[:, 1] / eps)
    return eps * vals.real


def increment_from_corners(values: dict, s: float, t: float, s2: float, t2: float):
    """Rectangular increment from a mapping (s, t) -> value at the four corners."""
    return values[(s2, t2)] - values[(s, t2)] - values[(s2, t)] + values[(s, t)]
