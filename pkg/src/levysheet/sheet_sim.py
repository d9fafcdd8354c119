"""Exact simulation of Lévy sheets restricted to rectangular grids.

A sheet on a grid is determined by its independent cell increments; the
cumulative matrix is their 2-D prefix sum, so ``cumulative[i, j] = L(x_i, y_j)``
and the sheet vanishes on both axes.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .levy_char import (
    Brownian,
    CompoundPoisson,
    ExponentModel,
    Poisson,
    SymmetricStable,
    model_from_dict,
    model_to_dict,
)

__all__ = [
    "NotGridAligned",
    "GridSpec",
    "RngStream",
    "SheetPath",
    "PointSheet",
    "derive_seed",
    "sample_increments",
    "standard_symmetric_stable",
    "sample_sheet",
    "sample_points",
    "rect_increment",
    "grid_index",
    "dump_sheet",
    "load_sheet",
]

_ALIGN_TOL = 1e-9
_MAGIC = b"LVYSHEET"
_FORMAT_VERSION = 1


class NotGridAligned(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    x_max: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x_max > 0 and self.y_max > 0):
            raise ValueError("grid extents must be positive")
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ValueError("grid needs at least one cell per side")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))

    @property
    def dx(self) -> float:
        return self.x_max / self.nx

    @property
    def dy(self) -> float:
        return self.y_max / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def x_nodes(self) -> np.ndarray:
        return np.arange(self.nx + 1) * self.dx

    @property
    def y_nodes(self) -> np.ndarray:
        return np.arange(self.ny + 1) * self.dy

    def to_dict(self) -> dict:
        return {"x_max": self.x_max, "y_max": self.y_max, "nx": self.nx, "ny": self.ny}


def derive_seed(seed: int, *key: int | str) -> int:
    """Deterministic 64-bit child seed of ``seed`` for a labelled purpose."""
    words = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in key]
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(words)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Streams use the counter-based Philox generator keyed through
    ``SeedSequence``, so distinct stream ids give independent streams.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(ss))

    def replicate(self, index: int) -> "RngStream":
        """Stream for replicate ``index`` of an ensemble rooted at this stream."""
        return RngStream(derive_seed(self.seed, self.stream_id), int(index))


def standard_symmetric_stable(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Chambers-Mallows-Stuck draws with characteristic function exp(-|xi|^alpha)."""
    v = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, size)
    if alpha == 1.0:
        return np.tan(v)
    w = rng.standard_exponential(size)
    return (
        np.sin(alpha * v)
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)
    )


def sample_increments(model: ExponentModel, area: float, size, rng: np.random.Generator) -> np.ndarray:
    """Independent increments over rectangles of the given area, exact in law."""
    if isinstance(model, Brownian):
        return rng.normal(-model.drift * area, model.sigma * math.sqrt(area), size)
    if isinstance(model, (Poisson, CompoundPoisson)):
        out = np.zeros(size)
        for jump, mass in model.atoms:
            counts = rng.poisson(mass * area, size)
            if jump == 1.0:
                out += counts
            else:
                out += jump * counts
        return out
    if isinstance(model, SymmetricStable):
        return model.scale * area ** (1.0 / model.alpha) * standard_symmetric_stable(model.alpha, size, rng)
    raise TypeError(f"unsupported model {model!r}")


@dataclass(frozen=True, eq=False)
class SheetPath:
    grid: GridSpec
    cell_increments: np.ndarray
    cumulative: np.ndarray
    model_tag: str = "forced"

    @classmethod
    def from_increments(cls, grid: GridSpec, increments, model_tag: str = "forced") -> "SheetPath":
        inc = np.asarray(increments, dtype=float)
        if inc.shape != (grid.nx, grid.ny):
            raise ValueError(f"increments must have shape {(grid.nx, grid.ny)}, got {inc.shape}")
        cum = np.zeros((grid.nx + 1, grid.ny + 1))
        np.cumsum(inc, axis=0, out=cum[1:, 1:])
        np.cumsum(cum[1:, 1:], axis=1, out=cum[1:, 1:])
        inc.setflags(write=False)
        cum.setflags(write=False)
        return cls(grid, inc, cum, model_tag)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SheetPath":
        return cls.from_increments(grid, np.zeros((grid.nx, grid.ny)), "zero")

    @property
    def lower_left(self) -> np.ndarray:
        """Sheet value at the lower-left node of every cell, shape (nx, ny)."""
        return self.cumulative[:-1, :-1]

    def is_integer_valued(self) -> bool:
        return bool(np.all(self.cell_increments == np.round(self.cell_increments)))


def sample_sheet(model: ExponentModel, grid: GridSpec, rng: RngStream) -> SheetPath:
    inc = sample_increments(model, grid.cell_area, (grid.nx, grid.ny), rng.generator())
    return SheetPath.from_increments(grid, inc, model.tag)


@dataclass(frozen=True, eq=False)
class PointSheet:
    """Compound Poisson sheet on [0, x_max] x [0, y_max] as marked points.

    ``L(x, y)`` is the sum of the marks of the points in [0, x] x [0, y].
    """

    x_max: float
    y_max: float
    x: np.ndarray
    y: np.ndarray
    marks: np.ndarray

    def to_sheet(self, grid: GridSpec, model_tag: str = "poisson") -> SheetPath:
        """Bin the points into grid cells; cell counts of a Poisson process are exact."""
        if grid.x_max > self.x_max * (1 + 1e-12) or grid.y_max > self.y_max * (1 + 1e-12):
            raise ValueError("grid extends beyond the sampled region")
        inside = (self.x < grid.x_max) & (self.y < grid.y_max)
        ix = np.minimum((self.x[inside] / grid.dx).astype(np.int64), grid.nx - 1)
        iy = np.minimum((self.y[inside] / grid.dy).astype(np.int64), grid.ny - 1)
        inc = np.zeros((grid.nx, grid.ny))
        np.add.at(inc, (ix, iy), self.marks[inside])
        return SheetPath.from_increments(grid, inc, model_tag)


def sample_points(model: Poisson | CompoundPoisson, x_max: float, y_max: float, rng: RngStream) -> PointSheet:
    if not isinstance(model, (Poisson, CompoundPoisson)):
        raise TypeError("point representation exists only for compound Poisson drivers")
    g = rng.generator()
    area = x_max * y_max
    xs, ys, ms = [], [], []
    for jump, mass in model.atoms:
        count = g.poisson(mass * area)
        xs.append(g.uniform(0.0, x_max, count))
        ys.append(g.uniform(0.0, y_max, count))
        ms.append(np.full(count, jump))
    return PointSheet(x_max, y_max, np.concatenate(xs), np.concatenate(ys), np.concatenate(ms))


def grid_index(coord: float, step: float, n: int) -> int:
    k = coord / step
    idx = int(round(k))
    if abs(k - idx) > _ALIGN_TOL * max(1.0, abs(k)) or not 0 <= idx <= n:
        raise NotGridAligned(f"coordinate {coord!r} is not a node of a grid with step {step!r}")
    return idx


def rect_increment(field, grid: GridSpec, s: float, t: float, s2: float, t2: float):
    """Delta_{s,t} Y(s2, t2) = Y(s2,t2) - Y(s,t2) - Y(s2,t) + Y(s,t) on grid nodes.

    ``field`` is an (nx+1, ny+1) matrix of node values (real or complex).
    """
    if s > s2 or t > t2:
        raise ValueError("rectangle corners must satisfy (s, t) <= (s2, t2)")
    field = np.asarray(field)
    i0, i1 = grid_index(s, grid.dx, grid.nx), grid_index(s2, grid.dx, grid.nx)
    j0, j1 = grid_index(t, grid.dy, grid.ny), grid_index(t2, grid.dy, grid.ny)
    return field[i1, j1] - field[i0, j1] - field[i1, j0] + field[i0, j0]


def dump_sheet(path: SheetPath, dest, extra: dict | None = None) -> None:
    """Binary dump: magic, version, JSON header length, JSON header, then the
    cell increments as little-endian float64 in row-major order."""
    header = {"grid": path.grid.to_dict(), "model": path.model_tag}
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    payload = np.ascontiguousarray(path.cell_increments, dtype="<f8").tobytes(order="C")
    Path(dest).write_bytes(_MAGIC + struct.pack("<II", _FORMAT_VERSION, len(blob)) + blob + payload)


def load_sheet(src) -> tuple[SheetPath, dict]:
    raw = Path(src).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a sheet dump")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported sheet dump version {version}")
    header = json.loads(raw[16 : 16 + hlen])
    grid = GridSpec(**header["grid"])
    inc = np.frombuffer(raw[16 + hlen :], dtype="<f8").reshape(grid.nx, grid.ny).astype(float)
    return SheetPath.from_increments(grid, inc, header["model"]), header


def model_header(model: ExponentModel) -> dict:
    return {"model_spec": model_to_dict(model)}


def model_from_header(header: dict) -> ExponentModel:
    return model_from_dict(header["model_spec"])
