"""Discretized upper half-space: a periodic spatial lattice times a log-spaced
time lattice, plus the cone and ball quadratures every square function uses.

Spatial nodes sit at ``-ell/2 + j*h`` for ``j = 0..nx-1`` along each axis, so the
origin is a node. Distances are torus distances. Membership in a ball or cone is
decided by node distance with a strict inequality.

Field values are stored time-major with shape ``(nt, channels, *space)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Callable

import numpy as np
from scipy.ndimage import maximum_filter1d


@dataclass(frozen=True)
class Grid:
    """Periodic torus ``[-ell/2, ell/2)^n`` times geometric time nodes on ``[t_min, t_max]``."""

    n: int
    ell: float
    nx: int
    t_min: float
    t_max: float
    nt: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.n}")
        if self.nx < 8 or self.nx & (self.nx - 1):
            raise ValueError(f"nx must be a power of two >= 8, got {self.nx}")
        if not self.ell > 0:
            raise ValueError(f"spatial period must be positive, got {self.ell}")
        if not (0 < self.t_min < self.t_max) or not math.isfinite(self.t_max):
            raise ValueError(f"need 0 < t_min < t_max, got [{self.t_min}, {self.t_max}]")
        if self.nt < 2:
            raise ValueError(f"nt must be >= 2, got {self.nt}")

    @property
    def h(self) -> float:
        return self.ell / self.nx

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.n

    @cached_property
    def log_step(self) -> float:
        return math.log(self.t_max / self.t_min) / self.nt

    @cached_property
    def t(self) -> np.ndarray:
        k = np.arange(1, self.nt + 1)
        return self.t_min * (self.t_max / self.t_min) ** ((k - 0.5) / self.nt)

    @cached_property
    def dt(self) -> np.ndarray:
        # midpoint rule in log t: dt_k / t_k is the constant log step
        return self.t * self.log_step

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.ell / 2 + self.h * np.arange(self.nx)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates, one array of shape ``self.shape`` per axis."""
        return tuple(np.meshgrid(*([self.axis] * self.n), indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        """Torus distance of every node to the origin."""
        return np.sqrt(sum(c**2 for c in self.coords))

    def index_of(self, x) -> tuple[int, ...]:
        """Nearest node index to the point ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.rint((x + self.ell / 2) / self.h).astype(int) % self.nx
        return tuple(int(i) for i in idx)

    def torus_displacement(self, x) -> tuple[np.ndarray, ...]:
        """Per-axis displacement from ``x`` to every node, wrapped to ``[-ell/2, ell/2)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.n,):
            raise ValueError(f"point must have {self.n} coordinates")
        out = []
        for c, xi in zip(self.coords, x):
            d = c - xi
            out.append(d - self.ell * np.floor(d / self.ell + 0.5))
        return tuple(out)

    def with_resolution(self, nx: int | None = None, nt: int | None = None) -> "Grid":
        return Grid(self.n, self.ell, nx or self.nx, self.t_min, self.t_max, nt or self.nt)


def make_grid(n: int, ell: float, nx: int, t_min: float, t_max: float, nt: int) -> Grid:
    return Grid(int(n), float(ell), int(nx), float(t_min), float(t_max), int(nt))


@dataclass(frozen=True)
class HalfSpaceField:
    """Samples ``F(y, t_k)`` on a grid, shape ``(nt, channels, *space)``."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 1 + self.grid.n:
            v = v[:, None]
        expected = (self.grid.nt, v.shape[1] if v.ndim > 1 else 0) + self.grid.shape
        if v.shape != expected or v.shape[1] < 1:
            raise ValueError(f"field shape {v.shape} does not match grid {expected}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite samples")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def abs2(self) -> np.ndarray:
        """Squared Euclidean norm over channels, shape ``(nt, *space)``."""
        v = self.values
        if np.iscomplexobj(v):
            return np.sum(v.real**2 + v.imag**2, axis=1)
        return np.sum(v**2, axis=1)

    def norm(self) -> np.ndarray:
        return np.sqrt(self.abs2())

    def scalar(self, values) -> "HalfSpaceField":
        """A field on the same grid from an ``(nt, *space)`` array."""
        return HalfSpaceField(self.grid, np.asarray(values)[:, None])

    def __add__(self, other: "HalfSpaceField") -> "HalfSpaceField":
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return HalfSpaceField(self.grid, self.values + other.values)

    def __mul__(self, c) -> "HalfSpaceField":
        return HalfSpaceField(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpatialFunction:
    """Samples ``g(x)`` on the spatial lattice of a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.grid.shape:
            raise ValueError(f"spatial shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("spatial function contains non-finite samples")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __call__(self, x) -> complex | float:
        return self.values[self.grid.index_of(x)]

    def integral(self):
        return self.values.sum() * self.grid.cell_volume


def sample_field(fn: Callable, grid: Grid, channels: int = 1) -> HalfSpaceField:
    """Sample ``fn(y, t)`` at every node.

    ``y`` is a tuple of coordinate arrays of shape ``(1, *space)`` and ``t`` has
    shape ``(nt, 1, ..., 1)``; ``fn`` must broadcast. With ``channels > 1`` the
    result must broadcast to ``(channels, nt, *space)``.
    """
    y = tuple(c[None] for c in grid.coords)
    t = grid.t.reshape((grid.nt,) + (1,) * grid.n)
    out = np.asarray(fn(y, t))
    if channels == 1:
        vals = np.broadcast_to(out, (grid.nt,) + grid.shape)[:, None]
    else:
        vals = np.moveaxis(np.broadcast_to(out, (channels, grid.nt) + grid.shape), 0, 1)
    if not np.all(np.isfinite(vals)):
        raise ValueError("sampled closure returned non-finite values")
    return HalfSpaceField(grid, vals)


def sample_spatial(fn: Callable, grid: Grid) -> SpatialFunction:
    out = np.asarray(fn(grid.coords))
    vals = np.broadcast_to(out, grid.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("sampled closure returned non-finite values")
    return SpatialFunction(grid, vals)


# ---------------------------------------------------------------------------
# ball quadrature on the lattice


def max_offset(r: float, h: float) -> int:
    """Largest integer d >= 0 with ``d*h < r``; -1 when ``r <= 0``."""
    if r <= 0:
        return -1
    d = max(int(math.ceil(r / h)) - 1, 0)
    while (d + 1) * h < r:
        d += 1
    while d >= 0 and d * h >= r:
        d -= 1
    return d


def _row_halfwidths(r: float, h: float, nx: int, n: int) -> list[tuple[int, int]]:
    """Pairs ``(dy, w)``: the torus ball of radius r is the union over rows ``dy``
    of the offsets ``|dx| <= w``. ``w >= nx//2`` means the whole row."""
    half = nx // 2
    if n == 1:
        return [(0, max_offset(r, h))]
    dmax = max_offset(r, h)
    if dmax < 0:
        return []
    rows = []
    r2 = r * r
    for dy in range(-min(dmax, half - 1), min(dmax, half) + 1):
        w = max_offset(math.sqrt(max(r2 - (dy * h) ** 2, 0.0)), h)
        while w >= 0 and (w * h) ** 2 + (dy * h) ** 2 >= r2:
            w -= 1
        while ((w + 1) * h) ** 2 + (dy * h) ** 2 < r2:
            w += 1
        if w >= 0:
            rows.append((dy, w))
    return rows


def _window_sum(a: np.ndarray, w: int) -> np.ndarray:
    """Circular sum of offsets ``-w..w`` along the last axis."""
    nx = a.shape[-1]
    if w >= nx // 2:
        return np.broadcast_to(a.sum(axis=-1, keepdims=True), a.shape).copy()
    if w == 0:
        return a.copy()
    padded = np.concatenate([a[..., nx - w:], a, a[..., :w]], axis=-1)
    cs = np.cumsum(padded, axis=-1)
    zero = np.zeros(a.shape[:-1] + (1,), dtype=cs.dtype)
    cs = np.concatenate([zero, cs], axis=-1)
    return cs[..., 2 * w + 1: 2 * w + 1 + nx] - cs[..., :nx]


def _window_max(a: np.ndarray, w: int) -> np.ndarray:
    nx = a.shape[-1]
    if w >= nx // 2:
        return np.broadcast_to(a.max(axis=-1, keepdims=True), a.shape).copy()
    return maximum_filter1d(a, size=2 * w + 1, axis=-1, mode="wrap")


def ball_reduce(values: np.ndarray, r: float, h: float, n: int, op: str = "sum") -> np.ndarray:
    """Sum (or max) of ``values`` over the open torus ball of radius r around every node.

    ``values`` has trailing spatial axes ``(nx,)*n``; leading axes are batched.
    An empty ball (``r <= 0``) gives zeros. Sums come from prefix-sum differences:
    absolute error is of order eps times the row total, and windows over exact
    zeros stay exactly zero.
    """
    nx = values.shape[-1]
    if op not in ("sum", "max"):
        raise ValueError(f"unknown reduction {op!r}")
    win = _window_sum if op == "sum" else _window_max
    rows = _row_halfwidths(r, h, nx, n)
    if not rows or rows[0][1] < 0:
        return np.zeros_like(values)
    if n == 1:
        return win(values, rows[0][1])
    out = None
    for dy, w in rows:
        part = win(np.roll(values, -dy, axis=-2), w)
        if out is None:
            out = part
        elif op == "sum":
            out = out + part
        else:
            out = np.maximum(out, part)
    return out


def ball_count(r: float, h: float, nx: int, n: int) -> int:
    """Number of lattice nodes in an open torus ball of radius r."""
    total = 0
    for _, w in _row_halfwidths(r, h, nx, n):
        total += nx if w >= nx // 2 else 2 * w + 1
    return total


def cone_integrals(
    F: HalfSpaceField | np.ndarray,
    aperture: float = 1.0,
    q: float | None = None,
    radius_power: float = 1.0,
    grid: Grid | None = None,
) -> SpatialFunction:
    """Cone integral at every node at once.

    Sums ``value * h^n * dt_k / t_k^q`` over nodes with torus distance
    ``< aperture * t_k**radius_power``. ``F`` must be a single channel (callers
    pass ``|F|^2`` or ``|F|``); a raw ``(nt, *space)`` array needs ``grid``.
    """
    if isinstance(F, HalfSpaceField):
        if F.channels != 1:
            raise ValueError("cone integrals take a single-channel field")
        grid, vals = F.grid, F.values[:, 0]
    else:
        vals = np.asarray(F)
    if aperture <= 0:
        raise ValueError("aperture must be positive")
    q = grid.n + 1 if q is None else q
    weights = grid.cell_volume * grid.dt / grid.t**q
    out = np.zeros(grid.shape, dtype=vals.dtype)
    for k in range(grid.nt):
        r = aperture * grid.t[k] ** radius_power
        out = out + ball_reduce(vals[k], r, grid.h, grid.n) * weights[k]
    return SpatialFunction(grid, out)


def cone_integral(
    F: HalfSpaceField,
    x,
    aperture: float = 1.0,
    q: float | None = None,
    radius_power: float = 1.0,
):
    """Cone integral at a single point ``x`` by direct summation over the cone."""
    if F.channels != 1:
        raise ValueError("cone integrals take a single-channel field")
    if aperture <= 0:
        raise ValueError("aperture must be positive")
    grid = F.grid
    q = grid.n + 1 if q is None else q
    d2 = sum(d**2 for d in grid.torus_displacement(x))
    vals = F.values[:, 0]
    total = 0.0
    for k in range(grid.nt):
        r = aperture * grid.t[k] ** radius_power
        inside = d2 < r * r
        total += vals[k][inside].sum() * (grid.cell_volume * grid.dt[k] / grid.t[k] ** q)
    return total


# ---------------------------------------------------------------------------
# binary container

MAGIC = b"LPSQ"
VERSION = 1
_HEADER = struct.Struct("<4sHBBBdIddII")
KIND_HALFSPACE = 0
KIND_SPATIAL = 1


def _write_array(fh: BinaryIO, kind: int, grid: Grid, arr: np.ndarray, channels: int):
    is_complex = np.iscomplexobj(arr)
    fh.write(_HEADER.pack(MAGIC, VERSION, kind, int(is_complex), grid.n, grid.ell, grid.nx,
                          grid.t_min, grid.t_max, grid.nt, channels))
    payload = np.ascontiguousarray(arr, dtype="<c16" if is_complex else "<f8")
    fh.write(payload.tobytes(order="C"))


def write_field(fh: BinaryIO, F: HalfSpaceField) -> None:
    """Serialize a field: header then little-endian float64 payload, time-major.

    Complex payloads store interleaved (real, imag) pairs.
    """
    _write_array(fh, KIND_HALFSPACE, F.grid, F.values, F.channels)


def write_spatial(fh: BinaryIO, grid: Grid, values: np.ndarray) -> None:
    """Serialize per-cell data of shape ``(channels, *space)`` (or ``space``)."""
    values = np.asarray(values)
    if values.shape == grid.shape:
        values = values[None]
    _write_array(fh, KIND_SPATIAL, grid, values, values.shape[0])


def read_container(fh: BinaryIO):
    """Read a container; returns a HalfSpaceField or ``(grid, array)`` for spatial data."""
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated header")
    magic, version, kind, is_complex, n, ell, nx, t_min, t_max, nt, c = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    grid = Grid(n, ell, nx, t_min, t_max, nt)
    dtype = np.dtype("<c16" if is_complex else "<f8")
    if kind == KIND_HALFSPACE:
        shape = (nt, c) + grid.shape
    elif kind == KIND_SPATIAL:
        shape = (c,) + grid.shape
    else:
        raise ValueError(f"unknown container kind {kind}")
    count = int(np.prod(shape))
    data = fh.read(count * dtype.itemsize)
    if len(data) != count * dtype.itemsize:
        raise ValueError("truncated payload")
    arr = np.frombuffer(data, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if kind == KIND_HALFSPACE:
        return HalfSpaceField(grid, arr)
    return grid, arr
