"""Muckenhoupt and reverse-Hoelder characteristics over grid-centered dyadic
balls, and weighted norm comparisons for the conical and vertical functionals."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .halfspace import Grid, HalfSpaceField, SpatialFunction, ball_count, ball_reduce
from .squarefns import (
    ball_averages,
    conical,
    dyadic_radii,
    lp_norm,
    maximal_function,
    safe_ratio,
    unit_ball_volume,
    vertical,
)


@dataclass(frozen=True, eq=False)
class Weight:
    """Strictly positive samples on the spatial lattice."""

    fn: SpatialFunction
    name: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.fn.values)
        if np.iscomplexobj(v) or not np.all(v > 0):
            raise ValueError("weights must be real and strictly positive")

    @property
    def grid(self) -> Grid:
        return self.fn.grid

    @property
    def values(self) -> np.ndarray:
        return self.fn.values

    def ap(self, p: float) -> float:
        key = ("A", float(p))
        if key not in self._cache:
            self._cache[key] = ap_characteristic(self, p)
        return self._cache[key]

    def rh(self, q: float) -> float:
        key = ("RH", float(q))
        if key not in self._cache:
            self._cache[key] = rh_characteristic(self, q)
        return self._cache[key]

    def scaled(self, c: float) -> "Weight":
        return Weight(SpatialFunction(self.grid, c * self.values), f"{c}*{self.name}")


def _values(w) -> tuple[np.ndarray, Grid]:
    # Weight or SpatialFunction
    return np.asarray(w.values, dtype=float), w.grid


def ap_characteristic(w, p: float) -> float:
    """``[w]_{A_p}`` over grid-centered balls with radii ``h, 2h, ..., ell/2``.

    For p = 1 this is ``max Mw / w`` with the dyadic maximal function.
    """
    if p < 1:
        raise ValueError(f"A_p needs p >= 1, got {p}")
    vals, grid = _values(w)
    if p == 1:
        M = maximal_function(SpatialFunction(grid, vals)).values
        return float(np.max(M / vals))
    # scale invariant; dividing by the minimum keeps the dual weight <= 1
    vals = vals / vals.min()
    dual = vals ** (-1 / (p - 1))
    best = 0.0
    for r in dyadic_radii(grid):
        a = ball_averages(vals, grid, r)
        b = ball_averages(dual, grid, r)
        best = max(best, float(np.max(a * b ** (p - 1))))
    return best


def rh_characteristic(w, q: float) -> float:
    """``[w]_{RH_q}`` over the same balls; ``q = inf`` uses the ball maximum."""
    if not q > 1:
        raise ValueError(f"RH_q needs q > 1, got {q}")
    vals, grid = _values(w)
    best = 0.0
    for r in dyadic_radii(grid):
        avg = ball_averages(vals, grid, r)
        if math.isinf(q):
            top = ball_reduce(vals, r, grid.h, grid.n, op="max")
        else:
            top = ball_averages(vals**q, grid, r) ** (1 / q)
        best = max(best, float(np.max(top / avg)))
    return best


# ---------------------------------------------------------------------------
# presets

_PRESET = re.compile(r"^(unit|power|plateau)(?:\(([^)]*)\))?$")


def weight_preset(spec: str, grid: Grid) -> Weight:
    """``unit``, ``power(a)`` = ``max(|x|, h)^a`` or ``plateau(c)`` = 1 on ``x_1 < 0``, c elsewhere."""
    m = _PRESET.match(spec.replace(" ", ""))
    if not m:
        raise ValueError(f"unknown weight preset {spec!r}; use unit, power(a) or plateau(c)")
    kind, arg = m.group(1), m.group(2)
    if kind == "unit":
        if arg:
            raise ValueError("unit takes no argument")
        return Weight(SpatialFunction(grid, np.ones(grid.shape)), "unit")
    if not arg:
        raise ValueError(f"{kind} needs an argument, e.g. {kind}(0.5)")
    try:
        a = float(arg)
    except ValueError:
        raise ValueError(f"bad {kind} argument {arg!r}") from None
    if kind == "power":
        vals = np.maximum(grid.radius, grid.h) ** a
    else:
        if not a > 0:
            raise ValueError("plateau level must be positive")
        vals = np.where(grid.coords[0] < 0, 1.0, a)
    return Weight(SpatialFunction(grid, vals), f"{kind}({arg})")


# ---------------------------------------------------------------------------
# weighted comparisons


def conjugate(x: float) -> float:
    return math.inf if x == 1 else x / (x - 1)


@dataclass(frozen=True)
class WeightedComparison:
    weight: str
    p: float
    norm_S_w: float
    norm_V_w: float
    ratio: float | None
    ap_index: float
    ap_value: float
    rh_index: float
    rh_value: float
    relevant: str

    def row(self) -> dict:
        return {"weight": self.weight, "p": self.p, "norm_S_w": self.norm_S_w,
                "norm_V_w": self.norm_V_w, "ratio": self.ratio, "ap_index": self.ap_index,
                "ap_value": self.ap_value, "rh_index": self.rh_index, "rh_value": self.rh_value,
                "relevant": self.relevant}


def weighted_compare(F: HalfSpaceField, p: float, w: Weight) -> WeightedComparison:
    """Weighted ``||SF||_p``, ``||VF||_p``, their ratio and both characteristics.

    For ``p > 2`` the relevant class is ``A_{p/2}``; for ``p < 2`` it is
    ``RH_{(2/p)'}``. Both are always reported.
    """
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    S, V = conical(F), vertical(F)
    nS, nV = lp_norm(S, p, w.values), lp_norm(V, p, w.values)
    ap_index = max(p / 2, 1.0)
    rh_index = conjugate(2 / p) if p < 2 else math.inf
    relevant = "A" if p > 2 else ("RH" if p < 2 else "both")
    return WeightedComparison(w.name, p, nS, nV, safe_ratio(nS, nV), ap_index, w.ap(ap_index),
                              rh_index, w.rh(rh_index), relevant)


def weighted_identity_gap(F: HalfSpaceField, w: Weight) -> float:
    """Relative gap in ``||SF||_{L2(w)}^2 = b_n sum |F|^2 w(B)/|B| h^n dt/t``.

    ``w(B)`` is the lattice sum over the open ball and ``|B| = b_n t^n``.
    """
    grid = F.grid
    dens = F.abs2()
    lhs = lp_norm(conical(F), 2, w.values) ** 2
    vals = np.asarray(w.values, dtype=float)
    total = 0.0
    for k in range(grid.nt):
        t = grid.t[k]
        wB = ball_reduce(vals, t, grid.h, grid.n) * grid.cell_volume
        vol = unit_ball_volume(grid.n) * t**grid.n
        total += float(np.sum(dens[k] * wB / vol)) * grid.cell_volume * grid.dt[k] / t
    rhs = unit_ball_volume(grid.n) * total
    return abs(lhs - rhs) / max(lhs, np.finfo(float).eps)


def lattice_ball_measure(grid: Grid, r: float) -> float:
    return ball_count(r, grid.h, grid.nx, grid.n) * grid.cell_volume
