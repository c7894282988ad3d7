"""Conical and vertical square functions, tent-space norms, Lebesgue norms and
the centered Hardy-Littlewood maximal function on the lattice."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .halfspace import (
    Grid,
    HalfSpaceField,
    SpatialFunction,
    ball_count,
    ball_reduce,
    cone_integrals,
)

KINDS = ("conical", "vertical", "conical_L1", "vertical_L1", "conical_parabolic")


def unit_ball_volume(n: int) -> float:
    exact = {1: 2.0, 2: math.pi, 3: 4 * math.pi / 3}
    return exact.get(n, math.pi ** (n / 2) / math.gamma(n / 2 + 1))


@dataclass(frozen=True)
class SquareFunctionSpec:
    kind: str = "conical"
    aperture: float = 1.0
    power: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown square function kind {self.kind!r}")
        if not self.aperture > 0:
            raise ValueError("aperture must be positive")

    def homogeneity(self, n: int) -> float | None:
        """Power q of the measure ``dy dt / t^q``; None for vertical kinds."""
        if self.power is not None:
            return self.power
        if self.kind == "conical_parabolic":
            return n / 2
        if self.kind.startswith("conical"):
            return n + 1
        return None


def apply_squarefn(spec: SquareFunctionSpec, F: HalfSpaceField) -> SpatialFunction:
    grid = F.grid
    squared = spec.kind in ("conical", "vertical", "conical_parabolic")
    dens = F.abs2() if squared else F.norm()
    if spec.kind.startswith("vertical"):
        out = np.tensordot(grid.dt / grid.t, dens, axes=(0, 0))
    else:
        radius_power = 0.5 if spec.kind == "conical_parabolic" else 1.0
        out = cone_integrals(dens, spec.aperture, spec.homogeneity(grid.n), radius_power,
                             grid=grid).values
    if squared:
        out = np.sqrt(out)
    return SpatialFunction(grid, out)


def conical(F: HalfSpaceField, aperture: float = 1.0) -> SpatialFunction:
    return apply_squarefn(SquareFunctionSpec("conical", aperture), F)


def vertical(F: HalfSpaceField) -> SpatialFunction:
    return apply_squarefn(SquareFunctionSpec("vertical"), F)


def _weight_values(w, grid: Grid):
    if w is None:
        return None
    vals = getattr(w, "values", w)
    vals = np.asarray(vals, dtype=float)
    if vals.shape != grid.shape:
        raise ValueError("weight does not match the grid")
    return vals


def lp_norm(g: SpatialFunction, p: float, w=None) -> float:
    """``(sum |g|^p w h^n)^(1/p)``; ``w`` is a Weight, SpatialFunction, array or None."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    a = np.abs(g.values) ** p
    wv = _weight_values(w, g.grid)
    if wv is not None:
        a = a * wv
    return float(a.sum() * g.grid.cell_volume) ** (1 / p)


def averaging_identity_residual(F: HalfSpaceField) -> float:
    """Relative gap ``| ||SF||_2^2 - b_n ||VF||_2^2 | / ||SF||_2^2``."""
    grid = F.grid
    dens = F.abs2()
    s2 = cone_integrals(dens, 1.0, grid.n + 1, grid=grid).values.sum() * grid.cell_volume
    v2 = np.tensordot(grid.dt / grid.t, dens, axes=(0, 0)).sum() * grid.cell_volume
    gap = abs(s2 - unit_ball_volume(grid.n) * v2)
    return float(gap / max(s2, np.finfo(float).eps))


def tent_Tinfty_norm(F: HalfSpaceField, centers, radii) -> float:
    """Carleson-box supremum over the supplied balls.

    For each ball B(c, r): ``( |B|^-1 * sum_{y in B, t_k < r} |F|^2 h^n dt_k/t_k )^(1/2)``
    where ``|B|`` is the lattice measure of B.
    """
    grid = F.grid
    centers = np.asarray(centers, dtype=float).reshape(-1, grid.n)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    if len(centers) == 0:
        raise ValueError("need at least one ball")
    if np.any(radii <= 0) or np.any(radii > grid.ell / 4):
        raise ValueError("radii must lie in (0, ell/4]")
    dens = F.abs2()
    best = 0.0
    for c, r in zip(centers, radii):
        d2 = sum(d**2 for d in grid.torus_displacement(c))
        inside = d2 < r * r
        count = int(inside.sum())
        if count == 0:
            continue
        below = grid.t < r
        mass = (dens[below][:, inside].sum(axis=1) * (grid.dt / grid.t)[below]).sum()
        best = max(best, float(mass / count))
    return math.sqrt(best)


def dyadic_radii(grid: Grid) -> list[float]:
    radii, r = [], grid.h
    while r <= grid.ell / 2 * (1 + 1e-12):
        radii.append(r)
        r *= 2
    return radii


def ball_averages(values: np.ndarray, grid: Grid, r: float) -> np.ndarray:
    return ball_reduce(values, r, grid.h, grid.n) / ball_count(r, grid.h, grid.nx, grid.n)


def maximal_function(g: SpatialFunction) -> SpatialFunction:
    """Centered maximal function over torus balls with radii ``h, 2h, ..., <= ell/2``."""
    vals = np.asarray(g.values)
    if np.iscomplexobj(vals) or np.any(vals < 0):
        raise ValueError("maximal function takes a nonnegative real input")
    out = None
    for r in dyadic_radii(g.grid):
        avg = ball_averages(vals, g.grid, r)
        out = avg if out is None else np.maximum(out, avg)
    return SpatialFunction(g.grid, out)


def explicit_vs_constant(p: float, n: int, r: float | None = None) -> float:
    """Constant C in ``||Vf||_p^p <= C ||Sf||_p^p`` for ``0 < p < 2``, with ``r = p/2`` by default."""
    if not 0 < p < 2:
        raise ValueError("the explicit constant is only defined for 0 < p < 2")
    r = p / 2 if r is None else r
    if not 0 < r < p:
        raise ValueError("need 0 < r < p")
    return 2 * p / (unit_ball_volume(n) * (2 - p)) + 2 * p * 3**n / (p - r)


@dataclass(frozen=True)
class NormComparison:
    kind: str
    p: float
    n: int
    nx: int
    nt: int
    norm_S: float
    norm_V: float
    ratio: float | None
    explicit_bound: float | None = None
    slack: float | None = None

    @property
    def holds(self) -> bool | None:
        """Whether the explicit p < 2 bound holds; None when it does not apply."""
        if self.slack is None:
            return None
        return self.slack >= 0

    def row(self) -> dict:
        return {
            "kind": self.kind, "p": self.p, "n": self.n, "Nx": self.nx, "Nt": self.nt,
            "norm_S": self.norm_S, "norm_V": self.norm_V, "ratio": self.ratio,
            "explicit_bound": self.explicit_bound, "slack": self.slack,
        }


def safe_ratio(a: float, b: float) -> float | None:
    """``a / b``, or None (the 0/0 sentinel) when both vanish."""
    if b == 0:
        return None if a == 0 else math.inf
    return a / b


def compare_norms(F: HalfSpaceField, p: float, w=None) -> NormComparison:
    """``||SF||_p``, ``||VF||_p`` and their ratio; for ``p < 2`` also the explicit bound.

    ``slack`` is ``1 - ||VF||_p^p / (C ||SF||_p^p)``, nonnegative when the bound holds.
    """
    grid = F.grid
    S = conical(F)
    V = vertical(F)
    nS, nV = lp_norm(S, p, w), lp_norm(V, p, w)
    bound = slack = None
    if p < 2:
        bound = explicit_vs_constant(p, grid.n)
        rhs = bound * nS**p
        if rhs > 0:
            slack = 1 - nV**p / rhs
        elif nV == 0:
            slack = 0.0
        else:
            slack = -math.inf
    return NormComparison("S/V", p, grid.n, grid.nx, grid.nt, nS, nV, safe_ratio(nS, nV),
                          bound, slack)
