"""The two families that break the converse comparisons between the L1 square
functions, and scans of their norm ratios against the scale parameter N.

lower: ``f_N(x, t) = t chi(|x| < 1) 1(t <= N) / N``; the conical side grows like
``N^{n(1-p)}`` for ``p < 1``.
upper: ``f_N(x, t) = t b_n t^n chi(|x| < 1/N) 1(t <= 1)``; the ratio decays like
``N^{-n(p-1)}`` for ``p > 1``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .elliptic import fit_line
from .halfspace import Grid, HalfSpaceField, SpatialFunction, make_grid
from .squarefns import SquareFunctionSpec, apply_squarefn, lp_norm, unit_ball_volume

FAMILIES = ("lower", "upper")
# time nodes per octave for the family grids
PER_OCTAVE = 8


def lower_grid(N: float, n: int = 1, h: float = 1 / 8) -> Grid:
    """Grid with ``ell = 4N`` and ``t_max`` near ``2N``.

    ``t_min`` (close to 1/64) is chosen so that the log-midpoint weights of the
    nodes below N sum to N exactly, which makes the vertical L1 functional of
    the family equal to the indicator of the unit ball up to rounding.
    """
    step = math.log(2) / PER_OCTAVE
    K = round(PER_OCTAVE * math.log2(64 * N))
    c = step / (2 * math.sinh(step / 2))
    t_min = N / (c * math.expm1(K * step))
    nt = K + PER_OCTAVE
    ell = 4 * N
    nx = int(round(ell / h))
    return make_grid(n, ell, nx, t_min, t_min * math.exp(nt * step), nt)


def upper_grid(N: float, n: int = 1) -> Grid:
    """Grid with ``h = 1/(8N)``, ``ell = 8`` and t = 1 on a cell boundary."""
    m = int(math.ceil(math.log2(8 * N))) + 4
    ell = 8.0
    nx = int(round(ell * 8 * N))
    return make_grid(n, ell, nx, 2.0**-m, 2.0, PER_OCTAVE * (m + 1))


@dataclass(frozen=True)
class FamilySpec:
    family: str
    N: float
    grid: Grid | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not self.N > 0:
            raise ValueError("N must be positive")
        if self.grid is None:
            build = lower_grid if self.family == "lower" else upper_grid
            object.__setattr__(self, "grid", build(self.N))
        g = self.grid
        if self.family == "lower":
            if self.N <= 8:
                raise ValueError(f"the lower family needs N > 8, got {self.N}")
            if g.t_max < self.N:
                raise ValueError(f"t_max = {g.t_max} is below N = {self.N}")
            if g.ell < self.N / 4:
                raise ValueError(f"spatial period {g.ell} is below N/4")
        else:
            if g.h > 1 / (2 * self.N):
                raise ValueError(f"h = {g.h} exceeds 1/(2N) = {1 / (2 * self.N)}")
            if g.t_max < 1:
                raise ValueError("the upper family needs t_max >= 1")


def build_family(spec: FamilySpec) -> HalfSpaceField:
    g = spec.grid
    n = g.n
    t = g.t.reshape((g.nt,) + (1,) * n)
    r = g.radius[None]
    if spec.family == "lower":
        vals = t * ((r < 1) & (t <= spec.N)) / spec.N
    else:
        vals = t * unit_ball_volume(n) * t**n * ((r < 1 / spec.N) & (t <= 1))
    return HalfSpaceField(g, vals)


def tilde_pair(F: HalfSpaceField) -> tuple[SpatialFunction, SpatialFunction]:
    """The L1 conical and vertical functionals of F."""
    S = apply_squarefn(SquareFunctionSpec("conical_L1"), F)
    V = apply_squarefn(SquareFunctionSpec("vertical_L1"), F)
    return S, V


@dataclass(frozen=True)
class FamilyRow:
    family: str
    n: int
    p: float
    N: float
    norm_S_tilde_p: float
    norm_V_tilde_p: float
    ratio: float


@dataclass(frozen=True)
class ScanRecord:
    family: str
    p: float
    rows: tuple
    fitted_slope: float | None
    expected_slope: float

    def table(self) -> list[dict]:
        return [{"family": r.family, "n": r.n, "p": r.p, "N": r.N,
                 "norm_S_tilde_p": r.norm_S_tilde_p, "norm_V_tilde_p": r.norm_V_tilde_p,
                 "ratio": r.ratio, "fitted_slope": self.fitted_slope,
                 "expected_slope": self.expected_slope} for r in self.rows]


def expected_slope(family: str, p: float, n: int = 1) -> float:
    return n * (1 - p) if family == "lower" else -n * (p - 1)


def _evaluate(family: str, p: float, N: float, n: int) -> FamilyRow:
    spec = FamilySpec(family, N, lower_grid(N, n) if family == "lower" else upper_grid(N, n))
    S, V = tilde_pair(build_family(spec))
    s, v = lp_norm(S, p) ** p, lp_norm(V, p) ** p
    return FamilyRow(family, n, p, float(N), s, v, s / v)


def ratio_scan(family: str, p: float, N_list, n: int = 1, workers: int = 1) -> ScanRecord:
    """Ratios ``||S~ f_N||_p^p / ||V~ f_N||_p^p`` and their log-log slope in N.

    The smallest N is left out of the fit when at least three values are given.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if family == "lower" and not 0 < p < 1:
        raise ValueError(f"the lower family needs 0 < p < 1, got {p}")
    if family == "upper" and not p > 1:
        raise ValueError(f"the upper family needs p > 1, got {p}")
    Ns = sorted(float(N) for N in N_list)
    if not Ns:
        raise ValueError("empty N list")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda N: _evaluate(family, p, N, n), Ns))
    else:
        rows = [_evaluate(family, p, N, n) for N in Ns]
    fit = rows[1:] if len(rows) >= 3 else rows
    slope, _ = fit_line([math.log(r.N) for r in fit], [math.log(r.ratio) for r in fit])
    return ScanRecord(family, p, tuple(rows), slope, expected_slope(family, p, n))


def vertical_is_indicator(spec: FamilySpec, tol: float = 1e-12) -> bool:
    """Lower family: V~ f_N is 1 on the unit-ball nodes and exactly 0 elsewhere."""
    _, V = tilde_pair(build_family(spec))
    inside = spec.grid.radius < 1
    return bool(np.all(V.values[~inside] == 0) and np.all(np.abs(V.values[inside] - 1) <= tol))


def conical_vanishes_outside(spec: FamilySpec, radius: float = 2.0) -> bool:
    """Upper family: S~ f_N is exactly 0 at every node with ``|x| > radius``."""
    S, _ = tilde_pair(build_family(spec))
    return bool(np.all(S.values[spec.grid.radius > radius] == 0))
