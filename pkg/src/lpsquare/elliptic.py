"""Divergence-form operators ``L = -div(A grad)`` on the torus lattice, their heat
and Poisson semigroups, and the gradient fields that feed the square functions.

The discrete operator is ``L = (D+^* A D+ + D-^* A D-) / 2`` with one-sided
differences ``D+`` and ``D-``. It annihilates constants from both sides, is
accretive whenever A is elliptic, and reduces to the three-point Laplacian
for ``A = Id``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import BinaryIO, Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.special import roots_genlaguerre

from .halfspace import (
    Grid,
    HalfSpaceField,
    SpatialFunction,
    cone_integrals,
    read_container,
    write_spatial,
)
from .squarefns import SquareFunctionSpec, apply_squarefn, lp_norm

# dense eigendecomposition is used up to this many unknowns
EIG_LIMIT = 4096
# dense matrix exponentials for non-normal operators up to this many unknowns
DENSE_LIMIT = 1024
DEFAULT_NODES = 32


def _spatial_grid(grid: Grid) -> tuple:
    return (grid.n, grid.ell, grid.nx)


def _difference_matrices(grid: Grid):
    """Forward and backward differences along each axis, flattened C-order."""
    nx, h = grid.nx, grid.h
    eye = sp.identity(nx, format="csr")
    shift = sp.diags([np.ones(nx - 1), [1.0]], [1, -(nx - 1)], shape=(nx, nx), format="csr")
    fwd1 = (shift - eye) / h
    bwd1 = (eye - shift.T) / h
    fwd, bwd = [], []
    for axis in range(grid.n):
        parts_f = [eye] * grid.n
        parts_b = [eye] * grid.n
        parts_f[axis], parts_b[axis] = fwd1, bwd1
        kf, kb = parts_f[0], parts_b[0]
        for a, b in zip(parts_f[1:], parts_b[1:]):
            kf, kb = sp.kron(kf, a, format="csr"), sp.kron(kb, b, format="csr")
        fwd.append(kf.tocsr())
        bwd.append(kb.tocsr())
    return fwd, bwd


def _coefficient_array(A, grid: Grid) -> np.ndarray:
    """Normalize a closure or array to shape ``(n, n, *space)``."""
    raw = A(grid.coords) if callable(A) else A
    arr = np.asarray(raw)
    n = grid.n
    if arr.ndim <= n:
        scalar = np.broadcast_to(arr, grid.shape)
        out = np.zeros((n, n) + grid.shape, dtype=scalar.dtype)
        for i in range(n):
            out[i, i] = scalar
        return out
    arr = np.broadcast_to(arr, (n, n) + grid.shape)
    return np.array(arr)


def _check_ellipticity(coeffs: np.ndarray, lam: float, Lam: float, grid: Grid):
    """Exact per-cell check of ``Re A xi.conj(xi) >= lam |xi|^2`` and ``|A| <= Lam``."""
    n = grid.n
    mats = np.moveaxis(coeffs.reshape(n, n, -1), -1, 0)
    herm = 0.5 * (mats + np.conj(np.swapaxes(mats, 1, 2)))
    low = np.linalg.eigvalsh(herm)[:, 0]
    top = np.linalg.svd(mats, compute_uv=False)[:, 0]
    slack = 1e-12 * max(1.0, Lam)
    bad = np.flatnonzero(low < lam - slack)
    if bad.size:
        cell = np.unravel_index(bad[0], grid.shape)
        raise ValueError(f"ellipticity fails at cell {tuple(int(c) for c in cell)}: "
                         f"min Re A xi.xi = {low[bad[0]]:.6g} < lambda = {lam}")
    bad = np.flatnonzero(top > Lam + slack)
    if bad.size:
        cell = np.unravel_index(bad[0], grid.shape)
        raise ValueError(f"boundedness fails at cell {tuple(int(c) for c in cell)}: "
                         f"|A| = {top[bad[0]]:.6g} > Lambda = {Lam}")
    return float(top.max())


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """Assembled ``-div(A grad)``; build with :func:`assemble`."""

    grid: Grid
    coeffs: np.ndarray = field(repr=False)
    lam: float
    Lam: float
    matrix: sp.csr_matrix = field(repr=False)
    norm_inf: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def hermitian(self) -> bool:
        M = self.matrix
        gap = abs(M - M.conj().T).max() if M.nnz else 0.0
        return bool(gap <= 1e-13 * max(abs(M).max(), 1.0))

    @cached_property
    def normal(self) -> bool:
        if self.hermitian:
            return True
        M = self.matrix
        comm = M @ M.conj().T - M.conj().T @ M
        scale = abs(M).max() ** 2
        return bool(abs(comm).max() <= 1e-12 * scale)

    @property
    def uses_eig(self) -> bool:
        return self.size <= EIG_LIMIT and self.normal

    @property
    def default_method(self) -> str:
        """``eig`` for small normal operators, ``expm`` for small others, else ``cn``."""
        if self.uses_eig:
            return "eig"
        return "expm" if self.size <= DENSE_LIMIT else "cn"

    @cached_property
    def _eig(self):
        dense = self.matrix.toarray()
        if self.hermitian:
            dense = 0.5 * (dense + dense.conj().T)
            w, V = scipy.linalg.eigh(dense)
            return w, V
        T, Z = scipy.linalg.schur(dense.astype(complex), output="complex")
        return np.diag(T).copy(), Z

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``L u`` for an array of shape ``space``."""
        u = np.asarray(u)
        return (self.matrix @ u.reshape(-1)).reshape(self.grid.shape)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).reshape(-1)


def assemble(A: Callable | np.ndarray, lam: float, Lam: float, grid: Grid) -> EllipticOperator:
    """Assemble the discrete operator for the coefficient field A.

    ``A`` is a closure on the coordinate tuple or an array, either scalar per
    cell (meaning ``a(x) Id``) or of shape ``(n, n, *space)``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if Lam < lam:
        raise ValueError(f"need Lambda >= lambda, got {Lam} < {lam}")
    coeffs = _coefficient_array(A, grid)
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("coefficient field has non-finite entries")
    norm_inf = _check_ellipticity(coeffs, lam, Lam, grid)
    fwd, bwd = _difference_matrices(grid)
    n = grid.n
    L = None
    for D in (fwd, bwd):
        for i in range(n):
            for j in range(n):
                a = coeffs[i, j].reshape(-1)
                if not np.any(a):
                    continue
                term = D[i].T @ sp.diags(a) @ D[j]
                L = term if L is None else L + term
    L = (0.5 * L).tocsr()
    if not np.iscomplexobj(coeffs):
        L = L.astype(float)
    L.eliminate_zeros()
    coeffs = coeffs.copy()
    coeffs.flags.writeable = False
    return EllipticOperator(grid, coeffs, float(lam), float(Lam), L, norm_inf)


# ---------------------------------------------------------------------------
# presets

PRESETS = ("identity", "smooth-scalar", "checkerboard", "complex-perturbed")
PERTURBATION = 0.5


def preset(name: str, grid: Grid) -> EllipticOperator:
    ell = grid.ell
    x1 = grid.coords[0]
    if name == "identity":
        return assemble(np.ones(grid.shape), 1.0, 1.0, grid)
    if name == "smooth-scalar":
        return assemble(2 + np.sin(2 * np.pi * x1 / ell), 1.0, 3.0, grid)
    if name == "checkerboard":
        side = ell / 8
        parity = sum(np.floor((c + ell / 2) / side).astype(int) for c in grid.coords) % 2
        return assemble(np.where(parity == 0, 1.0, 4.0), 1.0, 4.0, grid)
    if name == "complex-perturbed":
        eps = PERTURBATION
        a = 1 + 1j * eps * np.cos(2 * np.pi * x1 / ell)
        return assemble(a, 1.0, math.sqrt(1 + eps**2), grid)
    raise ValueError(f"unknown operator preset {name!r}; choose from {', '.join(PRESETS)}")


def write_coefficients(fh: BinaryIO, Lop: EllipticOperator) -> None:
    n = Lop.grid.n
    write_spatial(fh, Lop.grid, Lop.coeffs.reshape((n * n,) + Lop.grid.shape))


def load_coefficients(fh: BinaryIO, lam: float, Lam: float) -> EllipticOperator:
    """Assemble from a spatial container holding ``n*n`` coefficient channels."""
    got = read_container(fh)
    if isinstance(got, HalfSpaceField):
        raise ValueError("expected a spatial container for coefficients")
    grid, arr = got
    n = grid.n
    if arr.shape[0] == 1:
        return assemble(arr[0], lam, Lam, grid)
    if arr.shape[0] != n * n:
        raise ValueError(f"coefficient container needs 1 or {n * n} channels, got {arr.shape[0]}")
    return assemble(arr.reshape((n, n) + grid.shape), lam, Lam, grid)


# ---------------------------------------------------------------------------
# semigroups


def _as_array(f, grid: Grid) -> np.ndarray:
    vals = np.asarray(getattr(f, "values", f))
    if vals.shape != grid.shape:
        raise ValueError(f"function shape {vals.shape} does not match grid {grid.shape}")
    return vals


def _spectral(Lop: EllipticOperator, f: np.ndarray, symbol: Callable) -> np.ndarray:
    """Apply ``symbol(eigenvalues)`` (shape ``(m, N)``) via the stored decomposition."""
    w, V = Lop._eig
    c = V.conj().T @ f.reshape(-1)
    mult = symbol(w)
    out = (mult * c[None]) @ V.T
    if not np.iscomplexobj(f) and not np.iscomplexobj(Lop.matrix):
        out = out.real
    return out.reshape((-1,) + Lop.grid.shape)


def _cn_substep(Lop: EllipticOperator, target: float) -> float:
    return min(target / 32, Lop.grid.h**2 / (2 * Lop.Lam))


def _crank_nicolson(Lop: EllipticOperator, f: np.ndarray, times: np.ndarray) -> np.ndarray:
    """March once through the sorted target times. ``f`` has shape ``(B, *space)``;
    the result has shape ``(B, len(times), *space)``."""
    L = Lop.matrix.tocsc()
    B = f.shape[0]
    dtype = np.result_type(L.dtype, f.dtype)
    eye = sp.identity(Lop.size, dtype=dtype, format="csc")
    out = np.empty((len(times), Lop.size, B), dtype=dtype)
    u = f.reshape(B, -1).T.astype(dtype)
    now = 0.0
    for idx in np.argsort(times, kind="stable"):
        target = float(times[idx])
        gap = target - now
        if gap > 0:
            steps = max(1, math.ceil(gap / _cn_substep(Lop, target) - 1e-9))
            d = gap / steps
            try:
                lu = splu((eye + 0.5 * d * L).tocsc())
            except RuntimeError as exc:
                raise RuntimeError(f"Crank-Nicolson factorization failed at t={target}") from exc
            rhs = (eye - 0.5 * d * L).tocsr()
            for _ in range(steps):
                u = lu.solve(rhs @ u)
            now = target
        out[idx] = u
    return np.moveaxis(out, 2, 0).reshape((B, len(times)) + Lop.grid.shape)


def _expm_march(Lop: EllipticOperator, f: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Like ``_crank_nicolson`` but each gap uses the dense exponential ``e^{-gap L}``."""
    M = Lop.matrix.toarray()
    B = f.shape[0]
    dtype = np.result_type(M.dtype, f.dtype)
    out = np.empty((len(times), Lop.size, B), dtype=dtype)
    u = f.reshape(B, -1).T.astype(dtype)
    now = 0.0
    for idx in np.argsort(times, kind="stable"):
        target = float(times[idx])
        if target > now:
            u = scipy.linalg.expm(-(target - now) * M) @ u
            now = target
        out[idx] = u
    return np.moveaxis(out, 2, 0).reshape((B, len(times)) + Lop.grid.shape)


def heat_many(Lop: EllipticOperator, f, times, method: str | None = None) -> np.ndarray:
    """``e^{-tL} f`` for every t in ``times``; shape ``(len(times), *space)``.

    ``method`` is ``"eig"``, ``"expm"`` or ``"cn"``; the default is
    ``Lop.default_method``.
    """
    f = _as_array(f, Lop.grid)
    return heat_batch(Lop, f[None], times, method)[0]


def heat_batch(Lop: EllipticOperator, fs, times, method: str | None = None) -> np.ndarray:
    """``heat_many`` for a stack ``fs`` of shape ``(B, *space)``; result ``(B, len(times), *space)``.

    Crank-Nicolson factors each step once for the whole stack.
    """
    fs = np.asarray(fs)
    if fs.shape[1:] != Lop.grid.shape:
        raise ValueError(f"stack shape {fs.shape} does not match grid {Lop.grid.shape}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0):
        raise ValueError("heat times must be positive")
    method = method or Lop.default_method
    if method == "eig":
        if not Lop.normal:
            raise ValueError("eigendecomposition path needs a normal operator")
        return np.stack([_spectral(Lop, f, lambda w: np.exp(-np.outer(times, w))) for f in fs])
    if method == "expm":
        return _expm_march(Lop, fs, times)
    if method == "cn":
        return _crank_nicolson(Lop, fs, times)
    raise ValueError(f"unknown method {method!r}")


def heat(Lop: EllipticOperator, f, t: float, method: str | None = None) -> SpatialFunction:
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return SpatialFunction(Lop.grid, heat_many(Lop, f, [t], method)[0])


@lru_cache(maxsize=None)
def laguerre_rule(K: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Nodes, weights for ``s^{-1/2} e^{-s}``, and the normalization C.

    C is fixed by requiring the zero eigenvalue (constants) to be reproduced
    exactly, which gives ``C = 1 / sum(weights)``.
    """
    if K < 16:
        raise ValueError(f"need at least 16 quadrature nodes, got {K}")
    s, w = roots_genlaguerre(K, -0.5)
    return s, w, 1.0 / w.sum()


def poisson_many(Lop: EllipticOperator, f, times, K: int = DEFAULT_NODES,
                 method: str | None = None) -> np.ndarray:
    """``e^{-t sqrt(L)} f`` by subordination: ``C sum_i w_i e^{-t^2 L/(4 s_i)} f``."""
    f = _as_array(f, Lop.grid)
    return poisson_batch(Lop, f[None], times, K, method)[0]


def poisson_batch(Lop: EllipticOperator, fs, times, K: int = DEFAULT_NODES,
                  method: str | None = None) -> np.ndarray:
    """``poisson_many`` for a stack ``fs``; result ``(B, len(times), *space)``."""
    fs = np.asarray(fs)
    if fs.shape[1:] != Lop.grid.shape:
        raise ValueError(f"stack shape {fs.shape} does not match grid {Lop.grid.shape}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0):
        raise ValueError("Poisson times must be positive")
    s, w, C = laguerre_rule(K)
    method = method or Lop.default_method
    if method == "eig":
        def symbol(lam):
            tau = (times[:, None] ** 2 / (4 * s[None]))
            return C * np.einsum("i,tik->tk", w, np.exp(-tau[:, :, None] * lam[None, None]))
        return np.stack([_spectral(Lop, f, symbol) for f in fs])
    taus = (times[:, None] ** 2 / (4 * s[None])).reshape(-1)
    flows = heat_batch(Lop, fs, taus, method)
    flows = flows.reshape((len(fs), len(times), K) + Lop.grid.shape)
    return C * np.tensordot(w, flows, axes=(0, 2))


def poisson(Lop: EllipticOperator, f, t: float, K: int = DEFAULT_NODES,
            method: str | None = None) -> SpatialFunction:
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return SpatialFunction(Lop.grid, poisson_many(Lop, f, [t], K, method)[0])


def discrete_symbol(grid: Grid, k) -> float:
    """Eigenvalue of the three-point Laplacian for the integer frequency vector k."""
    k = np.atleast_1d(k)
    return float(sum(2 / grid.h**2 * (1 - math.cos(2 * math.pi * ki * grid.h / grid.ell)) for ki in k))


# ---------------------------------------------------------------------------
# gradient fields

_DESCRIPTOR = re.compile(r"^(grad_heat|grad_poisson_full|m_poisson_full|m_heat_scalar|m_heat_full)"
                         r"(?:\((\d+)\))?$")


def parse_descriptor(desc: str) -> tuple[str, int]:
    m = _DESCRIPTOR.match(desc.strip())
    if not m:
        raise ValueError(f"unknown field descriptor {desc!r}")
    name, order = m.group(1), m.group(2)
    if name in ("grad_heat", "grad_poisson_full"):
        if order is not None:
            raise ValueError(f"{name} takes no order")
        return name, 0
    if order is None:
        raise ValueError(f"{name} needs an order, e.g. {name}(1)")
    return name, int(order)


@dataclass(frozen=True)
class SemigroupField:
    field: HalfSpaceField
    descriptor: str

    def __post_init__(self):
        name, _ = parse_descriptor(self.descriptor)
        n = self.field.grid.n
        want = {"grad_heat": n, "m_heat_scalar": 1}.get(name, n + 1)
        if self.field.channels != want:
            raise ValueError(f"{self.descriptor} needs {want} channels, got {self.field.channels}")


def centered_gradient(u: np.ndarray, h: float, n: int) -> list[np.ndarray]:
    """Centered differences along the last n axes, periodic."""
    return [(np.roll(u, -1, axis=-n + a) - np.roll(u, 1, axis=-n + a)) / (2 * h) for a in range(n)]


def log_time_derivative(v: np.ndarray, log_step: float) -> np.ndarray:
    """``t d/dt`` along axis 0 by symmetric differences in log t, one-sided at the ends."""
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2 * log_step)
    out[0] = (v[1] - v[0]) / log_step
    out[-1] = (v[-1] - v[-2]) / log_step
    return out


def _full_gradient(v: np.ndarray, grid: Grid) -> np.ndarray:
    t = grid.t.reshape((grid.nt,) + (1,) * grid.n)
    parts = [t * g for g in centered_gradient(v, grid.h, grid.n)]
    parts.append(log_time_derivative(v, grid.log_step))
    return np.stack(parts, axis=1)


def _power_of_L(Lop: EllipticOperator, f: np.ndarray, m: int) -> np.ndarray:
    for _ in range(m):
        f = Lop.apply(f)
    return f


def build_field(Lop: EllipticOperator, f, descriptor: str, grid: Grid,
                K: int = DEFAULT_NODES) -> SemigroupField:
    """Sample one of the semigroup fields on the time nodes of ``grid``.

    grad_heat: ``grad e^{-tL} f``. m_poisson_full(m): ``t grad_{y,t}((t^2 L)^m e^{-t sqrt L} f)``.
    m_heat_scalar(m): ``(t^2 L)^m e^{-t^2 L} f``. m_heat_full(m): ``t grad_{y,t}`` of that.
    grad_poisson_full is m_poisson_full(0).
    """
    if _spatial_grid(grid) != _spatial_grid(Lop.grid):
        raise ValueError("field grid and operator grid differ in space")
    name, m = parse_descriptor(descriptor)
    f = _as_array(f, Lop.grid)
    t = grid.t.reshape((grid.nt,) + (1,) * grid.n)
    if name == "grad_heat":
        u = heat_many(Lop, f, grid.t)
        vals = np.stack(centered_gradient(u, grid.h, grid.n), axis=1)
    elif name in ("grad_poisson_full", "m_poisson_full"):
        v = t ** (2 * m) * poisson_many(Lop, _power_of_L(Lop, f, m), grid.t, K)
        vals = _full_gradient(v, grid)
    else:
        v = t ** (2 * m) * heat_many(Lop, _power_of_L(Lop, f, m), grid.t**2)
        vals = v[:, None] if name == "m_heat_scalar" else _full_gradient(v, grid)
    return SemigroupField(HalfSpaceField(grid, vals), descriptor)


def G_h(Lop: EllipticOperator, f, grid: Grid) -> SpatialFunction:
    """Vertical heat square function ``(int |grad e^{-tL} f|^2 dt)^{1/2}``."""
    F = build_field(Lop, f, "grad_heat", grid).field
    t = grid.t.reshape((grid.nt, 1) + (1,) * grid.n)
    return apply_squarefn(SquareFunctionSpec("vertical"), F * np.sqrt(t))


def G_h_batch(Lop: EllipticOperator, fs, grid: Grid) -> list[SpatialFunction]:
    """``G_h`` for each function in the stack ``fs``, sharing one heat march."""
    if _spatial_grid(grid) != _spatial_grid(Lop.grid):
        raise ValueError("field grid and operator grid differ in space")
    flows = heat_batch(Lop, fs, grid.t)
    t = grid.t.reshape((grid.nt, 1) + (1,) * grid.n)
    out = []
    for u in flows:
        F = HalfSpaceField(grid, np.stack(centered_gradient(u, grid.h, grid.n), axis=1) * np.sqrt(t))
        out.append(apply_squarefn(SquareFunctionSpec("vertical"), F))
    return out


def conical_G_h(Lop: EllipticOperator, f, grid: Grid) -> SpatialFunction:
    F = build_field(Lop, f, "grad_heat", grid).field
    return apply_squarefn(SquareFunctionSpec("conical_parabolic"), F)


def G_P(Lop: EllipticOperator, f, grid: Grid, K: int = DEFAULT_NODES) -> SpatialFunction:
    F = build_field(Lop, f, "grad_poisson_full", grid, K).field
    return apply_squarefn(SquareFunctionSpec("vertical"), F)


def conical_G_P(Lop: EllipticOperator, f, grid: Grid, m: int = 0,
                K: int = DEFAULT_NODES) -> SpatialFunction:
    F = build_field(Lop, f, f"m_poisson_full({m})", grid, K).field
    return apply_squarefn(SquareFunctionSpec("conical"), F)


# ---------------------------------------------------------------------------
# off-diagonal decay


def torus_set_distance(grid: Grid, E: np.ndarray, F: np.ndarray) -> float:
    """Smallest torus distance between nodes of the masks E and F."""
    pe = np.argwhere(E) * grid.h
    pf = np.argwhere(F) * grid.h
    best = math.inf
    for start in range(0, len(pe), 512):
        d = pe[start:start + 512, None, :] - pf[None]
        d = d - grid.ell * np.round(d / grid.ell)
        best = min(best, float(np.sqrt((d**2).sum(-1)).min()))
    return best


@dataclass(frozen=True)
class OffDiagonalRecord:
    distance: float
    times: tuple
    amplitudes: tuple
    slope: float | None
    intercept: float | None

    def rows(self) -> list[dict]:
        return [{"t": t, "d2_over_t": self.distance**2 / t, "amplitude": a}
                for t, a in zip(self.times, self.amplitudes)]


def fit_line(x, y) -> tuple[float | None, float | None]:
    """Least-squares slope and intercept; None for fewer than two distinct points."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        return None, None
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def offdiag_decay(Lop: EllipticOperator, E, F, t_list, f=None) -> OffDiagonalRecord:
    """Measured ``||e^{-tL}(f chi_E)||_{L2(F)} / ||f||_{L2(E)}`` and a fit of
    its logarithm against ``d(E, F)^2 / t``. ``f`` defaults to 1 on E."""
    grid = Lop.grid
    E, F = np.asarray(E, dtype=bool), np.asarray(F, dtype=bool)
    if E.shape != grid.shape or F.shape != grid.shape:
        raise ValueError("cell sets must be masks on the operator grid")
    if np.any(E & F):
        raise ValueError("E and F must be disjoint")
    if not E.any() or not F.any():
        raise ValueError("E and F must be nonempty")
    f = np.ones(grid.shape) if f is None else _as_array(f, grid)
    f = np.where(E, f, 0)
    norm_f = math.sqrt(float(np.sum(np.abs(f) ** 2)) * grid.cell_volume)
    if norm_f == 0:
        raise ValueError("f vanishes on E")
    times = np.asarray(t_list, dtype=float)
    u = heat_many(Lop, f, times)
    amps = np.sqrt(np.sum(np.abs(np.where(F, u, 0)) ** 2, axis=tuple(range(1, grid.n + 1)))
                   * grid.cell_volume) / norm_f
    d = torus_set_distance(grid, E, F)
    keep = amps > 0
    slope, intercept = fit_line(d**2 / times[keep], np.log(amps[keep]))
    return OffDiagonalRecord(d, tuple(float(t) for t in times), tuple(float(a) for a in amps),
                             slope, intercept)


# ---------------------------------------------------------------------------
# three-term decomposition


@dataclass(frozen=True)
class DecompositionRecord:
    x: tuple
    m: int
    lhs: float
    term1: float
    term2: float
    term3: float
    ratio: float | None

    def row(self) -> dict:
        return {"x": self.x, "m": self.m, "lhs": self.lhs, "term1": self.term1,
                "term2": self.term2, "term3": self.term3, "ratio": self.ratio}


def decomposition_terms(Lop: EllipticOperator, f, m: int, grid: Grid,
                        K: int = DEFAULT_NODES) -> dict[str, SpatialFunction]:
    """All four square functions of the three-term bound at every node.

    lhs uses aperture 1; the three right-hand terms use aperture 2 and
    ``dy dt / t^{n+1}`` after moving the factor t into the gradient.
    """
    if m not in (0, 1):
        raise ValueError(f"m must be 0 or 1, got {m}")
    if _spatial_grid(grid) != _spatial_grid(Lop.grid):
        raise ValueError("field grid and operator grid differ in space")
    n = grid.n
    fm = _power_of_L(Lop, _as_array(f, grid), m)
    t = grid.t.reshape((grid.nt,) + (1,) * n)
    pois = t ** (2 * m) * poisson_many(Lop, fm, grid.t, K)
    warm = t ** (2 * m) * heat_many(Lop, fm, grid.t**2)
    lhs = HalfSpaceField(grid, _full_gradient(pois, grid))
    scalar = HalfSpaceField(grid, warm)
    full = HalfSpaceField(grid, _full_gradient(warm, grid))
    diff_field = HalfSpaceField(grid, pois - warm)

    def cone(F, aperture):
        return SpatialFunction(grid, np.sqrt(cone_integrals(F.abs2(), aperture, n + 1,
                                                            grid=grid).values))

    zero = SpatialFunction(grid, np.zeros(grid.shape))
    return {
        "lhs": cone(lhs, 1.0),
        "term1": cone(scalar, 2.0) if m > 0 else zero,
        "term2": cone(full, 2.0),
        "term3": cone(diff_field, 2.0),
    }


def caccioppoli_check(Lop: EllipticOperator, f, m: int, x_list, grid: Grid,
                      K: int = DEFAULT_NODES) -> list[DecompositionRecord]:
    """lhs / (term1 + term2 + term3) at each x; the first term is absent for m = 0."""
    terms = decomposition_terms(Lop, f, m, grid, K)
    out = []
    for x in x_list:
        x = tuple(float(c) for c in np.atleast_1d(x))
        vals = {k: float(v(x)) for k, v in terms.items()}
        rhs = vals["term1"] + vals["term2"] + vals["term3"]
        if rhs == 0:
            ratio = None if vals["lhs"] == 0 else math.inf
        else:
            ratio = vals["lhs"] / rhs
        out.append(DecompositionRecord(x, m, vals["lhs"], vals["term1"], vals["term2"],
                                       vals["term3"], ratio))
    return out


# ---------------------------------------------------------------------------
# p = 2 identities and the converse pairing


def energy_gap(Lop: EllipticOperator, f, grid: Grid) -> dict:
    """``||G_h f||_2^2`` against ``||f||_2^2 / 2`` together with the sandwich bounds."""
    g = G_h(Lop, f, grid)
    fv = _as_array(f, grid)
    half = 0.5 * float(np.sum(np.abs(fv) ** 2)) * grid.cell_volume
    gh2 = lp_norm(g, 2) ** 2
    return {"Gh2": gh2, "half_f2": half, "lower": Lop.lam * gh2, "upper": Lop.Lam * gh2}


@dataclass(frozen=True)
class PairingRecord:
    pairing: float
    norm_A: float
    GhL_f: float
    GhD_g: float
    bound: float
    slack: float

    def row(self) -> dict:
        return {"pairing": self.pairing, "norm_A": self.norm_A, "GhL_f": self.GhL_f,
                "GhD_g": self.GhD_g, "bound": self.bound, "slack": self.slack}


def converse_pairing(Lop: EllipticOperator, f, g, grid: Grid, p: float = 2.0) -> PairingRecord:
    """``|int f conj(g)|`` against ``(||A||_inf + 1) ||G_{h,L} f||_p ||G_{h,-Lap} g||_p'``.

    ``slack`` is ``1 - pairing / bound``.
    """
    return converse_pairings(Lop, [_as_array(f, grid)], [_as_array(g, grid)], grid, p)[0]


def converse_pairings(Lop: EllipticOperator, fs, gs, grid: Grid,
                      p: float = 2.0) -> list[PairingRecord]:
    """``converse_pairing`` for paired stacks, with one heat march per operator."""
    if not p > 1:
        raise ValueError("need p > 1")
    q = p / (p - 1)
    fs, gs = np.asarray(fs), np.asarray(gs)
    if fs.shape != gs.shape:
        raise ValueError("f and g stacks differ in shape")
    lap = preset("identity", Lop.grid)
    GL = G_h_batch(Lop, fs, grid)
    GD = G_h_batch(lap, gs, grid)
    out = []
    for fv, gv, Gf, Gg in zip(fs, gs, GL, GD):
        pairing = abs(complex(np.sum(fv * np.conj(gv)) * grid.cell_volume))
        a, b = lp_norm(Gf, p), lp_norm(Gg, q)
        bound = (Lop.norm_inf + 1) * a * b
        slack = 1 - pairing / bound if bound > 0 else (0.0 if pairing == 0 else -math.inf)
        out.append(PairingRecord(pairing, Lop.norm_inf, a, b, bound, slack))
    return out
