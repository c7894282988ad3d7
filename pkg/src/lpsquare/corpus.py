"""Seeded test data: sums of smooth compactly supported bumps in (y, log t),
and smooth spatial test functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .halfspace import Grid, HalfSpaceField, SpatialFunction

MAX_BUMPS = 8


def _bump(rho2: np.ndarray) -> np.ndarray:
    # C^3 bump supported in rho < 1
    return np.where(rho2 < 1, (1 - np.minimum(rho2, 1)) ** 4, 0.0)


def bump_field(grid: Grid, rng: np.random.Generator) -> HalfSpaceField:
    """Sum of 1..8 bumps with seeded centers, radii and amplitudes.

    Spatial supports stay inside the central sub-box of side ell/4. Time
    supports are centered between 0.4s and 1.2s in t, with s = ell/16, and
    spread 0.6..1.0 in log t.
    """
    s = grid.ell / 16
    half = grid.ell / 8
    logt = np.log(grid.t).reshape((grid.nt,) + (1,) * grid.n)
    vals = np.zeros((grid.nt,) + grid.shape)
    for _ in range(int(rng.integers(1, MAX_BUMPS + 1))):
        ry = rng.uniform(0.5, 1.5) * s
        c = rng.uniform(-half + ry, half - ry, size=grid.n)
        lt = rng.uniform(np.log(0.4 * s), np.log(1.2 * s))
        rt = rng.uniform(0.6, 1.0)
        amp = rng.normal()
        rho2 = sum(((x - ci) / ry) ** 2 for x, ci in zip(grid.coords, c))[None]
        rho2 = rho2 + ((logt - lt) / rt) ** 2
        vals += amp * _bump(rho2)
    return HalfSpaceField(grid, vals[:, None])


def bump_corpus(grid: Grid, count: int, seed: int) -> list[HalfSpaceField]:
    rng = np.random.default_rng(seed)
    return [bump_field(grid, rng) for _ in range(count)]


@dataclass(frozen=True)
class BumpSpec:
    """Parameters of a sum of Gaussians, independent of any grid."""

    amplitudes: tuple
    centers: tuple
    widths: tuple

    def sample(self, grid: Grid, mean_zero: bool = True) -> SpatialFunction:
        cplx = any(isinstance(a, complex) for a in self.amplitudes)
        vals = np.zeros(grid.shape, dtype=complex if cplx else float)
        for amp, c, sig in zip(self.amplitudes, self.centers, self.widths):
            r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))
            vals = vals + amp * np.exp(-r2 / (2 * sig**2))
        if mean_zero:
            vals = vals - vals.mean()
        return SpatialFunction(grid, vals)


def bump_spec(grid: Grid, rng: np.random.Generator, complex_valued: bool = False) -> BumpSpec:
    """Draw 1..4 Gaussian bumps in the central sub-box of ``grid``.

    Widths are at least ``8h`` so the centered differences resolve them.
    """
    s = grid.ell / 16
    amps, centers, widths = [], [], []
    for _ in range(int(rng.integers(1, 5))):
        widths.append(max(rng.uniform(0.3, 0.8) * s, 8 * grid.h))
        centers.append(tuple(float(v) for v in rng.uniform(-grid.ell / 8, grid.ell / 8, size=grid.n)))
        amp = rng.normal()
        amps.append(complex(amp, rng.normal()) if complex_valued else float(amp))
    return BumpSpec(tuple(amps), tuple(centers), tuple(widths))


def bump_function(grid: Grid, rng: np.random.Generator, mean_zero: bool = True,
                  complex_valued: bool = False) -> SpatialFunction:
    """Smooth spatial test function drawn by ``bump_spec`` and sampled on ``grid``."""
    return bump_spec(grid, rng, complex_valued).sample(grid, mean_zero)
