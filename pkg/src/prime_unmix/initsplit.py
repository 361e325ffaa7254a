"""Heuristic initialization: deterministic light-splitting of the observed
multispectral cube into a virtual double-band cube, Gaussian perturbation,
and the seed endmember/abundance estimate."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .mixmodel import ImageCube

__all__ = ["SplitConfig", "light_split", "perturb", "init_endmembers",
           "project_columns_to_simplex"]


@dataclass(frozen=True)
class SplitConfig:
    gamma: int = 2
    noise_frac: float = 0.05  # perturbation energy as a fraction of the split cube
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_frac < 1.0:
            raise ValueError("noise fraction must be in [0, 1)")


def light_split(zm: ImageCube) -> ImageCube:
    """Split each observed band i into two half-bands 0.5*(z_i -/+ theta_i).

    theta_i is a quarter of the forward band difference (backward at the
    last band), so consecutive output pairs ramp smoothly while their sums
    reproduce the input band exactly.
    """
    p = zm.bands
    if p < 2:
        raise ShapeError("light split needs at least 2 bands (no neighbor for theta)")
    z = zm.data
    theta = np.empty_like(z)
    theta[:-1] = 0.25 * (z[1:] - z[:-1])
    theta[-1] = 0.25 * (z[-1] - z[-2])
    out = np.empty((2 * p,) + z.shape[1:], dtype=np.float64)
    out[0::2] = 0.5 * (z - theta)
    out[1::2] = 0.5 * (z + theta)
    # sharp band steps can push a half-band slightly negative; the cube is a
    # virtual intermediate and gets clamped only after perturbation, keeping
    # the block-sum identity and the rank-P structure exact here
    return ImageCube(out, signed=True)


def perturb(zh_tilde: ImageCube, cfg: SplitConfig) -> ImageCube:
    """Add seeded Gaussian noise carrying `noise_frac` of the cube's energy,
    then clamp to the non-negative orthant."""
    z = zh_tilde.data
    if cfg.noise_frac == 0.0:
        return ImageCube(np.maximum(z, 0.0))
    energy = float(np.sum(z * z))
    if energy == 0.0:
        warnings.warn("all-zero cube: perturbation is degenerate, returning input")
        return ImageCube(z.copy())
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal(z.shape)
    c = np.sqrt(cfg.noise_frac * energy / float(np.sum(noise * noise)))
    return ImageCube(np.maximum(z + c * noise, 0.0))


def project_columns_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column of (N, L) onto the unit simplex."""
    n, l = y.shape
    u = np.sort(y, axis=0)[::-1]
    css = np.cumsum(u, axis=0) - 1.0
    ks = np.arange(1, n + 1)[:, None]
    cond = u - css / ks > 0
    rho = n - 1 - np.argmax(cond[::-1], axis=0)
    tau = css[rho, np.arange(l)] / (rho + 1)
    return np.maximum(y - tau, 0.0)


def _successive_projection(x: np.ndarray, n: int) -> list[int]:
    """Greedy max-norm pixel picking with orthogonal deflation."""
    r = x.astype(np.float64).copy()
    picked = []
    for _ in range(n):
        j = int(np.argmax(np.einsum("ij,ij->j", r, r)))
        picked.append(j)
        v = r[:, j]
        nv = np.linalg.norm(v)
        if nv > 0:
            u = v / nv
            r -= np.outer(u, u @ r)
    return picked


def init_endmembers(zh0: ImageCube, n: int):
    """Seed (A0, S0) from a cube: affine-set fitting, successive projection
    on the lifted reduced cloud, and simplex-projected least squares.

    Returns (A0, S0) with A0 columns taken from actual data pixels and S0
    columns on the unit simplex.
    """
    from .geometry import affine_fit  # local import to avoid a cycle

    x = zh0.matrix()
    m, l = x.shape
    if m < n:
        raise ShapeError(f"need at least as many bands as sources ({m} < {n})")
    if n == 1:
        j = int(np.argmax(np.einsum("ij,ij->j", x, x)))
        a0 = x[:, [j]].copy()
        s0 = np.maximum(np.linalg.lstsq(a0, x, rcond=None)[0], 0.0)
        return a0, s0
    model = affine_fit(zh0, n)
    xr = model.reduce(x)
    c = float(np.max(np.linalg.norm(xr, axis=0)))
    if c == 0.0:
        c = 1.0
    lifted = np.vstack([xr, np.full((1, l), c)])
    idx = _successive_projection(lifted, n)
    a0 = x[:, idx].copy()
    s0 = np.linalg.lstsq(a0, x, rcond=None)[0]
    s0 = project_columns_to_simplex(s0)
    return a0, s0
