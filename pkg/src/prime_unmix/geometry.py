"""Convex-geometry unmixing of the virtual hyperspectral cube, plus the
vertex-picking and matrix-factorization baselines.

The central routine identifies the minimum data-enclosing simplex through
its boundary hyperplanes rather than its vertices: seed the purest pixels
by successive projection, estimate each facet from the best pixel in a
tiny ball around every other purest pixel, expand facets to enclose all
data, intersect facet subsets to recover the vertices, and read abundances
off the hyperplane offsets in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls as _scipy_nnls

from .errors import ConditioningError, DegenerateGeometryError, ShapeError
from .initsplit import _successive_projection, project_columns_to_simplex
from .mixmodel import ImageCube

__all__ = [
    "AffineModel", "HyperplaneSet",
    "affine_fit", "spa_purest", "hypercsi", "vca", "abundance_pinv",
    "nmf_mu", "nnls",
]


@dataclass(frozen=True)
class AffineModel:
    """Orthonormal basis of the best-fit affine set plus its centroid."""

    basis: np.ndarray     # (M, N-1), orthonormal columns
    centroid: np.ndarray  # (M,)

    def reduce(self, x: np.ndarray) -> np.ndarray:
        return self.basis.T @ (x - self.centroid[:, None])

    def lift(self, xr: np.ndarray) -> np.ndarray:
        return self.basis @ xr + self.centroid[:, None]


@dataclass(frozen=True)
class HyperplaneSet:
    """Unit facet normals (N-1, N) and offsets (N,) bounding a simplex."""

    normals: np.ndarray
    offsets: np.ndarray


def affine_fit(z: ImageCube, n: int) -> AffineModel:
    """Top N-1 principal directions of the centered pixel cloud."""
    x = z.matrix()
    d = x.mean(axis=1)
    xc = x - d[:, None]
    u, s, _ = np.linalg.svd(xc, full_matrices=False)
    if n >= 2 and (len(s) < n - 1 or s[n - 2] <= 1e-12 * max(s[0], 1e-300)):
        raise ConditioningError(
            f"centered data rank below {n - 1}: singular values {s[:n]}")
    return AffineModel(basis=u[:, :n - 1].copy(), centroid=d)


def spa_purest(xdr: np.ndarray, n: int) -> list[int]:
    """Pixel indices of the N purest points by successive projection.

    Repeatedly takes the max-norm residual column (first index on ties)
    and deflates its direction.
    """
    if xdr.shape[1] < n:
        raise ShapeError(f"need at least {n} pixels, got {xdr.shape[1]}")
    return _successive_projection(xdr, n)


def _facet_normal(points: np.ndarray) -> np.ndarray:
    """Unit normal of the affine hull of N-1 points (columns) in R^{N-1}."""
    d = points.shape[0]
    if points.shape[1] == 1:  # a point in 1-D space
        return np.ones(1)
    diffs = points[:, 1:] - points[:, :1]
    _, s, vt = np.linalg.svd(diffs.T, full_matrices=True)
    normal = vt[-1]
    if s.size >= d - 1 and d >= 2 and s[d - 2] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateGeometryError("facet points are affinely dependent")
    return normal / np.linalg.norm(normal)


def hypercsi(zh: ImageCube, n: int, eta: float = 1.0, r: float = 1e-8):
    """Hyperplane-based minimum-simplex identification.

    Returns (A, S): endmember signatures lifted back to band space (clamped
    at 0 as a reporting convention) and closed-form abundances with rows
    vanishing exactly on their opposing facet.
    """
    if n < 2:
        raise ShapeError("hyperplane identification needs N >= 2")
    x = zh.matrix()
    m, l = x.shape
    if m < n:
        raise ShapeError(f"need bands >= sources ({m} < {n})")
    model = affine_fit(zh, n)
    xr = model.reduce(x)  # (N-1, L)

    lift_scale = float(np.max(np.linalg.norm(xr, axis=0)))
    if lift_scale == 0.0:
        raise DegenerateGeometryError("all pixels coincide with the centroid")
    lifted = np.vstack([xr, np.full((1, l), lift_scale)])
    purest = spa_purest(lifted, n)
    seeds = xr[:, purest]  # (N-1, N)

    # seed normals from the purest pixels, oriented away from the left-out one
    def oriented_normal(pts, away_from):
        b = _facet_normal(pts)
        if b @ (away_from - pts[:, 0]) > 0:
            b = -b
        return b

    seed_normals = np.empty((n, n - 1))
    for i in range(n):
        others = [j for j in range(n) if j != i]
        seed_normals[i] = oriented_normal(seeds[:, others], seeds[:, i])

    # refine each facet from the best pixel inside the r-ball around every
    # other purest pixel (disjoint neighborhoods for small r)
    radius = r
    dist2 = np.empty((n, l))
    for j in range(n):
        diff = xr - seeds[:, [j]]
        dist2[j] = np.einsum("ij,ij->j", diff, diff)
    normals = np.empty_like(seed_normals)
    offsets = np.empty(n)
    for i in range(n):
        pts = []
        proj = seed_normals[i] @ xr
        for j in range(n):
            if j == i:
                continue
            inside = np.flatnonzero(dist2[j] <= radius * radius)
            if inside.size == 0:
                inside = np.array([purest[j]])
            best = inside[int(np.argmax(proj[inside]))]
            pts.append(xr[:, best])
        pts = np.column_stack(pts)
        b = _facet_normal(pts)
        if b @ seed_normals[i] < 0:
            b = -b
        normals[i] = b
        # anchor the facet on the outermost of its own anchor pixels; a
        # max over the whole cloud would ride extreme-value noise outliers
        offsets[i] = (b @ pts).max() / eta
    planes = HyperplaneSet(normals=normals, offsets=offsets)

    # vertices: intersect every (N-1)-subset of facets
    alpha = np.empty((n - 1, n))
    for i in range(n):
        rows = [j for j in range(n) if j != i]
        bsub = planes.normals[rows]
        if n > 2 and np.linalg.cond(bsub) > 1e12:
            raise DegenerateGeometryError(
                f"near-parallel hyperplanes around vertex {i} "
                f"(condition {np.linalg.cond(bsub):.3e})")
        alpha[:, i] = np.linalg.solve(bsub, planes.offsets[rows])

    a = np.maximum(model.lift(alpha), 0.0)

    denom = planes.offsets - np.einsum("ij,ji->i", planes.normals, alpha)
    if np.any(np.abs(denom) <= 1e-300):
        raise DegenerateGeometryError("a vertex lies on its opposing facet")
    s = (planes.offsets[:, None] - planes.normals @ xr) / denom[:, None]
    # pre-clamp columns are barycentric (sum to 1); the simplex projection
    # clamps negatives while restoring unit mass for outside pixels
    return a, project_columns_to_simplex(s)


def vca(z: ImageCube, n: int, seed: int = 0) -> np.ndarray:
    """Vertex picking by repeated random-direction orthogonal projection,
    run directly in the ambient band space (no dimensionality reduction).

    Returns N data-pixel columns. Once the picked columns span the whole
    band space the projected direction collapses and further picks
    degenerate deterministically -- the expected behavior when asked for
    more sources than bands.
    """
    x = z.matrix()
    p, l = x.shape
    if n > l:
        raise ShapeError(f"cannot pick {n} pixels from {l}")
    rng = np.random.default_rng(seed)
    picked = []
    basis = np.zeros((p, 0))
    for _ in range(n):
        w = rng.standard_normal(p)
        f = w - basis @ (basis.T @ w)
        norm = np.linalg.norm(f)
        if norm > 1e-12:
            f /= norm
        v = f @ x
        j = int(np.argmax(np.abs(v)))
        picked.append(j)
        col = x[:, j] - basis @ (basis.T @ x[:, j])
        cn = np.linalg.norm(col)
        if cn > 1e-12:
            basis = np.column_stack([basis, col / cn])
    return x[:, picked].copy()


def abundance_pinv(b: np.ndarray, zm: ImageCube) -> np.ndarray:
    """Least-squares abundances via the pseudo-inverse, clamped at zero.

    For fewer bands than sources this is the minimum-norm solution.
    """
    b = np.asarray(b, dtype=np.float64)
    sv = np.linalg.svd(b, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * max(b.shape) * np.finfo(float).eps))
    if rank < min(b.shape):
        raise ConditioningError(
            f"signature matrix rank {rank} below min(bands, sources) {min(b.shape)}")
    return np.maximum(np.linalg.pinv(b) @ zm.matrix(), 0.0)


def nmf_mu(z: ImageCube, n: int, init, iters: int = 1000):
    """Multiplicative-update factorization of the cube matrix.

    `init` is the warm start (B0, S0). Denominators carry a 1e-12 additive
    floor. After the updates, S is replaced by a non-negative least-squares
    refinement against the final B. Returns (B, S, objective_trace).
    """
    x = z.matrix()
    b0, s0 = init
    b = np.asarray(b0, dtype=np.float64).copy()
    s = np.asarray(s0, dtype=np.float64).copy()
    if b.shape != (x.shape[0], n) or s.shape != (n, x.shape[1]):
        raise ShapeError(
            f"init shapes {b.shape}, {s.shape} do not match data "
            f"({x.shape[0]}, {n}) and ({n}, {x.shape[1]})")
    if x.min() < 0:
        raise ValueError("factorization input must be non-negative")
    eps = 1e-12
    trace = np.empty(iters + 1)
    trace[0] = np.linalg.norm(x - b @ s) ** 2
    for k in range(iters):
        b *= (x @ s.T) / (b @ (s @ s.T) + eps)
        s *= (b.T @ x) / ((b.T @ b) @ s + eps)
        trace[k + 1] = np.linalg.norm(x - b @ s) ** 2
    s = nnls(b, z)
    return b, s, trace


def nnls(b: np.ndarray, z: ImageCube) -> np.ndarray:
    """Per-pixel non-negative least squares against the signature matrix."""
    b = np.asarray(b, dtype=np.float64)
    x = z.matrix()
    s = np.empty((b.shape[1], x.shape[1]))
    for j in range(x.shape[1]):
        s[:, j] = _scipy_nnls(b, x[:, j])[0]
    return s
