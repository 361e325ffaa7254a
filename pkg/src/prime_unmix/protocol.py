"""Ground-truth generation and evaluation protocol, plus all file IO.

The protocol starts from a reference many-band cube with known signatures
and abundances, downsamples the signatures spectrally to the observed band
count, synthesizes the observed cube from the downsampled signatures, and
scores estimates against the ground truth with the mean spectral angle
(degrees) and the scaled Frobenius abundance error.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import linear_sum_assignment

from .errors import CubeFormatError, ShapeError
from .mixmodel import ImageCube, build_spectral_response, mix

__all__ = [
    "BandRangeSpec", "MetricsReport",
    "synth_reference", "lins_protocol", "match_endmembers", "sam", "rmse",
    "read_cube", "write_cube", "read_matrix_csv", "write_matrix_csv",
    "write_pgm",
]


@dataclass(frozen=True)
class BandRangeSpec:
    """Ascending, non-overlapping 1-based inclusive band ranges."""

    ranges: tuple

    def __post_init__(self):
        rs = tuple((int(a), int(b)) for a, b in self.ranges)
        prev_end = 0
        for a, b in rs:
            if a <= prev_end or b < a:
                raise ValueError(f"ranges must be ascending and disjoint: {rs}")
            prev_end = b
        object.__setattr__(self, "ranges", rs)


@dataclass(frozen=True)
class MetricsReport:
    method: str
    sam_deg: float
    rmse: float
    time_sec: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.sam_deg <= 180.0:
            raise ValueError(f"spectral angle out of range: {self.sam_deg}")
        if self.rmse < 0:
            raise ValueError("rmse must be non-negative")


def synth_reference(seed: int, height: int, width: int, m: int, n: int,
                    blobs_per_source: int = 3):
    """Synthesize (A_ref, S_gt, reference cube).

    Signatures are sums of Gaussian bumps over the band axis (smooth,
    positive); abundances are a spatially smoothed Dirichlet field with
    planted pure 3x3 regions per source (materials cover small areas, so
    every source has pure pixels by construction).
    """
    if m < n:
        raise ShapeError(f"need bands >= sources ({m} < {n})")
    if height < 8 or width < 8:
        raise ShapeError("grid too small to plant pure regions")
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, m)
    a_ref = np.empty((m, n))
    for j in range(n):
        spectrum = np.full(m, rng.uniform(0.1, 0.4))
        for _ in range(3):
            amp = rng.uniform(0.5, 2.0)
            center = rng.uniform(0.0, 1.0)
            sigma = rng.uniform(0.08, 0.3)
            spectrum = spectrum + amp * np.exp(-0.5 * ((grid - center) / sigma) ** 2)
        a_ref[:, j] = spectrum
    l = height * width
    s = rng.dirichlet(np.full(n, 0.8), size=l).T  # (N, L)
    maps = s.reshape(n, height, width)
    maps = gaussian_filter(maps, sigma=(0.0, 2.0, 2.0), mode="nearest")
    # plant non-overlapping pure 3x3 blobs on a stride-3 site lattice
    lattice = [(r0, c0) for r0 in range(2, height - 2, 3)
               for c0 in range(2, width - 2, 3)]
    blobs = min(blobs_per_source, len(lattice) // n)
    if blobs < 1:
        raise ShapeError(f"grid {height}x{width} too small for {n} pure regions")
    picks = rng.choice(len(lattice), size=n * blobs, replace=False)
    for k, site in enumerate(picks):
        j = k % n
        r0, c0 = lattice[site]
        maps[:, r0 - 1:r0 + 2, c0 - 1:c0 + 2] = 0.0
        maps[j, r0 - 1:r0 + 2, c0 - 1:c0 + 2] = 1.0
    s = maps.reshape(n, l)
    s /= s.sum(axis=0, keepdims=True)
    cube = mix(a_ref, s, height, width)
    return a_ref, s, cube


def lins_protocol(a_ref: np.ndarray, s_gt: np.ndarray, gamma: int,
                  height: int, width: int, ranges: BandRangeSpec | None = None):
    """Downsample reference signatures to the observed band count and
    synthesize the observed cube.

    Returns (Z_m, B_gt, S_gt). Uniform block sums by default; a band-range
    spec selects explicit spectral windows instead.
    """
    m = a_ref.shape[0]
    if ranges is not None:
        if ranges.ranges[-1][1] > m:
            raise ShapeError(f"range {ranges.ranges[-1]} exceeds {m} bands")
        b_gt = np.stack([a_ref[a - 1:b].sum(axis=0) for a, b in ranges.ranges])
    else:
        if m % gamma:
            raise ShapeError(f"band count {m} not divisible by gamma={gamma}")
        b_gt = build_spectral_response(m // gamma, gamma).apply(a_ref)
    zm = mix(b_gt, s_gt, height, width)
    return zm, b_gt, s_gt


def _angles_deg(b_est: np.ndarray, b_gt: np.ndarray) -> np.ndarray:
    """(N_gt, N_est) spectral-angle cost matrix in degrees."""
    en = np.linalg.norm(b_est, axis=0)
    gn = np.linalg.norm(b_gt, axis=0)
    if np.any(en == 0) or np.any(gn == 0):
        raise ValueError("zero-norm signature column")
    cosang = (b_gt.T @ b_est) / np.outer(gn, en)
    return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))


def match_endmembers(b_est: np.ndarray, b_gt: np.ndarray) -> np.ndarray:
    """Permutation `perm` minimizing the total pairwise spectral angle, so
    that b_est[:, perm[j]] aligns with b_gt[:, j]."""
    if b_est.shape != b_gt.shape:
        raise ShapeError(f"shapes differ: {b_est.shape} vs {b_gt.shape}")
    cost = _angles_deg(b_est, b_gt)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(b_gt.shape[1], dtype=int)
    perm[rows] = cols
    return perm


def sam(b_est: np.ndarray, b_gt: np.ndarray) -> float:
    """Mean arccos of normalized column inner products, in degrees.

    Columns are assumed already matched.
    """
    if b_est.shape != b_gt.shape:
        raise ShapeError(f"shapes differ: {b_est.shape} vs {b_gt.shape}")
    return float(np.mean(np.diag(_angles_deg(b_est, b_gt))))


def rmse(s_est: np.ndarray, s_gt: np.ndarray) -> float:
    """Frobenius distance scaled by 1/sqrt(N*L); rows assumed matched."""
    if s_est.shape != s_gt.shape:
        raise ShapeError(f"shapes differ: {s_est.shape} vs {s_gt.shape}")
    n, l = s_gt.shape
    return float(np.linalg.norm(s_est - s_gt) / np.sqrt(n * l))


# ---------------------------------------------------------------------------
# file formats

_MAGIC = "PRIME-CUBE"
_DTYPES = {"f64le": "<f8", "f32le": "<f4"}


def write_cube(path, cube: ImageCube, dtype: str = "f64le"):
    """Write `<path>.json` manifest plus `<path>.bin` raw band-sequential
    payload; round-trips bit-exactly for f64le."""
    if dtype not in _DTYPES:
        raise CubeFormatError(f"unsupported dtype '{dtype}'")
    path = Path(path)
    manifest = {"magic": _MAGIC, "dtype": dtype, "interleave": "bsq",
                "bands": cube.bands, "height": cube.height, "width": cube.width}
    path.with_suffix(".json").write_text(json.dumps(manifest) + "\n")
    cube.data.astype(_DTYPES[dtype]).tofile(path.with_suffix(".bin"))


def read_cube(path) -> ImageCube:
    path = Path(path)
    mpath = path if path.suffix == ".json" else path.with_suffix(".json")
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CubeFormatError(f"cannot read cube manifest {mpath}: {exc}") from exc
    if manifest.get("magic") != _MAGIC:
        raise CubeFormatError(f"bad magic in {mpath}: {manifest.get('magic')!r}")
    dtype = manifest.get("dtype")
    if dtype not in _DTYPES:
        raise CubeFormatError(f"unsupported dtype {dtype!r} in {mpath}")
    if manifest.get("interleave") != "bsq":
        raise CubeFormatError(f"unsupported interleave in {mpath}")
    try:
        bands, h, w = (int(manifest[k]) for k in ("bands", "height", "width"))
    except (KeyError, TypeError, ValueError) as exc:
        raise CubeFormatError(f"bad dimensions in {mpath}: {exc}") from exc
    payload = np.fromfile(mpath.with_suffix(".bin"), dtype=_DTYPES[dtype])
    if payload.size != bands * h * w:
        raise CubeFormatError(
            f"payload has {payload.size} values, manifest implies {bands * h * w}")
    return ImageCube(payload.astype(np.float64).reshape(bands, h, w))


def write_matrix_csv(path, matrix: np.ndarray, kind: str = "src"):
    """Endmember-style CSV: header `band,<kind>1..<kind>N`, one row per band."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band"] + [f"{kind}{j + 1}" for j in range(matrix.shape[1])])
        for i in range(matrix.shape[0]):
            writer.writerow([i + 1] + [f"{v:.17g}" for v in matrix[i]])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "band":
        raise CubeFormatError(f"{path}: expected a 'band,...' header row")
    data = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return data


def write_pgm(path, image: np.ndarray):
    """8-bit binary portable graymap, min-max normalized."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    byte = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(byte.tobytes())
