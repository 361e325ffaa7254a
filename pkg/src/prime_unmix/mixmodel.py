"""Linear mixing model: image cubes, endmember/abundance matrices, and the
deterministic band-splitting spectral response operator.

Conventions used package-wide:
  * an image cube is band-sequential, shape (bands, height, width), >= 0;
  * an endmember matrix is (bands, sources), columns are signatures;
  * an abundance matrix is (sources, pixels), rows are spatial maps,
    pixel index = row * width + col.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "ImageCube", "SpectralResponse",
    "build_spectral_response", "mix", "downsample_spectral",
]

_ROUNDOFF = 1e-12


@dataclass(frozen=True)
class ImageCube:
    """Radiance cube, band-sequential (bands, height, width), >= 0.

    `signed=True` marks a virtual intermediate (the raw light-split cube)
    whose exact linear structure must be preserved; everything observable
    stays non-negative.
    """

    data: np.ndarray
    signed: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"cube must be (bands, height, width), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cube contains non-finite values")
        if not self.signed:
            if arr.min() < -_ROUNDOFF * max(1.0, float(np.abs(arr).max())):
                raise ValueError(f"cube has negative radiance (min {arr.min():.3e})")
            if arr.min() < 0:
                arr = np.maximum(arr, 0.0)  # swallow round-off only
        object.__setattr__(self, "data", arr)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def pixels(self) -> int:
        return self.data.shape[1] * self.data.shape[2]

    def matrix(self) -> np.ndarray:
        """(bands, pixels) view with pixels in row-major order."""
        return self.data.reshape(self.bands, self.pixels)

    @staticmethod
    def from_matrix(m: np.ndarray, height: int, width: int) -> "ImageCube":
        m = np.asarray(m, dtype=np.float64)
        if m.shape[1] != height * width:
            raise ShapeError(f"matrix has {m.shape[1]} pixels, grid needs {height * width}")
        return ImageCube(m.reshape(m.shape[0], height, width))


@dataclass(frozen=True)
class SpectralResponse:
    """Kronecker block-sum operator: identity of size P times a row of ones.

    Maps an M = gamma*P band cube to P bands by summing each consecutive
    group of gamma bands. Never materialized densely on the hot path.
    """

    p: int
    gamma: int

    def __post_init__(self):
        if self.p < 1 or self.gamma < 1:
            raise ValueError("need P >= 1 and gamma >= 1")

    @property
    def m(self) -> int:
        return self.p * self.gamma

    def dense(self) -> np.ndarray:
        return np.kron(np.eye(self.p), np.ones((1, self.gamma)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Block-sum the leading axis from M to P rows."""
        if x.shape[0] != self.m:
            raise ShapeError(f"operator expects {self.m} bands, got {x.shape[0]}")
        return x.reshape(self.p, self.gamma, *x.shape[1:]).sum(axis=1)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Replicate each of the P rows gamma times (transpose action)."""
        if y.shape[0] != self.p:
            raise ShapeError(f"adjoint expects {self.p} bands, got {y.shape[0]}")
        return np.repeat(y, self.gamma, axis=0)


def build_spectral_response(p: int, gamma: int) -> SpectralResponse:
    return SpectralResponse(p=p, gamma=gamma)


def mix(a: np.ndarray, s: np.ndarray, height: int | None = None,
        width: int | None = None):
    """Linear mixture: signatures (bands, N) times abundances (N, L).

    Returns an ImageCube when a grid is given, else the raw (bands, L)
    matrix. Negative round-off smaller than 1e-12 is clamped.
    """
    a = np.asarray(a, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if a.ndim != 2 or s.ndim != 2 or a.shape[1] != s.shape[0]:
        raise ShapeError(f"mix: {a.shape} @ {s.shape}")
    z = a @ s
    neg = z.min()
    if neg < 0:
        if neg < -_ROUNDOFF * max(1.0, np.abs(z).max()):
            raise ValueError(f"mix produced genuinely negative values (min {neg:.3e})")
        z = np.maximum(z, 0.0)
    if height is None:
        return z
    return ImageCube.from_matrix(z, height, width)


def downsample_spectral(d: SpectralResponse, zh: ImageCube) -> ImageCube:
    """Apply the band block-sum operator to a cube."""
    if zh.bands != d.m:
        raise ShapeError(f"cube has {zh.bands} bands, operator expects {d.m}")
    return ImageCube(d.apply(zh.data))
