"""Underdetermined multispectral unmixing: a virtual light-splitting prism
with classically simulated quantum layers, a closed-form virtual-cube
update, and convex-geometry endmember/abundance extraction."""

__version__ = "0.1.0"

from .mixmodel import ImageCube, SpectralResponse, build_spectral_response
from .solver import PrimeConfig, PrimeResult, prime, zh_update

__all__ = [
    "__version__",
    "ImageCube", "SpectralResponse", "build_spectral_response",
    "PrimeConfig", "PrimeResult", "prime", "zh_update",
]
