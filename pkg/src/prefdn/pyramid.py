"""Difference-of-Gaussians band decomposition with per-band soft shrinkage.

The denoiser blurs the image three times with Gaussian kernels of
trainable widths, takes the band-pass differences, shrinks each band
toward zero with a trainable soft threshold, and recombines. Exactly six
values are trainable: three blur widths (sigmas) and three shrinkage
thresholds (epsilons).

The decomposition is undecimated: every level keeps full resolution, so
the bands plus the final low-pass telescope back to the input exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterRangeError
from .image import as_image

NUM_LEVELS = 3

SIGMA_MIN = 0.1
SIGMA_MAX = 10.0
# Shrinkage ceiling for [0,1]-normalized intensities. Raw-intensity
# pipelines use EPS_MAX_UNNORMALIZED instead.
EPS_MAX = 1.0
EPS_MAX_UNNORMALIZED = 100.0


@dataclass(frozen=True)
class ParamBounds:
    """Clamp box for the six trainable parameters."""

    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    eps_max: float = EPS_MAX

    def __post_init__(self):
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if not self.eps_max > 0:
            raise ValueError("need eps_max > 0")


DEFAULT_BOUNDS = ParamBounds()


@dataclass(frozen=True)
class PyramidParams:
    """The six trainable values: one (sigma, epsilon) pair per level."""

    sigmas: tuple[float, float, float]
    epsilons: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if len(self.sigmas) != NUM_LEVELS or len(self.epsilons) != NUM_LEVELS:
            raise ParameterRangeError(
                f"need {NUM_LEVELS} sigmas and {NUM_LEVELS} epsilons, got "
                f"{len(self.sigmas)} and {len(self.epsilons)}"
            )
        if not all(math.isfinite(v) for v in self.sigmas + self.epsilons):
            raise ParameterRangeError("parameters must be finite")

    def validate(self, bounds: ParamBounds = DEFAULT_BOUNDS) -> "PyramidParams":
        for s in self.sigmas:
            if not bounds.sigma_min <= s <= bounds.sigma_max:
                raise ParameterRangeError(
                    f"sigma {s} outside [{bounds.sigma_min}, {bounds.sigma_max}]"
                )
        for e in self.epsilons:
            if not 0.0 <= e <= bounds.eps_max:
                raise ParameterRangeError(
                    f"epsilon {e} outside [0, {bounds.eps_max}]"
                )
        return self

    def as_vector(self) -> np.ndarray:
        return np.array(self.sigmas + self.epsilons, dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "PyramidParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (2 * NUM_LEVELS,):
            raise ParameterRangeError(f"expected {2 * NUM_LEVELS} values, got {vec.shape}")
        return cls(tuple(vec[:NUM_LEVELS]), tuple(vec[NUM_LEVELS:]))


@dataclass(frozen=True)
class GaussianKernel:
    """Symmetric 1D Gaussian taps, normalized to unit sum (unit DC gain)."""

    sigma: float
    radius: int
    taps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "taps", np.asarray(self.taps, dtype=np.float64))
        if self.taps.shape != (2 * self.radius + 1,):
            raise ValueError("taps length must be 2*radius+1")


def kernel_radius(sigma: float) -> int:
    """Truncation radius max(1, ceil(3*sigma)): covers >=99.7% of the mass."""
    return max(1, math.ceil(3.0 * sigma))


def gaussian_kernel(sigma: float, bounds: ParamBounds = DEFAULT_BOUNDS) -> GaussianKernel:
    """Sample exp(-x^2 / 2 sigma^2) at integer offsets and renormalize.

    Renormalization to unit sum makes any constant prefactor immaterial and
    guarantees that blurring preserves constant images exactly.
    """
    if not bounds.sigma_min <= sigma <= bounds.sigma_max:
        raise ParameterRangeError(
            f"sigma {sigma} outside [{bounds.sigma_min}, {bounds.sigma_max}]"
        )
    radius = kernel_radius(sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    raw = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return GaussianKernel(sigma=float(sigma), radius=radius, taps=raw / raw.sum())


def correlate_axis(img: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """1D correlation along one axis with replicated borders.

    Taps here are symmetric, so correlation equals convolution. The
    summation order over taps is fixed, keeping results independent of
    any caller-side parallelism.
    """
    radius = len(taps) // 2
    pad = [(radius, radius) if a == axis else (0, 0) for a in range(img.ndim)]
    padded = np.pad(img, pad, mode="edge")
    out = np.zeros_like(img)
    n = img.shape[axis]
    index = [slice(None)] * img.ndim
    for j, t in enumerate(taps):
        index[axis] = slice(j, j + n)
        out += t * padded[tuple(index)]
    return out


def convolve_separable(img: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    """2D blur as a horizontal then a vertical 1D pass with the same taps."""
    img = as_image(img)
    return correlate_axis(correlate_axis(img, kernel.taps, axis=1), kernel.taps, axis=0)


@dataclass(frozen=True)
class PyramidDecomposition:
    """Three band-pass images plus the residual low-pass, all full resolution.

    bandpass[0] + bandpass[1] + bandpass[2] + residual_lowpass telescopes
    back to the input up to floating-point rounding.
    """

    bandpass: tuple[np.ndarray, np.ndarray, np.ndarray]
    residual_lowpass: np.ndarray

    @property
    def shape(self):
        return self.residual_lowpass.shape

    def reconstruct(self) -> np.ndarray:
        out = self.residual_lowpass.copy()
        for bp in self.bandpass:
            out += bp
        return out


def decompose(
    img: np.ndarray,
    sigmas,
    bounds: ParamBounds = DEFAULT_BOUNDS,
    downsample: int = 1,
) -> PyramidDecomposition:
    """Peel off NUM_LEVELS difference-of-Gaussians bands.

    Per level: blur the running image, subtract to get the band, and pass
    the blurred image to the next level. `downsample` is reserved for a
    decimated variant; only factor 1 is supported.
    """
    if downsample != 1:
        raise InputError(f"only downsample factor 1 is supported, got {downsample}")
    img = as_image(img)
    sigmas = tuple(float(s) for s in sigmas)
    if len(sigmas) != NUM_LEVELS:
        raise ParameterRangeError(f"need {NUM_LEVELS} sigmas, got {len(sigmas)}")
    bands = []
    current = img
    for sigma in sigmas:
        lowpass = convolve_separable(current, gaussian_kernel(sigma, bounds))
        bands.append(current - lowpass)
        current = lowpass
    return PyramidDecomposition(bandpass=tuple(bands), residual_lowpass=current)


def soft_threshold(x, epsilon: float):
    """Shrink toward zero: sign(x) * (|x| - epsilon) where |x| >= epsilon, else 0.

    Works elementwise on arrays; scalars come back as floats.
    """
    if epsilon < 0:
        raise ParameterRangeError(f"epsilon must be >= 0, got {epsilon}")
    arr = np.asarray(x, dtype=np.float64)
    out = np.sign(arr) * np.maximum(np.abs(arr) - epsilon, 0.0)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def denoise(
    img: np.ndarray,
    params: PyramidParams,
    bounds: ParamBounds = DEFAULT_BOUNDS,
) -> np.ndarray:
    """Full forward pass: decompose, shrink every band, recombine."""
    params.validate(bounds)
    dec = decompose(img, params.sigmas, bounds)
    out = dec.residual_lowpass.copy()
    for band, eps in zip(dec.bandpass, params.epsilons):
        out += soft_threshold(band, eps)
    return out
