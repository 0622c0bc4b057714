"""Exact reverse-mode gradients of the denoiser's six parameters.

The computation graph is small and fixed (three blur/subtract/shrink
levels plus recombination), so the chain rule is written out by hand
instead of pulling in an autodiff framework. A finite-difference oracle
is included for verification.

Two non-smooth points exist and get conventional subgradients: the
shrinkage kink at |x| == epsilon (subgradient 0) and the discrete jumps
of the kernel truncation radius in sigma (the radius is treated as
locally constant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterRangeError, ShapeError
from .image import as_image
from .pyramid import (
    DEFAULT_BOUNDS,
    NUM_LEVELS,
    GaussianKernel,
    ParamBounds,
    PyramidParams,
    correlate_axis,
    decompose,
    denoise,
    gaussian_kernel,
    soft_threshold,
)


@dataclass(frozen=True)
class GradientVector:
    """d(loss)/d(parameter) for the six trainable values."""

    d_sigmas: tuple[float, float, float]
    d_epsilons: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "d_sigmas", tuple(float(v) for v in self.d_sigmas))
        object.__setattr__(self, "d_epsilons", tuple(float(v) for v in self.d_epsilons))

    def as_vector(self) -> np.ndarray:
        return np.array(self.d_sigmas + self.d_epsilons, dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "GradientVector":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(tuple(vec[:NUM_LEVELS]), tuple(vec[NUM_LEVELS:]))

    @classmethod
    def zero(cls) -> "GradientVector":
        return cls((0.0,) * NUM_LEVELS, (0.0,) * NUM_LEVELS)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_vector())))


def kernel_sigma_derivative(sigma: float, bounds: ParamBounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Derivative of the unit-sum kernel taps with respect to sigma.

    With u_i = exp(-x_i^2 / 2 sigma^2) and S = sum(u), the normalized tap
    is u_i / S, so d/dsigma = (u_i' S - u_i S') / S^2 where
    u_i' = u_i * x_i^2 / sigma^3. The truncation radius is held constant.
    """
    kernel = gaussian_kernel(sigma, bounds)
    x = np.arange(-kernel.radius, kernel.radius + 1, dtype=np.float64)
    u = np.exp(-(x * x) / (2.0 * sigma * sigma))
    du = u * (x * x) / sigma**3
    s = u.sum()
    ds = du.sum()
    return (du * s - u * ds) / (s * s)


def soft_threshold_subgradients(x, epsilon: float):
    """Subgradients of the shrinkage output w.r.t. its input and threshold.

    Strictly outside the dead zone: (1, -sign(x)). Inside, and exactly at
    |x| == epsilon: (0, 0). Elementwise on arrays.
    """
    if epsilon < 0:
        raise ParameterRangeError(f"epsilon must be >= 0, got {epsilon}")
    arr = np.asarray(x, dtype=np.float64)
    active = np.abs(arr) > epsilon
    d_dx = np.where(active, 1.0, 0.0)
    d_deps = np.where(active, -np.sign(arr), 0.0)
    if np.isscalar(x) or arr.ndim == 0:
        return float(d_dx), float(d_deps)
    return d_dx, d_deps


def correlate_axis_adjoint(arr: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """True adjoint of `correlate_axis` (replicate-pad then correlate).

    A plain flipped-kernel pass is not enough: the replicated pad makes
    border pixels contribute to several window positions, so their
    adjoint rows must accumulate the pad columns. Verified by the
    dot-product identity <Av, w> == <v, A^T w>.
    """
    radius = len(taps) // 2
    n = arr.shape[axis]
    ext_shape = list(arr.shape)
    ext_shape[axis] = n + 2 * radius
    ext = np.zeros(ext_shape, dtype=np.float64)
    index = [slice(None)] * arr.ndim
    for j, t in enumerate(taps):
        index[axis] = slice(j, j + n)
        ext[tuple(index)] += t * arr
    index[axis] = slice(radius, radius + n)
    out = ext[tuple(index)].copy()
    # fold the pad contributions back onto the border samples
    index[axis] = slice(0, radius)
    head = ext[tuple(index)].sum(axis=axis)
    index[axis] = slice(radius + n, radius + n + radius)
    tail = ext[tuple(index)].sum(axis=axis)
    edge = [slice(None)] * arr.ndim
    edge[axis] = 0
    out[tuple(edge)] += head
    edge[axis] = n - 1
    out[tuple(edge)] += tail
    return out


def convolve_separable_adjoint(arr: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    """Adjoint of the separable blur: reversed per-axis adjoints."""
    return correlate_axis_adjoint(
        correlate_axis_adjoint(arr, kernel.taps, axis=0), kernel.taps, axis=1
    )


@dataclass(frozen=True)
class ForwardTape:
    """All intermediates of one denoise pass, for the backward sweep.

    Per level n: the level input, the horizontal-pass intermediate, the
    low-pass, the band-pass, the shrunk band, and the kernel taps with
    their sigma derivatives.
    """

    params: PyramidParams
    inputs: tuple[np.ndarray, ...]
    horizontals: tuple[np.ndarray, ...]
    lowpass: tuple[np.ndarray, ...]
    bandpass: tuple[np.ndarray, ...]
    shrunk: tuple[np.ndarray, ...]
    kernels: tuple[GaussianKernel, ...]
    dtaps: tuple[np.ndarray, ...]
    output: np.ndarray


def forward_tape(
    img: np.ndarray,
    params: PyramidParams,
    bounds: ParamBounds = DEFAULT_BOUNDS,
) -> tuple[np.ndarray, ForwardTape]:
    """Run the forward pass recording every intermediate.

    The output is identical to `pyramid.denoise` (same operations in the
    same order).
    """
    img = as_image(img)
    params.validate(bounds)
    inputs, horizontals, lowpass, bandpass, shrunk, kernels, dtaps = (
        [], [], [], [], [], [], [],
    )
    current = img
    for sigma in params.sigmas:
        kernel = gaussian_kernel(sigma, bounds)
        horizontal = correlate_axis(current, kernel.taps, axis=1)
        low = correlate_axis(horizontal, kernel.taps, axis=0)
        inputs.append(current)
        horizontals.append(horizontal)
        lowpass.append(low)
        bandpass.append(current - low)
        kernels.append(kernel)
        dtaps.append(kernel_sigma_derivative(sigma, bounds))
        current = low
    output = current.copy()
    for band, eps in zip(bandpass, params.epsilons):
        t = soft_threshold(band, eps)
        shrunk.append(t)
        output += t
    tape = ForwardTape(
        params=params,
        inputs=tuple(inputs),
        horizontals=tuple(horizontals),
        lowpass=tuple(lowpass),
        bandpass=tuple(bandpass),
        shrunk=tuple(shrunk),
        kernels=tuple(kernels),
        dtaps=tuple(dtaps),
        output=output,
    )
    return output, tape


def backprop(tape: ForwardTape, d_output: np.ndarray) -> GradientVector:
    """Chain rule from d(loss)/d(output pixels) down to the six parameters.

    Walks the levels top-down. At each level the low-pass feeds both the
    band subtraction and the next level (or the recombination, at the
    last level), so its cotangent is the upstream input-cotangent minus
    the band cotangent.
    """
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.shape != tape.output.shape:
        raise ShapeError(
            f"d_output shape {d_output.shape} != tape shape {tape.output.shape}"
        )
    d_sigmas = [0.0] * NUM_LEVELS
    d_epsilons = [0.0] * NUM_LEVELS
    upstream = d_output  # cotangent of the level-(n+1) input; starts at lp_last
    for n in reversed(range(NUM_LEVELS)):
        mask_x, mask_eps = soft_threshold_subgradients(
            tape.bandpass[n], tape.params.epsilons[n]
        )
        d_band = d_output * mask_x
        d_epsilons[n] = float(np.sum(d_output * mask_eps))
        d_low = upstream - d_band
        # blur depends on sigma through both 1D passes
        taps = tape.kernels[n].taps
        dt = tape.dtaps[n]
        dlow_dsigma = correlate_axis(tape.horizontals[n], dt, axis=0) + correlate_axis(
            correlate_axis(tape.inputs[n], dt, axis=1), taps, axis=0
        )
        d_sigmas[n] = float(np.sum(d_low * dlow_dsigma))
        upstream = d_band + convolve_separable_adjoint(d_low, tape.kernels[n])
    return GradientVector(tuple(d_sigmas), tuple(d_epsilons))


def sample_gradcheck_case(
    seed,
    size: int = 12,
    bounds: ParamBounds = DEFAULT_BOUNDS,
    margin: float = 1e-3,
    max_tries: int = 1000,
):
    """Draw a (image, params, target) triple away from all non-smooth points.

    Rejects draws where any band value sits within `margin` of its
    threshold (shrinkage kink) or 3*sigma sits within `margin` of an
    integer (kernel radius jump), so central differences see a locally
    smooth loss. Parameters also keep `margin` clearance to the bounds so
    the finite-difference probe stays feasible.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        img = rng.uniform(0.0, 1.0, size=(size, size))
        sigmas = tuple(
            rng.uniform(bounds.sigma_min + margin, min(bounds.sigma_max - margin, 6.0))
            for _ in range(NUM_LEVELS)
        )
        if any(abs(3.0 * s - round(3.0 * s)) < margin for s in sigmas):
            continue
        bands = decompose(img, sigmas, bounds).bandpass
        epsilons = []
        ok = True
        for band in bands:
            eps = rng.uniform(margin, bounds.eps_max - margin)
            if np.min(np.abs(np.abs(band) - eps)) <= margin:
                ok = False
                break
            epsilons.append(eps)
        if not ok:
            continue
        params = PyramidParams(sigmas, tuple(epsilons)).validate(bounds)
        target = rng.uniform(0.0, 1.0, size=(size, size))
        return img, params, target
    raise RuntimeError(f"no smooth case found in {max_tries} tries")


def finite_diff_gradient(
    img: np.ndarray,
    params: PyramidParams,
    loss,
    h: float,
    bounds: ParamBounds = DEFAULT_BOUNDS,
) -> GradientVector:
    """Central-difference gradient oracle: (L(p+h) - L(p-h)) / 2h per component.

    `loss` maps a denoised output image to a scalar. Both perturbed
    parameter vectors must stay inside the bounds.
    """
    if not h > 0:
        raise ParameterRangeError(f"step h must be > 0, got {h}")
    img = as_image(img)
    base = params.as_vector()
    grad = np.zeros_like(base)
    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[i] += h
        minus[i] -= h
        p_plus = PyramidParams.from_vector(plus).validate(bounds)
        p_minus = PyramidParams.from_vector(minus).validate(bounds)
        grad[i] = (loss(denoise(img, p_plus, bounds)) - loss(denoise(img, p_minus, bounds))) / (
            2.0 * h
        )
    return GradientVector.from_vector(grad)
