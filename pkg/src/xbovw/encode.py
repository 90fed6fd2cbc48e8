"""Bag-of-visual-words encoding and the additive chi-squared feature map.

A bag image (or window) becomes an L1-normalized histogram of hard visual
word assignments. The histogram is then lifted with a finite-dimensional
feature map whose inner products approximate the additive chi-squared
kernel k(a, b) = sum_i 2 a_i b_i / (a_i + b_i), so a linear classifier on
the lifted vectors behaves like a chi-squared kernel machine.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .vocab import Vocabulary, _squared_distances


@dataclass(frozen=True)
class KernelMapConfig:
    order: int = 2
    gamma: float = 1.0
    sampling_period: float = 0.6

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.sampling_period <= 0:
            raise ValueError(
                f"sampling_period must be positive, got {self.sampling_period}"
            )

    @property
    def expansion(self) -> int:
        """Output scalars per input scalar: 1 + 2 * order."""
        return 1 + 2 * self.order


@dataclass
class Histogram:
    counts_normalized: np.ndarray  # (V,) float64, sums to 1 unless empty
    total_descriptors: int


def assign_hard(descriptor: np.ndarray, vocab: Vocabulary) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    descriptor = np.asarray(descriptor, dtype=np.float64)
    if descriptor.shape != (vocab.dim,):
        raise ValueError(f"descriptor shape {descriptor.shape} != ({vocab.dim},)")
    d2 = np.sum((vocab.centroids - descriptor) ** 2, axis=1)
    return int(np.argmin(d2))


def assign_hard_batch(descriptors: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Nearest-centroid index per row."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or descriptors.shape[1] != vocab.dim:
        raise ValueError(f"expected (N, {vocab.dim}) descriptors")
    if descriptors.shape[0] == 0:
        return np.empty(0, dtype=np.intp)
    return np.argmin(_squared_distances(descriptors, vocab.centroids), axis=1)


def bovw_histogram(descriptors: np.ndarray, vocab: Vocabulary) -> Histogram:
    """L1-normalized histogram of hard assignments.

    An empty descriptor set yields the zero vector with total 0 rather
    than an error: windows can legitimately contain no metal keypoints.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.size == 0:
        return Histogram(np.zeros(vocab.size, dtype=np.float64), 0)
    words = assign_hard_batch(descriptors, vocab)
    counts = np.bincount(words, minlength=vocab.size).astype(np.float64)
    total = int(descriptors.shape[0])
    return Histogram(counts / total, total)


# Fitting grid for the spectrum coefficients: chi-squared ratios
# min(a,b)/max(a,b) down to 1/100 cover any realistic histogram pair.
_FIT_LOG_RANGE = float(np.log(100.0))
_FIT_POINTS = 2001


@lru_cache(maxsize=None)
def chi2_coefficients(order: int, sampling_period: float) -> tuple[float, ...]:
    """Non-negative harmonic weights c_0..c_order for the kernel map.

    The exact kernel signature is K(lam) = sech(lam / 2) with
    lam = log(a / b). We fit K on lam in [0, log 100] with the weighted
    Chebyshev program min_c max_lam e^(-lam/2) |c_0 + 2 sum_j c_j
    cos(j L lam) - K(lam)|, c >= 0, solved as a linear program. The
    weight matches the sqrt(ab) prefactor of the kernel, so the fit
    error bounds the pointwise kernel error.
    """
    lam = np.linspace(0.0, _FIT_LOG_RANGE, _FIT_POINTS)
    target = 1.0 / np.cosh(lam / 2.0)
    weight = np.exp(-lam / 2.0)
    basis = np.empty((_FIT_POINTS, order + 1), dtype=np.float64)
    basis[:, 0] = 1.0
    for j in range(1, order + 1):
        basis[:, j] = 2.0 * np.cos(j * sampling_period * lam)
    scaled = basis * weight[:, None]
    rhs = target * weight
    # variables: c_0..c_order, t; minimize t s.t. |scaled @ c - rhs| <= t
    n_var = order + 2
    cost = np.zeros(n_var)
    cost[-1] = 1.0
    a_ub = np.zeros((2 * _FIT_POINTS, n_var))
    a_ub[:_FIT_POINTS, :-1] = scaled
    a_ub[:_FIT_POINTS, -1] = -1.0
    a_ub[_FIT_POINTS:, :-1] = -scaled
    a_ub[_FIT_POINTS:, -1] = -1.0
    b_ub = np.concatenate([rhs, -rhs])
    result = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=[(0, None)] * n_var, method="highs")
    if not result.success:
        raise RuntimeError(f"coefficient fit failed: {result.message}")
    return tuple(float(c) for c in result.x[:-1])


def chi2_feature_map(
    values: np.ndarray | Histogram, config: KernelMapConfig = KernelMapConfig()
) -> np.ndarray:
    """Finite feature map for the additive chi-squared kernel.

    Each scalar x >= 0 expands to 1 + 2 * order coordinates
    [sqrt(c_0) x^(g/2), sqrt(2 c_j) x^(g/2) cos(j L log x),
    sqrt(2 c_j) x^(g/2) sin(j L log x), ...] with g = gamma and
    L = sampling_period; x = 0 maps to the zero block. Blocks are laid
    out coordinate-major: output[i * (2 * order + 1) : ...] belongs to
    input coordinate i. Accepts a single vector or a (N, V) batch.
    """
    if isinstance(values, Histogram):
        values = values.counts_normalized
    arr = np.asarray(values, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("expected a vector or a (N, V) batch")
    if arr.size and float(arr.min()) < 0.0:
        raise ValueError("negative entries have no chi-squared expansion")
    coeff = chi2_coefficients(config.order, config.sampling_period)
    n, v = arr.shape
    width = config.expansion
    out = np.zeros((n, v * width), dtype=np.float64)
    positive = arr > 0.0
    amp = np.zeros_like(arr)
    amp[positive] = arr[positive] ** (config.gamma / 2.0)
    log_x = np.zeros_like(arr)
    log_x[positive] = np.log(arr[positive])
    blocks = out.reshape(n, v, width)
    blocks[:, :, 0] = np.sqrt(coeff[0]) * amp
    for j in range(1, config.order + 1):
        phase = j * config.sampling_period * log_x
        scale = np.sqrt(2.0 * coeff[j]) * amp
        blocks[:, :, 2 * j - 1] = scale * np.cos(phase)
        blocks[:, :, 2 * j] = scale * np.sin(phase)
    blocks[~positive] = 0.0
    return out[0] if single else out


def chi2_kernel_exact(a: np.ndarray, b: np.ndarray) -> float:
    """Reference additive chi-squared kernel sum_i 2 a_i b_i / (a_i + b_i)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    s = a + b
    nz = s > 0.0
    return float(np.sum(2.0 * a[nz] * b[nz] / s[nz]))
