"""Element-wise scalar quantization of complex matrices.

Real and imaginary parts are quantized independently on a shared grid:
2**bits - 1 reconstruction levels spread uniformly over the symmetric range
[-clip, +clip]. The level count is odd, so zero is always an exact level and
an exactly-zero input survives quantization bit-for-bit; the feedback
protocol's skip case depends on that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError

__all__ = ["QuantizerSpec", "build_spec", "quantize_scalar", "quantize_matrix"]


@dataclass(frozen=True, eq=False)
class QuantizerSpec:
    """Reconstruction grid shared by both ends of the feedback link.

    bits:   bits per real component of a fed-back entry
    clip:   half-range A of the symmetric grid [-A, +A]
    levels: sorted reconstruction values, length 2**bits - 1
    """

    bits: int
    clip: float
    levels: np.ndarray

    @property
    def n_levels(self) -> int:
        return self.levels.size

    @property
    def step(self) -> float:
        """Grid spacing; meaningless for the degenerate 1-level grid."""
        if self.n_levels < 2:
            return 0.0
        return 2.0 * self.clip / (self.n_levels - 1)


def build_spec(bits: int, clip: float) -> QuantizerSpec:
    """Construct the uniform midtread grid for a bit width and clipping range.

    bits=1 degenerates to the single level {0}. Endpoints are exactly
    +-clip and the middle level is exactly 0.0, so inputs already sitting on
    the grid quantize to themselves bitwise.
    """
    if bits < 1:
        raise ConfigurationError(f"quantizer bits must be >= 1, got {bits}")
    if not np.isfinite(clip) or clip <= 0.0:
        raise ConfigurationError(f"quantizer clip must be positive, got {clip}")
    half = (2 ** bits - 1) // 2
    if half == 0:
        levels = np.zeros(1)
    else:
        pos = np.linspace(0.0, float(clip), half + 1)[1:]
        levels = np.concatenate([-pos[::-1], [0.0], pos])
    return QuantizerSpec(bits=int(bits), clip=float(clip), levels=levels)


def _nearest_level(spec: QuantizerSpec, x: np.ndarray) -> np.ndarray:
    """Indices of the nearest level after clamping; ties go to the level of
    smaller magnitude."""
    levels = spec.levels
    x = np.clip(x, -spec.clip, spec.clip)
    hi = np.searchsorted(levels, x)
    hi = np.clip(hi, 1, levels.size - 1)
    lo = hi - 1
    d_lo = x - levels[lo]
    d_hi = levels[hi] - x
    pick_hi = d_hi < d_lo
    tie = d_hi == d_lo
    # consecutive levels never share a magnitude, so this is unambiguous
    pick_hi |= tie & (np.abs(levels[hi]) < np.abs(levels[lo]))
    return np.where(pick_hi, hi, lo)


def quantize_scalar(spec: QuantizerSpec, x: float) -> tuple[int, float]:
    """Quantize one real value; returns (level index, reconstruction value)."""
    if not np.isfinite(x):
        raise NumericError(f"cannot quantize non-finite value {x!r}")
    if spec.n_levels == 1:
        return 0, 0.0
    idx = int(_nearest_level(spec, np.asarray([float(x)]))[0])
    return idx, float(spec.levels[idx])


def quantize_matrix(spec: QuantizerSpec, m: np.ndarray) -> tuple[np.ndarray, int]:
    """Quantize the real and imaginary part of every entry independently.

    Returns the reconstructed complex matrix and the payload size in bits:
    one `spec.bits` codeword per real component, 2 * n_r * n_t components.
    """
    m = np.asarray(m)
    if not np.all(np.isfinite(m)):
        raise NumericError("cannot quantize matrix with non-finite entries")
    payload_bits = 2 * m.size * spec.bits
    if spec.n_levels == 1:
        return np.zeros_like(m, dtype=complex), payload_bits
    idx = quantize_indices(spec, m)
    return reconstruct(spec, idx), payload_bits


def quantize_indices(spec: QuantizerSpec, m: np.ndarray) -> np.ndarray:
    """Level indices for a complex matrix, shape (2,) + m.shape with the real
    plane first. This is the payload actually carried by a feedback message."""
    m = np.asarray(m)
    parts = np.stack([m.real, m.imag])
    if spec.n_levels == 1:
        return np.zeros(parts.shape, dtype=np.int64)
    return _nearest_level(spec, parts)


def reconstruct(spec: QuantizerSpec, indices: np.ndarray) -> np.ndarray:
    """Inverse of quantize_indices: map level indices back to a complex matrix."""
    vals = spec.levels[indices]
    return vals[0] + 1j * vals[1]
