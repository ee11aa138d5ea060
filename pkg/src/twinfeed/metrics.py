"""Evaluation quantities over (true, acquired) channel sequences.

All figures are arithmetic means over the supplied steps. The precoding
quantities assume a single receive antenna, so each channel matrix collapses
to a transmit-side vector; NMSE works for any matrix shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError

__all__ = [
    "MetricsRecord",
    "nmse",
    "precoding_gain",
    "cosine_similarity",
    "spectral_efficiency",
    "compute_metrics",
]


@dataclass(frozen=True)
class MetricsRecord:
    nmse_linear: float
    nmse_db: float
    precoding_gain: float
    cosine_similarity: float
    spectral_efficiency: float
    snr_db: float
    n_steps: int


def _entries(m) -> np.ndarray:
    return m.entries if hasattr(m, "entries") else np.asarray(m)


def _paired(true_list, recovered_list):
    if len(true_list) != len(recovered_list):
        raise ShapeError(
            f"true and recovered sequences differ in length: "
            f"{len(true_list)} vs {len(recovered_list)}"
        )
    if len(true_list) == 0:
        raise DegenerateInputError("empty step sequence")
    return [(_entries(t), _entries(r)) for t, r in zip(true_list, recovered_list)]


def nmse(true_list, recovered_list) -> tuple[float, float]:
    """Mean over steps of squared Frobenius error normalized by the true
    channel power; returned as (linear, dB) with -inf dB for exact recovery."""
    ratios = []
    for t, r in _paired(true_list, recovered_list):
        power = float(np.sum(np.abs(t) ** 2))
        if power == 0.0:
            raise DegenerateInputError("true channel with zero norm in NMSE")
        ratios.append(float(np.sum(np.abs(t - r) ** 2)) / power)
    linear = float(np.mean(ratios))
    db = float("-inf") if linear == 0.0 else float(10.0 * np.log10(linear))
    return linear, db


def _alignment(t: np.ndarray, r: np.ndarray) -> float:
    """|inner product of the unit-normalized vectors|; shared by the gain and
    similarity metrics so their per-step identity is exact.

    A zero-norm acquired vector admits no matched-filter precoder at all, so
    it scores zero alignment instead of erroring; coarse grids produce it
    routinely. A zero-norm true vector is genuinely degenerate.
    """
    tv = t.ravel()
    rv = r.ravel()
    if tv.shape[0] != t.shape[-1] or t.shape[0] != 1 or r.shape[0] != 1:
        raise ShapeError(f"vector-channel metric needs n_r=1, got shapes {t.shape}, {r.shape}")
    nt = np.linalg.norm(tv)
    if nt == 0.0:
        raise DegenerateInputError("zero-norm true channel vector in precoding metric")
    nr = np.linalg.norm(rv)
    if nr == 0.0:
        return 0.0
    return float(np.abs(np.vdot(rv, tv)) / (nr * nt))


def precoding_gain(true_list, recovered_list) -> float:
    """Mean squared magnitude of the equivalent channel formed by the
    unit-normalized acquired and true vectors."""
    pairs = _paired(true_list, recovered_list)
    return float(np.mean([_alignment(t, r) ** 2 for t, r in pairs]))


def cosine_similarity(true_list, recovered_list) -> float:
    """Mean normalized inner-product magnitude between acquired and true
    vectors; invariant to any nonzero complex scaling of either side."""
    pairs = _paired(true_list, recovered_list)
    return float(np.mean([_alignment(t, r) for t, r in pairs]))


def spectral_efficiency(true_list, recovered_list, snr_db: float) -> float:
    """Achievable rate under matched-filter analog precoding built from the
    acquired vector: mean of log2(1 + |h* p|^2 * snr / n_t)."""
    if not np.isfinite(snr_db):
        raise DegenerateInputError(f"SNR must be finite, got {snr_db}")
    gamma = 10.0 ** (snr_db / 10.0)
    rates = []
    for t, r in _paired(true_list, recovered_list):
        tv = t.ravel()
        rv = r.ravel()
        if t.shape[0] != 1 or r.shape[0] != 1:
            raise ShapeError(f"vector-channel metric needs n_r=1, got shapes {t.shape}, {r.shape}")
        if np.linalg.norm(tv) == 0.0:
            raise DegenerateInputError("zero-norm true channel vector in spectral efficiency")
        nr = np.linalg.norm(rv)
        if nr == 0.0:
            rates.append(0.0)
            continue
        p_v = rv / nr
        aligned = np.abs(np.vdot(tv, p_v)) ** 2
        rates.append(np.log2(1.0 + aligned * gamma / tv.size))
    return float(np.mean(rates))


def compute_metrics(true_list, recovered_list, snr_db: float) -> MetricsRecord:
    linear, db = nmse(true_list, recovered_list)
    return MetricsRecord(
        nmse_linear=linear,
        nmse_db=db,
        precoding_gain=precoding_gain(true_list, recovered_list),
        cosine_similarity=cosine_similarity(true_list, recovered_list),
        spectral_efficiency=spectral_efficiency(true_list, recovered_list, snr_db),
        snr_db=float(snr_db),
        n_steps=len(true_list),
    )
