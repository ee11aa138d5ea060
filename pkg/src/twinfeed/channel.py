"""Time-correlated mMIMO channel traces: synthesis, file IO, and splitting.

The synthetic generator is a sum-of-sinusoids Doppler fading model: every
scalar sub-channel is a superposition of `n_paths` complex exponentials whose
frequencies are f_d * cos(theta_p) with per-path angles theta_p and phases
drawn from a seeded PCG64 stream. Identical config (including seed) gives a
bit-identical trace.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError, TraceParseError

SPEED_OF_LIGHT = 299_792_458.0

_MAGIC = b"CTRC"
_VERSION = 1

__all__ = [
    "ChannelMatrix",
    "ChannelTrace",
    "GeneratorConfig",
    "generate_trace",
    "load_trace",
    "save_trace",
    "split_trace",
    "lag1_autocorrelation",
]


# =========================
# Trace containers
# =========================


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """One complex N_r x N_t channel realization at a single time index.

    `entries` is treated as immutable after construction.
    """

    entries: np.ndarray
    time_index: int

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ShapeError(f"channel matrix must be 2-D with positive dims, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise NumericError(f"non-finite channel entry at time index {self.time_index}")
        object.__setattr__(self, "entries", e)

    @property
    def n_r(self) -> int:
        return self.entries.shape[0]

    @property
    def n_t(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True, eq=False)
class ChannelTrace:
    """Time-ordered sequence of channel matrices with sampling metadata."""

    samples: tuple
    sample_period: float
    n_r: int
    n_t: int
    source_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.sample_period <= 0:
            raise ConfigurationError(f"sample_period must be positive, got {self.sample_period}")
        prev = None
        for s in self.samples:
            if (s.n_r, s.n_t) != (self.n_r, self.n_t):
                raise ShapeError(
                    f"sample at t={s.time_index} has shape {(s.n_r, s.n_t)}, "
                    f"trace declares {(self.n_r, self.n_t)}"
                )
            if prev is not None and s.time_index != prev + 1:
                raise ConfigurationError(
                    f"time indices must increase by 1, got {prev} -> {s.time_index}"
                )
            prev = s.time_index

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def as_array(self) -> np.ndarray:
        """Dense complex array of shape (n_samples, n_r, n_t)."""
        return np.stack([s.entries for s in self.samples])

    def subtrace(self, start: int, stop: int, tag_suffix: str = "") -> "ChannelTrace":
        return replace(self, samples=self.samples[start:stop], source_tag=self.source_tag + tag_suffix)

    @staticmethod
    def from_array(arr, sample_period: float, source_tag: str = "", first_index: int = 0) -> "ChannelTrace":
        arr = np.asarray(arr, dtype=complex)
        if arr.ndim != 3:
            raise ShapeError(f"expected (n_samples, n_r, n_t) array, got shape {arr.shape}")
        samples = [ChannelMatrix(arr[i], first_index + i) for i in range(arr.shape[0])]
        return ChannelTrace(
            samples=tuple(samples),
            sample_period=float(sample_period),
            n_r=arr.shape[1],
            n_t=arr.shape[2],
            source_tag=source_tag,
        )


# =========================
# Synthetic generator
# =========================


@dataclass(frozen=True)
class GeneratorConfig:
    """Sum-of-sinusoids fading generator parameters.

    `path_gain_decay` is the power ratio between consecutive paths (1.0 means
    equal-power paths); gains are normalized so every sub-channel has unit
    time-average power. `shared_angles` reuses one set of path angles for all
    antennas (per-antenna phases stay independent), which induces spatial
    correlation; by default every sub-channel fades independently.
    `path_angle_overrides` pins the arrival angles, mainly to force edge cases
    such as a zero-Doppler path in tests.
    """

    n_t: int = 4
    n_r: int = 1
    n_samples: int = 20_000
    sample_period: float = 5e-4
    carrier_hz: float = 2.18e9
    speed_mps: float = 3.0 / 3.6
    n_paths: int = 8
    seed: int = 0
    path_gain_decay: float = 1.0
    shared_angles: bool = False
    path_angle_overrides: tuple | None = None

    def __post_init__(self):
        if self.n_t < 1 or self.n_r < 1:
            raise ConfigurationError(f"antenna counts must be positive, got n_r={self.n_r}, n_t={self.n_t}")
        if self.n_samples < 1:
            raise ConfigurationError(f"n_samples must be positive, got {self.n_samples}")
        if self.sample_period <= 0:
            raise ConfigurationError(f"sample_period must be positive, got {self.sample_period}")
        if self.n_paths < 1:
            raise ConfigurationError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.path_gain_decay <= 0:
            raise ConfigurationError(f"path_gain_decay must be positive, got {self.path_gain_decay}")
        if self.speed_mps < 0 or self.carrier_hz <= 0:
            raise ConfigurationError("speed must be >= 0 and carrier frequency positive")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigurationError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.doppler_hz >= 0.5 / self.sample_period:
            raise ConfigurationError(
                f"Doppler {self.doppler_hz:.3f} Hz violates Nyquist for "
                f"sample_period {self.sample_period} s"
            )
        if self.path_angle_overrides is not None:
            object.__setattr__(self, "path_angle_overrides", tuple(float(a) for a in self.path_angle_overrides))
            if len(self.path_angle_overrides) != self.n_paths:
                raise ConfigurationError(
                    f"need {self.n_paths} path angle overrides, got {len(self.path_angle_overrides)}"
                )

    @property
    def doppler_hz(self) -> float:
        return self.speed_mps * self.carrier_hz / SPEED_OF_LIGHT


def _path_gains(cfg: GeneratorConfig) -> np.ndarray:
    powers = cfg.path_gain_decay ** np.arange(cfg.n_paths)
    return np.sqrt(powers / powers.sum())


def generate_trace(cfg: GeneratorConfig) -> ChannelTrace:
    """Generate a fading trace; a pure function of the config (incl. seed)."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    f_d = cfg.doppler_hz
    t = np.arange(cfg.n_samples) * cfg.sample_period
    gains = _path_gains(cfg)

    shared_theta = None
    if cfg.shared_angles:
        shared_theta = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_paths)

    arr = np.empty((cfg.n_samples, cfg.n_r, cfg.n_t), dtype=complex)
    for rx in range(cfg.n_r):
        for tx in range(cfg.n_t):
            if cfg.path_angle_overrides is not None:
                theta = np.asarray(cfg.path_angle_overrides)
            elif shared_theta is not None:
                theta = shared_theta
            else:
                theta = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_paths)
            phi = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_paths)
            omega = 2.0 * np.pi * f_d * np.cos(theta)
            arr[:, rx, tx] = np.exp(1j * (np.outer(t, omega) + phi)) @ gains

    tag = f"synthetic seed={cfg.seed} fd={f_d:.6g}Hz"
    return ChannelTrace.from_array(arr, cfg.sample_period, source_tag=tag)


def lag1_autocorrelation(trace: ChannelTrace) -> float:
    """Mean over sub-channels of the magnitude of the centered lag-1
    correlation coefficient."""
    arr = trace.as_array().reshape(len(trace), -1)
    if arr.shape[0] < 2:
        raise ConfigurationError("need at least 2 samples for a lag-1 autocorrelation")
    x = arr - arr.mean(axis=0, keepdims=True)
    num = np.abs(np.sum(np.conj(x[:-1]) * x[1:], axis=0))
    den = np.sqrt(np.sum(np.abs(x[:-1]) ** 2, axis=0) * np.sum(np.abs(x[1:]) ** 2, axis=0))
    den = np.where(den > 0, den, 1.0)
    return float(np.mean(num / den))


# =========================
# Trace files
# =========================


def save_trace(trace: ChannelTrace, path, fmt: str = "binary") -> None:
    """Write a trace file.

    `fmt="binary"` is the CTRC layout (bit-exact round trip); `fmt="csv"` is
    the text variant with header ``t,rx,tx,re,im`` preceded by ``# key=value``
    metadata comments.
    """
    if fmt == "binary":
        _save_binary(trace, path)
    elif fmt == "csv":
        _save_csv(trace, path)
    else:
        raise ConfigurationError(f"unknown trace format {fmt!r} (use 'binary' or 'csv')")


def _save_binary(trace: ChannelTrace, path) -> None:
    arr = trace.as_array()
    flat = np.empty(arr.size * 2, dtype="<f8")
    flat[0::2] = arr.real.ravel()
    flat[1::2] = arr.imag.ravel()
    header = _MAGIC + struct.pack(
        "<IIIQd", _VERSION, trace.n_r, trace.n_t, len(trace), trace.sample_period
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(flat.tobytes())


def _save_csv(trace: ChannelTrace, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(f"# sample_period={trace.sample_period!r}\n")
        if trace.source_tag:
            f.write(f"# source_tag={trace.source_tag}\n")
        f.write("t,rx,tx,re,im\n")
        for s in trace.samples:
            for rx in range(trace.n_r):
                for tx in range(trace.n_t):
                    v = s.entries[rx, tx]
                    f.write(f"{s.time_index},{rx},{tx},{v.real!r},{v.imag!r}\n")


def load_trace(path) -> ChannelTrace:
    """Load a trace file, auto-detecting binary vs CSV by the CTRC magic."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] == _MAGIC:
        return _load_binary(blob, path)
    return _load_csv(blob, path)


def _load_binary(blob: bytes, path) -> ChannelTrace:
    head_size = 4 + struct.calcsize("<IIIQd")
    if len(blob) < head_size:
        raise TraceParseError(f"{path}: truncated header")
    version, n_r, n_t, n_samples, period = struct.unpack("<IIIQd", blob[4:head_size])
    if version != _VERSION:
        raise TraceParseError(f"{path}: unsupported trace version {version}")
    if n_r < 1 or n_t < 1:
        raise TraceParseError(f"{path}: non-positive dimensions n_r={n_r}, n_t={n_t}")
    if n_samples < 1:
        raise TraceParseError(f"{path}: no samples")
    expected = n_samples * n_r * n_t * 2 * 8
    body = blob[head_size:]
    if len(body) != expected:
        raise TraceParseError(
            f"{path}: payload is {len(body)} bytes, expected {expected} "
            f"for {n_samples} samples of {n_r}x{n_t}"
        )
    flat = np.frombuffer(body, dtype="<f8")
    arr = (flat[0::2] + 1j * flat[1::2]).reshape(n_samples, n_r, n_t)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.reshape(n_samples, -1)).all(axis=1))[0])
        raise TraceParseError(f"{path}: non-finite entry in sample {bad}")
    return ChannelTrace.from_array(arr, period, source_tag=f"file:{path}")


def _load_csv(blob: bytes, path) -> ChannelTrace:
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceParseError(f"{path}: not a CTRC file and not readable as text") from exc

    period = None
    rows = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            if key.strip() == "sample_period":
                period = float(val)
            continue
        if not header_seen:
            if line.replace(" ", "") != "t,rx,tx,re,im":
                raise TraceParseError(f"{path}:{lineno}: expected header 't,rx,tx,re,im', got {line!r}")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise TraceParseError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])))
        except ValueError as exc:
            raise TraceParseError(f"{path}:{lineno}: {exc}") from exc
        if not (np.isfinite(rows[-1][3]) and np.isfinite(rows[-1][4])):
            raise TraceParseError(f"{path}:{lineno}: non-finite entry")

    if not rows:
        raise TraceParseError(f"{path}: no samples")

    n_r = max(r[1] for r in rows) + 1
    n_t = max(r[2] for r in rows) + 1
    per_matrix = n_r * n_t
    if len(rows) % per_matrix != 0:
        raise TraceParseError(
            f"{path}: {len(rows)} data rows is not a multiple of n_r*n_t={per_matrix}"
        )

    t_indices = sorted({r[0] for r in rows})
    n_samples = len(rows) // per_matrix
    if len(t_indices) != n_samples:
        raise TraceParseError(f"{path}: duplicate or missing (t, rx, tx) rows")
    t0 = t_indices[0]
    if t_indices != list(range(t0, t0 + n_samples)):
        raise TraceParseError(f"{path}: time indices must be consecutive")

    arr = np.full((n_samples, n_r, n_t), np.nan, dtype=complex)
    for t, rx, tx, re, im in rows:
        arr[t - t0, rx, tx] = re + 1j * im
    if np.any(np.isnan(arr)):
        raise TraceParseError(f"{path}: incomplete matrix (missing (t, rx, tx) combinations)")

    if period is None:
        period = 1.0
    return ChannelTrace.from_array(arr, period, source_tag=f"file:{path}", first_index=t0)


# =========================
# Splitting
# =========================


def split_trace(trace: ChannelTrace, train_frac: float, valid_frac: float):
    """Contiguous, order-preserving split into (train, valid, test).

    Sizes are floor(frac * n) for train and valid; the remainder is test.
    Splits are never shuffled: training always precedes validation in time.
    """
    if train_frac <= 0 or valid_frac <= 0:
        raise ConfigurationError("split fractions must be positive")
    if train_frac + valid_frac >= 1.0:
        raise ConfigurationError(
            f"train_frac + valid_frac must be < 1, got {train_frac} + {valid_frac}"
        )
    n = len(trace)
    n_train = int(np.floor(train_frac * n))
    n_valid = int(np.floor(valid_frac * n))
    train = trace.subtrace(0, n_train, "/train")
    valid = trace.subtrace(n_train, n_train + n_valid, "/valid")
    test = trace.subtrace(n_train + n_valid, n, "/test")
    return train, valid, test
