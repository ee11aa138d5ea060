"""Link-level simulation of the CSI feedback protocols.

Two endpoints are simulated: the receiver, which measures the channel each
step, and the transmitter, which must acquire it. The conventional path
quantizes the whole estimate and feeds it back. The hybrid path runs
bit-identical predictor twins at both ends and feeds back only the quantized
gap between prediction and estimate; when that gap is negligible nothing but
a one-bit header is sent. A switching session runs the hybrid path while its
per-step error stays below the conventional path's error level and falls back
to data collection plus retraining when it does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelTrace, split_trace
from .errors import ConfigurationError, ProtocolError, ShapeError
from .predictor import (
    PredictorConfig,
    PredictorModel,
    TrainingReport,
    _pairs_from_trace,
    _forward_batch,
    _trace_vecs,
    matrix_to_vec,
    predict_step,
    train,
)
from .quantizer import QuantizerSpec, build_spec, quantize_indices, quantize_matrix, reconstruct

__all__ = [
    "ProtocolConfig",
    "FeedbackMessage",
    "StepRecord",
    "SessionLog",
    "SessionContext",
    "run_assessment",
    "step_conventional",
    "step_hybrid",
    "run_session",
]

MODES = ("conventional", "hybrid", "switching")


# =========================
# Configuration
# =========================


@dataclass(frozen=True)
class ProtocolConfig:
    """Knobs shared by both endpoints before a session starts.

    `init_length` is the number of leading samples consumed by the
    initialization phase; those samples are also the predictor's training
    corpus. `skip_threshold` is the residual magnitude below which the
    receiver sends only the skip header. Clipping ranges are negotiated from
    data percentiles unless overridden explicitly.
    """

    quant_bits: int = 4
    init_length: int = 2000
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    switching_enabled: bool = True
    skip_threshold: float = 0.0
    clip_percentile: float = 99.9
    conv_clip_override: float | None = None
    resid_clip_override: float | None = None
    train_frac: float = 0.8
    valid_frac: float = 0.1
    retrain_window: int | None = None

    def __post_init__(self):
        if self.quant_bits < 1:
            raise ConfigurationError(f"quant_bits must be >= 1, got {self.quant_bits}")
        if self.init_length <= self.predictor.delay + 1:
            raise ConfigurationError(
                f"init_length must exceed delay + 1 = {self.predictor.delay + 1}, "
                f"got {self.init_length}"
            )
        if self.skip_threshold < 0:
            raise ConfigurationError(f"skip_threshold must be >= 0, got {self.skip_threshold}")
        if not (0.0 < self.clip_percentile <= 100.0):
            raise ConfigurationError(f"clip_percentile must be in (0, 100], got {self.clip_percentile}")
        if self.retrain_window is not None and self.retrain_window < self.predictor.delay + 2:
            raise ConfigurationError(
                f"retrain_window must allow at least one training pair, got {self.retrain_window}"
            )


@dataclass(frozen=True)
class FeedbackMessage:
    """One uplink report. Payload sizes in bits:

    skip      1 (header only)
    residual  1 + 2 * n_r * n_t * quant_bits
    full      2 * n_r * n_t * quant_bits, plus the 1-bit header when the
              session runs in switching mode and needs the in-band signal
    """

    kind: str
    payload_bits: int
    indices: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class StepRecord:
    step: int
    mode: str
    kind: str
    payload_bits: int
    sq_err: float
    conv_sq_err: float
    true: np.ndarray
    recovered: np.ndarray


@dataclass
class SessionLog:
    quant_bits: int
    mode: str
    n_r: int
    n_t: int
    records: list = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        if not np.all(np.isfinite(rec.recovered)):
            raise ProtocolError(f"non-finite recovered channel at step {rec.step}")
        self.records.append(rec)

    @property
    def cumulative_bits(self) -> int:
        return sum(r.payload_bits for r in self.records)

    def true_list(self):
        return [r.true for r in self.records]

    def recovered_list(self):
        return [r.recovered for r in self.records]

    def kind_fraction(self, kind: str) -> float:
        if not self.records:
            return 0.0
        return sum(1 for r in self.records if r.kind == kind) / len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as f:
            f.write("step,mode,kind,payload_bits,sq_err\n")
            for r in self.records:
                f.write(f"{r.step},{r.mode},{r.kind},{r.payload_bits},{r.sq_err:.17g}\n")

    def summary(self) -> dict:
        n = len(self.records)
        return {
            "mode": self.mode,
            "quant_bits": self.quant_bits,
            "steps": n,
            "cumulative_bits": self.cumulative_bits,
            "mean_sq_err": float(np.mean([r.sq_err for r in self.records])) if n else float("nan"),
            "skip_fraction": self.kind_fraction("skip"),
            "hybrid_fraction": sum(1 for r in self.records if r.mode == "hybrid") / n if n else 0.0,
        }


@dataclass
class SessionContext:
    """Everything both endpoints agreed on during assessment, plus the
    simulator's views of their per-side predictor state."""

    cfg: ProtocolConfig
    n_r: int
    n_t: int
    q_conv: QuantizerSpec
    q_resid: QuantizerSpec | None = None
    model_gnb: PredictorModel | None = None
    model_ue: PredictorModel | None = None
    window_gnb: list = field(default_factory=list)
    window_ue: list = field(default_factory=list)
    report: TrainingReport | None = None


# =========================
# Assessment and initialization
# =========================


def _rank_percentile(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: always an actual data value."""
    flat = np.sort(values.ravel())
    idx = int(np.ceil(pct / 100.0 * flat.size)) - 1
    return float(flat[max(0, min(idx, flat.size - 1))])


def _component_percentile(arr: np.ndarray, pct: float) -> float:
    comps = np.concatenate([arr.real.ravel(), arr.imag.ravel()])
    return _rank_percentile(np.abs(comps), pct)


def _quantized_trace(spec: QuantizerSpec, trace: ChannelTrace) -> ChannelTrace:
    arr = trace.as_array()
    out = np.empty_like(arr)
    for i in range(arr.shape[0]):
        out[i], _ = quantize_matrix(spec, arr[i])
    first = trace.samples[0].time_index
    return ChannelTrace.from_array(
        out, trace.sample_period, source_tag=trace.source_tag + "/quantized", first_index=first
    )


def _best_clip_for(values: np.ndarray, bits: int) -> float:
    """Clip range minimizing mean squared reconstruction error of `values` on
    the (2**bits - 1)-level midtread grid, grid-searched over candidates.

    Balancing granularity against saturation matters in both directions: a
    range far below the value spread saturates constantly, one far above it
    wastes the level budget. Deterministic: fixed candidate set, first
    minimum wins.
    """
    mags = np.abs(values.ravel())
    top = float(mags.max())
    if top <= 0.0:
        return 1e-12
    n_levels = 2 ** bits - 1
    if n_levels < 3:
        return top
    candidates = np.geomspace(top / 256.0, 2.0 * top, 96)
    half_step = candidates / (n_levels - 1)
    scaled = np.clip(mags[None, :], None, candidates[:, None])
    err = scaled - 2.0 * half_step[:, None] * np.round(scaled / (2.0 * half_step[:, None]))
    err += mags[None, :] - scaled
    mse = np.mean(err ** 2, axis=1)
    return float(candidates[int(np.argmin(mse))])


def _validation_residual_clip(cfg: ProtocolConfig, model: PredictorModel,
                              valid_q: ChannelTrace, valid_raw: ChannelTrace) -> float:
    """Negotiate the residual grid range from held-out prediction errors:
    predictions over the quantized validation segment against the unquantized
    truth, then the MSE-optimal clip for those residuals at the session's bit
    width. The live loop anchors windows and recurrent state to the recovered
    channel, so the validation pass has the deployment input distribution."""
    d = cfg.predictor.delay
    vec_q = _trace_vecs(valid_q)
    x_va, _, _ = _pairs_from_trace(vec_q, model.norm_mean, model.norm_divisor, d)
    _, out = _forward_batch(model.weights, x_va)
    preds_raw = model.norm_mean + model.norm_std * out
    raw = _trace_vecs(valid_raw)
    rows = np.arange(d, len(valid_raw) - 1)
    residuals = preds_raw - raw[rows + 1]
    return max(_best_clip_for(residuals, cfg.quant_bits), 1e-12)


def run_assessment(cfg: ProtocolConfig, init_trace: ChannelTrace,
                   reuse_model: PredictorModel | None = None,
                   train_predictors: bool = True) -> SessionContext:
    """Handshake plus initialization over the supplied samples.

    Both ends agree on the conventional grid (range from an init-data
    percentile), collect the quantized history, train twins from identical
    data and seed, and agree on the residual grid (range from validation
    residuals). Passing `reuse_model` skips training and adopts existing
    weights, renegotiating only the grids.
    """
    d = cfg.predictor.delay
    if len(init_trace) <= d + 1:
        raise ConfigurationError(
            f"initialization needs more than delay + 1 = {d + 1} samples, got {len(init_trace)}"
        )
    raw_arr = init_trace.as_array()

    conv_clip = cfg.conv_clip_override
    if conv_clip is None:
        conv_clip = _component_percentile(raw_arr, cfg.clip_percentile)
    if conv_clip <= 0:
        raise ConfigurationError("initialization data is identically zero; cannot set a clip range")
    q_conv = build_spec(cfg.quant_bits, conv_clip)

    ctx = SessionContext(cfg=cfg, n_r=init_trace.n_r, n_t=init_trace.n_t, q_conv=q_conv)
    if not train_predictors:
        return ctx

    quant = _quantized_trace(q_conv, init_trace)
    train_q, valid_q, _ = split_trace(quant, cfg.train_frac, cfg.valid_frac)
    n_train, n_valid = len(train_q), len(valid_q)
    valid_raw = init_trace.subtrace(n_train, n_train + n_valid)

    if reuse_model is not None:
        model = reuse_model.clone()
        report = None
    else:
        model, report = train(cfg.predictor, train_q, valid_q)

    resid_clip = cfg.resid_clip_override
    if resid_clip is None:
        resid_clip = _validation_residual_clip(cfg, model, valid_q, valid_raw)
    ctx.q_resid = build_spec(cfg.quant_bits, resid_clip)

    # Live steps keep the recurrent state anchored to the newest agreed
    # channel, so initialization seeds it with the freshest quantized sample.
    # Cloning afterwards makes the two ends bit-identical by construction.
    quant_arr = quant.as_array()
    n = quant_arr.shape[0]
    model.recurrent_state = matrix_to_vec(quant_arr[n - 1])

    ctx.model_gnb = model
    ctx.model_ue = model.clone()
    ctx.window_gnb = [quant_arr[i].copy() for i in range(n - d - 1, n)]
    ctx.window_ue = [quant_arr[i].copy() for i in range(n - d - 1, n)]
    ctx.report = report
    return ctx


# =========================
# Protocol steps
# =========================


def step_conventional(ctx: SessionContext, h_true: np.ndarray):
    """Quantize-and-feedback: the whole estimate goes over the link."""
    recovered, payload = quantize_matrix(ctx.q_conv, h_true)
    return recovered, FeedbackMessage(kind="full", payload_bits=payload)


def step_hybrid(ctx: SessionContext, h_true: np.ndarray, strict_twins: bool = True):
    """One hybrid step: both twins predict, the receiver measures the gap,
    and the transmitter reconstructs from its own prediction.

    With `strict_twins` a mismatch between the two predictions is a protocol
    error; switching sessions disable it and let the error comparison absorb
    a corrupted endpoint. Returns the transmitter-side recovered channel and
    the uplink message.
    """
    if ctx.model_gnb is None or ctx.model_ue is None:
        raise ProtocolError("hybrid step before assessment trained the twins")
    h_true = np.asarray(h_true)
    if h_true.shape != (ctx.n_r, ctx.n_t):
        raise ShapeError(f"expected {(ctx.n_r, ctx.n_t)} channel, got {h_true.shape}")

    pred_gnb = predict_step(ctx.model_gnb, ctx.window_gnb)
    pred_ue = predict_step(ctx.model_ue, ctx.window_ue)
    if strict_twins and not np.array_equal(pred_gnb, pred_ue):
        raise ProtocolError("twin predictors desynchronized: endpoint predictions differ")

    gap = pred_ue - h_true
    comp_max = max(np.abs(gap.real).max(), np.abs(gap.imag).max())
    if comp_max <= ctx.cfg.skip_threshold:
        rec_gnb, rec_ue = pred_gnb, pred_ue
        msg = FeedbackMessage(kind="skip", payload_bits=1)
    else:
        idx = quantize_indices(ctx.q_resid, gap)
        gap_q = reconstruct(ctx.q_resid, idx)
        rec_gnb = pred_gnb - gap_q
        rec_ue = pred_ue - gap_q
        msg = FeedbackMessage(
            kind="residual",
            payload_bits=1 + 2 * h_true.size * ctx.q_resid.bits,
            indices=idx,
        )

    # Both history windows and the recurrent state advance on the recovered
    # channel, viewed through the conventional grid: the twins were trained
    # on that alphabet, and feeding them finer values than they ever saw
    # collapses prediction quality at coarse widths. At fine widths the two
    # views differ by at most half a grid step. The raw recovered channel
    # remains the protocol's output.
    fed_gnb, _ = quantize_matrix(ctx.q_conv, rec_gnb)
    fed_ue, _ = quantize_matrix(ctx.q_conv, rec_ue)
    ctx.window_gnb = ctx.window_gnb[1:] + [fed_gnb]
    ctx.window_ue = ctx.window_ue[1:] + [fed_ue]
    ctx.model_gnb.recurrent_state = matrix_to_vec(fed_gnb)
    ctx.model_ue.recurrent_state = matrix_to_vec(fed_ue)
    return rec_gnb, msg


# =========================
# Sessions
# =========================


def _frob_sq(m: np.ndarray) -> float:
    return float(np.sum(np.abs(m) ** 2))


def run_session(cfg: ProtocolConfig, trace: ChannelTrace, mode: str | None = None,
                on_step=None, reuse_model: PredictorModel | None = None) -> SessionLog:
    """Consume `init_length` samples for assessment, then run the remaining
    samples in the requested mode and log every step.

    `on_step(ctx, step_index)` is called before each live step; tests use it
    to perturb an endpoint. The per-step switching comparison and the logged
    conventional error level are computed on the simulator's oracle side
    (they need the true channel, which a deployed transmitter lacks; the
    receiver-side variant reaches the same decision through the 1-bit
    header).
    """
    if mode is None:
        mode = "switching" if cfg.switching_enabled else "hybrid"
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    if len(trace) <= cfg.init_length:
        raise ConfigurationError(
            f"trace has {len(trace)} samples, needs more than init_length={cfg.init_length}"
        )

    init = trace.subtrace(0, cfg.init_length)
    ctx = run_assessment(cfg, init, reuse_model=reuse_model,
                         train_predictors=(mode != "conventional"))
    log = SessionLog(quant_bits=cfg.quant_bits, mode=mode, n_r=trace.n_r, n_t=trace.n_t)
    full_bits = 2 * trace.n_r * trace.n_t * cfg.quant_bits
    retrain_window = cfg.retrain_window if cfg.retrain_window is not None else cfg.init_length

    collecting: list | None = None
    for i in range(cfg.init_length, len(trace)):
        h = trace.samples[i].entries
        if on_step is not None:
            on_step(ctx, i)

        conv_rec, _ = quantize_matrix(ctx.q_conv, h)
        conv_err = _frob_sq(h - conv_rec)

        if mode == "conventional":
            rec, msg = conv_rec, FeedbackMessage(kind="full", payload_bits=full_bits)
            step_mode = "conventional"
        elif mode == "hybrid":
            rec, msg = step_hybrid(ctx, h, strict_twins=True)
            step_mode = "hybrid"
        else:
            if collecting is not None:
                rec = conv_rec
                msg = FeedbackMessage(kind="full", payload_bits=1 + full_bits)
                step_mode = "conventional"
                collecting.append(trace.samples[i])
                if len(collecting) >= retrain_window:
                    retrain_trace = ChannelTrace(
                        samples=tuple(collecting),
                        sample_period=trace.sample_period,
                        n_r=trace.n_r,
                        n_t=trace.n_t,
                        source_tag=trace.source_tag + "/retrain",
                    )
                    ctx = run_assessment(cfg, retrain_trace)
                    collecting = None
            else:
                cand_rec, cand_msg = step_hybrid(ctx, h, strict_twins=False)
                cand_err = _frob_sq(h - cand_rec)
                if cand_err < conv_err:
                    rec, msg, step_mode = cand_rec, cand_msg, "hybrid"
                else:
                    rec = conv_rec
                    msg = FeedbackMessage(kind="full", payload_bits=1 + full_bits)
                    step_mode = "conventional"
                    collecting = [trace.samples[i]]

        log.append(StepRecord(
            step=i,
            mode=step_mode,
            kind=msg.kind,
            payload_bits=msg.payload_bits,
            sq_err=_frob_sq(h - rec),
            conv_sq_err=conv_err,
            true=h,
            recovered=rec,
        ))
    return log
