"""Experiment harness: config files, sweep execution, result tables.

A run sweeps (mode, quantization bits) cells over one trace, computes the
evaluation metrics at every requested SNR, and writes a results CSV shaped
like one row per (bits, method, snr) plus a JSON summary and per-session
logs. Everything is a pure function of the config and the global seed, so a
rerun reproduces every output byte.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .channel import GeneratorConfig, generate_trace, load_trace
from .errors import ConfigurationError, TraceParseError
from .metrics import compute_metrics
from .predictor import PredictorConfig
from .protocol import MODES, ProtocolConfig, run_assessment, run_session

__all__ = [
    "ExperimentConfig",
    "parse_kv_file",
    "build_experiment_config",
    "run_experiment",
    "write_report_files",
    "RESULTS_HEADER",
]

RESULTS_HEADER = "bits,method,nmse_db,gamma,rho,eta,snr_db,bits_total"

THREADS_ENV = "TWINFEED_THREADS"


@dataclass(frozen=True)
class ExperimentConfig:
    generator: GeneratorConfig | None
    trace_path: str | None
    protocol: ProtocolConfig
    bits: tuple
    snr_db: tuple
    modes: tuple
    out_dir: str
    seed: int
    shared_twins: bool = False
    threads: int = 1

    def __post_init__(self):
        if not self.bits:
            raise ConfigurationError("bits sweep list must not be empty")
        if not self.snr_db:
            raise ConfigurationError("snr sweep list must not be empty")
        if not self.modes:
            raise ConfigurationError("mode list must not be empty")
        for m in self.modes:
            if m not in MODES:
                raise ConfigurationError(f"unknown mode {m!r}, must be one of {MODES}")
        for b in self.bits:
            if b < 1:
                raise ConfigurationError(f"bits values must be >= 1, got {b}")
        if self.generator is None and self.trace_path is None:
            raise ConfigurationError("either a generator config or a trace path is required")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")


# =========================
# Config file handling
# =========================


def parse_kv_file(path) -> dict:
    """Flat `key = value` text config; '#' starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TraceParseError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TraceParseError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def _get(kv: dict, key: str, cast, default):
    if key not in kv or kv[key] == "":
        return default
    raw = kv[key]
    try:
        if cast is bool:
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"config key {key!r}: {exc}") from exc


def _csv_list(cast):
    def parse(raw):
        if isinstance(raw, (list, tuple)):
            return tuple(cast(v) for v in raw)
        return tuple(cast(part.strip()) for part in str(raw).split(",") if part.strip())
    return parse


# Documented config keys; command-line flags with the same names override.
_INT_LIST = _csv_list(int)
_FLOAT_LIST = _csv_list(float)
_STR_LIST = _csv_list(str)


def build_experiment_config(kv: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Merge a parsed config file with (already typed or string) overrides."""
    kv = dict(kv)
    for key, val in (overrides or {}).items():
        if val is not None:
            kv[key] = val

    seed = _get(kv, "seed", int, 1)
    trace_path = kv.get("trace") or None

    generator = None
    if trace_path is None:
        generator = GeneratorConfig(
            n_t=_get(kv, "n_t", int, 4),
            n_r=_get(kv, "n_r", int, 1),
            n_samples=_get(kv, "n_samples", int, 20_000),
            sample_period=_get(kv, "sample_period", float, 5e-4),
            carrier_hz=_get(kv, "carrier_hz", float, 2.18e9),
            speed_mps=_get(kv, "speed_mps", float, 3.0 / 3.6),
            n_paths=_get(kv, "n_paths", int, 8),
            seed=seed,
            path_gain_decay=_get(kv, "path_gain_decay", float, 1.0),
            shared_angles=_get(kv, "shared_angles", bool, False),
        )

    predictor = PredictorConfig(
        delay=_get(kv, "delay", int, 2),
        hidden_layers=_get(kv, "hidden_layers", int, 2),
        hidden_units=_get(kv, "hidden_units", int, 20),
        learn_rate=_get(kv, "learn_rate", float, 1e-4),
        batch_size=_get(kv, "batch_size", int, 20),
        epochs=_get(kv, "epochs", int, 100),
        seed=seed,
    )
    protocol = ProtocolConfig(
        quant_bits=max(_get(kv, "bits", _INT_LIST, (4,))),
        init_length=_get(kv, "init_length", int, 2000),
        predictor=predictor,
        switching_enabled=_get(kv, "switching_enabled", bool, True),
        skip_threshold=_get(kv, "skip_threshold", float, 0.0),
        clip_percentile=_get(kv, "clip_percentile", float, 99.9),
        conv_clip_override=_get(kv, "conv_clip", float, None),
        resid_clip_override=_get(kv, "resid_clip", float, None),
        train_frac=_get(kv, "train_frac", float, 0.8),
        valid_frac=_get(kv, "valid_frac", float, 0.1),
        retrain_window=_get(kv, "retrain_window", int, None),
    )

    env_threads = os.environ.get(THREADS_ENV)
    threads = _get(kv, "threads", int, int(env_threads) if env_threads else 1)

    return ExperimentConfig(
        generator=generator,
        trace_path=trace_path,
        protocol=protocol,
        bits=_get(kv, "bits", _INT_LIST, (4,)),
        snr_db=_get(kv, "snr", _FLOAT_LIST, (40.0,)),
        modes=_get(kv, "mode", _STR_LIST, ("conventional", "hybrid")),
        out_dir=kv.get("out", "results"),
        seed=seed,
        shared_twins=_get(kv, "shared_twins", bool, False),
        threads=threads,
    )


# =========================
# Sweep execution
# =========================


def _fmt(x: float) -> str:
    if x == float("-inf"):
        return "-inf"
    if x == float("inf"):
        return "inf"
    return f"{x:.17g}"


def _load_or_generate(exp: ExperimentConfig):
    if exp.trace_path is not None:
        return load_trace(exp.trace_path)
    return generate_trace(exp.generator)


def run_experiment(exp: ExperimentConfig) -> dict:
    """Execute the sweep; writes results.csv, summary.json, and one session
    log per cell into the output directory. Returns the summary dict."""
    out_dir = Path(exp.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = _load_or_generate(exp)

    shared_model = None
    if exp.shared_twins and any(m != "conventional" for m in exp.modes):
        # Cheaper approximation: train once at the finest sweep grid and let
        # every cell reuse those weights (grids are still renegotiated).
        ref_cfg = replace(exp.protocol, quant_bits=max(exp.bits))
        ref_ctx = run_assessment(ref_cfg, trace.subtrace(0, exp.protocol.init_length))
        shared_model = ref_ctx.model_gnb

    cells = [(mode, bits) for mode in exp.modes for bits in exp.bits]

    def run_cell(cell):
        mode, bits = cell
        cfg = replace(exp.protocol, quant_bits=bits)
        reuse = shared_model if (exp.shared_twins and mode != "conventional") else None
        return run_session(cfg, trace, mode, reuse_model=reuse)

    if exp.threads > 1:
        with ThreadPoolExecutor(max_workers=min(exp.threads, len(cells))) as pool:
            logs = list(pool.map(run_cell, cells))
    else:
        logs = [run_cell(c) for c in cells]

    rows = []
    cell_summaries = {}
    for (mode, bits), log in zip(cells, logs):
        log.to_csv(out_dir / f"session_{mode}_b{bits}.csv")
        cell_summaries[f"{mode}_b{bits}"] = log.summary()
        truths = log.true_list()
        recovered = log.recovered_list()
        for snr in exp.snr_db:
            rec = compute_metrics(truths, recovered, snr)
            rows.append({
                "bits": bits,
                "method": mode,
                "nmse_db": rec.nmse_db,
                "gamma": rec.precoding_gain,
                "rho": rec.cosine_similarity,
                "eta": rec.spectral_efficiency,
                "snr_db": snr,
                "bits_total": log.cumulative_bits,
            })

    rows.sort(key=lambda r: (r["bits"], r["method"], r["snr_db"]))
    results_path = out_dir / "results.csv"
    with open(results_path, "w", encoding="ascii") as f:
        f.write(RESULTS_HEADER + "\n")
        for r in rows:
            f.write(
                f"{r['bits']},{r['method']},{_fmt(r['nmse_db'])},{_fmt(r['gamma'])},"
                f"{_fmt(r['rho'])},{_fmt(r['eta'])},{_fmt(r['snr_db'])},{r['bits_total']}\n"
            )

    summary = {
        "seed": exp.seed,
        "bits": list(exp.bits),
        "snr_db": list(exp.snr_db),
        "modes": list(exp.modes),
        "shared_twins": exp.shared_twins,
        "trace": exp.trace_path or "synthetic",
        "n_samples": len(trace),
        "n_r": trace.n_r,
        "n_t": trace.n_t,
        "init_length": exp.protocol.init_length,
        "cells": cell_summaries,
    }
    with open(out_dir / "summary.json", "w", encoding="ascii") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


# =========================
# Report files
# =========================


def _read_results(path) -> list:
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise TraceParseError(f"cannot read results file {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != RESULTS_HEADER:
        raise TraceParseError(f"{path}: missing results header {RESULTS_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 8:
            raise TraceParseError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            rows.append({
                "bits": int(parts[0]),
                "method": parts[1],
                "nmse_db": float(parts[2]),
                "gamma": float(parts[3]),
                "rho": float(parts[4]),
                "eta": float(parts[5]),
                "snr_db": float(parts[6]),
                "bits_total": int(parts[7]),
            })
        except ValueError as exc:
            raise TraceParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise TraceParseError(f"{path}: no rows")
    return rows


def _write_table(path, x_name, x_values, columns):
    with open(path, "w", encoding="ascii") as f:
        f.write(",".join([x_name] + [name for name, _ in columns]) + "\n")
        for x in x_values:
            cells = [f"{x:g}" if isinstance(x, float) else str(x)]
            for _, series in columns:
                v = series.get(x)
                cells.append("" if v is None else _fmt(v))
            f.write(",".join(cells) + "\n")


def write_report_files(results_path, out_dir) -> list:
    """Emit per-figure data tables from a results CSV: NMSE / eta / rho+gamma
    against bits, and eta against SNR. Returns the written paths."""
    rows = _read_results(results_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    methods = sorted({r["method"] for r in rows})
    bits = sorted({r["bits"] for r in rows})
    snrs = sorted({r["snr_db"] for r in rows})

    def series(metric, method, fixed_snr=None):
        out = {}
        for r in rows:
            if r["method"] != method:
                continue
            if fixed_snr is not None and r["snr_db"] != fixed_snr:
                continue
            out[r["bits"]] = r[metric]
        return out

    paths = []

    p = out_dir / "nmse_vs_bits.csv"
    _write_table(p, "bits", bits, [(f"nmse_db_{m}", series("nmse_db", m, snrs[0])) for m in methods])
    paths.append(p)

    p = out_dir / "eta_vs_bits.csv"
    cols = []
    for m in methods:
        for s in snrs:
            cols.append((f"eta_{m}_snr{s:g}", series("eta", m, s)))
    _write_table(p, "bits", bits, cols)
    paths.append(p)

    p = out_dir / "eta_vs_snr.csv"
    cols = []
    for m in methods:
        for b in bits:
            by_snr = {r["snr_db"]: r["eta"] for r in rows if r["method"] == m and r["bits"] == b}
            cols.append((f"eta_{m}_b{b}", by_snr))
    _write_table(p, "snr_db", snrs, cols)
    paths.append(p)

    p = out_dir / "rho_gamma_vs_bits.csv"
    cols = []
    for m in methods:
        cols.append((f"rho_{m}", series("rho", m, snrs[0])))
        cols.append((f"gamma_{m}", series("gamma", m, snrs[0])))
    _write_table(p, "bits", bits, cols)
    paths.append(p)

    return paths
