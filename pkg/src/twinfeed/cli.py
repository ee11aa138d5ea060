"""Command-line front end: `twinfeed generate|run|report`.

Every option mirrors a config-file key of the same name; flags win over the
file. Exit codes: 0 success, 2 configuration, 3 IO/parse, 4 training,
5 protocol, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys

from .channel import generate_trace, lag1_autocorrelation, save_trace
from .errors import ConfigurationError, TwinfeedError
from .experiment import build_experiment_config, parse_kv_file, run_experiment, write_report_files


def _load_kv(args) -> dict:
    return parse_kv_file(args.config) if args.config else {}


def _common_overrides(args) -> dict:
    out = {
        "seed": args.seed,
        "out": args.out,
        "trace": args.trace,
        "bits": args.bits,
        "snr": args.snr,
        "mode": args.mode,
    }
    if getattr(args, "shared_twins", False):
        out["shared_twins"] = "true"
    return out


def cmd_generate(args) -> int:
    kv = _load_kv(args)
    exp = build_experiment_config(kv, _common_overrides(args))
    if exp.generator is None:
        raise ConfigurationError("generate needs generator settings, not a trace path")
    trace = generate_trace(exp.generator)
    out_path = args.out or kv.get("out") or "trace.ctrc"
    save_trace(trace, out_path, fmt="binary")
    print(f"wrote {out_path}: {len(trace)} samples, {trace.n_r}x{trace.n_t}, "
          f"sample_period={trace.sample_period:g}s")
    print(f"doppler={exp.generator.doppler_hz:.4g}Hz "
          f"lag1_autocorr={lag1_autocorrelation(trace):.6f}")
    return 0


def cmd_run(args) -> int:
    kv = _load_kv(args)
    exp = build_experiment_config(kv, _common_overrides(args))
    summary = run_experiment(exp)
    print(f"wrote {exp.out_dir}/results.csv "
          f"({len(summary['cells'])} cells, {len(exp.snr_db)} SNR points)")
    for name, cell in sorted(summary["cells"].items()):
        print(f"  {name}: steps={cell['steps']} bits={cell['cumulative_bits']} "
              f"skip={cell['skip_fraction']:.3f}")
    return 0


def cmd_report(args) -> int:
    paths = write_report_files(args.results, args.out or "report")
    for p in paths:
        print(f"wrote {p}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinfeed",
        description="Link-level CSI feedback simulator: twin-predictor hybrid vs quantize-and-feedback.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory (run/report) or trace file (generate)")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--bits", help="comma list of quantization bit widths")
        p.add_argument("--snr", help="comma list of SNR points in dB")
        p.add_argument("--mode", help="comma list of modes: conventional,hybrid,switching")
        p.add_argument("--trace", help="input trace file (skips the generator)")

    p_gen = sub.add_parser("generate", help="write a synthetic trace file")
    add_common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_run = sub.add_parser("run", help="run the protocol sweep and write result tables")
    add_common(p_run)
    p_run.add_argument("--shared-twins", action="store_true", dest="shared_twins",
                       help="train twins once at the largest bit width and reuse them")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="emit per-figure data files from a results CSV")
    p_rep.add_argument("results", help="results.csv produced by `run`")
    p_rep.add_argument("--out", help="output directory")
    p_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except TwinfeedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
