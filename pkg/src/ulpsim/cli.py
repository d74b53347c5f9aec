"""Command line front-end.

Subcommands:
  generate-trace  write a synthetic frame trace to a file
  run             one scheme/channel/redundancy combination, CSV + JSON out
  report          convert a metrics JSON back into the two CSV files
  sweep           cartesian product of schemes x redundancy rates x channels

Every flag can also come from a config file of key=value lines (# starts a
comment); flags given on the command line win. Exit status is 0 on
success, 2 for configuration errors, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import (
    SCHEMES,
    ChannelSpec,
    ConfigError,
    ExperimentConfig,
    StreamSpec,
    build_trace,
    metrics_from_json,
    metrics_to_json,
    report,
    run,
    sweep,
)
from .stream import SizeModel, TraceError, generate_trace, save_trace


def _read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--trace-file", help="read frames from this trace file")
    parser.add_argument("--gop-length", type=int, default=22)
    parser.add_argument("--b-run", type=int, default=2)
    parser.add_argument("--n-gops", type=int, default=250)
    parser.add_argument("--framerate", type=float, default=25.0)
    parser.add_argument("--size-mean", default="170,62,27.5", help="I,P,B packets")
    parser.add_argument("--size-stddev-frac", type=float, default=0.15)
    parser.add_argument("--trace-seed", type=int, default=1)
    parser.add_argument("--plr", type=float, default=0.01)
    parser.add_argument("--abl", type=float, default=10.0)
    parser.add_argument("--channel-name", default="")
    parser.add_argument("--initial-state", default="stationary", choices=["stationary", "G", "B"])
    parser.add_argument("--redundancy-rate", type=float, default=0.05)
    parser.add_argument("--r-protection", type=float, default=None, help="bit/s, overrides redundancy rate")
    parser.add_argument("--rows-d", type=int, default=4)
    parser.add_argument("--cols-l", type=int, default=20)
    parser.add_argument("--n-frames-dfs", type=int, default=5)
    parser.add_argument("--p-coverage", type=float, default=95.0)
    parser.add_argument("--packet-bytes", type=int, default=1356)
    parser.add_argument("--seed-list", default="0", help="comma-separated run seeds")
    parser.add_argument("--fec-lossless", action="store_true", default=None)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("-o", "--outdir", default="out")


def _merge_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Apply config-file values for every flag the command line left at its
    default."""
    if not getattr(args, "config", None):
        return
    values = _read_config_file(args.config)
    given = {
        a.lstrip("-").replace("-", "_").split("=", 1)[0] for a in sys.argv if a.startswith("--")
    }
    for key, raw in values.items():
        if key in given or not hasattr(args, key):
            if not hasattr(args, key):
                raise ConfigError(f"unknown config key {key!r}")
            continue
        current = getattr(args, key)
        if isinstance(current, bool) or (key == "fec_lossless"):
            setattr(args, key, raw.lower() in ("1", "true", "yes", "on"))
        elif isinstance(current, int):
            setattr(args, key, int(raw))
        elif isinstance(current, float):
            setattr(args, key, float(raw))
        else:
            setattr(args, key, raw)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    means = tuple(float(v) for v in str(args.size_mean).split(","))
    if len(means) != 3:
        raise ConfigError("--size-mean needs three comma-separated values (I,P,B)")
    seeds = tuple(int(v) for v in str(args.seed_list).split(",") if v.strip())
    stream = StreamSpec(
        path=args.trace_file,
        gop_length=args.gop_length,
        b_run=args.b_run,
        n_gops=args.n_gops,
        framerate=args.framerate,
        size_mean=means,
        size_stddev_frac=args.size_stddev_frac,
        seed=args.trace_seed,
    )
    channel = ChannelSpec(
        plr=args.plr, abl=args.abl, name=args.channel_name, initial_state=args.initial_state
    )
    return ExperimentConfig(
        stream=stream,
        channel=channel,
        scheme=getattr(args, "scheme", "va_ulp"),
        redundancy_rate=args.redundancy_rate,
        r_protection=args.r_protection,
        rows_d=args.rows_d,
        cols_l=args.cols_l,
        n_frames_dfs=args.n_frames_dfs,
        p_coverage=args.p_coverage,
        packet_bytes=args.packet_bytes,
        seeds=seeds,
        fec_lossless=bool(args.fec_lossless),
    )


def _cmd_generate_trace(args: argparse.Namespace) -> int:
    means = tuple(float(v) for v in str(args.size_mean).split(","))
    mean = dict(zip(("I", "P", "B"), means))
    model = SizeModel(
        mean=mean, stddev={t: m * args.size_stddev_frac for t, m in mean.items()}
    )
    trace = generate_trace(
        gop_length=args.gop_length,
        b_run=args.b_run,
        n_gops=args.n_gops,
        size_model=model,
        framerate=args.framerate,
        seed=args.trace_seed,
    )
    save_trace(trace, args.output)
    bitrate = trace.bitrate(args.packet_bytes * 8)
    print(f"wrote {len(trace)} frames to {args.output} ({bitrate / 1e6:.2f} Mbit/s)")
    return 0


def _print_summary(results) -> None:
    for r in results:
        line = (
            f"{r.scheme:7s} {r.channel:14s} red={r.redundancy_rate:.2%} "
            f"overall={r.mean_recovery():.3f}"
        )
        for t in ("I", "P", "B"):
            line += f" {t}={r.mean_recovery(t):.3f}"
        line += f" distortion={r.mean_distortion():.1f}"
        print(line)


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    result = run(config, workers=args.workers)
    rec, qual = report([result], args.outdir)
    metrics_to_json([result], f"{args.outdir}/metrics.json")
    _print_summary([result])
    print(f"wrote {rec}, {qual}, {args.outdir}/metrics.json")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    schemes = tuple(s.strip() for s in args.schemes.split(",") if s.strip())
    rates = tuple(float(v) for v in args.redundancy_rates.split(","))
    channels = []
    for spec in args.channels.split(";"):
        if not spec.strip():
            continue
        name, plr, abl = spec.split(",")
        channels.append(ChannelSpec(plr=float(plr), abl=float(abl), name=name.strip()))
    results = sweep(
        config,
        schemes=schemes,
        redundancy_rates=rates,
        channels=tuple(channels) or None,
        workers=args.workers,
    )
    rec, qual = report(results, args.outdir)
    metrics_to_json(results, f"{args.outdir}/metrics.json")
    _print_summary(results)
    print(f"wrote {rec}, {qual}, {args.outdir}/metrics.json")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    results = metrics_from_json(args.metrics)
    rec, qual = report(results, args.outdir)
    print(f"wrote {rec}, {qual}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ulpsim",
        description="Frame-aware FEC protection schemes over a simulated bursty channel",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate-trace", help="write a synthetic frame trace")
    _add_common(p_gen)
    p_gen.add_argument("output", help="trace file to write")

    p_run = sub.add_parser("run", help="run one experiment combination")
    _add_common(p_run)
    p_run.add_argument("--scheme", default="va_ulp", choices=list(SCHEMES))

    p_sweep = sub.add_parser("sweep", help="run a scheme/rate/channel grid")
    _add_common(p_sweep)
    p_sweep.add_argument("--schemes", default=",".join(SCHEMES))
    p_sweep.add_argument("--redundancy-rates", default="0.05,0.10,0.15,0.20")
    p_sweep.add_argument(
        "--channels",
        default="adsl,0.01,10;wifi,0.02,20",
        help="semicolon-separated name,plr,abl triples",
    )

    p_rep = sub.add_parser("report", help="CSV files from a metrics JSON")
    p_rep.add_argument("metrics", help="metrics.json written by run/sweep")
    p_rep.add_argument("-o", "--outdir", default="out")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command != "report":
            _merge_config_file(args, parser)
        if args.command == "generate-trace":
            return _cmd_generate_trace(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_report(args)
    except (ConfigError, TraceError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
