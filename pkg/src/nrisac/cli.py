"""
Command-line entry point.

Subcommands ``ia``, ``connected`` and ``bfr`` run one protocol over an SNR
list and seed range; ``sweep`` runs the cross product of protocols and
schemes; ``overhead`` prints the frame-plan overhead table. Results go to
``--out`` as CSV per run, a JSON-lines event log, a JSON summary and a
manifest.

Exit status: 0 success, 1 usage error, 2 configuration error, 3 runtime
error (including runs that recorded an error event), 4 invalid SNR list.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np
import scipy

from . import __version__, constants
from .config import ExperimentConfig, load_config, with_overrides
from .errors import ConfigError
from .frame import build_frame_plan, overhead_metrics
from .harness import PROTOCOLS, SCHEMES, dumps, run_experiment
from .protocols.bfr import STRATEGIES

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SNR = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_snr_list(text: str) -> list[float]:
    """``"0,10,20"`` to floats; raises ValueError on empty, malformed or non-finite entries."""
    parts = [p.strip() for p in text.split(",")]
    if not text.strip() or any(not p for p in parts):
        raise ValueError(f"invalid SNR list {text!r}")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"invalid SNR list {text!r}") from exc
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"invalid SNR list {text!r}: values must be finite")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nrisac", description="NR beam management link-level simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, slots_help="slots per run (default: the configured trace length)"):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=0, help="first seed (default 0)")
        p.add_argument("--runs", type=int, default=1, help="number of consecutive seeds (default 1)")
        p.add_argument("--snr", default="20", help="comma-separated SNR list in dB (default 20)")
        p.add_argument("--out", default="results", help="output directory (default ./results)")
        p.add_argument("--scheme", choices=SCHEMES + ("both",), default="both")
        p.add_argument("--subband", type=int, help="radar subcarriers per processing window")
        p.add_argument("--slots", type=int, help=slots_help)

    for name, text in (("ia", "initial access latency and angle error"),
                       ("connected", "connected-mode tracking, BER and throughput"),
                       ("bfr", "beam failure detection and recovery")):
        p = sub.add_parser(name, help=text)
        common(p)
        if name == "bfr":
            p.add_argument("--strategy", choices=STRATEGIES,
                           help="recovery strategy (default: beam_training / sub6_fallback)")
    p = sub.add_parser("sweep", help="cross product of protocols and schemes")
    common(p)
    p.add_argument("--protocols", default=",".join(PROTOCOLS), help="comma-separated subset of ia,connected,bfr")
    p = sub.add_parser("overhead", help="frame-plan overhead table and plan JSON")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--scheme", choices=SCHEMES + ("both",), default="both")
    p.add_argument("--mu", type=int, default=constants.NUMEROLOGY, help="numerology (default 3)")
    p.add_argument("--out", help="directory for the plan JSON files")
    return parser


def _defaults_digest() -> str:
    values = {k: v for k, v in vars(constants).items() if k.isupper()}
    values["default_config"] = ExperimentConfig().to_dict()
    return hashlib.sha256(json.dumps(values, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(out_dir: str, command: str, cfg: ExperimentConfig, settings: dict) -> str:
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "defaults_sha256": _defaults_digest(),
        "versions": {"nrisac": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        **settings,
    }
    path = os.path.join(out_dir, f"{command}_manifest.json")
    with open(path, "w") as fh:
        fh.write(dumps(manifest) + "\n")
    return path


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(cfg, getattr(args, "slots", None), getattr(args, "subband", None))


def _schemes(choice: str) -> tuple:
    return SCHEMES if choice == "both" else (choice,)


def _format_point(protocol: str, scheme: str, p: dict) -> str:
    keys = {"ia": ("detection_probability", "fallback_rate", "mean_latency_ms", "theta_rmse"),
            "connected": ("theta_rmse", "ber", "throughput_mbps"),
            "bfr": ("detection_probability", "false_alarm_rate", "mean_latency_ms", "ber", "throughput_mbps")}
    fields = " ".join(f"{k}={p.get(k, float('nan')):.5g}" if p.get(k) is not None else f"{k}=nan"
                      for k in keys[protocol])
    return f"{protocol:9s} {scheme:12s} snr={p['snr_db']:g} dB runs={p['runs']} errors={p['errors']} {fields}"


def _run_protocols(args, protocols) -> int:
    try:
        snrs = parse_snr_list(args.snr)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SNR
    if args.runs < 1:
        raise UsageError("--runs must be positive")
    cfg = _load(args)
    seeds = list(range(args.seed, args.seed + args.runs))
    os.makedirs(args.out, exist_ok=True)
    failed = 0
    for protocol in protocols:
        for scheme in _schemes(args.scheme):
            report = run_experiment(scheme, cfg, snrs, seeds, protocol, strategy=getattr(args, "strategy", None))
            report.write(args.out)
            for point in report.curves():
                print(_format_point(protocol, scheme, point))
            failed += sum(r.failed for r in report.runs)
    settings = {"seed": args.seed, "seeds": seeds, "snr_db": snrs, "scheme": args.scheme,
                "protocols": list(protocols), "strategy": getattr(args, "strategy", None)}
    write_manifest(args.out, args.command, cfg, settings)
    if failed:
        print(f"error: {failed} run(s) recorded a runtime error; see the event log", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _overhead(args) -> int:
    cfg = _load(args)
    baseline = build_frame_plan("conventional", args.mu, n_prb=cfg.link.n_prb)
    print(f"{'scheme':14s}{'oh_fraction':>14s}{'rs_reduction':>14s}{'training_reduction':>20s}")
    for scheme in _schemes(args.scheme):
        plan = build_frame_plan(scheme, args.mu, n_prb=cfg.link.n_prb)
        m = overhead_metrics(plan, baseline)
        print(f"{scheme:14s}{m.oh_fraction:14.5f}{m.rs_reduction_vs:14.5f}{m.training_reduction_vs:20.5f}")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, f"frame_plan_{scheme}_mu{args.mu}.json"), "w") as fh:
                fh.write(dumps({**plan.to_dict(), "metrics": m._asdict()}) + "\n")
    if args.out:
        write_manifest(args.out, "overhead", cfg, {"scheme": args.scheme, "mu": args.mu})
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "overhead":
            return _overhead(args)
        if args.command == "sweep":
            protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
            bad = [p for p in protocols if p not in PROTOCOLS]
            if bad or not protocols:
                raise UsageError(f"unknown protocol(s): {', '.join(bad) or '(none)'}")
            return _run_protocols(args, protocols)
        return _run_protocols(args, (args.command,))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
