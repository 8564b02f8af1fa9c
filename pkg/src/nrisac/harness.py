"""
Experiment orchestration: one protocol run per (SNR, seed), per-slot report
rows, aggregate metrics and deterministic file output.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError
from .frame import RS_WINDOW_SLOTS, SYMBOLS_PER_SLOT
from .protocols.bfr import run_bfr
from .protocols.common import LinkSetup, seed_sequence
from .protocols.connected import run_connected
from .protocols.ia import run_initial_access
from .scenario import Blockage, ScenarioConfig, generate_scenario

PROTOCOLS = ("ia", "connected", "bfr")
SCHEMES = ("conventional", "isac")
CSV_COLUMNS = ("slot", "true_theta", "est_theta", "true_d", "est_d", "true_v", "est_v", "ber",
               "throughput_mbps", "event")
# Kept in memory only; the CSV layout is fixed.
EXTRA_COLUMNS = ("rs_overhead", "csirs_overhead")
CDF_LEVELS = np.linspace(0.01, 1.0, 100)
THREADS_ENV = "ISAC_SIM_THREADS"
# Used by the bfr protocol when the scenario defines no blockage.
DEFAULT_BLOCKAGE = Blockage(start_slot=800, duration_slots=400)


def _finite_or_none(x):
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _finite_or_none(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_finite_or_none(v) for v in x]
    return x


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, non-finite floats as ``null``."""
    return json.dumps(_finite_or_none(obj), sort_keys=True)


# ------------------------------------------------------------------ metrics

def empirical_cdf(samples, x) -> np.ndarray:
    """Fraction of ``samples`` at or below each ``x``."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    return np.searchsorted(s, np.asarray(x, dtype=float), side="right") / s.size


def rmse(est, truth) -> float:
    """Root mean squared error over the pairs where both values are finite."""
    e = np.asarray(est, dtype=float) - np.asarray(truth, dtype=float)
    e = e[np.isfinite(e)]
    return float(np.sqrt(np.mean(e**2))) if e.size else float("nan")


def _error_stats(est, truth) -> dict:
    e = np.abs(np.asarray(est, dtype=float) - np.asarray(truth, dtype=float))
    e = e[np.isfinite(e)]
    if not e.size:
        return {"rmse": float("nan"), "cdf_levels": [], "cdf_errors": []}
    return {"rmse": float(np.sqrt(np.mean(e**2))),
            "cdf_levels": CDF_LEVELS.round(2).tolist(),
            "cdf_errors": np.quantile(e, CDF_LEVELS).tolist()}


def compute_metrics(rows) -> dict:
    """
    Summary of report rows.

    Parameters
    ----------
    rows : mapping of column name to sequence, or sequence of row mappings
        Needs the numeric CSV columns. An optional ``bits`` column weights the
        BER pooling; otherwise all rows carry equal bits.

    Returns
    -------
    dict
        RMSE and 100-quantile absolute-error CDF for angle, range and speed,
        pooled BER and mean throughput.
    """
    if not isinstance(rows, dict):
        rows = list(rows)
        if not rows:
            raise ValueError("cannot compute metrics of an empty report")
        rows = {k: [r[k] for r in rows] for k in rows[0]}
    cols = {k: np.asarray(v, dtype=float) for k, v in rows.items() if k != "event"}
    n = len(cols.get("slot", ()))
    if n == 0:
        raise ValueError("cannot compute metrics of an empty report")
    ber = cols["ber"]
    ok = np.isfinite(ber)
    if "bits" in cols:
        bits = cols["bits"][ok]
        pooled = float(np.sum(ber[ok] * bits) / np.sum(bits)) if np.sum(bits) else float("nan")
    else:
        pooled = float(np.mean(ber[ok])) if ok.any() else float("nan")
    tp = cols["throughput_mbps"]
    return {
        "rows": n,
        "theta": _error_stats(cols["est_theta"], cols["true_theta"]),
        "d": _error_stats(cols["est_d"], cols["true_d"]),
        "v": _error_stats(cols["est_v"], cols["true_v"]),
        "ber": pooled,
        "throughput_mbps": float(np.mean(tp[np.isfinite(tp)])) if np.isfinite(tp).any() else float("nan"),
    }


# ------------------------------------------------------------------ reports

@dataclass
class RunReport:
    """Rows, events and summary of one protocol run."""

    protocol: str
    scheme: str
    snr_db: float
    seed: int
    rows: dict
    events: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def row_count(self) -> int:
        return len(self.rows.get("slot", ()))

    @property
    def failed(self) -> bool:
        return any(e["event"] == "error" for e in self.events)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for i in range(self.row_count):
            out = []
            for col in CSV_COLUMNS:
                v = self.rows[col][i]
                if col == "slot":
                    out.append(str(int(v)))
                elif col == "event":
                    out.append(v)
                else:
                    out.append(repr(float(v)))
            writer.writerow(out)
        return buf.getvalue()

    def events_jsonl(self) -> str:
        return "".join(dumps({"snr_db": self.snr_db, "seed": self.seed, **e}) + "\n" for e in self.events)


def _empty_rows() -> dict:
    rows = {c: np.zeros(0) for c in CSV_COLUMNS + EXTRA_COLUMNS}
    rows["slot"] = np.zeros(0, dtype=int)
    rows["event"] = []
    return rows


def _event_column(n: int, events: list) -> list:
    names = [[] for _ in range(n)]
    for e in events:
        if 0 <= e["slot"] < n:
            names[e["slot"]].append(e["event"])
    return [";".join(x) for x in names]


def _overhead_columns(link: LinkSetup, scheme: str, n: int) -> dict:
    rs = link.plan(scheme).rs_per_rb_window()
    window_res = 12 * SYMBOLS_PER_SLOT * RS_WINDOW_SLOTS
    return {"rs_overhead": np.full(n, (rs["dmrs"] + rs["csirs"]) / window_res),
            "csirs_overhead": np.full(n, rs["csirs"] / window_res)}


def _connected_rows(scheme, world, run, link, events):
    n = len(run.est_theta)
    rows = {"slot": np.arange(n), "true_theta": world.azimuth[:n], "est_theta": run.est_theta,
            "true_d": world.range[:n], "est_d": run.est_d, "true_v": world.speed[:n], "est_v": run.est_v,
            "ber": np.asarray(run.ber, dtype=float).copy(),
            "throughput_mbps": np.asarray(run.throughput, dtype=float).copy()}
    rows.update(_overhead_columns(link, scheme, n))
    rows["event"] = _event_column(n, events)
    return rows


def _run_events(run) -> list:
    return [{"slot": int(slot), "event": name, **fields} for slot, name, fields in run.events]


def _connected_report(scheme, cfg: ExperimentConfig, snr_db, seed) -> RunReport:
    world_seed, run_seed = seed_sequence(seed).spawn(2)
    world = generate_scenario(cfg.scenario, world_seed)
    run = run_connected(scheme, world, snr_db, run_seed, cfg.link)
    events = _run_events(run)
    rows = _connected_rows(scheme, world, run, cfg.link, events)
    summary = compute_metrics(rows)
    summary["rs_overhead"] = float(rows["rs_overhead"][0]) if len(rows["slot"]) else float("nan")
    return RunReport("connected", scheme, snr_db, seed, rows, events, summary)


def _bfr_report(scheme, cfg: ExperimentConfig, snr_db, seed, strategy) -> RunReport:
    scenario = cfg.scenario
    if scenario.blockage is None:
        scenario = replace(scenario, blockage=DEFAULT_BLOCKAGE)
    res = run_bfr(scheme, scenario, snr_db, seed, strategy, cfg.link)
    run, world = res.connected, res.world
    events = _run_events(run)
    n = len(run.est_theta)
    blk = scenario.blockage
    summary_extra = {"detected": res.event is not None, "false_alarm": res.false_alarm is not None,
                     "latency_ms": float("nan"), "radio_link_failure": False,
                     "recovery_strategy": strategy or ("beam_training" if scheme == "conventional" else "sub6_fallback")}
    if res.false_alarm is not None:
        events.append({"slot": res.false_alarm.detected_slot, "event": "false_alarm"})
    if blk.start_slot < n:
        events.append({"slot": blk.start_slot, "event": "blockage_onset"})
    rows = _connected_rows(scheme, world, run, cfg.link, [])
    ev = res.event
    if ev is not None:
        summary_extra.update(latency_ms=ev.latency_ms, radio_link_failure=ev.radio_link_failure)
        events.append({"slot": ev.detected_slot, "event": "failure_detected", "latency_ms": ev.latency_ms})
        rec = res.recovery
        if rec is not None:
            down = slice(ev.detected_slot + 1, n if ev.recovered_slot is None else min(ev.recovered_slot, n))
            rows["throughput_mbps"][down] = 0.0
            if rec.slot_ber.size:
                lo, hi = rec.window
                rows["ber"][lo:hi] = rec.slot_ber
                rows["throughput_mbps"][lo:hi] = rec.slot_throughput
            summary_extra.update(recovery_ber=rec.ber, recovery_throughput_mbps=rec.throughput_mbps,
                                 blocked_ber=rec.blocked_ber,
                                 **{k: v for k, v in rec.details.items() if k in ("post_snr_db",)})
            if ev.radio_link_failure:
                events.append({"slot": ev.detected_slot, "event": "radio_link_failure"})
            elif ev.recovered_slot is not None and ev.recovered_slot < n:
                events.append({"slot": ev.recovered_slot, "event": "recovered"})
    events.sort(key=lambda e: (e["slot"], e["event"]))
    rows["event"] = _event_column(n, events)
    summary = compute_metrics(rows)
    summary.update(summary_extra)
    return RunReport("bfr", scheme, snr_db, seed, rows, events, summary)


def _ia_report(scheme, cfg: ExperimentConfig, snr_db, seed) -> RunReport:
    out = run_initial_access(scheme, cfg.scenario, snr_db, seed, cfg.link)
    nan = np.array([np.nan])
    rows = {"slot": np.array([0]), "true_theta": np.array([out.true_angle.azimuth]),
            "est_theta": np.array([out.chosen_angle.azimuth]), "true_d": nan, "est_d": nan,
            "true_v": nan, "est_v": nan, "ber": nan, "throughput_mbps": nan,
            "event": ["access_complete"]}
    rows.update(_overhead_columns(cfg.link, scheme, 1))
    events = [{"slot": 0, "event": "access_complete", **out.to_dict()}]
    summary = compute_metrics(rows)
    summary.update(out.to_dict())
    return RunReport("ia", scheme, snr_db, seed, rows, events, summary)


def run_single(protocol: str, scheme: str, cfg: ExperimentConfig, snr_db: float, seed: int,
               strategy: str | None = None) -> RunReport:
    """One run; exceptions become an ``error`` event instead of propagating."""
    try:
        if protocol == "connected":
            return _connected_report(scheme, cfg, snr_db, seed)
        if protocol == "bfr":
            return _bfr_report(scheme, cfg, snr_db, seed, strategy)
        if protocol == "ia":
            return _ia_report(scheme, cfg, snr_db, seed)
        raise ValueError(f"unknown protocol {protocol!r}")
    except Exception as exc:  # recorded, the batch carries on
        event = {"slot": 0, "event": "error", "type": type(exc).__name__, "message": str(exc)}
        return RunReport(protocol, scheme, snr_db, seed, _empty_rows(), [event], {"error": str(exc)})


def _run_task(args) -> RunReport:
    return run_single(*args)


# --------------------------------------------------------------- experiment

def worker_count(n_tasks: int) -> int:
    """Worker processes: ``ISAC_SIM_THREADS`` if set, else the CPU count, at most ``n_tasks``."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
        if cap < 1:
            raise ConfigError(f"{THREADS_ENV} must be positive, got {cap}")
    return max(1, min(cap, n_tasks))


@dataclass
class ExperimentReport:
    """Runs of one protocol and scheme over an SNR grid and seed list, ordered by (snr, seed)."""

    protocol: str
    scheme: str
    runs: list

    @property
    def snr_grid(self) -> list:
        return sorted({r.snr_db for r in self.runs})

    def at(self, snr_db: float) -> list:
        return [r for r in self.runs if r.snr_db == snr_db]

    def curves(self) -> list:
        """Per-SNR aggregates: RMSE, pooled BER, throughput and detection rates."""
        out = []
        for snr in self.snr_grid:
            runs = [r for r in self.at(snr) if not r.failed]
            point = {"snr_db": snr, "runs": len(self.at(snr)), "errors": len(self.at(snr)) - len(runs)}
            if runs:
                rows = {c: np.concatenate([np.asarray(r.rows[c], dtype=float) for r in runs])
                        for c in CSV_COLUMNS if c != "event"}
                m = compute_metrics(rows)
                point.update(theta_rmse=m["theta"]["rmse"], d_rmse=m["d"]["rmse"], v_rmse=m["v"]["rmse"],
                             ber=m["ber"], throughput_mbps=m["throughput_mbps"])
                if self.protocol == "ia":
                    point["detection_probability"] = float(np.mean([r.summary["detected_by_radar"] for r in runs]))
                    point["fallback_rate"] = float(np.mean([r.summary["used_fallback"] for r in runs]))
                    point["mean_latency_ms"] = float(np.mean([r.summary["latency_ms"] for r in runs]))
                if self.protocol == "bfr":
                    point["detection_probability"] = float(np.mean([r.summary["detected"] for r in runs]))
                    point["false_alarm_rate"] = float(np.mean([r.summary["false_alarm"] for r in runs]))
                    lat = [r.summary["latency_ms"] for r in runs if r.summary["detected"]]
                    point["mean_latency_ms"] = float(np.mean(lat)) if lat else float("nan")
            out.append(point)
        return out

    def summary(self) -> dict:
        return {"protocol": self.protocol, "scheme": self.scheme, "curves": self.curves(),
                "runs": [{"snr_db": r.snr_db, "seed": r.seed, **r.summary} for r in self.runs]}

    def write(self, out_dir) -> list:
        """Write per-run CSVs, the event log and the JSON summary; returns the paths."""
        os.makedirs(out_dir, exist_ok=True)
        stem = f"{self.protocol}_{self.scheme}"
        paths = []
        for r in self.runs:
            p = os.path.join(out_dir, f"{stem}_snr{r.snr_db:g}_seed{r.seed}.csv")
            with open(p, "w", newline="") as fh:
                fh.write(r.csv_text())
            paths.append(p)
        p = os.path.join(out_dir, f"{stem}_events.jsonl")
        with open(p, "w") as fh:
            fh.write("".join(r.events_jsonl() for r in self.runs))
        paths.append(p)
        p = os.path.join(out_dir, f"{stem}_summary.json")
        with open(p, "w") as fh:
            fh.write(dumps(self.summary()) + "\n")
        paths.append(p)
        return paths


def run_experiment(scheme: str, scenario, snr_grid, seeds, protocol: str, link: LinkSetup | None = None,
                   strategy: str | None = None, workers: int | None = None) -> ExperimentReport:
    """
    Run ``protocol`` for every (SNR, seed) pair.

    Parameters
    ----------
    scheme : {"conventional", "isac"}
    scenario : ScenarioConfig or ExperimentConfig
    snr_grid, seeds : iterables of numbers
    protocol : {"ia", "connected", "bfr"}
    workers : int, optional
        Process count; defaults to :func:`worker_count`.

    Runs are independent and may execute in parallel; the report lists them
    sorted by (snr, seed) regardless of completion order. A run that raises
    is recorded with an ``error`` event.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if isinstance(scenario, ScenarioConfig):
        cfg = ExperimentConfig(scenario, link or LinkSetup())
    else:
        cfg = scenario if link is None else ExperimentConfig(scenario.scenario, link)
    tasks = sorted({(float(s), int(k)) for s in snr_grid for k in seeds})
    if not tasks:
        raise ValueError("empty SNR grid or seed list")
    args = [(protocol, scheme, cfg, snr, seed, strategy) for snr, seed in tasks]
    n_workers = worker_count(len(args)) if workers is None else max(1, min(workers, len(args)))
    if n_workers == 1:
        runs = [_run_task(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            runs = list(pool.map(_run_task, args))
    return ExperimentReport(protocol, scheme, runs)
