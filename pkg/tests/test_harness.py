import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nrisac import harness
from nrisac.config import ExperimentConfig
from nrisac.harness import (CSV_COLUMNS, ExperimentReport, compute_metrics, dumps, empirical_cdf, rmse,
                            run_experiment, run_single, worker_count)
from nrisac.scenario import ScenarioConfig

SHORT = ScenarioConfig().with_slots(240)


def rows_with_error(err, n=50):
    truth = np.linspace(0.1, 0.5, n)
    return {"slot": np.arange(n), "true_theta": truth, "est_theta": truth + err, "true_d": np.full(n, 40.0),
            "est_d": np.full(n, 40.0 - err), "true_v": np.full(n, 20.0), "est_v": np.full(n, 20.0),
            "ber": np.zeros(n), "throughput_mbps": np.full(n, 100.0), "event": [""] * n}


# ---------------------------------------------------------------- metrics

@given(st.floats(-5, 5))
def test_constant_error_rmse(err):
    m = compute_metrics(rows_with_error(err))
    assert m["theta"]["rmse"] == pytest.approx(abs(err), abs=1e-12)
    assert m["d"]["rmse"] == pytest.approx(abs(err), abs=1e-12)
    assert m["v"]["rmse"] == 0.0


def test_cdf_reaches_one_at_maximum():
    rng = np.random.default_rng(0)
    rows = rows_with_error(0.0)
    rows["est_theta"] = rows["true_theta"] + rng.standard_normal(50)
    m = compute_metrics(rows)
    assert m["theta"]["cdf_levels"][-1] == 1.0
    worst = np.max(np.abs(rows["est_theta"] - rows["true_theta"]))
    assert m["theta"]["cdf_errors"][-1] == pytest.approx(worst)
    assert empirical_cdf(np.abs(rows["est_theta"] - rows["true_theta"]), worst) == 1.0
    assert len(m["theta"]["cdf_errors"]) == 100
    assert np.all(np.diff(m["theta"]["cdf_errors"]) >= 0)


def test_pooled_ber_of_equal_segments():
    rows = rows_with_error(0.0, 40)
    rows["ber"] = np.r_[np.zeros(20), np.full(20, 0.1)]
    assert compute_metrics(rows)["ber"] == pytest.approx(0.05)
    rows["bits"] = np.r_[np.full(20, 100), np.full(20, 300)]
    assert compute_metrics(rows)["ber"] == pytest.approx(0.075)


def test_row_list_input_matches_columns():
    cols = rows_with_error(0.3, 5)
    as_list = [{k: cols[k][i] for k in cols} for i in range(5)]
    assert compute_metrics(as_list) == compute_metrics(cols)


def test_empty_input_raises():
    with pytest.raises(ValueError):
        compute_metrics([])
    with pytest.raises(ValueError):
        compute_metrics({c: [] for c in CSV_COLUMNS})


def test_rmse_ignores_non_finite_pairs():
    assert rmse([1.0, np.nan, 3.0], [0.0, 0.0, 3.0]) == pytest.approx(math.sqrt(0.5))
    assert math.isnan(rmse([np.nan], [0.0]))


def test_dumps_is_canonical():
    assert dumps({"b": float("nan"), "a": np.float64(1.5), "c": [np.int64(2), np.inf]}) == \
        '{"a": 1.5, "b": null, "c": [2, null]}'


# ---------------------------------------------------------------- reports

def test_connected_report_contents():
    rep = run_single("connected", "isac", ExperimentConfig(SHORT), 20.0, 0)
    assert not rep.failed
    assert rep.row_count == 240
    np.testing.assert_array_equal(rep.rows["slot"], np.arange(240))
    assert np.all(rep.rows["rs_overhead"] == 42 / 840)
    assert np.all(rep.rows["csirs_overhead"] == 0)
    recomputed = compute_metrics({c: rep.rows[c] for c in CSV_COLUMNS})
    assert {k: rep.summary[k] for k in recomputed} == recomputed
    lines = rep.csv_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 241


def test_conventional_overhead_columns():
    rep = run_single("connected", "conventional", ExperimentConfig(SHORT), 20.0, 0)
    assert np.all(rep.rows["rs_overhead"] == 74 / 840)
    assert np.all(rep.rows["csirs_overhead"] == 32 / 840)


@pytest.mark.parametrize("protocol,scheme", [("connected", "conventional"), ("bfr", "isac"),
                                             ("bfr", "conventional"), ("ia", "isac")])
def test_events_inside_trace(protocol, scheme):
    cfg = ExperimentConfig(ScenarioConfig().with_slots(1200))
    rep = run_single(protocol, scheme, cfg, 5.0, 1)
    assert not rep.failed
    n = cfg.scenario.slot_count
    assert rep.events
    assert all(0 <= e["slot"] < n for e in rep.events)
    for line in rep.events_jsonl().splitlines():
        json.loads(line)


def test_bfr_report_marks_onset_and_detection():
    rep = run_single("bfr", "isac", ExperimentConfig(ScenarioConfig().with_slots(1200)), 20.0, 0)
    names = [e["event"] for e in rep.events]
    assert "blockage_onset" in names and "failure_detected" in names
    assert 1.5 <= rep.summary["latency_ms"] <= 2.5
    assert rep.row_count == 1200


def test_ia_report_is_one_attempt():
    rep = run_single("ia", "conventional", ExperimentConfig(), 10.0, 2)
    assert rep.row_count == 1
    assert rep.summary["latency_ms"] > 0


def test_errors_become_events(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr(harness, "run_connected", boom)
    rep = run_single("connected", "isac", ExperimentConfig(SHORT), 20.0, 0)
    assert rep.failed and rep.row_count == 0
    assert rep.events[0]["message"] == "kaput"
    exp = run_experiment("isac", SHORT, [10, 20], [0], "connected", workers=1)
    assert all(r.failed for r in exp.runs)
    assert exp.curves()[0]["errors"] == 1


def test_unknown_protocol_is_recorded():
    assert run_single("warp", "isac", ExperimentConfig(SHORT), 0.0, 0).failed


# ------------------------------------------------------------- experiment

def test_experiment_is_deterministic_and_ordered():
    a = run_experiment("isac", SHORT, [20, 10], [1, 0], "connected", workers=1)
    b = run_experiment("isac", SHORT, [10, 20], [0, 1], "connected", workers=2)
    assert [(r.snr_db, r.seed) for r in a.runs] == [(10, 0), (10, 1), (20, 0), (20, 1)]
    assert [r.csv_text() for r in a.runs] == [r.csv_text() for r in b.runs]
    assert dumps(a.summary()) == dumps(b.summary())


def test_experiment_curves_and_write(tmp_path):
    exp = run_experiment("conventional", SHORT, [20], [0, 1], "bfr", workers=1)
    (point,) = exp.curves()
    assert point["runs"] == 2 and 0 <= point["detection_probability"] <= 1
    paths = exp.write(tmp_path)
    assert len(paths) == 4
    summary = json.loads((tmp_path / "bfr_conventional_summary.json").read_text())
    assert summary["curves"][0]["snr_db"] == 20
    assert (tmp_path / "bfr_conventional_snr20_seed1.csv").read_text() == exp.runs[1].csv_text()


def test_experiment_validation():
    with pytest.raises(ValueError):
        run_experiment("other", SHORT, [0], [0], "connected")
    with pytest.raises(ValueError):
        run_experiment("isac", SHORT, [0], [0], "other")
    with pytest.raises(ValueError):
        run_experiment("isac", SHORT, [], [0], "connected")


def test_worker_count(monkeypatch):
    monkeypatch.setenv("ISAC_SIM_THREADS", "3")
    assert worker_count(10) == 3 and worker_count(2) == 2
    monkeypatch.setenv("ISAC_SIM_THREADS", "zero")
    with pytest.raises(ValueError):
        worker_count(4)
    monkeypatch.setenv("ISAC_SIM_THREADS", "0")
    with pytest.raises(ValueError):
        worker_count(4)
    monkeypatch.delenv("ISAC_SIM_THREADS")
    assert 1 <= worker_count(1000)


@pytest.mark.slow
def test_ia_detection_probability_is_nearly_isotonic():
    grid = list(range(2, 12))
    exp = run_experiment("isac", ScenarioConfig(), grid, range(200), "ia")
    p = [c["detection_probability"] for c in exp.curves()]
    violations = sum(b < a for a, b in zip(p, p[1:]))
    assert violations <= 2
    assert p[-1] > p[0]
