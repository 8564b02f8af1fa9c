import json
import os
import subprocess
import sys

import pytest

from nrisac.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_SNR, EXIT_USAGE, main, parse_snr_list


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_snr_list():
    assert parse_snr_list("0, 10,20.5") == [0.0, 10.0, 20.5]
    assert parse_snr_list("-5") == [-5.0]
    for bad in ("", "1,,2", "a", "1,nan", "inf"):
        with pytest.raises(ValueError):
            parse_snr_list(bad)


def test_overhead_table(capsys, tmp_path):
    code, out, _ = run(["overhead", "--scheme", "both", "--out", str(tmp_path)], capsys)
    assert code == EXIT_OK
    isac_line = next(l for l in out.splitlines() if l.startswith("isac"))
    assert "0.43243" in isac_line and "0.75000" in isac_line
    plan = json.loads((tmp_path / "frame_plan_isac_mu3.json").read_text())
    assert plan["metrics"]["training_reduction_vs"] == 0.75
    assert (tmp_path / "overhead_manifest.json").exists()


def test_connected_rerun_is_byte_identical(capsys, tmp_path):
    outs = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        code, _, _ = run(["connected", "--scheme", "both", "--snr", "25", "--seed", "7", "--slots", "160",
                          "--out", str(out_dir)], capsys)
        assert code == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    assert outs[0] == outs[1]
    assert {"connected_isac_snr25_seed7.csv", "connected_conventional_snr25_seed7.csv",
            "connected_manifest.json"} <= set(outs[0])


def test_manifest_contents(capsys, tmp_path):
    run(["bfr", "--scheme", "isac", "--snr", "10,20", "--slots", "1200", "--out", str(tmp_path)], capsys)
    m = json.loads((tmp_path / "bfr_manifest.json").read_text())
    assert m["seeds"] == [0] and m["snr_db"] == [10.0, 20.0]
    assert len(m["config_sha256"]) == 64 and len(m["defaults_sha256"]) == 64
    assert m["config"]["scenario"]["slot_count"] == 1200
    assert set(m["versions"]) == {"nrisac", "numpy", "scipy"}


def test_config_file_is_applied(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": {"slot_count": 80, "speed_jitter_std": 0.0},
                               "link": {"radar_subcarriers": 128}}))
    code, _, _ = run(["connected", "--scheme", "isac", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == EXIT_OK
    m = json.loads((tmp_path / "o" / "connected_manifest.json").read_text())
    assert m["config"]["link"]["radar_subcarriers"] == 128
    csv = (tmp_path / "o" / "connected_isac_snr20_seed0.csv").read_text().splitlines()
    assert len(csv) == 81


def test_missing_config_names_path(capsys, tmp_path):
    missing = tmp_path / "nope.json"
    code, _, err = run(["ia", "--config", str(missing), "--out", str(tmp_path)], capsys)
    assert code == EXIT_CONFIG
    assert str(missing) in err


@pytest.mark.parametrize("content", ["{not json", json.dumps({"scenario": {"warp": 1}}),
                                     json.dumps({"link": {"measurement_mode": "psychic"}}), "[]"])
def test_bad_config_is_config_error(capsys, tmp_path, content):
    cfg = tmp_path / "bad.json"
    cfg.write_text(content)
    code, _, err = run(["connected", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == EXIT_CONFIG
    assert str(cfg) in err


def test_distinct_exit_codes(capsys, tmp_path):
    assert run(["teleport"], capsys)[0] == EXIT_USAGE
    assert run(["ia", "--snr", "1,x", "--out", str(tmp_path)], capsys)[0] == EXIT_SNR
    assert run(["ia", "--slots", "0", "--out", str(tmp_path)], capsys)[0] == EXIT_CONFIG
    assert run(["sweep", "--protocols", "ia,warp", "--out", str(tmp_path)], capsys)[0] == EXIT_USAGE
    assert len({EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SNR}) == 5


def test_runtime_error_exit(capsys, tmp_path, monkeypatch):
    from nrisac import harness

    def boom(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr(harness, "run_connected", boom)
    code, _, err = run(["connected", "--scheme", "isac", "--slots", "40", "--out", str(tmp_path)], capsys)
    assert code == EXIT_RUNTIME
    assert "runtime error" in err
    events = (tmp_path / "connected_isac_events.jsonl").read_text()
    assert "kaput" in events


def test_unwritable_output_is_runtime_error(capsys, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, _ = run(["ia", "--out", str(blocker / "sub")], capsys)
    assert code == EXIT_RUNTIME


def test_sweep_runs_cross_product(capsys, tmp_path):
    code, out, _ = run(["sweep", "--protocols", "ia,connected", "--slots", "40", "--runs", "2",
                        "--out", str(tmp_path)], capsys)
    assert code == EXIT_OK
    assert len([l for l in out.splitlines() if l.strip()]) == 4
    names = {p.name for p in tmp_path.iterdir()}
    assert {"ia_isac_summary.json", "connected_conventional_summary.json", "sweep_manifest.json"} <= names


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nrisac.cli", "overhead"], capture_output=True, text=True,
                          cwd=tmp_path, env={**os.environ})
    assert proc.returncode == 0
    assert "0.43243" in proc.stdout
