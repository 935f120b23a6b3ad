import json
import re
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdcdecoy.cli import ExperimentSpec, ValidationError, main, run_experiment
from pdcdecoy.config import SystemConfig
from pdcdecoy.engine import CountsTable, run
from pdcdecoy.output import COUNTS_COLUMNS, Result, emit, load_counts, render

FAST = SystemConfig(n_triggers=50_000)


def strip_time(text):
    return re.sub(r"created_utc.*", "", text)


def test_simulate_csv_roundtrips_through_analyze(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--triggers", "50000", "--eta-c", "0.5", "1.0", "--out", str(out)]) == 0
    loaded = load_counts(out)
    assert len(loaded) == 2
    direct = run(SystemConfig(n_triggers=50_000, eta_C=0.5))
    assert loaded[0][1].to_dict() == direct.to_dict()
    assert loaded[0][0]["eta_C"] == 0.5

    an = tmp_path / "an.json"
    assert main(["analyze", str(out), "--format", "json", "--out", str(an)]) == 0
    again = load_counts(an)
    assert [t.to_dict() for _, t in again] == [t.to_dict() for _, t in loaded]
    doc = json.loads(an.read_text())
    assert doc["schema_version"] == 1 and doc["code_version"]
    assert doc["columns"][:7] == ["point", "mean_photons", "eta_C", "n", "p_raw", "p_raw_err", "p_deconv"]


def test_reruns_are_byte_identical_except_timestamp(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        main(["simulate", "--triggers", "30000", "--seed", "9", "--out", str(a)])
        p.write_text(a.read_text())
    assert a.read_text() != "" and strip_time(a.read_text()) == strip_time(b.read_text())
    lines_a = a.read_text().splitlines()
    lines_b = b.read_text().splitlines()
    diff = [i for i, (x, y) in enumerate(zip(lines_a, lines_b)) if x != y]
    assert diff in ([], [0])


def test_zero_triggers_is_a_validation_error(capsys):
    assert main(["simulate", "--triggers", "0"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "validation" and err["field"] == "triggers"


def test_bad_sweep_value_rejected(capsys, tmp_path):
    assert main(["theory", "--eta-c", "1.5", "--out", str(tmp_path / "t.csv")]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "eta_C"


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 1, "system": {"mean_photons": 0.42, "n_triggers": 20000},
                               "eta_C": [0.3]}))
    out = tmp_path / "o.json"
    assert main(["simulate", "--config", str(cfg), "--mean", "0.21", "--format", "json", "--out", str(out)]) == 0
    spec = json.loads(out.read_text())["spec"]
    assert spec["system"]["mean_photons"] == 0.21
    assert spec["system"]["n_triggers"] == 20000
    assert spec["eta_C"] == [0.3]


def test_config_file_rejects_unknown_and_versions(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 99}))
    assert main(["theory", "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["theory", "--config", str(cfg)]) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PDCDECOY_OUTPUT_DIR", str(tmp_path / "outdir"))
    assert main(["theory"]) == 0
    assert (tmp_path / "outdir" / "theory.csv").exists()


def test_theory_mode_gives_dashed_curves(tmp_path):
    out = tmp_path / "t.csv"
    main(["theory", "--eta-c", "0.1", "0.5", "1.0", "--out", str(out)])
    rows = [ln.split(",") for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert rows[0] == ["point", "mean_photons", "eta_C", "n", "p_theory", "r_theory"]
    assert len(rows) == 1 + 3 * 5


def test_resume_reuses_finished_points(tmp_path):
    out = tmp_path / "s.csv"
    ck = tmp_path / "s.csv.partial.jsonl"
    spec = ExperimentSpec("simulate", system=FAST, eta_C=[0.4, 0.8], out=str(out), resume=True)
    # a finished point left behind by an interrupted sweep
    from pdcdecoy.engine import _checkpoint_key

    fake = CountsTable(50_000, np.arange(9), np.array([49_964] + [0] * 8))
    key = _checkpoint_key(FAST.with_(eta_C=0.4), 0)
    ck.write_text(json.dumps({"key": key, "counts": fake.to_dict()}) + "\n")
    run_experiment(spec)
    assert load_counts(out)[0][1].to_dict() == fake.to_dict()
    assert not ck.exists()


def test_missing_counts_file_is_io_error(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "nope.csv")]) == 3
    assert "nope.csv" in json.loads(capsys.readouterr().err)["message"]


def test_spec_validation():
    with pytest.raises(ValidationError):
        ExperimentSpec("simulate", eta_C=[]).validate()
    with pytest.raises(ValidationError):
        ExperimentSpec("analyze").validate()
    with pytest.raises(ValidationError):
        ExperimentSpec("nonsense").validate()


def test_empty_sweep_gives_header_only_csv():
    text = render(Result("analysis", ("n", "eta_C", "p_raw")), {}, "csv", created="T")
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert body == ["n,eta_C,p_raw"]
    text = render(Result("counts", ()), {}, "csv", created="T")
    assert [ln for ln in text.splitlines() if not ln.startswith("#")] == [",".join(COUNTS_COLUMNS)]


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=5))
def test_floats_roundtrip_exactly(values):
    res = Result("x", ("v",), [{"v": v} for v in values])
    for fmt in ("csv", "json"):
        text = render(res, {}, fmt, created="T")
        if fmt == "json":
            got = [r[0] for r in json.loads(text)["rows"]]
        else:
            got = [float(ln) for ln in text.splitlines()[4:]]
        assert got == values


def test_emit_reports_path_on_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit(Result("x", ("v",)), {}, blocker / "sub" / "out.csv")


def test_table1_shape(tmp_path):
    out = tmp_path / "t1.csv"
    assert main(["reproduce", "table1", "--triggers", "20000", "--out", str(out)]) == 0
    rows = [ln.split(",") for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert rows[0] == ["quantity", "20nW", "50nW", "100nW", "200nW", "500nW", "1000nW", "2000nW"]
    assert [r[0] for r in rows[1:]] == ["eta_B", "eta_T"]


def test_table2_shape(tmp_path):
    out = tmp_path / "t2.csv"
    assert main(["reproduce", "table2", "--triggers", "20000", "--out", str(out)]) == 0
    rows = [ln.split(",") for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert rows[0] == ["row", "zero", "one", "two", "three", "four"]
    assert [r[0] for r in rows[1::3]] == ["N(no click|n)", "N(click|n)", "N_T(n)"]


def test_fig4_one_row_per_mean_and_n(tmp_path):
    out = tmp_path / "f4.json"
    assert main(["reproduce", "fig4", "--triggers", "200000", "--power", "2e-7", "2e-6",
                 "--eta-c", "0.5", "1.0", "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    keys = [(r[0], r[2]) for r in doc["rows"]]
    assert len(keys) == len(set(keys))
    assert sorted({round(k[0], 12) for k in keys}) == [0.084, 0.84]


def test_attack_mode(tmp_path):
    out = tmp_path / "a.json"
    assert main(["attack", "--triggers", "2000000", "--format", "json", "--out", str(out)]) == 0
    s = json.loads(out.read_text())["summary"]
    assert 0 < s["mimic_attenuation"] < 1
    assert s["verdict"] in ("attack-detected", "consistent")


def test_attack_infeasible_reported(capsys):
    assert main(["attack", "--triggers", "10000", "--eta-c", "1.0"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "infeasible"


def test_module_entry_point(tmp_path):
    out = tmp_path / "t.csv"
    proc = subprocess.run([sys.executable, "-m", "pdcdecoy", "theory", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and out.exists()
