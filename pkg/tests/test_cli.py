import json
import os

import numpy as np
import pandas as pd
import pytest

import asmfit
from asmfit.cli import run
from asmfit.data import load_panel_csv


SMALL_SPEC = """\
latent a by x
latent b by y1 y2 y3
path a -> b
waves 2
ar 1
invariance strong
fix theta(x)@* = 0
"""


@pytest.fixture()
def workdir(tmp_path):
    spec_path = tmp_path / "model.asm"
    spec_path.write_text(SMALL_SPEC)
    spec = asmfit.parse_model_spec(SMALL_SPEC)
    table = asmfit.build_parameter_table(spec, "configural")
    truth = {}
    for e in table.entries:
        if e.slot is None:
            continue
        if e.target == "beta":
            truth[e.name] = 0.5
        elif e.target == "pi":
            truth[e.name] = 0.3
        elif e.target == "psi":
            truth[e.name] = 1.0
        elif e.target == "lambda":
            truth[e.name] = 0.8
        elif e.target == "theta":
            truth[e.name] = 0.6
        elif e.target == "mu":
            truth[e.name] = 0.0
    truth_path = tmp_path / "truth.tsv"
    truth_path.write_text(
        "name\tvalue\n" + "\n".join(f"{k}\t{v}" for k, v in truth.items()) + "\n"
    )
    return tmp_path, spec_path, truth_path


def _simulate(tmp_path, spec_path, truth_path, n=600, seed=9, out="panel.csv"):
    out_path = tmp_path / out
    code = run([
        "simulate", "--spec", str(spec_path), "--truth", str(truth_path),
        "--n", str(n), "--seed", str(seed), "--out", str(out_path),
    ])
    assert code == 0
    return out_path


def test_simulate_fit_round_trip(workdir):
    tmp_path, spec_path, truth_path = workdir
    data_path = _simulate(tmp_path, spec_path, truth_path)
    out = tmp_path / "fit.json"
    code = run([
        "fit", "--data", str(data_path), "--spec", str(spec_path),
        "--out", str(out), "--format", "json",
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["convergence"]["converged"] is True
    assert payload["fit"]["df"] > 0
    names = {p["coefficient"] for p in payload["parameters"]}
    assert "beta[a->b]@1" in names and "pi[a]@1->2" in names
    beta = next(p for p in payload["parameters"] if p["coefficient"] == "beta[a->b]@1")
    assert abs(beta["estimate"] - 0.5) < 0.15
    assert payload["config"]["subcommand"] == "fit"


def test_fit_tsv_layout(workdir):
    tmp_path, spec_path, truth_path = workdir
    data_path = _simulate(tmp_path, spec_path, truth_path)
    out = tmp_path / "fit.tsv"
    assert run(["fit", "--data", str(data_path), "--spec", str(spec_path), "--out", str(out)]) == 0
    lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    header = lines[0].split("\t")
    assert header == [
        "coefficient", "path", "estimate", "std_estimate",
        "ci_lower", "ci_upper", "p_value", "se", "status",
    ]
    assert len(lines) > 10


def test_simulate_round_trips_through_loader(workdir):
    tmp_path, spec_path, truth_path = workdir
    data_path = _simulate(tmp_path, spec_path, truth_path)
    spec = asmfit.parse_model_spec(SMALL_SPEC)
    frame, report = load_panel_csv(data_path, spec)
    raw = pd.read_csv(data_path)
    assert report.rows_read == report.rows_kept == 600
    assert np.array_equal(np.asarray(frame), np.asarray(raw[list(frame.columns)]))


def test_determinism_byte_identical(workdir):
    tmp_path, spec_path, truth_path = workdir
    a = _simulate(tmp_path, spec_path, truth_path, out="a.csv")
    b = _simulate(tmp_path, spec_path, truth_path, out="b.csv")
    assert a.read_bytes() == b.read_bytes()
    # identical inputs include --out: rerun into the same path
    out = tmp_path / "fit.json"
    args = ["fit", "--data", str(a), "--spec", str(spec_path),
            "--out", str(out), "--format", "json"]
    assert run(args) == 0
    first = out.read_bytes()
    assert run(args) == 0
    assert out.read_bytes() == first


def test_ladder_report(workdir):
    tmp_path, spec_path, truth_path = workdir
    data_path = _simulate(tmp_path, spec_path, truth_path, n=800)
    out = tmp_path / "ladder.tsv"
    code = run(["ladder", "--data", str(data_path), "--spec", str(spec_path), "--out", str(out)])
    assert code == 0
    text = out.read_text()
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    header = lines[0].split("\t")
    assert header[:8] == [
        "model", "chi2", "df", "cfi", "rmsea",
        "rmsea_ci_lower", "rmsea_ci_upper", "srmr",
    ]
    models = [l.split("\t")[0] for l in lines[1:4]]
    assert models == ["configural", "weak", "strong"]
    assert "# selected:" in text
    dfs = [int(l.split("\t")[2]) for l in lines[1:4]]
    assert dfs[0] < dfs[1] < dfs[2]


def test_ladder_single_wave_warns(tmp_path, capsys):
    spec_path = tmp_path / "one.asm"
    spec_path.write_text("latent a by x\nwaves 1\nfix theta(x)@* = 0\n")
    rng = np.random.default_rng(0)
    data_path = tmp_path / "one.csv"
    pd.DataFrame({"x.1": rng.standard_normal(200)}).to_csv(data_path, index=False)
    code = run(["ladder", "--data", str(data_path), "--spec", str(spec_path),
                "--out", str(tmp_path / "l.tsv")])
    assert code == 0
    assert "single-wave" in capsys.readouterr().err
    text = (tmp_path / "l.tsv").read_text()
    assert "configural" in text and "weak" not in text


def test_bootstrap_appends_columns(workdir):
    tmp_path, spec_path, truth_path = workdir
    data_path = _simulate(tmp_path, spec_path, truth_path, n=400)
    out = tmp_path / "boot.tsv"
    code = run([
        "bootstrap", "--data", str(data_path), "--spec", str(spec_path),
        "--replicates", "100", "--level", "0.99", "--seed", "3", "--out", str(out),
    ])
    assert code == 0
    lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert lines[0].split("\t")[-1] == "n_failed"
    assert any("bootstrap percentile" in l for l in out.read_text().splitlines())


def test_dump_table(workdir):
    tmp_path, spec_path, _ = workdir
    out = tmp_path / "table.tsv"
    assert run(["dump", "--spec", str(spec_path), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = [l for l in lines if not l.startswith("#")][0].split("\t")
    assert header[:7] == ["id", "name", "matrix", "wave", "row", "col", "status"]
    assert any("lambda[x]@1" in l for l in lines)


def test_dump_matrices_flag(workdir):
    tmp_path, spec_path, _ = workdir
    out = tmp_path / "table.tsv"
    assert run(["dump", "--spec", str(spec_path), "--out", str(out), "--dump-matrices"]) == 0
    dump = (tmp_path / "table.tsv.matrices.tsv").read_text()
    for name in ("mu", "lambda", "gamma", "psi", "theta_resid"):
        assert f"# matrix: {name}" in dump


def test_exit_code_ingestion(workdir, tmp_path):
    _, spec_path, _ = workdir
    missing = run(["fit", "--data", str(tmp_path / "nope.csv"), "--spec", str(spec_path)])
    assert missing == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("x.1,x.2\n1.0,2.0\n")  # lacks required columns
    assert run(["fit", "--data", str(bad), "--spec", str(spec_path)]) == 2


def test_exit_code_too_few_rows(workdir):
    tmp_path, spec_path, truth_path = workdir
    data_path = _simulate(tmp_path, spec_path, truth_path, n=30)
    assert run(["fit", "--data", str(data_path), "--spec", str(spec_path),
                "--out", str(tmp_path / "f.tsv")]) == 2


def test_exit_code_spec_error(tmp_path, capsys):
    spec_path = tmp_path / "broken.asm"
    spec_path.write_text("latent a by x\npath a -> zz\nwaves 2\n")
    data = tmp_path / "d.csv"
    data.write_text("x.1,x.2\n1,2\n")
    assert run(["fit", "--data", str(data), "--spec", str(spec_path)]) == 3
    err = capsys.readouterr().err
    assert "unknown latent" in err and ":2:" in err


def test_exit_code_validation_diagnostics(tmp_path):
    spec_path = tmp_path / "underid.asm"
    spec_path.write_text("latent a by x\nwaves 1\n")  # residual not fixed
    data = tmp_path / "d.csv"
    data.write_text("x.1\n1.0\n2.0\n")
    assert run(["fit", "--data", str(data), "--spec", str(spec_path)]) == 3


def test_missing_rows_reported(workdir):
    tmp_path, spec_path, truth_path = workdir
    data_path = _simulate(tmp_path, spec_path, truth_path, n=600)
    frame = pd.read_csv(data_path)
    frame.loc[3, "x.1"] = np.nan
    frame.loc[10, "y2.2"] = np.nan
    frame.loc[11, "y2.2"] = np.nan
    holes = tmp_path / "holes.csv"
    frame.to_csv(holes, index=False)
    spec = asmfit.parse_model_spec(SMALL_SPEC)
    kept, report = load_panel_csv(holes, spec)
    assert report.rows_read == 600
    assert report.rows_kept == 597
    assert report.missing_by_column == {"x.1": 1, "y2.2": 2}


def test_non_numeric_cell_is_ingestion_error(workdir):
    tmp_path, spec_path, truth_path = workdir
    data_path = _simulate(tmp_path, spec_path, truth_path, n=200)
    text = data_path.read_text().splitlines()
    parts = text[1].split(",")
    parts[0] = "oops"
    text[1] = ",".join(parts)
    broken = tmp_path / "broken.csv"
    broken.write_text("\n".join(text) + "\n")
    with pytest.raises(asmfit.IngestionError, match="non-numeric"):
        load_panel_csv(broken, asmfit.parse_model_spec(SMALL_SPEC))


def test_stdout_output(workdir, capsys):
    tmp_path, spec_path, truth_path = workdir
    code = run(["dump", "--spec", str(spec_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "free_parameters" in out
