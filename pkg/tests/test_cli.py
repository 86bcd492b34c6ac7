import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from opflearn.cli import main
from opflearn.dataset import FILES, read_csv
from opflearn.netio import bundled_case


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "ds"
    assert main(["generate", "--case", str(bundled_case("case5")), "--n", "10", "--seed", "1", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def base_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("base") / "ds"
    assert main(["baseline", "--case", "case5", "--n", "10", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_generate_outputs(gen_dir):
    for f in FILES + ("metadata.json", "manifest.json", "stats.json", "certificates.csv"):
        assert (gen_dir / f).exists(), f
    assert len(read_csv(gen_dir)) == 10
    man = json.loads((gen_dir / "manifest.json").read_text())
    assert man["seed"] == 1
    assert man["options"]["n"] == 10


def test_generate_byte_identical(gen_dir, tmp_path):
    out = tmp_path / "again"
    assert main(["generate", "--case", "case5", "--n", "10", "--seed", "1", "--out", str(out)]) == 0
    for f in FILES + ("metadata.json", "stats.json", "certificates.csv"):
        assert (out / f).read_bytes() == (gen_dir / f).read_bytes(), f


def test_auto_seed_recorded(tmp_path):
    out = tmp_path / "auto"
    assert main(["baseline", "--case", "case5", "--n", "2", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert isinstance(man["seed"], int)
    assert read_csv(out).metadata["seed"] == man["seed"]


def test_unknown_flag_exits_2():
    r = subprocess.run([sys.executable, "-m", "opflearn.cli", "generate", "--bogus"], capture_output=True, text=True)
    assert r.returncode == 2
    assert "usage:" in r.stderr


def test_unknown_case_is_usage_error(tmp_path, capsys):
    assert main(["generate", "--case", "nope", "--n", "1", "--out", str(tmp_path / "x")]) == 2
    assert "error: usage:" in capsys.readouterr().err


def test_analyze_growth_curve(gen_dir, tmp_path):
    out = tmp_path / "growth.csv"
    assert main(["analyze", "--data", str(gen_dir), "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["records", "unique_active_sets"]
    counts = [int(r[1]) for r in rows[1:]]
    assert len(counts) == 10 and np.all(np.diff(counts) >= 0)


def test_pf_check_passes(gen_dir, base_dir, capsys):
    for d in (gen_dir, base_dir):
        assert main(["pf-check", "--data", str(d), "--case", "case5"]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["failed"] == 0 and summary["max_residual"] <= 1e-6


def test_pf_check_flags_corrupted_record(gen_dir, tmp_path, capsys):
    import shutil

    d = tmp_path / "bad"
    shutil.copytree(gen_dir, d)
    p = d / "outputs.csv"
    lines = p.read_text().splitlines()
    vals = lines[1].split(",")
    vals[-1] = repr(float(vals[-1]) + 0.05)
    lines[1] = ",".join(vals)
    p.write_text("\n".join(lines) + "\n")
    assert main(["pf-check", "--data", str(d), "--case", "case5"]) == 1
    assert capsys.readouterr().err.startswith("error: no-convergence:")


def test_pf_check_wrong_network(gen_dir, capsys):
    assert main(["pf-check", "--data", str(gen_dir), "--case", "case14"]) == 1
    assert "fingerprint-mismatch" in capsys.readouterr().err


def test_train_and_eval(gen_dir, base_dir, tmp_path):
    models = tmp_path / "models"
    for name, d in (("ol", gen_dir), ("typ", base_dir)):
        assert main(["train", "--data", str(d), "--out", str(models), "--name", name, "--epochs", "3"]) == 0
    files = sorted(str(p) for p in models.glob("*_*.json") if "manifest" not in p.name)
    assert len(files) == 4
    rep = tmp_path / "report.csv"
    assert main(["eval", "--models", *files, "--data", f"ol={gen_dir}", f"typ={base_dir}", "--out", str(rep)]) == 0
    with open(rep) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert {(r["train"], r["test"]) for r in rows} == {(a, b) for a in ("ol", "typ") for b in ("ol", "typ")}


def test_runtime_error_category(tmp_path, capsys):
    (tmp_path / "inputs.csv").write_text("pl_1\n")
    assert main(["analyze", "--data", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: schema-mismatch:") and len(err.strip().splitlines()) == 1
