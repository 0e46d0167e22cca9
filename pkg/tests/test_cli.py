import json
from pathlib import Path

import pytest

from sscdl import config as C
from sscdl.cli import main
from sscdl.data import synthetic_dataset, write_tudataset

FIXTURE = Path(__file__).parent / "fixtures" / "SYNTH2"
TINY = [
    "--set", "model.gcn_layers=1", "--set", "model.hidden_dim=8", "--set", "model.projection_dim=8",
    "--set", "model.mlp_layers=1", "--set", "train.epochs_pretrain=1", "--set", "train.epochs_finetune=2",
]


@pytest.fixture(scope="module")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_tudataset(root, "TOY", synthetic_dataset(30, seed=2))
    return root


def run_cli(toy_root, out, *extra):
    args = ["run", "--dataset", "TOY", "--data-root", str(toy_root), "--out", str(out), "--folds", "0,1", *TINY, *extra]
    return main(args)


def only_run_dir(out: Path) -> Path:
    (d,) = [p for p in out.iterdir() if p.is_dir()]
    return d


def test_config_roundtrip(tmp_path):
    cfg = C.from_ini("", {"train.learning_rate": 0.01, "experiment.variants": ["sscdl_cl"], "loss.beta": 0.5})
    assert cfg.experiment.variants == ("SSCDL_cl",) and cfg.train.weights.beta == 0.5
    path = cfg.write(tmp_path / "config")
    back = C.load(path)
    assert back == cfg and back.fingerprint == cfg.fingerprint
    assert C.load(None).fingerprint != cfg.fingerprint


@pytest.mark.parametrize(
    "override",
    [{"train.bogus": 1}, {"nosuch.key": 1}, {"train.epochs_finetune": "many"}, {"experiment.label_ratios": [1.5]},
     {"experiment.variants": ["nope"]}, {"train.batch_size": 1}],
)
def test_config_errors(override):
    with pytest.raises(C.ConfigError):
        C.from_ini("", override)


def test_parse_override():
    assert C.parse_override("train.learning_rate=0.01") == ("train.learning_rate", 0.01)
    assert C.parse_override("experiment.dataset=PROTEINS") == ("experiment.dataset", "PROTEINS")
    with pytest.raises(C.ConfigError):
        C.parse_override("nothing")


def test_ingest(capsys):
    assert main(["ingest", "SYNTH2", "--root", str(FIXTURE.parent)]) == 0
    assert capsys.readouterr().out.startswith("2 graphs, 2 classes")


def test_ingest_missing_file_exit_code(tmp_path, capsys):
    (tmp_path / "X").mkdir()
    assert main(["ingest", "X", "--root", str(tmp_path)]) == 2
    assert "X_A.txt" in capsys.readouterr().err


def test_run_writes_artifacts_and_evaluate_matches(toy_root, tmp_path):
    out = tmp_path / "runs"
    assert run_cli(toy_root, out, "--variant", "sscdl", "--variant", "sscdl_cl") == 0
    d = only_run_dir(out)
    cfg = C.load(d / "config")
    assert cfg.fingerprint == d.name
    manifest = json.loads((d / "manifest").read_text())
    assert manifest["status"] == "ok" and manifest["dataset"]["n_graphs"] == 30
    assert manifest["variants"]["SSCDL_cl"]["pretrain"] == "skipped"
    assert manifest["variants"]["SSCDL"]["pretrain"] == "run"
    assert len(manifest["folds"]) == 4 and all(f["loss_history"] for f in manifest["folds"])
    assert set(manifest["report_sha256"]) == {"report.csv", "report.json", "report.txt"}
    assert len(list((d / "checkpoints").glob("*_finetune.npz"))) == 4
    assert main(["evaluate", str(d)]) == 0
    assert all(row["match"] for row in json.loads((d / "reports" / "evaluate.json").read_text()))


def test_rerun_is_byte_identical(toy_root, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(toy_root, a) == 0 and run_cli(toy_root, b) == 0
    da, db = only_run_dir(a), only_run_dir(b)
    assert da.name == db.name
    for name in ("report.csv", "report.json", "report.txt"):
        assert (da / "reports" / name).read_bytes() == (db / "reports" / name).read_bytes()


def test_evaluate_rejects_tampered_checkpoint(toy_root, tmp_path):
    out = tmp_path / "runs"
    assert run_cli(toy_root, out, "--variant", "sscdl_cl") == 0
    d = only_run_dir(out)
    other = tmp_path / "other"
    assert run_cli(toy_root, other, "--variant", "sscdl_cl", "--seed", "3") == 0
    ck = next((d / "checkpoints").glob("*_f0_finetune.npz"))
    ck.write_bytes(next((only_run_dir(other) / "checkpoints").glob("*_f0_finetune.npz")).read_bytes())
    assert main(["evaluate", str(d)]) == 2


def test_run_exit_codes(toy_root, tmp_path):
    assert run_cli(toy_root, tmp_path, "--set", "train.bogus=1") == 1
    assert run_cli(toy_root, tmp_path, "--variant", "nope") == 1
    assert main(["run", "--dataset", "NOPE", "--data-root", str(toy_root), "--out", str(tmp_path)]) == 2


def test_numeric_failure_keeps_partial_artifacts(toy_root, tmp_path, monkeypatch):
    import sscdl.evaluation as ev

    real = ev.finetune
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > 2:
            raise FloatingPointError("boom")
        return real(*a, **k)

    monkeypatch.setattr(ev, "finetune", flaky)
    assert run_cli(toy_root, tmp_path, "--variant", "sscdl_cl", "--variant", "sscdl") == 3
    d = only_run_dir(tmp_path)
    manifest = json.loads((d / "manifest").read_text())
    assert manifest["status"] == "failed" and "boom" in manifest["error"]
    rows = json.loads((d / "reports" / "report.json").read_text())
    assert [r["status"] for r in rows] == ["ok", "failed"]


def test_sweeps_write_tagged_reports(toy_root, tmp_path, capsys):
    args = ["--dataset", "TOY", "--data-root", str(toy_root), "--folds", "0", *TINY, "--variant", "sscdl_cl"]
    assert main(["sweep-mask", "--out", str(tmp_path / "sm"), "--values", "0.1,0.35", *args]) == 0
    text = (only_run_dir(tmp_path / "sm") / "reports" / "sweep_mask.txt").read_text()
    assert "mask=0.1/0.2" in text and "mask=0.35/0.7" in text
    assert main(["sweep-ab", "--out", str(tmp_path / "ab"), "--values", "0.1,1", *args]) == 0
    d = only_run_dir(tmp_path / "ab")
    assert C.load(d / "config").sweep == C.SweepSection("alpha_beta", (0.1, 1.0))
    matrix = (d / "reports" / "sweep_ab.txt").read_text()
    assert "rows alpha" in matrix and len(json.loads((d / "reports" / "sweep_ab.json").read_text())) == 4


def test_bound_check(tmp_path, capsys):
    out = tmp_path / "b.json"
    assert main(["bound-check", "--tau", "0.5", "--K", "7", "--trials", "50", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["all_hold"] and len(rep["holds"]) == 50 and rep["scalar_pair"]["asserted"] is False
    assert main(["bound-check", "--tau", "0.2", "--K", "100"]) == 1
    assert "148" in capsys.readouterr().err


def test_report_merges_run_dirs(toy_root, tmp_path, capsys):
    assert run_cli(toy_root, tmp_path / "a", "--variant", "sscdl_cl") == 0
    assert run_cli(toy_root, tmp_path / "b", "--variant", "gcn_supervised") == 0
    capsys.readouterr()
    dirs = [str(only_run_dir(tmp_path / x)) for x in "ab"]
    assert main(["report", *dirs, "--format", "csv"]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert len(rows) == 1 + 4
    assert main(["report", str(tmp_path / "missing")]) == 2
