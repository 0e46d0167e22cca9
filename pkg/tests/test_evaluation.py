import math
from dataclasses import replace

import numpy as np
import pytest

import sscdl.evaluation as ev
from sscdl.data import make_split_plan, synthetic_dataset
from sscdl.graph import Graph
from sscdl.losses import LossWeights
from sscdl.model import ModelConfig
from sscdl.train import TrainConfig
from sscdl.evaluation import (
    AB_GRID,
    ExperimentFailed,
    ExperimentSpec,
    FoldReport,
    alpha_beta_matrix,
    emit_report,
    reports_from_csv,
    run_experiment,
    sweep_alpha_beta,
    sweep_masking,
)

TINY_MODEL = ModelConfig(gcn_layers=1, hidden_dim=8, mlp_layers=1, projection_dim=8)
TINY_TRAIN = TrainConfig(epochs_pretrain=2, epochs_finetune=3)
GRAPHS = synthetic_dataset(30, seed=4)


def run(spec, cfg=TINY_TRAIN, **kw):
    return run_experiment(spec, cfg, TINY_MODEL, graphs=kw.pop("graphs", GRAPHS), n_classes=kw.pop("n_classes", 2), **kw)


def test_variant_names():
    assert ExperimentSpec("x", variants=("sscdl", "sscdl_cl")).variants == ("SSCDL", "SSCDL_cl")
    with pytest.raises(ValueError):
        ExperimentSpec("x", variants=("bogus",))
    with pytest.raises(ValueError):
        ExperimentSpec("x", variants=())
    for name, plan in ev.VARIANTS.items():
        cfg = ev.variant_config(name, TrainConfig())
        assert cfg.loss_mask == plan.loss_mask and (cfg.epochs_pretrain > 0) == plan.pretrain


def test_ft_differs_from_full_only_by_pretrain_and_mask():
    full = ev.variant_config("SSCDL", TrainConfig()).to_dict()
    ft = ev.variant_config("SSCDL_ft", TrainConfig()).to_dict()
    assert {k for k in full if full[k] != ft[k]} == {"epochs_pretrain", "loss_mask"}


def test_single_class_degenerate():
    graphs = [Graph(np.ones((3, 2)), [(0, 1), (1, 2)], label=0, graph_id=i) for i in range(10)]
    for variant in ev.VARIANTS:
        (rep,) = run(ExperimentSpec("ONE", variants=(variant,)), graphs=graphs, n_classes=1)
        assert rep.per_fold_accuracy == [1.0] * 10


def test_supervised_equals_weightless_sscdl_without_pretraining():
    spec = ExperimentSpec("S", fold_count=5, folds=(0, 1))
    (a,) = run(replace(spec, variants=("GCN_supervised",)))
    cfg = replace(TINY_TRAIN, epochs_pretrain=0, weights=LossWeights(0.0, 0.0))
    (b,) = run(replace(spec, variants=("SSCDL",)), cfg)
    assert a.per_fold_accuracy == b.per_fold_accuracy and a.fold_seeds == b.fold_seeds


def test_seeds_shared_across_variants_and_ratios():
    reps = run(ExperimentSpec("S", (0.3, 0.5), 5, ("SSCDL", "SSCDL_cl"), folds=(0, 1, 2)))
    assert len({tuple(r.fold_seeds) for r in reps}) == 1


def test_report_statistics():
    r = FoldReport("D", "SSCDL", 0.3, [0.9, 0.8], [1, 2])
    assert r.mean == pytest.approx(0.85, abs=1e-12)
    assert r.std == pytest.approx(math.sqrt(0.005), abs=1e-12)
    assert r.formatted() == "85.00±7.07"
    assert replace(r, std_kind="population").std == pytest.approx(0.05, abs=1e-12)
    rng = np.random.default_rng(0)
    acc = rng.uniform(size=10).tolist()
    r = FoldReport("D", "SSCDL", 0.3, acc, list(range(10)))
    assert abs(r.mean - sum(acc) / 10) <= 1e-12
    assert abs(r.std - math.sqrt(sum((a - r.mean) ** 2 for a in acc) / 9)) <= 1e-12


def test_emit_report_shapes():
    empty = emit_report([], "text").splitlines()
    assert len(empty) == 2 and "Methods" in empty[0]
    assert emit_report([], "csv") == ",".join(ev.CSV_COLUMNS) + "\n"
    r = FoldReport("MUTAG", "SSCDL", 0.3, [0.9, 0.8], [1, 2], config_fingerprint="abc")
    lines = emit_report([r], "text").splitlines()
    assert len(lines) == 3 and "85.00±7.07" in lines[2] and lines[2].startswith("30%")


def test_csv_and_json_roundtrip():
    rng = np.random.default_rng(1)
    reps = [
        FoldReport("MUTAG", v, ratio, rng.uniform(size=10).tolist(), rng.integers(0, 2**32, 10).tolist(), config_fingerprint=v[:3] + str(ratio))
        for v in ("SSCDL", "SSCDL_cl")
        for ratio in (0.3, 0.7)
    ]
    back = reports_from_csv(emit_report(reps, "csv"))
    assert [(b.variant, b.label_ratio, b.per_fold_accuracy, b.fold_seeds) for b in back] == [
        (r.variant, r.label_ratio, r.per_fold_accuracy, r.fold_seeds) for r in reps
    ]
    import json

    again = [FoldReport.from_dict(d) for d in json.loads(emit_report(reps, "json"))]
    assert [a.to_dict() for a in again] == [r.to_dict() for r in reps]


def test_fold_isolation_audit(monkeypatch):
    seen_pre, seen_fine = [], []
    real_pre, real_fine = ev.pretrain, ev.finetune

    def spy_pre(graphs, cfg, state):
        seen_pre.append([(g.graph_id, g.label) for g in graphs])
        return real_pre(graphs, cfg, state)

    def spy_fine(graphs, state, cfg, val_graphs=None):
        seen_fine.append([g.graph_id for g in graphs])
        return real_fine(graphs, state, cfg, val_graphs)

    monkeypatch.setattr(ev, "pretrain", spy_pre)
    monkeypatch.setattr(ev, "finetune", spy_fine)
    audit = []
    run(ExperimentSpec("S", fold_count=5, folds=(0, 1, 2)), audit=audit)
    labels = np.array([g.label for g in GRAPHS])
    for k, row in enumerate(audit):
        plan = make_split_plan(labels, row["fold"], 5, 0.3, seed=0)
        ids = np.array([g.graph_id for g in GRAPHS])
        assert not set(row["test_graph_ids"]) & set(row["seen_graph_ids"])
        assert set(row["seen_graph_ids"]) <= set(ids[plan.train_idx])
        assert all(label is None for _, label in seen_pre[k])
        assert {i for i, _ in seen_pre[k]} == set(ids[plan.unlabeled_idx])
        assert set(seen_fine[k]) == set(ids[plan.labeled_idx])


def test_failed_fold_keeps_partial_results(monkeypatch):
    calls = {"n": 0}
    real = ev.finetune

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > 2:
            raise FloatingPointError("boom")
        return real(*a, **k)

    monkeypatch.setattr(ev, "finetune", flaky)
    with pytest.raises(ExperimentFailed) as e:
        run(ExperimentSpec("S", fold_count=5, variants=("SSCDL_cl", "SSCDL"), folds=(0, 1)))
    done, failed = e.value.partial
    assert done.status == "ok" and len(done.per_fold_accuracy) == 2
    assert failed.status == "failed" and "boom" in failed.error


def test_parallel_folds_match_serial():
    spec = ExperimentSpec("S", fold_count=5, folds=(0, 1, 2))
    a = run(spec)
    b = run(spec, parallel_folds=2)
    assert a[0].per_fold_accuracy == b[0].per_fold_accuracy


def test_masking_sweep_rows():
    spec = ExperimentSpec("S", (0.3, 0.5), fold_count=5, folds=(0,))
    reps = sweep_masking(spec, TINY_TRAIN, TINY_MODEL, graphs=GRAPHS, n_classes=2)
    assert len(reps) == 8
    for ratio in (0.3, 0.5):
        assert len([r for r in reps if r.label_ratio == ratio]) == 4
    hi = [r for r in reps if r.params["weak_ratio"] == 0.35]
    assert all(r.params["strong_ratio"] == pytest.approx(0.7) for r in hi)


def test_alpha_beta_grid():
    spec = ExperimentSpec("S", fold_count=5, folds=(0,))
    cfg = replace(TINY_TRAIN, epochs_pretrain=0, epochs_finetune=1)
    cells = sweep_alpha_beta(spec, cfg, TINY_MODEL, graphs=GRAPHS, n_classes=2)
    assert len(cells) == 25
    m = alpha_beta_matrix(cells, 0.3)
    assert m.shape == (5, 5) and not np.isnan(m).any()
    (direct,) = run(spec, replace(cfg, weights=LossWeights(0.01, 0.01)))
    assert cells[(0.01, 0.01)][0].per_fold_accuracy == direct.per_fold_accuracy
    assert AB_GRID == (0.01, 0.05, 0.1, 0.5, 1.0)


def test_csv_fold_column_is_the_fold_id():
    (rep,) = run(ExperimentSpec("S", fold_count=5, folds=(1, 3)))
    assert rep.fold_ids == [1, 3]
    rows = emit_report([rep], "csv").splitlines()[1:]
    assert [int(r.split(",")[3]) for r in rows] == [1, 3]
    assert reports_from_csv(emit_report([rep], "csv"))[0].fold_ids == [1, 3]
