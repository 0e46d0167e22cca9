import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import data_root
from sscdl.data import (
    DatasetError,
    DatasetManifest,
    IntegrityError,
    ParseError,
    SplitPlan,
    load_tudataset,
    make_split_plan,
    synthetic_fixture,
    write_tudataset,
)

FIXTURE = Path(__file__).parent / "fixtures" / "SYNTH2"


def test_fixture_loads_with_known_adjacency():
    manifest, graphs = load_tudataset(FIXTURE, "SYNTH2")
    assert manifest.summary() == "2 graphs, 2 classes"
    assert manifest.feature_mode == "node_labels_onehot"
    assert [g.edges.tolist() for g in graphs] == [[[0, 1], [1, 2]], [[0, 1], [0, 2], [0, 3], [2, 3]]]
    assert [g.label for g in graphs] == [0, 1]
    for a, b in zip(graphs, synthetic_fixture()):
        assert a.same_as(b)


def test_fixture_reserialization_is_byte_identical(tmp_path):
    manifest, graphs = load_tudataset(FIXTURE, "SYNTH2")
    write_tudataset(tmp_path, "SYNTH2", graphs, manifest)
    for f in sorted(FIXTURE.iterdir()):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_original_label_values_survive_roundtrip(tmp_path):
    src = tmp_path / "src"
    shutil.copytree(FIXTURE, src)
    (src / "SYNTH2_graph_labels.txt").write_text("-1\n1\n")
    manifest, graphs = load_tudataset(src, "SYNTH2")
    assert [g.label for g in graphs] == [0, 1]
    write_tudataset(tmp_path / "out", "SYNTH2", graphs, manifest)
    assert (tmp_path / "out" / "SYNTH2_graph_labels.txt").read_text() == "-1\n1\n"


@pytest.mark.parametrize("missing", ["A", "graph_indicator", "graph_labels"])
def test_missing_mandatory_file(tmp_path, missing):
    shutil.copytree(FIXTURE, tmp_path / "SYNTH2")
    (tmp_path / "SYNTH2" / f"SYNTH2_{missing}.txt").unlink()
    with pytest.raises(ParseError, match=f"SYNTH2_{missing}.txt"):
        load_tudataset(tmp_path, "SYNTH2")


def test_edge_to_unknown_node(tmp_path):
    shutil.copytree(FIXTURE, tmp_path / "d")
    with open(tmp_path / "d" / "SYNTH2_A.txt", "a") as fh:
        fh.write("1, 99\n99, 1\n")
    with pytest.raises(IntegrityError):
        load_tudataset(tmp_path / "d", "SYNTH2")


def test_directed_input_rejected(tmp_path):
    shutil.copytree(FIXTURE, tmp_path / "d")
    a = tmp_path / "d" / "SYNTH2_A.txt"
    a.write_text("".join(ln + "\n" for ln in a.read_text().splitlines() if ln != "2, 1"))
    with pytest.raises(IntegrityError):
        load_tudataset(tmp_path / "d", "SYNTH2")


def test_degree_features_when_no_node_files(tmp_path):
    shutil.copytree(FIXTURE, tmp_path / "d")
    (tmp_path / "d" / "SYNTH2_node_labels.txt").unlink()
    manifest, graphs = load_tudataset(tmp_path / "d", "SYNTH2", max_degree=5)
    assert manifest.feature_mode == "degree_onehot"
    assert graphs[1].node_features.argmax(axis=1).tolist() == [3, 1, 2, 2]


def test_mutag_counts(mutag_root):
    manifest, graphs = load_tudataset(mutag_root, "MUTAG")
    assert manifest.summary() == "188 graphs, 2 classes"
    assert len(graphs) == 188
    assert sorted(np.bincount([g.label for g in graphs]).tolist()) == [63, 125]


def test_proteins_counts():
    root = data_root()
    if not (root / "PROTEINS" / "PROTEINS_A.txt").exists():
        pytest.skip("PROTEINS not available")
    manifest, graphs = load_tudataset(root, "PROTEINS")
    assert manifest.summary() == "1113 graphs, 2 classes"


def test_manifest_needs_two_classes():
    with pytest.raises(DatasetError):
        DatasetManifest("x", 10, 1, "degree_onehot")


def test_ten_graphs_ten_folds():
    plan = make_split_plan(np.arange(10) % 2, 0, 10, 0.3, seed=0)
    assert np.bincount(plan.fold_assignments).tolist() == [1] * 10


def test_full_label_ratio():
    labels = np.arange(50) % 3
    plan = make_split_plan(labels, 4, 10, 1.0, seed=3)
    assert np.array_equal(plan.labeled_mask, plan.train_mask)


def test_split_determinism_and_json_replay():
    labels = np.r_[np.zeros(125), np.ones(63)].astype(int)
    a = make_split_plan(labels, 2, 10, 0.3, seed=7)
    b = make_split_plan(labels, 2, 10, 0.3, seed=7)
    assert a.to_json() == b.to_json()
    c = SplitPlan.from_json(a.to_json())
    assert c.to_json() == a.to_json()
    assert np.array_equal(c.labeled_idx, a.labeled_idx)


@pytest.mark.parametrize("kw", [dict(fold_id=10), dict(fold_id=-1), dict(label_ratio=0.0), dict(label_ratio=1.5)])
def test_split_plan_argument_errors(kw):
    args = dict(fold_id=0, fold_count=10, label_ratio=0.3, seed=0) | kw
    with pytest.raises(DatasetError):
        make_split_plan(np.arange(20) % 2, **args)


def test_more_folds_than_graphs():
    with pytest.raises(DatasetError):
        make_split_plan(np.arange(5) % 2, 0, 10)


@given(
    st.lists(st.integers(0, 3), min_size=12, max_size=120),
    st.integers(2, 10),
    st.sampled_from([0.3, 0.5, 0.7, 1.0]),
    st.integers(0, 2**16),
    st.data(),
)
def test_split_plan_invariants(labels, k, ratio, seed, data):
    labels = np.array(labels)
    fold = data.draw(st.integers(0, k - 1))
    plan = make_split_plan(labels, fold, k, ratio, seed)
    counts = np.bincount(plan.fold_assignments, minlength=k)
    assert counts.sum() == len(labels) and (counts > 0).all()
    assert counts.max() - counts.min() <= 1
    # labeled only inside training partition, never in test/val
    assert not (plan.labeled_mask & ~plan.train_mask).any()
    assert not np.isin(plan.test_idx, plan.train_idx).any()
    if k >= 3:
        assert not np.isin(plan.val_idx, plan.train_idx).any()
    n_train = plan.train_mask.sum()
    assert abs(plan.labeled_mask.sum() - ratio * n_train) <= 1
    # per-class proportions of the labeled subset follow the training partition
    for c in np.unique(labels):
        in_train = (labels[plan.train_mask] == c).sum()
        in_lab = (labels[plan.labeled_mask] == c).sum()
        assert abs(in_lab - ratio * in_train) <= 1
