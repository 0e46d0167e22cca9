"""k-fold cross-validation driver, ablation variants, parameter sweeps and report rendering."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .augment import AugmentConfig
from .data import dataset_fingerprint, load_tudataset, make_split_plan
from .graph import Graph
from .losses import LossWeights
from .model import ModelConfig, save_checkpoint
from .train import TrainConfig, evaluate_accuracy, finetune, init_state, pretrain

log = logging.getLogger(__name__)

LABEL_RATIOS = (0.3, 0.5, 0.7)
AB_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)
MASK_RATIOS = (0.1, 0.2, 0.3, 0.35)
CSV_COLUMNS = ("dataset", "variant", "label_ratio", "fold", "accuracy", "seed", "config_fingerprint")


@dataclass(frozen=True)
class VariantPlan:
    pretrain: bool
    loss_mask: frozenset
    pretrain_loss: str = "similarity"


# SSCDL_cl / SSCDL_ft follow the loss checkmarks of the ablation table
VARIANTS = {
    "SSCDL": VariantPlan(True, frozenset({"L_c", "L_s", "L_d"})),
    "SSCDL_cl": VariantPlan(False, frozenset({"L_c"})),
    "SSCDL_ft": VariantPlan(False, frozenset({"L_c", "L_s"})),
    "GCN_supervised": VariantPlan(False, frozenset({"L_c"})),
    "GraphCL_ntxent": VariantPlan(True, frozenset({"L_c"}), "nt_xent"),
}

_ALIASES = {k.lower(): k for k in VARIANTS}


def canonical_variant(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


class ExperimentFailed(RuntimeError):
    def __init__(self, msg: str, partial: list):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: str
    label_ratios: tuple = (0.3,)
    fold_count: int = 10
    variants: tuple = ("SSCDL",)
    base_seed: int = 0
    data_root: Optional[str] = None
    folds: Optional[tuple] = None  # subset of fold ids to run; None = all

    def __post_init__(self):
        if not self.variants:
            raise ValueError("at least one variant is required")
        object.__setattr__(self, "variants", tuple(canonical_variant(v) for v in self.variants))
        object.__setattr__(self, "label_ratios", tuple(float(r) for r in self.label_ratios))
        for r in self.label_ratios:
            if not 0 < r <= 1:
                raise ValueError(f"label ratio {r} outside (0, 1]")


@dataclass
class FoldReport:
    dataset: str
    variant: str
    label_ratio: float
    per_fold_accuracy: list
    fold_seeds: list
    wall_time_seconds: float = 0.0
    config_fingerprint: str = ""
    std_kind: str = "sample"
    params: dict = field(default_factory=dict)
    status: str = "ok"
    error: str = ""
    fold_ids: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_fold_accuracy)) if self.per_fold_accuracy else float("nan")

    @property
    def std(self) -> float:
        a = np.asarray(self.per_fold_accuracy, dtype=np.float64)
        if len(a) < 2:
            return 0.0
        return float(np.std(a, ddof=1 if self.std_kind == "sample" else 0))

    def formatted(self) -> str:
        return f"{100 * self.mean:.2f}±{100 * self.std:.2f}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean"], d["std"] = self.mean, self.std
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FoldReport":
        d = {k: v for k, v in d.items() if k not in ("mean", "std")}
        return cls(**d)


def fold_seed(base_seed: int, fold: int) -> int:
    """Training seed for one fold; shared by every variant and label ratio."""
    return int(np.random.SeedSequence([base_seed, fold]).generate_state(1)[0])


def config_fingerprint(*parts) -> str:
    def enc(o):
        if hasattr(o, "to_dict"):
            return o.to_dict()
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        if isinstance(o, (set, frozenset)):
            return sorted(o)
        return str(o)

    blob = json.dumps(parts, sort_keys=True, default=enc)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def variant_config(variant: str, train_cfg: TrainConfig) -> TrainConfig:
    plan = VARIANTS[canonical_variant(variant)]
    return replace(
        train_cfg,
        loss_mask=plan.loss_mask,
        pretrain_loss=plan.pretrain_loss,
        epochs_pretrain=train_cfg.epochs_pretrain if plan.pretrain else 0,
    )


def _unlabeled_copy(g: Graph) -> Graph:
    return Graph(g.node_features, g.edges, None, g.graph_id)


def run_fold(
    graphs: Sequence[Graph],
    n_features: int,
    n_classes: int,
    fold: int,
    label_ratio: float,
    variant: str,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    fold_count: int = 10,
    base_seed: int = 0,
    checkpoint_dir=None,
    checkpoint_fingerprint: Optional[str] = None,
) -> dict:
    """Train one variant on one fold and return its test accuracy plus audit data."""
    labels = np.array([g.label for g in graphs])
    plan = make_split_plan(labels, fold, fold_count, label_ratio, seed=base_seed)
    seed = fold_seed(base_seed, fold)
    cfg = replace(variant_config(variant, train_cfg), seed=seed)
    state = init_state(n_features, n_classes, model_cfg, seed=seed)
    unlabeled = [_unlabeled_copy(graphs[i]) for i in plan.unlabeled_idx]
    labeled = [graphs[i] for i in plan.labeled_idx]
    val = [graphs[i] for i in plan.val_idx]
    test = [graphs[i] for i in plan.test_idx]
    if cfg.epochs_pretrain > 0 and len(unlabeled) >= 2:
        state = pretrain(unlabeled, cfg, state)
        if checkpoint_dir is not None:
            save_checkpoint(
                f"{checkpoint_dir}/{variant}_r{label_ratio}_f{fold}_pretrain.npz", state.params, checkpoint_fingerprint
            )
    state = finetune(labeled, state, cfg, val_graphs=val if cfg.early_stopping else None)
    if checkpoint_dir is not None:
        save_checkpoint(
            f"{checkpoint_dir}/{variant}_r{label_ratio}_f{fold}_finetune.npz", state.params, checkpoint_fingerprint
        )
    test_ids = {g.graph_id for g in test}
    leaked = test_ids & state.seen_graph_ids
    if leaked:
        raise RuntimeError(f"test graphs {sorted(leaked)[:5]} reached a gradient computation")
    return {
        "accuracy": evaluate_accuracy(state.params, test),
        "seed": seed,
        "seen_graph_ids": sorted(state.seen_graph_ids),
        "test_graph_ids": sorted(test_ids),
        "loss_history": state.loss_history,
        "stages": state.stages,
    }


def _run_fold_job(args):
    return run_fold(*args[:-1], **args[-1])


def run_experiment(
    spec: ExperimentSpec,
    train_cfg: TrainConfig = TrainConfig(),
    model_cfg: ModelConfig = ModelConfig(),
    graphs: Optional[Sequence[Graph]] = None,
    n_classes: Optional[int] = None,
    parallel_folds: int = 1,
    checkpoint_dir=None,
    audit: Optional[list] = None,
    checkpoint_fingerprint: Optional[str] = None,
) -> list[FoldReport]:
    """Cross-validate every (variant, label ratio) of ``spec``.

    Graphs are loaded from ``spec.data_root`` unless passed in. A failing fold
    raises ``ExperimentFailed`` carrying the reports finished so far.
    """
    if graphs is None:
        manifest, graphs = load_tudataset(spec.data_root, spec.dataset)
        n_classes = manifest.n_classes
    graphs = list(graphs)
    if n_classes is None:
        n_classes = int(max(g.label for g in graphs)) + 1
    n_features = graphs[0].n_features
    data_fp = dataset_fingerprint(graphs)
    folds = list(spec.folds) if spec.folds is not None else list(range(spec.fold_count))
    reports: list[FoldReport] = []
    for variant in spec.variants:
        for ratio in spec.label_ratios:
            cfg = variant_config(variant, train_cfg)
            fp = config_fingerprint(spec.dataset, variant, ratio, spec.fold_count, spec.base_seed, cfg, model_cfg, data_fp)
            t0 = time.perf_counter()
            report = FoldReport(
                dataset=spec.dataset,
                variant=variant,
                label_ratio=ratio,
                per_fold_accuracy=[],
                fold_seeds=[],
                config_fingerprint=fp,
                params={
                    "alpha": cfg.weights.alpha,
                    "beta": cfg.weights.beta,
                    "weak_ratio": cfg.augment.weak_ratio,
                    "strong_ratio": cfg.augment.strong_ratio,
                    "pretrain": cfg.epochs_pretrain > 0,
                    "loss_mask": sorted(cfg.loss_mask),
                },
            )
            jobs = [
                (graphs, n_features, n_classes, f, ratio, variant, train_cfg, model_cfg,
                 {"fold_count": spec.fold_count, "base_seed": spec.base_seed, "checkpoint_dir": checkpoint_dir,
                  "checkpoint_fingerprint": checkpoint_fingerprint})
                for f in folds
            ]
            try:
                if parallel_folds > 1:
                    with ProcessPoolExecutor(parallel_folds) as ex:
                        results = list(ex.map(_run_fold_job, jobs))
                else:
                    results = [_run_fold_job(j) for j in jobs]
            except Exception as exc:
                report.status, report.error = "failed", f"{type(exc).__name__}: {exc}"
                reports.append(report)
                raise ExperimentFailed(f"{variant} @ {ratio}: {exc}", reports) from exc
            for f, res in zip(folds, results):
                report.per_fold_accuracy.append(res["accuracy"])
                report.fold_seeds.append(res["seed"])
                report.fold_ids.append(f)
                if audit is not None:
                    audit.append({"variant": variant, "label_ratio": ratio, "fold": f, **res})
            report.wall_time_seconds = time.perf_counter() - t0
            log.info("%s %s @ %.0f%%: %s", spec.dataset, variant, 100 * ratio, report.formatted())
            reports.append(report)
    return reports


def sweep_masking(
    spec: ExperimentSpec,
    train_cfg: TrainConfig = TrainConfig(),
    model_cfg: ModelConfig = ModelConfig(),
    ratios: Sequence[float] = MASK_RATIOS,
    **kw,
) -> list[FoldReport]:
    """One experiment per weak masking ratio, strong ratio = multiplier x weak."""
    out = []
    for r in ratios:
        aug = replace(train_cfg.augment, weak_ratio=float(r))
        out += run_experiment(spec, replace(train_cfg, augment=aug), model_cfg, **kw)
    return out


def sweep_alpha_beta(
    spec: ExperimentSpec,
    train_cfg: TrainConfig = TrainConfig(),
    model_cfg: ModelConfig = ModelConfig(),
    grid: Sequence[float] = AB_GRID,
    **kw,
) -> dict:
    """``{(alpha, beta): [FoldReport per label ratio]}`` over the full grid."""
    cells = {}
    for a in grid:
        for b in grid:
            cfg = replace(train_cfg, weights=LossWeights(float(a), float(b)))
            cells[(float(a), float(b))] = run_experiment(spec, cfg, model_cfg, **kw)
    return cells


def alpha_beta_matrix(cells: dict, label_ratio: float, grid: Sequence[float] = AB_GRID) -> np.ndarray:
    m = np.full((len(grid), len(grid)), np.nan)
    for i, a in enumerate(grid):
        for j, b in enumerate(grid):
            for r in cells.get((float(a), float(b)), []):
                if r.label_ratio == label_ratio:
                    m[i, j] = r.mean
    return m


def emit_report(reports: Sequence[FoldReport], fmt: str = "text") -> str:
    if fmt == "json":
        # wall time is left out so identical runs give byte-identical reports
        rows = [{k: v for k, v in r.to_dict().items() if k != "wall_time_seconds"} for r in reports]
        return json.dumps(rows, indent=2, sort_keys=True)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            ids = r.fold_ids or range(len(r.per_fold_accuracy))
            for f, acc, seed in zip(ids, r.per_fold_accuracy, r.fold_seeds):
                w.writerow([r.dataset, r.variant, r.label_ratio, f, repr(float(acc)), seed, r.config_fingerprint])
        return buf.getvalue()
    if fmt == "text":
        datasets = list(dict.fromkeys(r.dataset for r in reports))
        header = ["Percentage (%)", "Methods", *datasets]
        rows = []
        keys = list(dict.fromkeys((r.label_ratio, r.variant, _param_tag(r)) for r in reports))
        for ratio, variant, tag in keys:
            cells = []
            for d in datasets:
                hit = [r for r in reports if (r.label_ratio, r.variant, _param_tag(r), r.dataset) == (ratio, variant, tag, d)]
                cells.append(hit[0].formatted() if hit else "-")
            rows.append([f"{100 * ratio:g}%", variant + tag, *cells])
        widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)] if rows else [len(h) for h in header]
        line = lambda cols: " | ".join(str(c).ljust(w) for c, w in zip(cols, widths))
        out = [line(header), "-+-".join("-" * w for w in widths)]
        out += [line(r) for r in rows]
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def _param_tag(r: FoldReport) -> str:
    return r.params.get("tag", "")


def reports_from_csv(text: str) -> list[FoldReport]:
    grouped: dict = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (row["dataset"], row["variant"], float(row["label_ratio"]), row["config_fingerprint"])
        rep = grouped.setdefault(key, FoldReport(key[0], key[1], key[2], [], [], config_fingerprint=key[3]))
        rep.per_fold_accuracy.append(float(row["accuracy"]))
        rep.fold_seeds.append(int(row["seed"]))
        rep.fold_ids.append(int(row["fold"]))
    return list(grouped.values())
