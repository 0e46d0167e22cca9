"""Two-stage optimization: similarity-loss pretraining on unlabeled graphs,
then fine-tuning on labeled graphs with ``L_c + alpha L_s + beta L_d``."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch

from .augment import AugmentConfig, augment_pair
from .graph import Graph, GraphBatch, normalize_adjacency, pack_batch
from .losses import (
    CondDistConfig,
    LossWeights,
    conditional_probs,
    cross_entropy,
    distribution_divergence,
    negative_indices,
    nt_xent,
    similarity_loss,
)
from .model import ModelConfig, NumericError, SSCDLNet, encode, gradients

log = logging.getLogger(__name__)

LOSS_TERMS = ("L_c", "L_s", "L_d")
PRETRAIN_LOSSES = ("similarity", "nt_xent")


@dataclass(frozen=True)
class TrainConfig:
    epochs_pretrain: int = 100
    epochs_finetune: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    weights: LossWeights = LossWeights()
    cond_dist: CondDistConfig = CondDistConfig()
    augment: AugmentConfig = AugmentConfig()
    seed: int = 0
    loss_mask: frozenset = frozenset(LOSS_TERMS)
    pretrain_loss: str = "similarity"
    similarity_temperature: float = 1.0
    early_stopping: bool = False
    patience: int = 30

    def __post_init__(self):
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        object.__setattr__(self, "loss_mask", frozenset(self.loss_mask))
        unknown = self.loss_mask - set(LOSS_TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        if self.pretrain_loss not in PRETRAIN_LOSSES:
            raise ValueError(f"pretrain_loss must be one of {PRETRAIN_LOSSES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_mask"] = sorted(self.loss_mask)
        return d


@dataclass
class AdamMoments:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class TrainState:
    params: SSCDLNet
    optimizer_moments: AdamMoments = field(default_factory=AdamMoments)
    epoch: int = 0
    loss_history: list = field(default_factory=list)
    seen_graph_ids: set = field(default_factory=set)
    stages: list = field(default_factory=list)


def adam_step(params: dict, grads: dict, moments: AdamMoments, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """Bias-corrected adaptive-moment update, applied in place.

    ``params`` and ``grads`` map names to tensors. Returns ``(params, moments)``.
    """
    b1, b2 = betas
    for k, g in grads.items():
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {k}")
    moments.t += 1
    t = moments.t
    with torch.no_grad():
        for k, p in params.items():
            g = grads[k]
            m = moments.m.get(k)
            v = moments.v.get(k)
            m = b1 * m + (1 - b1) * g if m is not None else (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g if v is not None else (1 - b2) * g * g
            moments.m[k], moments.v[k] = m, v
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p.sub_(lr * m_hat / (torch.sqrt(v_hat) + eps))
    return params, moments


def init_state(in_dim: int, n_classes: int, model_cfg: ModelConfig = ModelConfig(), seed: int = 0) -> TrainState:
    torch.manual_seed(seed)
    return TrainState(params=SSCDLNet(model_cfg, in_dim, n_classes, seed=seed))


def _minibatches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    # a 1-graph batch has no negatives; fold it into the previous chunk
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def make_views(graphs: Sequence[Graph], cfg: AugmentConfig, seed: int) -> tuple[list[Graph], list[Graph]]:
    """Weak and strong copies of every graph, built from one packed batch."""
    pair = augment_pair(pack_batch(list(graphs)), cfg, seed=seed)
    return pair.weak.unpack(), pair.strong.unpack()


def _views_seed(cfg: TrainConfig, stage: int, epoch: int) -> list[int]:
    if cfg.augment.resample_each_epoch:
        return [cfg.augment.seed, cfg.seed, stage, epoch]
    return [cfg.augment.seed, cfg.seed, stage]


def _step(state: TrainState, loss_fn, lr: float, where: str):
    net = state.params
    holder = {}

    def wrapped():
        loss, parts = loss_fn()
        holder["loss"], holder["parts"] = loss, parts
        return loss

    try:
        grads = gradients(wrapped, net)
    except NumericError as exc:
        raise NumericError(f"{exc} at {where}") from exc
    loss = holder["loss"]
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss at {where}")
    adam_step(dict(net.named_parameters()), grads, state.optimizer_moments, lr)
    for k, p in net.named_parameters():
        if not torch.isfinite(p).all():
            raise NumericError(f"non-finite parameter {k} after {where}")
    return {k: float(v.detach()) for k, v in holder["parts"].items()}


def _record(state: TrainState, stage: str, epoch: int, parts: list[dict]):
    keys = sorted({k for p in parts for k in p})
    row = {"stage": stage, "epoch": epoch}
    row.update({k: float(np.mean([p[k] for p in parts if k in p])) for k in keys})
    state.loss_history.append(row)


def pretrain(graphs_unlabeled: Sequence[Graph], config: TrainConfig, state: TrainState) -> TrainState:
    """Self-supervised stage: minimize the cross-view similarity loss on (original, weak)."""
    graphs = list(graphs_unlabeled)
    state.stages.append({"stage": "pretrain", "epochs": config.epochs_pretrain, "n_graphs": len(graphs)})
    if config.epochs_pretrain == 0:
        return state
    if len(graphs) < 2:
        raise ValueError("pretraining needs at least 2 graphs")
    rng = np.random.default_rng([config.seed, 11])
    weak = strong = None
    for epoch in range(config.epochs_pretrain):
        if weak is None or config.augment.resample_each_epoch:
            weak, strong = make_views(graphs, config.augment, _views_seed(config, 0, epoch))
        parts = []
        for b, idx in enumerate(_minibatches(len(graphs), config.batch_size, rng)):
            bo = pack_batch([graphs[i] for i in idx])
            bw = pack_batch([weak[i] for i in idx])
            adj = normalize_adjacency(bo)
            adj_w = adj if config.augment.kind == "attribute_mask" else normalize_adjacency(bw)
            if config.pretrain_loss == "nt_xent":
                bs = pack_batch([strong[i] for i in idx])
                adj_s = adj if config.augment.kind == "attribute_mask" else normalize_adjacency(bs)
            state.seen_graph_ids.update(int(g) for g in bo.graph_ids)

            def loss_fn():
                o = encode(bo, state.params, adj, mode="train", update_stats=True)
                w = encode(bw, state.params, adj_w, mode="train")
                if config.pretrain_loss == "nt_xent":
                    s = encode(bs, state.params, adj_s, mode="train")
                    l = nt_xent(w.projections, s.projections, config.cond_dist.temperature)
                    return l, {"NT_Xent": l}
                l = similarity_loss(w.projections, o.projections, config.similarity_temperature)
                return l, {"L_s": l}

            parts.append(_step(state, loss_fn, config.learning_rate, f"pretrain epoch {epoch} batch {b}"))
        state.epoch += 1
        _record(state, "pretrain", epoch, parts)
    return state


def active_terms(config: TrainConfig) -> set:
    w = config.weights
    on = {"L_c"} & config.loss_mask
    if "L_s" in config.loss_mask and w.alpha != 0:
        on.add("L_s")
    if "L_d" in config.loss_mask and w.beta != 0:
        on.add("L_d")
    return on


def finetune(
    graphs_labeled: Sequence[Graph],
    state: TrainState,
    config: TrainConfig,
    val_graphs: Optional[Sequence[Graph]] = None,
) -> TrainState:
    """Supervised stage on labeled graphs with the composite loss restricted to ``loss_mask``.

    Terms with zero weight are not evaluated at all.
    """
    graphs = list(graphs_labeled)
    state.stages.append({"stage": "finetune", "epochs": config.epochs_finetune, "n_graphs": len(graphs)})
    if config.epochs_finetune == 0:
        return state
    if len(graphs) < 2:
        raise ValueError("fine-tuning needs at least 2 labeled graphs")
    if any(g.label is None for g in graphs):
        raise ValueError("fine-tuning graphs must all carry labels")
    terms = active_terms(config)
    rng = np.random.default_rng([config.seed, 22])
    neg_rng = np.random.default_rng([config.seed, 33])
    weights = config.weights
    weak = strong = None
    best = (-1.0, None, 0)
    for epoch in range(config.epochs_finetune):
        if weak is None or config.augment.resample_each_epoch:
            weak, strong = make_views(graphs, config.augment, _views_seed(config, 1, epoch))
        parts = []
        for b, idx in enumerate(_minibatches(len(graphs), config.batch_size, rng)):
            bo = pack_batch([graphs[i] for i in idx])
            bw = pack_batch([weak[i] for i in idx])
            bs = pack_batch([strong[i] for i in idx])
            adj = normalize_adjacency(bo)
            same = config.augment.kind == "attribute_mask"
            adj_w = adj if same else normalize_adjacency(bw)
            adj_s = adj if same else normalize_adjacency(bs)
            labels = bo.labels
            neg_idx = None
            if "L_d" in terms and config.cond_dist.negative_count is not None:
                neg_idx = negative_indices(len(idx), config.cond_dist.negative_count, int(neg_rng.integers(2**31)))
            state.seen_graph_ids.update(int(g) for g in bo.graph_ids)

            def loss_fn():
                o = encode(bo, state.params, adj, mode="train", update_stats=True)
                out = {}
                loss = cross_entropy(o.class_probs, labels)
                out["L_c"] = loss
                if "L_s" in terms or "L_d" in terms:
                    w = encode(bw, state.params, adj_w, mode="train")
                if "L_s" in terms:
                    out["L_s"] = similarity_loss(w.projections, o.projections, config.similarity_temperature)
                    loss = loss + weights.alpha * out["L_s"]
                if "L_d" in terms:
                    s = encode(bs, state.params, adj_s, mode="train")
                    cd = config.cond_dist
                    pw = conditional_probs(w.graph_embeddings, o.graph_embeddings, cd, neg_idx)
                    ps = conditional_probs(s.graph_embeddings, o.graph_embeddings, cd, neg_idx)
                    out["L_d"] = distribution_divergence(pw, ps, cd.mode)
                    loss = loss + weights.beta * out["L_d"]
                out["L"] = loss
                return loss, out

            parts.append(_step(state, loss_fn, config.learning_rate, f"finetune epoch {epoch} batch {b}"))
        state.epoch += 1
        _record(state, "finetune", epoch, parts)
        if config.early_stopping and val_graphs:
            acc = evaluate_accuracy(state.params, val_graphs)
            if acc > best[0]:
                best = (acc, copy.deepcopy(state.params.state_dict()), epoch)
            elif epoch - best[2] >= config.patience:
                log.info("early stop at epoch %d (best val acc %.4f at %d)", epoch, best[0], best[2])
                break
    if config.early_stopping and best[1] is not None:
        state.params.load_state_dict(best[1])
    return state


def predict_probs(net: SSCDLNet, graphs: Sequence[Graph], batch_size: int = 512) -> np.ndarray:
    out = []
    with torch.no_grad():
        for i in range(0, len(graphs), batch_size):
            batch = pack_batch(list(graphs[i:i + batch_size]))
            out.append(encode(batch, net, mode="eval").class_probs.numpy())
    return np.vstack(out)


def accuracy(class_probs, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    probs = np.asarray(class_probs)
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def evaluate_accuracy(net: SSCDLNet, graphs: Sequence[Graph]) -> float:
    return accuracy(predict_probs(net, graphs), [g.label for g in graphs])
