"""Shared GCN encoder with sum readout, MLP, softmax classifier and projection head.

All computation is float64. Parameters live in a single ``SSCDLNet`` so the
original, weak and strong views are always encoded by the same weights.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Optional, Union

import numpy as np
import torch
from torch import nn

from .graph import GraphBatch, NormalizedAdjacency, normalize_adjacency

DTYPE = torch.float64
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class NumericError(ArithmeticError):
    pass


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    gcn_layers: int = 3
    hidden_dim: int = 64
    mlp_layers: int = 2
    projection_dim: int = 64
    use_batchnorm: bool = True

    def __post_init__(self):
        for k in ("gcn_layers", "hidden_dim", "projection_dim"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1")
        if self.mlp_layers < 0:
            raise ValueError("mlp_layers must be >= 0")


class BatchNorm(nn.Module):
    """Feature-wise batch normalization with explicit control over stat updates."""

    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.register_buffer("running_mean", torch.zeros(dim, dtype=DTYPE))
        self.register_buffer("running_var", torch.ones(dim, dtype=DTYPE))

    def forward(self, x: torch.Tensor, training: bool, update_stats: bool = False) -> torch.Tensor:
        if training:
            mean = x.mean(dim=0)
            var = x.var(dim=0, unbiased=False)
            if update_stats:
                n = x.shape[0]
                with torch.no_grad():
                    unbiased = var * n / (n - 1) if n > 1 else var
                    self.running_mean.mul_(1 - BN_MOMENTUM).add_(BN_MOMENTUM * mean.detach())
                    self.running_var.mul_(1 - BN_MOMENTUM).add_(BN_MOMENTUM * unbiased.detach())
        else:
            mean, var = self.running_mean, self.running_var
        return (x - mean) / torch.sqrt(var + BN_EPS) * self.weight + self.bias


def _uniform(shape, fan_in: int, gen: torch.Generator) -> nn.Parameter:
    bound = 1.0 / np.sqrt(fan_in)
    w = (torch.rand(shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound
    return nn.Parameter(w)


class SSCDLNet(nn.Module):
    """Every trainable tensor of the model.

    Weight matrices are stored ``(in, out)`` so layers compute ``x @ W``.
    """

    def __init__(self, cfg: ModelConfig, in_dim: int, n_classes: int, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.in_dim = in_dim
        self.n_classes = n_classes
        gen = torch.Generator().manual_seed(int(seed))
        h = cfg.hidden_dim
        self.gcn_weights = nn.ParameterList()
        dims = [in_dim] + [h] * cfg.gcn_layers
        for a, b in zip(dims[:-1], dims[1:]):
            self.gcn_weights.append(_uniform((a, b), a, gen))
        self.mlp_weights = nn.ParameterList([_uniform((h, h), h, gen) for _ in range(cfg.mlp_layers)])
        self.mlp_biases = nn.ParameterList([_uniform((h,), h, gen) for _ in range(cfg.mlp_layers)])
        if cfg.use_batchnorm:
            self.gcn_bn = nn.ModuleList([BatchNorm(h) for _ in range(cfg.gcn_layers)])
            self.mlp_bn = nn.ModuleList([BatchNorm(h) for _ in range(cfg.mlp_layers)])
        else:
            self.gcn_bn = self.mlp_bn = None
        self.cls_weight = _uniform((h, n_classes), h, gen)
        self.cls_bias = _uniform((n_classes,), h, gen)
        self.proj_w1 = _uniform((h, cfg.projection_dim), h, gen)
        self.proj_w2 = _uniform((cfg.projection_dim, cfg.projection_dim), cfg.projection_dim, gen)

    def fingerprint(self) -> str:
        d = {"model": asdict(self.cfg), "in_dim": self.in_dim, "n_classes": self.n_classes}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


class ForwardOutput(NamedTuple):
    node_embeddings: torch.Tensor
    graph_embeddings: torch.Tensor
    logits: torch.Tensor
    class_probs: torch.Tensor
    projections: torch.Tensor


def relu(x: torch.Tensor) -> torch.Tensor:
    # torch's relu backward already uses subgradient 0 at x == 0
    return torch.relu(x)


def _check_finite(x: torch.Tensor, what: str):
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite values in {what}")


def gcn_layer(
    h_prev: torch.Tensor,
    adj: Union[NormalizedAdjacency, torch.Tensor],
    w: torch.Tensor,
    bn: Optional[BatchNorm] = None,
    training: bool = False,
    update_stats: bool = False,
) -> torch.Tensor:
    """relu(BN(Â h W)); BN is skipped when ``bn`` is None."""
    _check_finite(h_prev, "gcn_layer input")
    a = adj.tensor if isinstance(adj, NormalizedAdjacency) else adj
    if a.is_sparse:
        z = torch.sparse.mm(a, h_prev @ w)
    else:
        z = a @ (h_prev @ w)
    if bn is not None:
        z = bn(z, training, update_stats)
    return relu(z)


def readout_sum(node_embeddings: torch.Tensor, graph_index, n_graphs: Optional[int] = None) -> torch.Tensor:
    gi = torch.as_tensor(np.array(graph_index, dtype=np.int64))
    if gi.shape[0] != node_embeddings.shape[0]:
        raise ValueError("graph_index length must equal number of node rows")
    n = int(gi.max()) + 1 if n_graphs is None else n_graphs
    out = torch.zeros((n, node_embeddings.shape[1]), dtype=node_embeddings.dtype)
    return out.index_add(0, gi, node_embeddings)


def mlp_head(x: torch.Tensor, net: SSCDLNet, training: bool = False, update_stats: bool = False) -> torch.Tensor:
    for k, (w, b) in enumerate(zip(net.mlp_weights, net.mlp_biases)):
        if x.shape[1] != w.shape[0]:
            raise ValueError(f"mlp layer {k}: input dim {x.shape[1]} != weight rows {w.shape[0]}")
        x = x @ w + b
        if net.mlp_bn is not None:
            x = net.mlp_bn[k](x, training, update_stats)
        x = relu(x)
    return x


def classify(h: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(logits, probabilities)`` of the linear-softmax classifier."""
    logits = h @ weight + bias
    return logits, torch.softmax(logits, dim=1)


def project(h: torch.Tensor, w1: torch.Tensor, w2: torch.Tensor) -> torch.Tensor:
    return relu(h @ w1) @ w2


def encode(
    batch: GraphBatch,
    net: SSCDLNet,
    adj: Optional[NormalizedAdjacency] = None,
    mode: str = "eval",
    update_stats: bool = False,
) -> ForwardOutput:
    """Full pipeline for one batch.

    ``mode="train"`` normalizes with batch statistics; running statistics are
    only written when ``update_stats`` is also set.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if adj is None:
        adj = normalize_adjacency(batch)
    h = torch.from_numpy(np.array(batch.packed_features, dtype=np.float64))
    for k, w in enumerate(net.gcn_weights):
        bn = net.gcn_bn[k] if net.gcn_bn is not None else None
        h = gcn_layer(h, adj, w, bn, training, update_stats)
    nodes = h
    pooled = readout_sum(nodes, batch.graph_index, batch.n_graphs)
    hg = mlp_head(pooled, net, training, update_stats)
    logits, probs = classify(hg, net.cls_weight, net.cls_bias)
    proj = project(hg, net.proj_w1, net.proj_w2)
    return ForwardOutput(nodes, hg, logits, probs, proj)


forward = encode


def gradients(loss_value_fn: Callable[[], torch.Tensor], params) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss.

    ``params`` is either a module (all named parameters) or a mapping of
    name to tensor with ``requires_grad``. Parameters the loss does not
    touch get zero gradients.
    """
    named = dict(params.named_parameters()) if isinstance(params, nn.Module) else dict(params)
    loss = loss_value_fn()
    if loss.dim() != 0:
        raise ValueError("loss must be a scalar")
    grads = torch.autograd.grad(loss, list(named.values()), allow_unused=True)
    return {k: (torch.zeros_like(p) if g is None else g) for (k, p), g in zip(named.items(), grads)}


def state_arrays(net: SSCDLNet) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in net.state_dict().items()}


def save_checkpoint(path, net: SSCDLNet, fingerprint: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = state_arrays(net)
    meta = {
        "fingerprint": fingerprint or net.fingerprint(),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "model": asdict(net.cfg),
        "in_dim": net.in_dim,
        "n_classes": net.n_classes,
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path, net: Optional[SSCDLNet] = None, fingerprint: Optional[str] = None) -> SSCDLNet:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if fingerprint is not None and meta["fingerprint"] != fingerprint:
        raise CheckpointError(f"checkpoint fingerprint {meta['fingerprint']} != expected {fingerprint}")
    if net is None:
        net = SSCDLNet(ModelConfig(**meta["model"]), meta["in_dim"], meta["n_classes"])
    own = net.state_dict()
    for k, v in arrays.items():
        if k not in own or tuple(own[k].shape) != v.shape:
            raise CheckpointError(f"checkpoint tensor {k} does not match model layout")
    net.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    return net
