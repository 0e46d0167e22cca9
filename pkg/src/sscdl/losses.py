"""Scalar objectives: conditional distributions, distribution divergence,
cross-view similarity loss, NT-Xent, cross-entropy and their weighted sum.

Batched functions take torch tensors and are differentiable. Logs of
probabilities are clamped at ``EPS``; every clamp that changes a value is
counted in ``CLAMP_EVENTS``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

EPS = 1e-12
NORM_EPS = 1e-12
MODES = ("scalar_pair", "full_distribution")

CLAMP_EVENTS: Counter = Counter()


class UndefinedSimilarityError(ValueError):
    pass


class PreconditionError(ValueError):
    def __init__(self, msg: str, threshold: float):
        super().__init__(msg)
        self.threshold = threshold


@dataclass(frozen=True)
class CondDistConfig:
    temperature: float = 0.5
    negative_count: Optional[int] = None  # None: all other graphs in the batch
    mode: str = "scalar_pair"
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.negative_count is not None and self.negative_count < 1:
            raise ValueError("negative_count must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.1

    def __post_init__(self):
        for k in ("alpha", "beta"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{k} must be finite and >= 0, got {v}")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _safe_log(p: torch.Tensor, what: str) -> torch.Tensor:
    small = p < EPS
    if bool(small.any()):
        CLAMP_EVENTS[what] += int(small.sum())
    return torch.log(torch.clamp(p, min=EPS))


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _unit_rows(x: torch.Tensor) -> torch.Tensor:
    return x / torch.clamp(torch.linalg.vector_norm(x, dim=1, keepdim=True), min=NORM_EPS)


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """``S[i, j] = cos(a_i, b_j)``."""
    return _unit_rows(a) @ _unit_rows(b).T


def cond_prob(h_aug_i, h_i, negatives: Sequence, cfg: CondDistConfig = CondDistConfig()):
    """Conditional probability of one augmented embedding given its original.

    The candidates are the positive ``h_aug_i`` followed by ``negatives`` (other
    embeddings from the same augmented view), each scored by
    ``exp(cos(candidate, h_i) / tau)``. Returns the positive's probability in
    ``scalar_pair`` mode, else the normalized vector over all K+1 candidates.
    """
    if len(negatives) == 0:
        raise ValueError("need at least one negative")
    h_i = np.asarray(h_i, dtype=np.float64)
    sims = [cosine_sim(h_aug_i, h_i)] + [cosine_sim(n, h_i) for n in negatives]
    logits = np.array(sims) / cfg.temperature
    logits -= logits.max()
    w = np.exp(logits)
    dist = w / w.sum()
    return float(dist[0]) if cfg.mode == "scalar_pair" else dist


def negative_indices(n: int, k: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Row ``i`` lists the negatives for graph ``i``: all ``j != i`` or a seeded sample of ``k``."""
    if n < 2:
        raise ValueError("need at least two graphs for negatives")
    others = np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=np.int64)
    if k is None or k >= n - 1:
        return others
    rng = np.random.default_rng(seed)
    return np.stack([rng.choice(row, size=k, replace=False) for row in others])


def conditional_log_probs(h_aug: torch.Tensor, h: torch.Tensor, cfg: CondDistConfig, neg_index=None) -> torch.Tensor:
    """Log conditional distribution over ``[positive] + negatives`` per graph, shape ``(n, K+1)``."""
    n = h.shape[0]
    if neg_index is None:
        neg_index = negative_indices(n, cfg.negative_count, cfg.seed)
    idx = torch.as_tensor(np.concatenate([np.arange(n)[:, None], np.asarray(neg_index)], axis=1))
    sims = cosine_matrix(h, h_aug)  # sims[i, j] = cos(h_i, h_aug_j)
    logits = torch.gather(sims, 1, idx) / cfg.temperature
    return torch.log_softmax(logits, dim=1)


def conditional_probs(h_aug: torch.Tensor, h: torch.Tensor, cfg: CondDistConfig, neg_index=None) -> torch.Tensor:
    """``(n,)`` positive-pair probabilities or ``(n, K+1)`` distributions, per ``cfg.mode``."""
    lp = conditional_log_probs(h_aug, h, cfg, neg_index)
    return torch.exp(lp[:, 0]) if cfg.mode == "scalar_pair" else torch.exp(lp)


def distribution_divergence(weak_probs, strong_probs, mode: str = "scalar_pair") -> torch.Tensor:
    pw = _as_tensor(weak_probs)
    ps = _as_tensor(strong_probs)
    if pw.shape != ps.shape:
        raise ValueError("weak and strong probabilities must have the same shape")
    log_ps = _safe_log(ps, "distribution_divergence")
    if mode == "scalar_pair":
        if pw.dim() != 1:
            raise ValueError("scalar_pair mode expects one probability per graph")
        return -(pw * log_ps).mean()
    if mode == "full_distribution":
        if pw.dim() != 2:
            raise ValueError("full_distribution mode expects an (n, K+1) matrix")
        return -(pw * log_ps).sum(dim=1).mean()
    raise ValueError(f"unknown mode {mode!r}")


def similarity_loss(p_w: torch.Tensor, p: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Cross-view loss: positive ``(p_w_i, p_i)``, negatives ``p_j`` (j != i) from the original view only.

    The positive pair is not part of the denominator.
    """
    p_w, p = _as_tensor(p_w), _as_tensor(p)
    n = p.shape[0]
    if p_w.shape[0] != n:
        raise ValueError("row counts differ")
    if n < 2:
        raise ValueError("similarity_loss needs at least 2 graphs")
    s = cosine_matrix(p_w, p) / temperature
    diag = torch.eye(n, dtype=torch.bool)
    neg = torch.logsumexp(s.masked_fill(diag, float("-inf")), dim=1)
    return (neg - s.diagonal()).mean()


def nt_xent(u: torch.Tensor, v: torch.Tensor, tau: float = 0.5) -> torch.Tensor:
    u, v = _as_tensor(u), _as_tensor(v)
    n = u.shape[0]
    if v.shape[0] != n:
        raise ValueError("row counts differ")
    if n < 2:
        raise ValueError("nt_xent needs at least 2 rows")
    suv = cosine_matrix(u, v) / tau
    suu = cosine_matrix(u, u) / tau
    suu = suu.masked_fill(torch.eye(n, dtype=torch.bool), float("-inf"))
    denom = torch.logsumexp(torch.cat([suv, suu], dim=1), dim=1)
    return (denom - suv.diagonal()).mean()


def cross_entropy(class_probs, labels) -> torch.Tensor:
    probs = _as_tensor(class_probs)
    y = torch.as_tensor(np.array(labels, dtype=np.int64))
    if y.min() < 0 or y.max() >= probs.shape[1]:
        raise ValueError("labels outside [0, c)")
    picked = probs[torch.arange(probs.shape[0]), y]
    return -_safe_log(picked, "cross_entropy").mean()


def total_loss(l_c, l_s, l_d, weights: LossWeights):
    return l_c + weights.alpha * l_s + weights.beta * l_d


@dataclass
class DivergenceBoundReport:
    tau: float
    K: int
    threshold: float
    bound: float
    trials: int
    seed: int
    margins: list = field(default_factory=list)
    holds: list = field(default_factory=list)
    scalar_pair_values: list = field(default_factory=list)
    scalar_pair_batch_value: float = float("nan")

    @property
    def min_margin(self) -> float:
        return float(min(self.margins)) if self.margins else float("nan")

    @property
    def all_hold(self) -> bool:
        return bool(self.holds) and all(self.holds)

    @property
    def scalar_pair_batch_holds(self) -> bool:
        return self.scalar_pair_batch_value >= self.bound

    @property
    def scalar_pair_fraction_holding(self) -> float:
        v = np.asarray(self.scalar_pair_values)
        return float(np.mean(v >= self.bound)) if len(v) else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(
            min_margin=self.min_margin,
            all_hold=self.all_hold,
            scalar_pair={
                "batch_value": self.scalar_pair_batch_value,
                "batch_holds": self.scalar_pair_batch_holds,
                "fraction_of_samples_holding": self.scalar_pair_fraction_holding,
                "asserted": False,
            },
        )
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def divergence_bound_threshold(tau: float) -> float:
    return math.exp(1.0 / tau) - 1.0


def _vector_with_cosine(ref: np.ndarray, cos: float, rng) -> np.ndarray:
    unit = ref / np.linalg.norm(ref)
    r = rng.standard_normal(ref.shape)
    ortho = r - (r @ unit) * unit
    ortho /= np.linalg.norm(ortho)
    scale = rng.uniform(0.5, 2.0)
    return scale * (cos * unit + math.sqrt(max(0.0, 1 - cos * cos)) * ortho)


def divergence_bound_check(tau: float, K: int, trials: int = 1000, seed: int = 0, dim: int = 16) -> DivergenceBoundReport:
    """Numerically check the lower bound ``-log p(h^s|h) >= log(K+1) - 1/tau``.

    Each trial draws an original embedding, K negatives orthogonal to it and a
    strong-view positive with a random cosine in [-1, 1]. The scalar-pair
    divergence (weighted by a random weak-view probability) is recorded but
    not asserted.
    """
    threshold = divergence_bound_threshold(tau)
    needed = math.ceil(threshold)
    if K < needed:
        raise PreconditionError(f"K={K} is below the required threshold e^(1/tau) - 1 = {threshold:.4f}", threshold)
    rng = np.random.default_rng(seed)
    bound = math.log(K + 1) - 1.0 / tau
    cfg = CondDistConfig(temperature=tau, mode="scalar_pair")
    report = DivergenceBoundReport(tau=tau, K=K, threshold=threshold, bound=bound, trials=trials, seed=seed)
    for _ in range(trials):
        h = rng.standard_normal(dim)
        unit = h / np.linalg.norm(h)
        negs = rng.standard_normal((K, dim))
        negs -= np.outer(negs @ unit, unit)
        h_s = _vector_with_cosine(h, rng.uniform(-1, 1), rng)
        h_w = _vector_with_cosine(h, rng.uniform(-1, 1), rng)
        p_s = cond_prob(h_s, h, negs, cfg)
        p_w = cond_prob(h_w, h, negs, cfg)
        nll = -math.log(max(p_s, EPS))
        margin = nll - bound
        report.margins.append(margin)
        report.holds.append(bool(margin >= 0))
        report.scalar_pair_values.append(p_w * nll)
    report.scalar_pair_batch_value = float(np.mean(report.scalar_pair_values))
    return report
