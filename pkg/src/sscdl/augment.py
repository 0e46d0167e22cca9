"""Weak and strong graph views by attribute masking or edge perturbation.

The strong perturbation always contains the weak one: the strong mask is
sampled first and the weak mask is a random thinning of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphBatch

AUGMENT_KINDS = ("attribute_mask", "edge_perturb")


class AugmentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    kind: str = "attribute_mask"
    weak_ratio: float = 0.3
    strong_multiplier: float = 2.0
    seed: int = 0
    resample_each_epoch: bool = False

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise AugmentConfigError(f"unknown augmentation kind {self.kind!r}")
        if not 0 < self.weak_ratio <= 0.5:
            raise AugmentConfigError(f"weak_ratio {self.weak_ratio} outside (0, 0.5]")
        if self.strong_multiplier <= 0:
            raise AugmentConfigError("strong_multiplier must be positive")
        if self.strong_ratio > 0.95:
            raise AugmentConfigError(
                f"strong ratio {self.strong_ratio:.3f} exceeds 0.95 (weak_ratio x strong_multiplier)"
            )

    @property
    def strong_ratio(self) -> float:
        return self.weak_ratio * self.strong_multiplier


@dataclass(frozen=True)
class AugmentedPair:
    original: GraphBatch
    weak: GraphBatch
    strong: GraphBatch


def _nested_masks(shape, weak: float, strong: float, rng) -> tuple[np.ndarray, np.ndarray]:
    strong_mask = rng.random(shape) < strong
    # keep each strongly masked entry in the weak mask with prob weak/strong
    keep = rng.random(shape) < (weak / strong if strong > 0 else 0.0)
    return strong_mask & keep, strong_mask


def _mask_attributes(batch: GraphBatch, cfg: AugmentConfig, rng) -> tuple[GraphBatch, GraphBatch]:
    x = batch.packed_features
    weak_mask, strong_mask = _nested_masks(x.shape, cfg.weak_ratio, cfg.strong_ratio, rng)
    return (
        batch.with_features(np.where(weak_mask, 0.0, x)),
        batch.with_features(np.where(strong_mask, 0.0, x)),
    )


def _sample_non_edges(lo: int, n: int, existing: set, k: int, rng) -> list[tuple[int, int]]:
    if n <= 64:
        candidates = [(lo + i, lo + j) for i in range(n) for j in range(i + 1, n) if (lo + i, lo + j) not in existing]
        return [candidates[i] for i in rng.permutation(len(candidates))[:k]]
    # rejection sampling for large graphs; gives up after a bounded number of draws
    picked: list[tuple[int, int]] = []
    seen = set(existing)
    for _ in range(50 * k + 100):
        if len(picked) == k:
            break
        i, j = sorted(rng.integers(0, n, size=2).tolist())
        pair = (lo + i, lo + j)
        if i != j and pair not in seen:
            seen.add(pair)
            picked.append(pair)
    return picked


def _perturb_edges(batch: GraphBatch, cfg: AugmentConfig, rng) -> tuple[GraphBatch, GraphBatch]:
    """Per graph: drop a fraction of edges and add as many random non-edges."""
    off = batch.node_offsets
    edges = batch.edges
    owner = batch.graph_index[edges[:, 0]] if len(edges) else np.zeros(0, dtype=np.int64)
    weak_out, strong_out = [], []
    for g in range(batch.n_graphs):
        lo, hi = int(off[g]), int(off[g + 1])
        n = hi - lo
        e = edges[owner == g]
        m = len(e)
        # the strong drop set is chosen first; weak drops a prefix of it
        k_strong = min(m, int(round(cfg.strong_ratio * m)))
        k_weak = min(k_strong, int(round(cfg.weak_ratio * m)))
        order = rng.permutation(m)
        drop_strong = order[:k_strong]
        drop_weak = drop_strong[rng.permutation(k_strong)[:k_weak]]

        existing = {tuple(p) for p in e.tolist()}
        add_strong = _sample_non_edges(lo, n, existing, k_strong, rng)
        add_weak = add_strong[:k_weak]

        keep_w = np.ones(m, dtype=bool)
        keep_w[drop_weak] = False
        keep_s = np.ones(m, dtype=bool)
        keep_s[drop_strong] = False
        weak_out.append(np.vstack([e[keep_w], np.array(add_weak, dtype=np.int64).reshape(-1, 2)]))
        strong_out.append(np.vstack([e[keep_s], np.array(add_strong, dtype=np.int64).reshape(-1, 2)]))
    cat = lambda parts: np.vstack(parts) if parts else np.zeros((0, 2), dtype=np.int64)
    return batch.with_edges(cat(weak_out)), batch.with_edges(cat(strong_out))


def augment_pair(batch: GraphBatch, cfg: AugmentConfig, seed: int | None = None) -> AugmentedPair:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    if cfg.kind == "attribute_mask":
        weak, strong = _mask_attributes(batch, cfg, rng)
    else:
        weak, strong = _perturb_edges(batch, cfg, rng)
    return AugmentedPair(batch, weak, strong)


def masked_fraction(batch_a: GraphBatch, batch_b: GraphBatch) -> float:
    """Fraction of feature entries that differ, over entries nonzero in either batch."""
    a, b = batch_a.packed_features, batch_b.packed_features
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    support = (a != 0) | (b != 0)
    total = int(support.sum())
    if total == 0:
        return 0.0
    return float(((a != b) & support).sum() / total)
