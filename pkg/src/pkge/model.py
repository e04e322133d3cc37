"""Translation-embedding math: energy, hinge ranking loss, subgradients,
and negative sampling.

The energy of a fact (h, r, t) is ||h + r - t|| under L1 or L2; training
pushes positives at least ``margin`` below sampled corruptions. All
functions here are pure (any randomness comes in through an explicit
Generator), so they are safe to call from concurrent workers.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .data import Triple, Vocabulary
from .store import EmbeddingTable

NORMS = ("L1", "L2")

GradKey = tuple[str, int]


def check_norm(norm: str) -> str:
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
    return norm


class TripleGradient(NamedTuple):
    """Partials of the energy d(h, r, t) with respect to h, r, and t."""

    d_head: np.ndarray
    d_relation: np.ndarray
    d_tail: np.ndarray


class CorruptionPlan(NamedTuple):
    """Pre-drawn negatives for an ordered triple sequence.

    ``head_side[i, j]`` says whether draw j for triple i replaces the head;
    ``replacement[i, j]`` is the sampled entity id (never equal to the slot
    it replaces).
    """

    head_side: np.ndarray
    replacement: np.ndarray


def energy(h_vec: np.ndarray, r_vec: np.ndarray, t_vec: np.ndarray, norm: str) -> float:
    """Dissimilarity ||h + r - t|| under the chosen norm; lower is more plausible."""
    check_norm(norm)
    if not (h_vec.shape == r_vec.shape == t_vec.shape):
        raise ValueError(
            f"dimension mismatch: {h_vec.shape} vs {r_vec.shape} vs {t_vec.shape}"
        )
    diff = h_vec + r_vec - t_vec
    return _norm_value(diff, norm)


def _norm_value(diff: np.ndarray, norm: str) -> float:
    if norm == "L1":
        return float(np.abs(diff).sum())
    return float(np.sqrt((diff * diff).sum()))


def _norm_grad(diff: np.ndarray, norm: str) -> np.ndarray:
    """Subgradient of ||x|| at x=diff; 0 is used at L1 kinks and at the L2 origin."""
    if norm == "L1":
        return np.sign(diff)
    n = np.sqrt((diff * diff).sum())
    if n == 0.0:
        return np.zeros_like(diff)
    return diff / n


def hinge(margin: float, d_pos: float, d_neg: float) -> float:
    """max(0, margin + d_pos - d_neg)."""
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    return max(0.0, margin + d_pos - d_neg)


def triple_gradient(
    h_vec: np.ndarray, r_vec: np.ndarray, t_vec: np.ndarray, norm: str
) -> TripleGradient:
    """Gradient of d(h, r, t) w.r.t. each vector: (+g, +g, -g) with g = grad||h+r-t||."""
    g = _norm_grad(h_vec + r_vec - t_vec, norm)
    return TripleGradient(d_head=g, d_relation=g, d_tail=-g)


def corrupt(triple: Triple, vocab: Vocabulary, rng: np.random.Generator) -> Triple:
    """Replace the head or the tail (each with probability 1/2) by a random
    different entity; the relation is never changed."""
    n_entities = vocab.n_entities
    if n_entities < 2:
        raise ValueError("cannot corrupt with fewer than 2 entities")
    head_side = rng.random() < 0.5
    raw = int(rng.integers(0, n_entities - 1))
    h, r, t = triple
    if head_side:
        return Triple(raw + (raw >= h), r, t)
    return Triple(h, r, raw + (raw >= t))


def draw_corruption_plan(
    triples: np.ndarray,
    n_entities: int,
    neg_per_pos: int,
    rng: np.random.Generator,
    avoid_encoded: np.ndarray | None = None,
    n_relations: int = 0,
) -> CorruptionPlan:
    """Draw ``neg_per_pos`` corruptions per triple, in triple order.

    The draws depend only on the generator state and the triple sequence,
    never on how the sequence is later split across workers. With
    ``avoid_encoded`` (sorted encoded known triples), corrupted triples that
    collide with known facts are re-drawn a bounded number of times.
    """
    if n_entities < 2:
        raise ValueError("cannot corrupt with fewer than 2 entities")
    if neg_per_pos < 1:
        raise ValueError(f"neg_per_pos must be >= 1, got {neg_per_pos}")
    n = len(triples)
    head_side = rng.random((n, neg_per_pos)) < 0.5
    raw = rng.integers(0, n_entities - 1, size=(n, neg_per_pos))
    orig = np.where(head_side, triples[:, 0:1], triples[:, 2:3])
    replacement = raw + (raw >= orig)

    if avoid_encoded is not None and n:
        other = np.where(head_side, triples[:, 2:3], triples[:, 0:1])
        rel = np.broadcast_to(triples[:, 1:2], head_side.shape)
        for _ in range(100):
            heads = np.where(head_side, replacement, other)
            tails = np.where(head_side, other, replacement)
            enc = (heads * n_relations + rel) * n_entities + tails
            pos = np.searchsorted(avoid_encoded, enc)
            pos_safe = np.minimum(pos, len(avoid_encoded) - 1)
            bad = avoid_encoded[pos_safe] == enc
            if not bad.any():
                break
            raw_new = rng.integers(0, n_entities - 1, size=int(bad.sum()))
            replacement[bad] = raw_new + (raw_new >= orig[np.nonzero(bad)[0], 0])
    return CorruptionPlan(head_side, replacement)


def encode_triples(triples: np.ndarray, n_entities: int, n_relations: int) -> np.ndarray:
    """Sorted scalar encoding for fast membership checks."""
    enc = (triples[:, 0] * n_relations + triples[:, 1]) * n_entities + triples[:, 2]
    return np.sort(enc)


def corrupted_triple(positive: Triple, head_side: bool, replacement: int) -> Triple:
    h, r, t = positive
    if head_side:
        return Triple(int(replacement), r, t)
    return Triple(h, r, int(replacement))


def term_gradients(
    table: EmbeddingTable,
    positive: Triple,
    corrupted: Triple,
    margin: float,
    norm: str,
) -> tuple[dict[GradKey, np.ndarray], float]:
    """Subgradients of one hinge term max(0, margin + d_pos - d_neg).

    Returns a map from ("entity", id) / ("relation", id) keys to accumulated
    gradient vectors, plus the term loss. An inactive hinge yields an empty
    map and loss 0. Keys shared between the positive and the corrupted triple
    (e.g. the head when the tail was replaced) are accumulated into one entry.
    """
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    check_norm(norm)
    if positive.relation != corrupted.relation:
        raise ValueError("a corrupted triple never changes the relation")

    ent, rel = table.entity_vecs, table.relation_vecs
    h, r, t = positive
    h2, _, t2 = corrupted
    rv = rel[r]
    x = ent[h] + rv - ent[t]
    y = ent[h2] + rv - ent[t2]
    loss = margin + _norm_value(x, norm) - _norm_value(y, norm)
    if loss <= 0.0:
        return {}, 0.0

    gx = _norm_grad(x, norm)
    gy = _norm_grad(y, norm)
    grads: dict[GradKey, np.ndarray] = {}
    _accumulate(grads, ("entity", h), gx)
    _accumulate(grads, ("entity", t), -gx)
    _accumulate(grads, ("entity", h2), -gy)
    _accumulate(grads, ("entity", t2), gy)
    _accumulate(grads, ("relation", r), gx - gy)
    return grads, loss


def _accumulate(grads: dict[GradKey, np.ndarray], key: GradKey, vec: np.ndarray) -> None:
    if key in grads:
        grads[key] = grads[key] + vec
    else:
        grads[key] = vec
