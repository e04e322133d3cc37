"""Single-thread SGD training loop: the correctness baseline.

Per epoch: re-normalize entity vectors, shuffle the training triples with a
seeded per-epoch stream, sample corruptions for the whole pass up front, and
apply one immediate SGD step per active hinge term. Training stops when the
relative loss change drops to ``convergence_eps`` or ``max_epochs`` is hit.

RNG discipline: epoch i consumes exactly the stream seeded by
``(seed, STREAM_EPOCH, i)`` - first the permutation, then the corruption
draws. The map/reduce trainer reuses the same stream layout so that its
one-worker configuration reproduces this loop bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .model import (
    CorruptionPlan,
    check_norm,
    draw_corruption_plan,
    encode_triples,
)
from .store import EmbeddingTable, init_table, normalize_entities

# stream tags keep the init / epoch / map-worker generators disjoint
STREAM_EPOCH = 1
STREAM_MAP = 2

REL_LOSS_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by all training modes."""

    dim: int = 50
    margin: float = 1.0
    learning_rate: float = 0.01
    norm: str = "L1"
    max_epochs: int = 1000
    convergence_eps: float = 1e-4
    seed: int = 42
    neg_per_pos: int = 1
    filter_negatives: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.margin <= 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        check_norm(self.norm)
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.convergence_eps < 0:
            raise ValueError(f"convergence_eps must be >= 0, got {self.convergence_eps}")
        if self.neg_per_pos < 1:
            raise ValueError(f"neg_per_pos must be >= 1, got {self.neg_per_pos}")


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    loss: float
    rel_change: float
    active: int
    seconds: float


def relative_change(prev_loss: float, loss: float) -> float:
    return abs(prev_loss - loss) / max(prev_loss, REL_LOSS_FLOOR)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng((seed, STREAM_EPOCH, epoch))


def sgd_pass(
    table: EmbeddingTable,
    triples: np.ndarray,
    plan: CorruptionPlan,
    config: TrainConfig,
) -> tuple[float, int, np.ndarray, np.ndarray]:
    """One SGD sweep over ``triples`` in the given order, updating in place.

    Returns (summed term loss, number of triples with an active term,
    per-entity update counts, per-relation update counts). Each active term
    applies v <- v - lr * grad once per touched key, with gradients
    accumulated when the positive and corrupted triples share a slot.
    """
    ent = table.entity_vecs
    rel = table.relation_vecs
    ent_counts = np.zeros(table.n_entities, dtype=np.int64)
    rel_counts = np.zeros(table.n_relations, dtype=np.int64)
    lr = config.learning_rate
    margin = config.margin
    l1 = config.norm == "L1"
    k = plan.head_side.shape[1]

    # python-native indices and preallocated scratch keep the per-term cost
    # down to the numpy calls themselves
    rows = triples.tolist()
    sides = plan.head_side.tolist()
    repls = plan.replacement.tolist()
    dim = table.dim
    x = np.empty(dim)
    y = np.empty(dim)
    sq = np.empty(dim)
    gx = np.empty(dim)
    gy = np.empty(dim)
    tmp = np.empty(dim)

    total = 0.0
    active = 0
    for i, (h, r, t) in enumerate(rows):
        hit = False
        for j in range(k):
            if sides[i][j]:
                h2, t2 = repls[i][j], t
            else:
                h2, t2 = h, repls[i][j]
            rv = rel[r]
            np.add(ent[h], rv, out=x)
            np.subtract(x, ent[t], out=x)
            np.add(ent[h2], rv, out=y)
            np.subtract(y, ent[t2], out=y)
            if l1:
                z = margin + float(np.abs(x, out=sq).sum()) - float(np.abs(y, out=sq).sum())
            else:
                np.multiply(x, x, out=sq)
                d_pos = math.sqrt(float(sq.sum()))
                np.multiply(y, y, out=sq)
                d_neg = math.sqrt(float(sq.sum()))
                z = margin + d_pos - d_neg
            if z <= 0.0:
                continue
            total += z
            hit = True
            if l1:
                np.sign(x, out=gx)
                np.sign(y, out=gy)
            else:
                if d_pos > 0.0:
                    np.divide(x, d_pos, out=gx)
                else:
                    gx[:] = 0.0
                if d_neg > 0.0:
                    np.divide(y, d_neg, out=gy)
                else:
                    gy[:] = 0.0
            np.subtract(gx, gy, out=tmp)
            np.multiply(lr, tmp, out=tmp)
            np.subtract(rel[r], tmp, out=rel[r])
            rel_counts[r] += 1
            if sides[i][j]:
                if h != t and h2 != t:
                    np.multiply(lr, gx, out=tmp)
                    np.subtract(ent[h], tmp, out=ent[h])
                    np.subtract(gy, gx, out=tmp)
                    np.multiply(lr, tmp, out=tmp)
                    np.subtract(ent[t], tmp, out=ent[t])
                    np.multiply(lr, gy, out=tmp)
                    np.add(ent[h2], tmp, out=ent[h2])
                    ent_counts[h] += 1
                    ent_counts[t] += 1
                    ent_counts[h2] += 1
                else:
                    _apply_aliased(ent, ent_counts, lr, h, t, h2, t2, gx, gy)
            else:
                if h != t and t2 != h:
                    np.subtract(gx, gy, out=tmp)
                    np.multiply(lr, tmp, out=tmp)
                    np.subtract(ent[h], tmp, out=ent[h])
                    np.multiply(lr, gx, out=tmp)
                    np.add(ent[t], tmp, out=ent[t])
                    np.multiply(lr, gy, out=tmp)
                    np.subtract(ent[t2], tmp, out=ent[t2])
                    ent_counts[h] += 1
                    ent_counts[t] += 1
                    ent_counts[t2] += 1
                else:
                    _apply_aliased(ent, ent_counts, lr, h, t, h2, t2, gx, gy)
        if hit:
            active += 1
    return total, active, ent_counts, rel_counts


def _apply_aliased(ent, ent_counts, lr, h, t, h2, t2, gx, gy):
    """Self-loops or replacement collisions: accumulate per row, then update."""
    grads: dict[int, np.ndarray] = {}
    for row, g in ((h, gx), (t, -gx), (h2, -gy), (t2, gy)):
        if row in grads:
            grads[row] = grads[row] + g
        else:
            grads[row] = g
    for row, g in grads.items():
        ent[row] -= lr * g
        ent_counts[row] += 1


def train_single(
    dataset: Dataset,
    config: TrainConfig,
    *,
    on_report: Callable[[EpochReport], None] | None = None,
) -> tuple[EmbeddingTable, list[EpochReport]]:
    """Train a fresh table with single-thread SGD; deterministic per seed."""
    n = len(dataset.train)
    if n == 0:
        raise ValueError("training set is empty")
    if dataset.vocab.n_entities < 2:
        raise ValueError("need at least 2 entities to sample corruptions")

    table = init_table(dataset.vocab, config.dim, config.seed)
    avoid = (
        encode_triples(dataset.train, dataset.vocab.n_entities, dataset.vocab.n_relations)
        if config.filter_negatives
        else None
    )
    reports: list[EpochReport] = []
    prev_loss = 0.0
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        rng = epoch_rng(config.seed, epoch)
        normalize_entities(table)
        order = rng.permutation(n)
        shuffled = dataset.train[order]
        plan = draw_corruption_plan(
            shuffled,
            dataset.vocab.n_entities,
            config.neg_per_pos,
            rng,
            avoid,
            dataset.vocab.n_relations,
        )
        loss, active, _, _ = sgd_pass(table, shuffled, plan, config)
        rel = relative_change(prev_loss, loss)
        report = EpochReport(epoch, loss, rel, active, time.perf_counter() - t0)
        reports.append(report)
        if on_report is not None:
            on_report(report)
        prev_loss = loss
        if rel <= config.convergence_eps:
            break
    table.check_finite()
    return table, reports


def epoch_loss(
    dataset: Dataset,
    table: EmbeddingTable,
    config: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """Evaluation-only hinge loss over the training split with sampled
    corruptions; never mutates the table."""
    train = dataset.train
    if len(train) == 0:
        return 0.0
    n_entities = dataset.vocab.n_entities
    plan = draw_corruption_plan(train, n_entities, config.neg_per_pos, rng)
    ent, rel = table.entity_vecs, table.relation_vecs
    h, r, t = train[:, 0], train[:, 1], train[:, 2]
    d_pos = _row_energies(ent[h] + rel[r] - ent[t], config.norm)
    total = 0.0
    for j in range(config.neg_per_pos):
        h2 = np.where(plan.head_side[:, j], plan.replacement[:, j], h)
        t2 = np.where(plan.head_side[:, j], t, plan.replacement[:, j])
        d_neg = _row_energies(ent[h2] + rel[r] - ent[t2], config.norm)
        total += float(np.maximum(0.0, config.margin + d_pos - d_neg).sum())
    return total


def _row_energies(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == "L1":
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))
