"""Downstream tasks: entity inference (link prediction), relation
prediction, and triplet classification.

Ranking hides one slot of a true triple, scores every candidate filler by
the energy of the substituted triple, and sorts ascending with ties broken
by ascending id, so ranks are deterministic. The filtered setting removes
competitors that form a known triple (any split) other than the query's own
answer. Classification fits one energy threshold per relation on validation
positives plus sampled corruptions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import check_norm, draw_corruption_plan
from .store import EmbeddingTable

ENTITY_SLOTS = ("head", "tail")


@dataclass(frozen=True)
class RankingMetrics:
    mean_rank: float
    hits_at_k: dict[int, float]
    n_queries: int
    setting: str

    def to_json_dict(self, task: str) -> dict:
        return {
            "task": task,
            "setting": self.setting,
            "mean_rank": self.mean_rank,
            "hits": {str(k): v for k, v in sorted(self.hits_at_k.items())},
            "n": self.n_queries,
        }


@dataclass(frozen=True)
class ClassifierThresholds:
    per_relation: dict[int, float]
    fallback: float

    def threshold_for(self, relation: int) -> float:
        return self.per_relation.get(relation, self.fallback)


def _check_setting(setting: str) -> str:
    if setting not in ("raw", "filtered"):
        raise ValueError(f"setting must be 'raw' or 'filtered', got {setting!r}")
    return setting


def _row_energies(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == "L1":
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


def build_known_index(dataset: Dataset) -> dict[tuple, set[int]]:
    """(slot, fixed ids) -> known fillers, over train+valid+test; used to
    drop competitors in the filtered setting."""
    index: dict[tuple, set[int]] = {}
    for h, r, t in dataset.all_triples():
        index.setdefault(("tail", int(h), int(r)), set()).add(int(t))
        index.setdefault(("head", int(r), int(t)), set()).add(int(h))
        index.setdefault(("rel", int(h), int(t)), set()).add(int(r))
    return index


def _rank(scores: np.ndarray, true_idx: int, blocked: set[int]) -> int:
    """1-based rank of the true candidate by ascending (score, id), after
    dropping blocked competitors."""
    s_true = scores[true_idx]
    keep = None
    if blocked:
        keep = np.ones(len(scores), dtype=bool)
        keep[list(blocked)] = False
        keep[true_idx] = True
    lower = scores < s_true
    tied = scores == s_true
    if keep is not None:
        lower &= keep
        tied &= keep
    tied_before = int((np.flatnonzero(tied) < true_idx).sum())
    return int(lower.sum()) + tied_before + 1


def _validate_ids(table: EmbeddingTable, h: int, r: int, t: int) -> None:
    if not (0 <= h < table.n_entities and 0 <= t < table.n_entities):
        raise ValueError(f"entity id out of range in query ({h}, {r}, {t})")
    if not (0 <= r < table.n_relations):
        raise ValueError(f"relation id {r} out of range in query ({h}, {r}, {t})")


def rank_entities(
    table: EmbeddingTable,
    triple,
    missing: str,
    dataset: Dataset,
    setting: str = "raw",
    norm: str = "L1",
    *,
    known: dict[tuple, set[int]] | None = None,
) -> int:
    """Rank of the triple's true head or tail when that slot is hidden.

    ``missing="tail"`` poses (h, r, ?), ``missing="head"`` poses (?, r, t).
    """
    check_norm(norm)
    _check_setting(setting)
    if missing not in ENTITY_SLOTS:
        raise ValueError(f"missing must be one of {ENTITY_SLOTS}, got {missing!r}")
    h, r, t = (int(v) for v in triple)
    _validate_ids(table, h, r, t)
    ent, rel = table.entity_vecs, table.relation_vecs

    if missing == "tail":
        scores = _row_energies((ent[h] + rel[r]) - ent, norm)
        true_idx = t
    else:
        scores = _row_energies((ent + rel[r]) - ent[t], norm)
        true_idx = h

    blocked: set[int] = set()
    if setting == "filtered":
        if known is None:
            known = build_known_index(dataset)
        key = ("tail", h, r) if missing == "tail" else ("head", r, t)
        blocked = known.get(key, set()) - {true_idx}
    return _rank(scores, true_idx, blocked)


def rank_relations(
    table: EmbeddingTable,
    triple,
    dataset: Dataset,
    setting: str = "raw",
    norm: str = "L1",
    *,
    known: dict[tuple, set[int]] | None = None,
) -> int:
    """Rank of the true relation for the (h, ?, t) query."""
    check_norm(norm)
    _check_setting(setting)
    h, r, t = (int(v) for v in triple)
    _validate_ids(table, h, r, t)
    ent, rel = table.entity_vecs, table.relation_vecs
    scores = _row_energies((ent[h] + rel) - ent[t], norm)

    blocked: set[int] = set()
    if setting == "filtered":
        if known is None:
            known = build_known_index(dataset)
        blocked = known.get(("rel", h, t), set()) - {r}
    return _rank(scores, r, blocked)


def evaluate_ranking(
    table: EmbeddingTable,
    dataset: Dataset,
    task: str,
    *,
    split: np.ndarray | None = None,
    setting: str = "raw",
    ks: tuple[int, ...] = (1, 3, 10),
    norm: str = "L1",
) -> RankingMetrics:
    """Aggregate ranks over a split (default: test). The entity task issues
    both (h, r, ?) and (?, r, t) per triple; relation issues (h, ?, t)."""
    if task not in ("entity", "relation"):
        raise ValueError(f"task must be 'entity' or 'relation', got {task!r}")
    _check_setting(setting)
    triples = dataset.test if split is None else split
    if len(triples) == 0:
        raise ValueError("cannot evaluate an empty split")
    known = build_known_index(dataset) if setting == "filtered" else None

    ranks: list[int] = []
    for row in triples:
        if task == "entity":
            ranks.append(
                rank_entities(table, row, "tail", dataset, setting, norm, known=known)
            )
            ranks.append(
                rank_entities(table, row, "head", dataset, setting, norm, known=known)
            )
        else:
            ranks.append(rank_relations(table, row, dataset, setting, norm, known=known))
    arr = np.asarray(ranks, dtype=np.float64)
    return RankingMetrics(
        mean_rank=float(arr.mean()),
        hits_at_k={k: float((arr <= k).mean()) for k in ks},
        n_queries=len(ranks),
        setting=setting,
    )


def _best_threshold(pos: np.ndarray, neg: np.ndarray) -> float:
    """Sweep midpoints of sorted candidate energies; return the threshold
    maximizing accuracy of 'positive iff energy < threshold' (lowest wins ties)."""
    values = np.unique(np.concatenate([pos, neg]))
    candidates = [values[0] - 1.0]
    candidates.extend((values[:-1] + values[1:]) / 2.0)
    candidates.append(values[-1] + 1.0)
    best_theta = candidates[0]
    best_acc = -1.0
    total = len(pos) + len(neg)
    for theta in candidates:
        acc = (int((pos < theta).sum()) + int((neg >= theta).sum())) / total
        if acc > best_acc:
            best_acc = acc
            best_theta = theta
    return float(best_theta)


def fit_thresholds(
    table: EmbeddingTable,
    valid_positives: np.ndarray,
    rng: np.random.Generator,
    norm: str = "L1",
) -> ClassifierThresholds:
    """Fit per-relation energy thresholds on validation positives plus one
    sampled corruption per positive; the pooled sweep gives the fallback."""
    check_norm(norm)
    if len(valid_positives) == 0:
        raise ValueError("cannot fit thresholds on an empty validation split")
    if table.n_entities < 2:
        raise ValueError("need at least 2 entities to sample corruptions")

    plan = draw_corruption_plan(valid_positives, table.n_entities, 1, rng)
    ent, rel = table.entity_vecs, table.relation_vecs
    h, r, t = valid_positives[:, 0], valid_positives[:, 1], valid_positives[:, 2]
    h2 = np.where(plan.head_side[:, 0], plan.replacement[:, 0], h)
    t2 = np.where(plan.head_side[:, 0], t, plan.replacement[:, 0])
    pos_e = _row_energies((ent[h] + rel[r]) - ent[t], norm)
    neg_e = _row_energies((ent[h2] + rel[r]) - ent[t2], norm)

    per_relation: dict[int, float] = {}
    for rid in np.unique(r):
        mask = r == rid
        per_relation[int(rid)] = _best_threshold(pos_e[mask], neg_e[mask])
    fallback = _best_threshold(pos_e, neg_e)
    return ClassifierThresholds(per_relation=per_relation, fallback=fallback)


def classify(
    table: EmbeddingTable,
    thresholds: ClassifierThresholds,
    triples: np.ndarray,
    labels: np.ndarray,
    norm: str = "L1",
) -> float:
    """Accuracy of 'plausible iff energy < threshold(relation)' over labeled
    triples."""
    check_norm(norm)
    triples = np.asarray(triples, dtype=np.int64)
    labels = np.asarray(labels, dtype=bool)
    if len(triples) != len(labels):
        raise ValueError("triples and labels must have the same length")
    if len(triples) == 0:
        raise ValueError("cannot classify an empty set")
    ent, rel = table.entity_vecs, table.relation_vecs
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    energies = _row_energies((ent[h] + rel[r]) - ent[t], norm)
    theta = np.array([thresholds.threshold_for(int(rid)) for rid in r])
    predicted = energies < theta
    return float((predicted == labels).mean())
