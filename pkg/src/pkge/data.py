"""Triple ingestion, vocabularies, datasets, and balanced partitioning.

Triples are integer-encoded (head, relation, tail) rows of an int64 array
with shape (n, 3). The text format is one triple per line, three
tab-separated fields, UTF-8, with ``#`` comment lines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import TripleParseError, VocabularyError

log = logging.getLogger(__name__)

TRIPLE_COLUMNS = 3


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class LoadStats(NamedTuple):
    """Per-file load accounting: lines kept, duplicates dropped, OOV dropped."""

    n_triples: int
    n_duplicates: int
    n_oov_dropped: int


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional label<->id maps for entities and relations.

    Ids are contiguous, assigned in first-appearance order.
    """

    entity_labels: tuple[str, ...]
    relation_labels: tuple[str, ...]
    entity_ids: dict[str, int] = field(repr=False, default_factory=dict)
    relation_ids: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.entity_ids:
            object.__setattr__(
                self, "entity_ids", {s: i for i, s in enumerate(self.entity_labels)}
            )
        if not self.relation_ids:
            object.__setattr__(
                self, "relation_ids", {s: i for i, s in enumerate(self.relation_labels)}
            )
        if len(self.entity_ids) != len(self.entity_labels):
            raise ValueError("duplicate entity labels")
        if len(self.relation_ids) != len(self.relation_labels):
            raise ValueError("duplicate relation labels")

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    def entity_id(self, label: str) -> int:
        return self.entity_ids[label]

    def relation_id(self, label: str) -> int:
        return self.relation_ids[label]


@dataclass(frozen=True)
class Dataset:
    """Immutable train/valid/test splits over one vocabulary."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    vocab: Vocabulary

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            arr = _as_triple_array(getattr(self, name)).copy()
            arr.flags.writeable = False  # splits are shared across workers as-is
            object.__setattr__(self, name, arr)
        self.validate()

    def validate(self) -> None:
        ne, nr = self.vocab.n_entities, self.vocab.n_relations
        for name in ("train", "valid", "test"):
            arr = getattr(self, name)
            if arr.size == 0:
                continue
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= ne:
                raise ValueError(f"{name} split contains entity ids outside [0, {ne})")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= nr:
                raise ValueError(f"{name} split contains relation ids outside [0, {nr})")

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test], axis=0)


@dataclass(frozen=True)
class Partition:
    """One worker's balanced share of the training triples."""

    worker_id: int
    triples: np.ndarray

    def __len__(self) -> int:
        return len(self.triples)


def _as_triple_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, TRIPLE_COLUMNS)
    if arr.ndim != 2 or arr.shape[1] != TRIPLE_COLUMNS:
        raise ValueError(f"triples must have shape (n, 3), got {arr.shape}")
    return arr


def _dedup_preserving_order(arr: np.ndarray) -> tuple[np.ndarray, int]:
    seen: set[tuple[int, int, int]] = set()
    keep = np.ones(len(arr), dtype=bool)
    for i, row in enumerate(arr):
        key = (int(row[0]), int(row[1]), int(row[2]))
        if key in seen:
            keep[i] = False
        else:
            seen.add(key)
    dropped = int((~keep).sum())
    return arr[keep], dropped


def load_triples(
    path: str | Path,
    vocab: Vocabulary | None = None,
    *,
    on_oov: str = "error",
) -> tuple[np.ndarray, Vocabulary, LoadStats]:
    """Read a tab-separated triple file and integer-encode it.

    With ``vocab=None`` a new vocabulary is built in first-appearance order.
    With a fixed vocabulary, unknown labels raise VocabularyError unless
    ``on_oov="drop"``, in which case offending lines are dropped and counted.
    Duplicate triples are always dropped and counted.
    """
    if on_oov not in ("error", "drop"):
        raise ValueError(f"on_oov must be 'error' or 'drop', got {on_oov!r}")
    path = Path(path)

    build_vocab = vocab is None
    entity_labels: list[str] = []
    relation_labels: list[str] = []
    entity_ids: dict[str, int] = {} if build_vocab else vocab.entity_ids
    relation_ids: dict[str, int] = {} if build_vocab else vocab.relation_ids

    rows: list[tuple[int, int, int]] = []
    oov: list[str] = []
    n_oov_dropped = 0

    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.rstrip("\n").rstrip("\r")
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != TRIPLE_COLUMNS:
                raise TripleParseError(
                    str(path), line_no, f"expected 3 tab-separated fields, got {len(parts)}"
                )
            h_lbl, r_lbl, t_lbl = parts
            if build_vocab:
                for lbl in (h_lbl, t_lbl):
                    if lbl not in entity_ids:
                        entity_ids[lbl] = len(entity_labels)
                        entity_labels.append(lbl)
                if r_lbl not in relation_ids:
                    relation_ids[r_lbl] = len(relation_labels)
                    relation_labels.append(r_lbl)
            else:
                missing = [lbl for lbl in (h_lbl, t_lbl) if lbl not in entity_ids]
                if r_lbl not in relation_ids:
                    missing.append(r_lbl)
                if missing:
                    if on_oov == "drop":
                        n_oov_dropped += 1
                        continue
                    oov.extend(missing)
                    continue
            rows.append((entity_ids[h_lbl], relation_ids[r_lbl], entity_ids[t_lbl]))

    if oov:
        unique = sorted(set(oov))
        raise VocabularyError(
            f"{path}: {len(unique)} label(s) not in the fixed vocabulary: "
            + ", ".join(unique[:20]) + ("..." if len(unique) > 20 else ""),
            offenders=unique,
        )

    if build_vocab:
        vocab = Vocabulary(tuple(entity_labels), tuple(relation_labels))

    arr = _as_triple_array(rows)
    arr, n_dup = _dedup_preserving_order(arr)
    if n_dup:
        log.info("%s: dropped %d duplicate triple(s)", path, n_dup)
    if n_oov_dropped:
        log.warning("%s: dropped %d line(s) with out-of-vocabulary labels", path, n_oov_dropped)
    return arr, vocab, LoadStats(len(arr), n_dup, n_oov_dropped)


def load_dataset(
    train_path: str | Path,
    valid_path: str | Path | None = None,
    test_path: str | Path | None = None,
    *,
    on_oov: str = "error",
) -> tuple[Dataset, dict[str, LoadStats]]:
    """Load splits: the vocabulary is built from train, then fixed for the rest."""
    train, vocab, train_stats = load_triples(train_path)
    stats = {"train": train_stats}
    empty = np.zeros((0, TRIPLE_COLUMNS), dtype=np.int64)
    valid = test = empty
    if valid_path is not None:
        valid, _, stats["valid"] = load_triples(valid_path, vocab, on_oov=on_oov)
    if test_path is not None:
        test, _, stats["test"] = load_triples(test_path, vocab, on_oov=on_oov)
    return Dataset(train, valid, test, vocab), stats


def write_triples(path: str | Path, triples: np.ndarray, vocab: Vocabulary) -> None:
    """Write integer triples back to the tab-separated text format."""
    triples = _as_triple_array(triples)
    with Path(path).open("w", encoding="utf-8") as f:
        for h, r, t in triples:
            f.write(
                f"{vocab.entity_labels[h]}\t{vocab.relation_labels[r]}\t{vocab.entity_labels[t]}\n"
            )


def partition(
    train: np.ndarray, workers: int, seed
) -> list[Partition]:
    """Shuffle the training triples and split them into balanced chunks.

    Sizes differ by at most one; the union over partitions is exactly the
    input set. ``seed`` may be an int, a sequence of ints, or a Generator.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    train = _as_triple_array(train)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train))
    shuffled = train[order]
    base, extra = divmod(len(train), workers)
    parts: list[Partition] = []
    start = 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        parts.append(Partition(worker_id=w, triples=shuffled[start : start + size]))
        start += size
    return parts


def nearest_translation_triples(
    points: np.ndarray, relation_vecs: np.ndarray, heads: np.ndarray | None = None
) -> np.ndarray:
    """Emit (h, r, t) facts where t is the entity nearest to point[h] + vec[r].

    Ties go to the lowest entity id. ``heads`` selects which head entities to
    close over per relation (shape (n_relations, k)); by default every entity
    is used as a head for every relation.
    """
    points = np.asarray(points, dtype=np.float64)
    relation_vecs = np.asarray(relation_vecs, dtype=np.float64)
    n_entities = len(points)
    if heads is None:
        heads = np.tile(np.arange(n_entities), (len(relation_vecs), 1))
    point_sq = (points * points).sum(axis=1)
    rows: list[tuple[int, int, int]] = []
    for r, vec in enumerate(relation_vecs):
        hs = np.asarray(heads[r], dtype=np.int64)
        # chunked ||a-b||^2 = |a|^2 + |b|^2 - 2 a.b keeps memory at O(chunk * n)
        for start in range(0, len(hs), 512):
            chunk = hs[start : start + 512]
            targets = points[chunk] + vec
            d2 = (
                (targets * targets).sum(axis=1)[:, None]
                + point_sq[None, :]
                - 2.0 * (targets @ points.T)
            )
            tails = np.argmin(d2, axis=1)
            rows.extend((int(h), r, int(t)) for h, t in zip(chunk, tails))
    return _as_triple_array(rows)


def _median_nn_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return 1.0
    point_sq = (points * points).sum(axis=1)
    nn = np.empty(len(points))
    for start in range(0, len(points), 512):
        chunk = points[start : start + 512]
        d2 = (
            (chunk * chunk).sum(axis=1)[:, None]
            + point_sq[None, :]
            - 2.0 * (chunk @ points.T)
        )
        for i in range(len(chunk)):
            d2[i, start + i] = np.inf
        nn[start : start + len(chunk)] = np.maximum(d2.min(axis=1), 0.0)
    return float(np.median(np.sqrt(nn)))


def make_synthetic_translation_kg(
    n_entities: int,
    n_relations: int,
    dim: int,
    triples_per_relation: int,
    seed,
    *,
    relation_scale: float | None = None,
) -> Dataset:
    """Build a synthetic KG whose facts follow latent translations.

    Entities are latent points in [-1, 1]^dim; each relation is a fixed
    translation vector; a fact (h, r, t) holds when t is the entity nearest
    to point[h] + vec[r]. Unique facts are split 80/10/10.
    """
    for name, value in (
        ("n_entities", n_entities),
        ("n_relations", n_relations),
        ("dim", dim),
        ("triples_per_relation", triples_per_relation),
    ):
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")

    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(n_entities, dim))
    directions = rng.normal(size=(n_relations, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    if relation_scale is None:
        # translations shorter than the nearest-neighbor spacing collapse the
        # graph into self-loops, so scale them off the sampled points
        relation_scale = 1.25 * _median_nn_distance(points)
    relation_vecs = directions * relation_scale

    if triples_per_relation <= n_entities:
        # distinct heads per relation: exactly triples_per_relation unique facts
        heads = np.stack(
            [rng.permutation(n_entities)[:triples_per_relation] for _ in range(n_relations)]
        )
    else:
        heads = rng.integers(0, n_entities, size=(n_relations, triples_per_relation))
    triples = nearest_translation_triples(points, relation_vecs, heads)
    triples, _ = _dedup_preserving_order(triples)

    order = rng.permutation(len(triples))
    triples = triples[order]
    n = len(triples)
    n_valid = n // 10
    n_test = n // 10
    n_train = n - n_valid - n_test
    vocab = Vocabulary(
        tuple(f"e{i}" for i in range(n_entities)),
        tuple(f"r{i}" for i in range(n_relations)),
    )
    return Dataset(
        train=triples[:n_train],
        valid=triples[n_train : n_train + n_valid],
        test=triples[n_train + n_valid :],
        vocab=vocab,
    )
