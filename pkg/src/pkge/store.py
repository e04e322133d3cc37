"""The parameter space: dense entity/relation embeddings plus persistence.

Initialization samples every component uniformly from [-6/sqrt(dim),
+6/sqrt(dim)] and then scales each vector to unit L2 norm. Entity vectors
are re-normalized at the start of every training epoch; relation vectors
are normalized at initialization only.

Checkpoint text format (UTF-8, space-separated, 17 significant digits):

    PKGE v1
    dim <d> entities <|E|> relations <|R|>
    E <label> <v1> ... <vd>     (|E| lines)
    R <label> <v1> ... <vd>     (|R| lines)
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .errors import (
    CheckpointRowError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    NumericError,
)

MAGIC = "PKGE v1"

STREAM_INIT = 0


@dataclass
class EmbeddingTable:
    """Dense d-dimensional vectors for every entity and relation."""

    entity_vecs: np.ndarray
    relation_vecs: np.ndarray

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_vecs.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_vecs.shape[0]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.entity_vecs.copy(), self.relation_vecs.copy())

    def equals(self, other: "EmbeddingTable") -> bool:
        return np.array_equal(self.entity_vecs, other.entity_vecs) and np.array_equal(
            self.relation_vecs, other.relation_vecs
        )

    def check_finite(self) -> None:
        if not np.isfinite(self.entity_vecs).all() or not np.isfinite(self.relation_vecs).all():
            raise NumericError("embedding table contains non-finite values")


@dataclass
class ModelCheckpoint:
    """A saved table plus optional training metadata (kept in the manifest)."""

    vocab: Vocabulary
    table: EmbeddingTable
    config: dict | None = None
    epoch: int | None = None
    final_loss: float | None = None


def init_table(
    vocab: Vocabulary, dim: int, seed, *, normalized: bool = True
) -> EmbeddingTable:
    """Sample a fresh table; components are i.i.d. Uniform(-6/sqrt(dim), 6/sqrt(dim)).

    With ``normalized`` (the default) every entity and relation vector is then
    scaled to unit L2 norm. ``normalized=False`` exposes the raw samples.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(_init_seed(seed))
    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(vocab.n_entities, dim))
    rel = rng.uniform(-bound, bound, size=(vocab.n_relations, dim))
    table = EmbeddingTable(ent, rel)
    if normalized:
        _normalize_rows(table.entity_vecs, kind="entity")
        _normalize_rows(table.relation_vecs, kind="relation")
    return table


def _init_seed(seed):
    if isinstance(seed, (int, np.integer)):
        return (int(seed), STREAM_INIT)
    return seed


def _normalize_rows(vecs: np.ndarray, kind: str) -> None:
    norms = np.linalg.norm(vecs, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise NumericError(f"cannot normalize zero-norm {kind} vector(s): ids {zero[:10].tolist()}")
    vecs /= norms[:, None]


def normalize_entities(table: EmbeddingTable) -> None:
    """Scale every entity vector to unit L2 norm, in place. Relations untouched."""
    _normalize_rows(table.entity_vecs, kind="entity")


def snapshot(table: EmbeddingTable) -> EmbeddingTable:
    """Deep, independent, read-only copy; safe to hand to concurrent readers.

    Workers wanting a private working table call ``.copy()`` on the result.
    """
    copy = table.copy()
    copy.entity_vecs.flags.writeable = False
    copy.relation_vecs.flags.writeable = False
    return copy


def save_checkpoint(
    table: EmbeddingTable, vocab: Vocabulary, path: str | Path
) -> None:
    """Write the text checkpoint atomically (tmp file + rename)."""
    if table.n_entities != vocab.n_entities or table.n_relations != vocab.n_relations:
        raise ValueError("table shape does not match vocabulary")
    path = Path(path)
    for label in (*vocab.entity_labels, *vocab.relation_labels):
        if "\n" in label or "\r" in label:
            raise ValueError(f"label contains a line break: {label!r}")
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as f:
        f.write(f"{MAGIC}\n")
        f.write(f"dim {table.dim} entities {table.n_entities} relations {table.n_relations}\n")
        for label, vec in zip(vocab.entity_labels, table.entity_vecs):
            f.write("E " + label + " " + " ".join(f"{v:.17g}" for v in vec) + "\n")
        for label, vec in zip(vocab.relation_labels, table.relation_vecs):
            f.write("R " + label + " " + " ".join(f"{v:.17g}" for v in vec) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    """Read a text checkpoint; raises distinct errors for the failure modes."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != MAGIC:
        got = lines[0] if lines else "<empty file>"
        raise CheckpointVersionError(f"{path}: expected magic {MAGIC!r}, got {got!r}")
    if len(lines) < 2:
        raise CheckpointTruncatedError(f"{path}: missing header line")
    header = lines[1].split()
    if (
        len(header) != 6
        or header[0] != "dim"
        or header[2] != "entities"
        or header[4] != "relations"
    ):
        raise CheckpointRowError(2, f"malformed header: {lines[1]!r}")
    try:
        dim, n_ent, n_rel = int(header[1]), int(header[3]), int(header[5])
    except ValueError:
        raise CheckpointRowError(2, f"non-integer header counts: {lines[1]!r}") from None

    expected = 2 + n_ent + n_rel
    if len(lines) < expected:
        raise CheckpointTruncatedError(
            f"{path}: expected {expected} lines ({n_ent} entity + {n_rel} relation rows), "
            f"got {len(lines)}"
        )
    if any(line.strip() for line in lines[expected:]):
        raise CheckpointRowError(expected + 1, "unexpected content after the last row")

    def parse_rows(start: int, count: int, tag: str) -> tuple[list[str], np.ndarray]:
        labels: list[str] = []
        vecs = np.empty((count, dim), dtype=np.float64)
        for i in range(count):
            line_no = start + i + 1
            tokens = lines[start + i].split(" ")
            if tokens[0] != tag:
                raise CheckpointRowError(line_no, f"expected a {tag!r} row, got {tokens[0]!r}")
            if len(tokens) < 2 + dim:
                raise CheckpointRowError(
                    line_no, f"row has {len(tokens) - 1} fields, needs label + {dim} values"
                )
            # the label may contain spaces: values are always the last dim tokens
            labels.append(" ".join(tokens[1 : len(tokens) - dim]))
            try:
                vecs[i] = [float(v) for v in tokens[len(tokens) - dim :]]
            except ValueError:
                raise CheckpointRowError(line_no, "unparseable vector component") from None
        return labels, vecs

    ent_labels, ent_vecs = parse_rows(2, n_ent, "E")
    rel_labels, rel_vecs = parse_rows(2 + n_ent, n_rel, "R")
    vocab = Vocabulary(tuple(ent_labels), tuple(rel_labels))
    return ModelCheckpoint(vocab=vocab, table=EmbeddingTable(ent_vecs, rel_vecs))
