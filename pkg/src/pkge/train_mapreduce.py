"""Multi-core training: balanced partitions, map workers, and per-key reduce.

One sync round is snapshot -> partition -> parallel map -> reduce. In SGD
mode every worker runs local SGD epochs on a private copy of the snapshot
and the reducer merges per-key embeddings under one of three strategies
(random pick, element-wise average, mini-loss worker selection). In BGD mode
workers only accumulate per-key gradient sums against the immutable snapshot
and the reducer applies a single mean-gradient step.

Determinism: the round's triple order and corruption draws come from the
master's round-keyed stream and are sliced across workers, so the per-triple
randomness never depends on the worker count. Worker outputs are reduced in
ascending worker id order.
"""

from __future__ import annotations

import logging
import multiprocessing
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, Partition, Triple
from .model import (
    CorruptionPlan,
    GradKey,
    corrupted_triple,
    draw_corruption_plan,
    encode_triples,
    term_gradients,
)
from .store import EmbeddingTable, init_table, normalize_entities, snapshot
from .train_single import (
    STREAM_MAP,
    TrainConfig,
    epoch_rng,
    relative_change,
    sgd_pass,
)

log = logging.getLogger(__name__)

MODES = ("sgd", "bgd")
MERGE_STRATEGIES = ("random", "average", "miniloss")

STREAM_REDUCE = 3


@dataclass(frozen=True)
class SyncSchedule:
    """How the parallel trainer alternates map and reduce."""

    mode: str = "sgd"
    workers: int = 1
    epochs_per_sync: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.epochs_per_sync < 1:
            raise ValueError(f"epochs_per_sync must be >= 1, got {self.epochs_per_sync}")


@dataclass
class MapOutputSgd:
    worker_id: int
    table: EmbeddingTable
    entity_counts: np.ndarray
    relation_counts: np.ndarray
    local_loss: float
    n_triples: int
    active: int = 0


@dataclass
class GradientAccumulator:
    """Per-key gradient sums and term counts emitted by a BGD map worker."""

    sums: dict[GradKey, np.ndarray] = field(default_factory=dict)
    counts: dict[GradKey, int] = field(default_factory=dict)

    def add(self, grads: dict[GradKey, np.ndarray]) -> None:
        for key, vec in grads.items():
            if key in self.sums:
                self.sums[key] = self.sums[key] + vec
                self.counts[key] += 1
            else:
                self.sums[key] = vec
                self.counts[key] = 1


@dataclass
class MapOutputBgd:
    worker_id: int
    accumulator: GradientAccumulator
    local_loss: float
    n_triples: int
    active: int = 0


@dataclass(frozen=True)
class RoundReport:
    """One sync round: loss plus map/reduce timing for throughput tracking."""

    round: int
    mode: str
    strategy: str | None
    workers: int
    loss: float
    rel_change: float
    active: int
    map_secs: float
    reduce_secs: float
    triples_per_sec: float


def run_map_sgd(
    partition: Partition,
    global_snapshot: EmbeddingTable,
    config: TrainConfig,
    worker_seed: tuple[int, ...],
    *,
    epochs_per_sync: int = 1,
    epoch0_plan: CorruptionPlan | None = None,
    avoid_encoded: np.ndarray | None = None,
) -> MapOutputSgd:
    """Run local SGD epochs on a private copy of the snapshot.

    When the scheduler supplies ``epoch0_plan`` the partition is taken as
    already shuffled and the snapshot as already normalized, and the first
    local epoch consumes the given draws; later epochs re-shuffle and draw
    from ``(*worker_seed, e)``. Corruptions always range over the full
    entity vocabulary. The snapshot itself is never written.
    """
    if len(partition) == 0:
        log.warning("worker %d: empty partition, skipping", partition.worker_id)
        return _empty_sgd_output(partition.worker_id, global_snapshot)

    table = global_snapshot.copy()
    n_entities = global_snapshot.n_entities
    ent_counts = np.zeros(n_entities, dtype=np.int64)
    rel_counts = np.zeros(global_snapshot.n_relations, dtype=np.int64)
    avoid = avoid_encoded
    if avoid is None and config.filter_negatives:
        # standalone use: the partition is all this worker knows about
        avoid = encode_triples(partition.triples, n_entities, table.n_relations)
    total_loss = 0.0
    total_active = 0
    for e in range(epochs_per_sync):
        if e == 0 and epoch0_plan is not None:
            triples = partition.triples
            plan = epoch0_plan
        else:
            rng = np.random.default_rng((*worker_seed, e))
            normalize_entities(table)
            order = rng.permutation(len(partition))
            triples = partition.triples[order]
            plan = draw_corruption_plan(
                triples, n_entities, config.neg_per_pos, rng, avoid, table.n_relations
            )
        loss, active, ec, rc = sgd_pass(table, triples, plan, config)
        total_loss += loss
        total_active += active
        ent_counts += ec
        rel_counts += rc
    return MapOutputSgd(
        worker_id=partition.worker_id,
        table=table,
        entity_counts=ent_counts,
        relation_counts=rel_counts,
        local_loss=total_loss,
        n_triples=len(partition),
        active=total_active,
    )


def _empty_sgd_output(worker_id: int, snapshot: EmbeddingTable) -> MapOutputSgd:
    return MapOutputSgd(
        worker_id=worker_id,
        table=snapshot.copy(),
        entity_counts=np.zeros(snapshot.n_entities, dtype=np.int64),
        relation_counts=np.zeros(snapshot.n_relations, dtype=np.int64),
        local_loss=0.0,
        n_triples=0,
    )


def run_map_bgd(
    partition: Partition,
    global_snapshot: EmbeddingTable,
    config: TrainConfig,
    worker_seed: tuple[int, ...],
    *,
    plan: CorruptionPlan | None = None,
) -> MapOutputBgd:
    """Accumulate per-key gradient sums over the partition without touching
    any table. One sampled corruption set per positive, per config."""
    if len(partition) == 0:
        log.warning("worker %d: empty partition, skipping", partition.worker_id)
        return MapOutputBgd(partition.worker_id, GradientAccumulator(), 0.0, 0)

    if plan is None:
        rng = np.random.default_rng((*worker_seed, 0))
        plan = draw_corruption_plan(
            partition.triples, global_snapshot.n_entities, config.neg_per_pos, rng
        )
    acc = GradientAccumulator()
    total_loss = 0.0
    active = 0
    for i, row in enumerate(partition.triples):
        positive = Triple(int(row[0]), int(row[1]), int(row[2]))
        hit = False
        for j in range(plan.head_side.shape[1]):
            corrupted = corrupted_triple(
                positive, bool(plan.head_side[i, j]), int(plan.replacement[i, j])
            )
            grads, loss = term_gradients(
                global_snapshot, positive, corrupted, config.margin, config.norm
            )
            if loss > 0.0:
                acc.add(grads)
                total_loss += loss
                hit = True
        if hit:
            active += 1
    return MapOutputBgd(
        worker_id=partition.worker_id,
        accumulator=acc,
        local_loss=total_loss,
        n_triples=len(partition),
        active=active,
    )


def reduce_sgd(
    outputs: list[MapOutputSgd],
    prev_global: EmbeddingTable,
    strategy: str,
    rng: np.random.Generator,
    *,
    weighted_average: bool = False,
) -> EmbeddingTable:
    """Merge worker tables per key; keys untouched by every worker carry over.

    random:   one uniformly chosen contributor per key.
    average:  element-wise mean over contributors (update-count weighted when
              ``weighted_average`` is set).
    miniloss: the contributor with the smallest per-triple local loss, ties
              to the lowest worker id.
    """
    if strategy not in MERGE_STRATEGIES:
        raise ValueError(f"strategy must be one of {MERGE_STRATEGIES}, got {strategy!r}")
    if not outputs:
        raise ValueError("reduce requires at least one map output")
    outputs = sorted(outputs, key=lambda o: o.worker_id)
    for out in outputs:
        if out.table.dim != prev_global.dim:
            raise ValueError(
                f"worker {out.worker_id} table dim {out.table.dim} != {prev_global.dim}"
            )

    merged = prev_global.copy()
    _merge_side(
        merged.entity_vecs,
        [o.table.entity_vecs for o in outputs],
        [o.entity_counts for o in outputs],
        outputs,
        strategy,
        rng,
        weighted_average,
    )
    _merge_side(
        merged.relation_vecs,
        [o.table.relation_vecs for o in outputs],
        [o.relation_counts for o in outputs],
        outputs,
        strategy,
        rng,
        weighted_average,
    )
    return merged


def _merge_side(
    merged_vecs: np.ndarray,
    worker_vecs: list[np.ndarray],
    worker_counts: list[np.ndarray],
    outputs: list[MapOutputSgd],
    strategy: str,
    rng: np.random.Generator,
    weighted: bool,
) -> None:
    counts = np.stack(worker_counts)  # (W, n_keys)
    touched = counts > 0
    n_contrib = touched.sum(axis=0)
    contested = np.flatnonzero(n_contrib > 0)
    if contested.size == 0:
        return

    if strategy == "average":
        dim = merged_vecs.shape[1]
        acc = np.zeros((len(contested), dim))
        denom = np.zeros(len(contested))
        for w, vecs in enumerate(worker_vecs):
            mask = touched[w, contested]
            weight = counts[w, contested][mask] if weighted else 1.0
            rows = contested[mask]
            acc[mask] += (weight[:, None] if weighted else 1.0) * vecs[rows]
            denom[mask] += weight
        merged_vecs[contested] = acc / denom[:, None]
    elif strategy == "random":
        for key in contested:
            contribs = np.flatnonzero(touched[:, key])
            pick = contribs[int(rng.integers(0, len(contribs)))]
            merged_vecs[key] = worker_vecs[pick][key]
    else:  # miniloss
        scores = np.array(
            [o.local_loss / max(o.n_triples, 1) for o in outputs], dtype=np.float64
        )
        masked = np.where(touched, scores[:, None], np.inf)
        best = np.argmin(masked, axis=0)  # first minimum = lowest worker id
        merged_vecs[contested] = np.stack(worker_vecs)[best[contested], contested]


def reduce_bgd(
    outputs: list[MapOutputBgd],
    prev_global: EmbeddingTable,
    config: TrainConfig,
) -> EmbeddingTable:
    """Sum per-key gradients across workers (ascending worker id) and apply
    one mean-gradient step per key; keys with no gradients are unchanged."""
    if not outputs:
        raise ValueError("reduce requires at least one map output")
    outputs = sorted(outputs, key=lambda o: o.worker_id)
    sums: dict[GradKey, np.ndarray] = {}
    counts: dict[GradKey, int] = {}
    for out in outputs:
        for key, vec in out.accumulator.sums.items():
            if key in sums:
                sums[key] = sums[key] + vec
                counts[key] += out.accumulator.counts[key]
            else:
                sums[key] = vec.copy()
                counts[key] = out.accumulator.counts[key]

    merged = prev_global.copy()
    lr = config.learning_rate
    for (kind, idx), total in sums.items():
        step = lr * (total / counts[(kind, idx)])
        if kind == "entity":
            merged.entity_vecs[idx] -= step
        else:
            merged.relation_vecs[idx] -= step
    return merged


def _chunk_bounds(n: int, workers: int) -> list[tuple[int, int]]:
    base, extra = divmod(n, workers)
    bounds = []
    start = 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def _slice_plan(plan: CorruptionPlan, start: int, stop: int) -> CorruptionPlan:
    return CorruptionPlan(plan.head_side[start:stop], plan.replacement[start:stop])


def _sgd_job(args) -> MapOutputSgd:
    partition, snapshot, config, worker_seed, epochs_per_sync, plan, avoid = args
    return run_map_sgd(
        partition, snapshot, config, worker_seed,
        epochs_per_sync=epochs_per_sync, epoch0_plan=plan, avoid_encoded=avoid,
    )


def _bgd_job(args) -> MapOutputBgd:
    partition, snapshot, config, worker_seed, plan = args
    return run_map_bgd(partition, snapshot, config, worker_seed, plan=plan)


def train_mapreduce(
    dataset: Dataset,
    config: TrainConfig,
    schedule: SyncSchedule,
    strategy: str | None = None,
    *,
    weighted_average: bool = False,
    use_processes: bool | None = None,
    on_report: Callable[[RoundReport], None] | None = None,
) -> tuple[EmbeddingTable, list[RoundReport]]:
    """Master loop: snapshot -> balanced re-partition -> map -> reduce.

    Convergence uses the same relative-loss rule as the single-thread loop,
    over summed worker losses. ``use_processes`` defaults to a process pool
    whenever more than one worker is scheduled; serial execution produces
    bit-identical results since workers are pure functions of their inputs.
    """
    n = len(dataset.train)
    if n == 0:
        raise ValueError("training set is empty")
    if dataset.vocab.n_entities < 2:
        raise ValueError("need at least 2 entities to sample corruptions")
    if schedule.mode == "sgd":
        if strategy not in MERGE_STRATEGIES:
            raise ValueError(
                f"SGD mode needs a merge strategy from {MERGE_STRATEGIES}, got {strategy!r}"
            )
    epochs_per_round = schedule.epochs_per_sync if schedule.mode == "sgd" else 1
    n_rounds = -(-config.max_epochs // epochs_per_round)  # ceil division

    table = init_table(dataset.vocab, config.dim, config.seed)
    n_entities = dataset.vocab.n_entities
    avoid = (
        encode_triples(dataset.train, n_entities, dataset.vocab.n_relations)
        if config.filter_negatives
        else None
    )
    reports: list[RoundReport] = []
    prev_loss = 0.0

    pool = None
    pool_size = 0
    if use_processes is None:
        use_processes = schedule.workers > 1
    try:
        if use_processes and schedule.workers > 1:
            ctx = multiprocessing.get_context(
                "fork" if "fork" in multiprocessing.get_all_start_methods() else "spawn"
            )
            pool_size = min(schedule.workers, os.cpu_count() or 1)
            pool = ctx.Pool(processes=pool_size)

        for rnd in range(n_rounds):
            normalize_entities(table)
            round_snapshot = snapshot(table)
            rng = epoch_rng(config.seed, rnd * epochs_per_round)
            order = rng.permutation(n)
            shuffled = dataset.train[order]
            plan = draw_corruption_plan(
                shuffled, n_entities, config.neg_per_pos, rng,
                avoid, dataset.vocab.n_relations,
            )
            bounds = _chunk_bounds(n, schedule.workers)

            jobs = []
            for w, (start, stop) in enumerate(bounds):
                part = Partition(worker_id=w, triples=shuffled[start:stop])
                if len(part) == 0:
                    log.warning("round %d: worker %d has an empty partition, skipped", rnd, w)
                    continue
                worker_seed = (config.seed, STREAM_MAP, rnd, w)
                if schedule.mode == "sgd":
                    jobs.append(
                        (part, round_snapshot, config, worker_seed,
                         schedule.epochs_per_sync, _slice_plan(plan, start, stop), avoid)
                    )
                else:
                    jobs.append(
                        (part, round_snapshot, config, worker_seed, _slice_plan(plan, start, stop))
                    )

            job_fn = _sgd_job if schedule.mode == "sgd" else _bgd_job
            t_map = time.perf_counter()
            if pool is not None:
                chunk = max(1, len(jobs) // pool_size)
                outputs = pool.map(job_fn, jobs, chunksize=chunk)
            else:
                outputs = [job_fn(j) for j in jobs]
            map_secs = time.perf_counter() - t_map

            t_reduce = time.perf_counter()
            if schedule.mode == "sgd":
                merge_rng = np.random.default_rng((config.seed, STREAM_REDUCE, rnd))
                table = reduce_sgd(
                    outputs, table, strategy, merge_rng, weighted_average=weighted_average
                )
            else:
                table = reduce_bgd(outputs, table, config)
            reduce_secs = time.perf_counter() - t_reduce

            loss = sum(out.local_loss for out in outputs)
            active = sum(out.active for out in outputs)
            rel = relative_change(prev_loss, loss)
            visits = n * epochs_per_round
            report = RoundReport(
                round=rnd,
                mode=schedule.mode,
                strategy=strategy if schedule.mode == "sgd" else None,
                workers=schedule.workers,
                loss=loss,
                rel_change=rel,
                active=active,
                map_secs=map_secs,
                reduce_secs=reduce_secs,
                triples_per_sec=visits / map_secs if map_secs > 0 else float(visits),
            )
            reports.append(report)
            if on_report is not None:
                on_report(report)
            prev_loss = loss
            if rel <= config.convergence_eps:
                break
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    table.check_finite()
    return table, reports
