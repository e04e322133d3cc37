"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines as they
complete. Tolerances and budgets are fixed here, not tuned at runtime.
"""

import json
import os
import time

import numpy as np
import pytest

from pkge import (
    Triple,
    TrainConfig,
    evaluate_ranking,
    init_table,
    make_synthetic_translation_kg,
    partition,
    rank_entities,
    rank_relations,
    snapshot,
    term_gradients,
    train_mapreduce,
    train_single,
)
from pkge.cli import main as cli_main
from pkge.data import Partition
from pkge.model import CorruptionPlan, draw_corruption_plan
from pkge.store import EmbeddingTable
from pkge.train_mapreduce import SyncSchedule, reduce_sgd, run_map_bgd
from test_evaluation import oracle_rank_entity, oracle_rank_relation
from test_model import _central_difference, _usable_config

from conftest import random_kb


def report(criterion: int, label: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"[criterion {criterion}] {status} - {label}: {detail}")
    assert passed, f"criterion {criterion} ({label}): {detail}"


@pytest.fixture(scope="module")
def kg():
    return make_synthetic_translation_kg(50, 4, 16, 100, seed=42)


@pytest.fixture(scope="module")
def base_config():
    return TrainConfig(
        dim=16, margin=1.0, learning_rate=0.01, norm="L1",
        max_epochs=200, convergence_eps=0.0, seed=42,
    )


@pytest.fixture(scope="module")
def single_run(kg, base_config):
    table, reports = train_single(kg, base_config)
    hits = evaluate_ranking(table, kg, "entity", setting="filtered", norm="L1")
    return table, reports, hits


def test_criterion_1_gradient_correctness():
    """Analytic subgradients vs central finite differences at dim=8."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(1234)
    step = 1e-6
    slots = {
        ("entity", 0): 0, ("entity", 1): 1, ("entity", 2): 2,
        ("entity", 3): 3, ("relation", 0): 4,
    }
    worst = 0.0
    checked = 0
    target = {"L1": 50, "L2": 50}
    done = {"L1": 0, "L2": 0}
    while done["L1"] < target["L1"] or done["L2"] < target["L2"]:
        norm = "L1" if done["L1"] < target["L1"] else "L2"
        vecs = [rng.normal(size=8) for _ in range(5)]  # h, t, h', t', r
        if not _usable_config(vecs, 1.0, norm):
            continue
        table = EmbeddingTable(np.stack(vecs[:4]), vecs[4][None, :])
        grads, loss = term_gradients(table, Triple(0, 0, 1), Triple(2, 0, 3), 1.0, norm)
        assert loss > 0
        for key, slot in slots.items():
            fd = _central_difference(vecs, slot, 1.0, norm, step)
            analytic = grads.get(key, np.zeros(8))
            err = np.abs(analytic - fd).max() / max(1.0, np.abs(fd).max())
            worst = max(worst, err)
        done[norm] += 1
        checked += 1
    elapsed = time.perf_counter() - t0
    report(
        1, "gradient correctness",
        checked == 100 and worst < 1e-5 and elapsed < 5.0,
        f"{checked} configs, worst relative error {worst:.2e}, {elapsed:.1f}s (< 5s)",
    )


def test_criterion_2_ranking_oracle_equivalence():
    """All ranks on 50 small random KBs match brute force exactly."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(777)
    mismatches = 0
    queries = 0
    for _ in range(50):
        ds = random_kb(rng)
        table = init_table(ds.vocab, 6, int(rng.integers(1 << 30)))
        for row in ds.test:
            for setting in ("raw", "filtered"):
                for missing in ("head", "tail"):
                    got = rank_entities(table, row, missing, ds, setting, "L1")
                    want = oracle_rank_entity(table, row, missing, ds, setting, "L1")
                    mismatches += got != want
                    queries += 1
                got = rank_relations(table, row, ds, setting, "L1")
                want = oracle_rank_relation(table, row, ds, setting, "L1")
                mismatches += got != want
                queries += 1
    elapsed = time.perf_counter() - t0
    report(
        2, "ranking oracle equivalence",
        mismatches == 0 and elapsed < 10.0,
        f"{queries} ranks over 50 KBs, {mismatches} mismatches, {elapsed:.1f}s (< 10s)",
    )


def test_criterion_3_learning_sanity(single_run):
    """Single-thread SGD on the synthetic KG reaches filtered Hits@10 >= 0.8."""
    t0 = time.perf_counter()
    table, reports, metrics = single_run
    ratio = reports[-1].loss / reports[0].loss if reports[0].loss else 0.0
    hits10 = metrics.hits_at_k[10]
    elapsed = time.perf_counter() - t0
    report(
        3, "learning sanity",
        hits10 >= 0.8 and ratio <= 0.2 and elapsed < 60.0,
        f"filtered Hits@10 {hits10:.3f} (>= 0.8), loss ratio {ratio:.3f} (<= 0.2), "
        f"{elapsed:.1f}s (< 60s)",
    )


def test_criterion_4_bgd_worker_invariance(kg):
    """mr-bgd embeddings agree across P in {1, 2, 4} within 1e-9."""
    t0 = time.perf_counter()
    cfg = TrainConfig(
        dim=16, margin=1.0, learning_rate=0.01, norm="L1",
        max_epochs=20, convergence_eps=0.0, seed=42,
    )
    tables = {}
    for workers in (1, 2, 4):
        tables[workers], reports = train_mapreduce(
            kg, cfg, SyncSchedule("bgd", workers), use_processes=False
        )
        assert len(reports) == 20
    worst = 0.0
    for workers in (2, 4):
        worst = max(
            worst,
            float(np.abs(tables[workers].entity_vecs - tables[1].entity_vecs).max()),
            float(np.abs(tables[workers].relation_vecs - tables[1].relation_vecs).max()),
        )
    elapsed = time.perf_counter() - t0
    report(
        4, "BGD worker invariance",
        worst <= 1e-9 and elapsed < 60.0,
        f"max component diff {worst:.2e} (<= 1e-9) over 20 rounds, {elapsed:.1f}s (< 60s)",
    )


def test_criterion_5_parallel_sgd_quality(kg, base_config, single_run):
    """mr-sgd at P=4 with equal epoch budget stays close to single-thread."""
    t0 = time.perf_counter()
    _, reports_s, metrics_s = single_run
    loss_s = reports_s[-1].loss
    hits_s = metrics_s.hits_at_k[10]

    results = {}
    for strategy in ("average", "random", "miniloss"):
        table, reports = train_mapreduce(
            kg, base_config, SyncSchedule("sgd", 4, 1), strategy, use_processes=False
        )
        hits = evaluate_ranking(table, kg, "entity", setting="filtered", norm="L1")
        results[strategy] = (reports[-1].loss, hits.hits_at_k[10])

    loss_a, hits_a = results["average"]
    loss_gap = abs(loss_a - loss_s) / max(loss_s, 1e-12) if loss_s else abs(loss_a - loss_s)
    avg_ok = (loss_gap <= 0.10 or abs(loss_a - loss_s) < 1e-9) and abs(hits_a - hits_s) <= 0.05
    loose_ok = all(abs(results[s][1] - hits_s) <= 0.15 for s in ("random", "miniloss"))
    elapsed = time.perf_counter() - t0
    detail = (
        f"single hits {hits_s:.3f} loss {loss_s:.4f}; "
        f"average hits {hits_a:.3f} loss {loss_a:.4f}; "
        f"random hits {results['random'][1]:.3f}; miniloss hits {results['miniloss'][1]:.3f}; "
        f"{elapsed:.1f}s (< 180s)"
    )
    report(5, "parallel SGD quality", avg_ok and loose_ok and elapsed < 180.0, detail)


def test_criterion_6_throughput_scaling(capsys):
    """bench emits the speedup table; P=4 >= 2x P=1 on a >= 4-core machine."""
    t0 = time.perf_counter()
    code = cli_main([
        "bench", "--workers-list", "1,2,4", "--entities", "5000", "--relations", "25",
        "--triples", "100000", "--dim", "50", "--rounds", "3", "--seed", "42",
    ])
    out = capsys.readouterr().out
    elapsed = time.perf_counter() - t0
    with capsys.disabled():
        print(out)
    assert code == 0
    lines = out.strip().splitlines()
    payload = json.loads(lines[0])
    rows = {row["workers"]: row for row in payload["rows"]}
    assert payload["n_train"] >= 100_000
    assert all(rows[w]["triples_per_sec"] > 0 for w in (1, 2, 4))
    assert any("triples/sec" in line for line in lines[1:])
    speedup2 = rows[2]["triples_per_sec"] / rows[1]["triples_per_sec"]
    speedup4 = rows[4]["triples_per_sec"] / rows[1]["triples_per_sec"]
    cores = os.cpu_count() or 1
    if cores < 4:
        print(
            f"[criterion 6] SKIP - throughput scaling: machine has {cores} cores "
            f"(criterion applies on >= 4); measured P2/P1 = {speedup2:.2f}x, "
            f"P4/P1 = {speedup4:.2f}x, {elapsed:.0f}s (< 300s)"
        )
        pytest.skip(f"throughput criterion requires >= 4 cores, machine has {cores}")
    report(
        6, "throughput scaling",
        speedup4 >= 2.0 and elapsed < 300.0,
        f"P4/P1 = {speedup4:.2f}x (>= 2.0), P2/P1 = {speedup2:.2f}x, on {cores} cores "
        f"over {payload['n_train']} triples, {elapsed:.0f}s (< 300s)",
    )


def test_criterion_7_invariant_suite(kg):
    """Property invariants over >= 100 random instances each."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []

    # init bounds and unit norms
    from pkge.data import Vocabulary

    for _ in range(100):
        ne, nr, dim = int(rng.integers(2, 30)), int(rng.integers(1, 5)), int(rng.integers(1, 40))
        vocab = Vocabulary(
            tuple(f"e{i}" for i in range(ne)), tuple(f"r{i}" for i in range(nr))
        )
        seed = int(rng.integers(1 << 30))
        bound = 6.0 / np.sqrt(dim)
        raw = init_table(vocab, dim, seed, normalized=False)
        if np.abs(raw.entity_vecs).max() > bound or np.abs(raw.relation_vecs).max() > bound:
            failures.append("init bounds")
            break
        table = init_table(vocab, dim, seed)
        norms = np.concatenate([
            np.linalg.norm(table.entity_vecs, axis=1),
            np.linalg.norm(table.relation_vecs, axis=1),
        ])
        if np.abs(norms - 1.0).max() > 1e-9:
            failures.append("init normalization")
            break

    # partition balance and disjoint union
    for _ in range(100):
        n = int(rng.integers(1, 100))
        workers = int(rng.integers(1, n + 1))
        triples = np.arange(3 * n).reshape(n, 3)
        parts = partition(triples, workers, seed=int(rng.integers(1 << 30)))
        sizes = [len(p) for p in parts]
        union = sorted(tuple(r) for p in parts for r in p.triples.tolist())
        if max(sizes) - min(sizes) > 1 or union != sorted(map(tuple, triples.tolist())):
            failures.append("partition balance/disjointness")
            break

    # snapshot isolation
    for _ in range(100):
        table = EmbeddingTable(rng.normal(size=(4, 3)), rng.normal(size=(2, 3)))
        snap = snapshot(table)
        table.entity_vecs += rng.normal(size=(4, 3))
        table.relation_vecs[0] = 0.0
        if snap.equals(table):
            failures.append("snapshot isolation")
            break

    # BGD accumulator additivity over random splits (L1: exact)
    cfg = TrainConfig(dim=8, norm="L1", seed=0)
    base = init_table(kg.vocab, 8, 3)
    for i in range(100):
        size = int(rng.integers(2, 30))
        start = int(rng.integers(0, len(kg.train) - size))
        triples = kg.train[start : start + size]
        plan = draw_corruption_plan(triples, kg.vocab.n_entities, 1, np.random.default_rng(i))
        cut = int(rng.integers(1, size))
        whole = run_map_bgd(Partition(0, triples), base, cfg, (0,), plan=plan)
        left = run_map_bgd(
            Partition(0, triples[:cut]), base, cfg, (0,),
            plan=CorruptionPlan(plan.head_side[:cut], plan.replacement[:cut]),
        )
        right = run_map_bgd(
            Partition(1, triples[cut:]), base, cfg, (0,),
            plan=CorruptionPlan(plan.head_side[cut:], plan.replacement[cut:]),
        )
        ok = True
        for key, total in whole.accumulator.sums.items():
            parts_sum = np.zeros(8)
            for half in (left, right):
                if key in half.accumulator.sums:
                    parts_sum = parts_sum + half.accumulator.sums[key]
            ok &= bool(np.array_equal(parts_sum, total))
        if not ok:
            failures.append("BGD additivity")
            break

    # average-merge convex hull containment
    from test_train_mapreduce import make_sgd_output

    for _ in range(100):
        n_ent, dim = 5, 3
        prev = EmbeddingTable(rng.normal(size=(n_ent, dim)), rng.normal(size=(1, dim)))
        outputs = [
            make_sgd_output(
                w,
                EmbeddingTable(rng.normal(size=(n_ent, dim)), rng.normal(size=(1, dim))),
                rng.integers(0, 2, size=n_ent),
                rng.integers(0, 2, size=1),
            )
            for w in range(3)
        ]
        merged = reduce_sgd(outputs, prev, "average", rng)
        for key in range(n_ent):
            contribs = [o.table.entity_vecs[key] for o in outputs if o.entity_counts[key] > 0]
            if not contribs:
                continue
            lo = np.min(contribs, axis=0) - 1e-12
            hi = np.max(contribs, axis=0) + 1e-12
            if not ((merged.entity_vecs[key] >= lo) & (merged.entity_vecs[key] <= hi)).all():
                failures.append("average-merge convex hull")
                break

    # filtered dominates raw
    checked = 0
    while checked < 100:
        ds = random_kb(rng)
        table = init_table(ds.vocab, 5, int(rng.integers(1 << 30)))
        for row in ds.test:
            for missing in ("head", "tail"):
                raw = rank_entities(table, row, missing, ds, "raw")
                filt = rank_entities(table, row, missing, ds, "filtered")
                if filt > raw:
                    failures.append("filtered dominates raw")
                checked += 1

    elapsed = time.perf_counter() - t0
    report(
        7, "invariant suite",
        not failures and elapsed < 60.0,
        f"six invariant families x >= 100 instances, failures: {failures or 'none'}, "
        f"{elapsed:.1f}s (< 60s)",
    )
