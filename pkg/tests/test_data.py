import numpy as np
import pytest

from pkge import Vocabulary, load_triples, make_synthetic_translation_kg, partition
from pkge.data import load_dataset, nearest_translation_triples, write_triples
from pkge.errors import TripleParseError, VocabularyError


def write_lines(tmp_path, name, lines):
    path = tmp_path / name
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestLoadTriples:
    def test_first_appearance_order(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", ["A\tr1\tB", "B\tr1\tC"])
        triples, vocab, stats = load_triples(path)
        assert stats.n_triples == 2
        assert vocab.entity_labels == ("A", "B", "C")
        assert vocab.relation_labels == ("r1",)
        assert triples.tolist() == [[0, 0, 1], [1, 0, 2]]

    def test_empty_file(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", [])
        triples, vocab, stats = load_triples(path)
        assert len(triples) == 0
        assert vocab.n_entities == 0 and vocab.n_relations == 0
        assert stats.n_duplicates == 0

    def test_duplicates_dropped_and_counted(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", ["A\tr1\tB", "A\tr1\tB"])
        triples, _, stats = load_triples(path)
        assert len(triples) == 1
        assert stats.n_duplicates == 1

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", ["# header", "", "A\tr1\tB"])
        triples, _, _ = load_triples(path)
        assert len(triples) == 1

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", ["A\tr1\tB", "A r1 B"])
        with pytest.raises(TripleParseError) as exc:
            load_triples(path)
        assert exc.value.line_no == 2

    def test_fixed_vocab_rejects_unknown_labels(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", ["A\tr1\tB"])
        _, vocab, _ = load_triples(path)
        bad = write_lines(tmp_path, "bad.tsv", ["A\tr1\tZ", "Q\tr9\tB"])
        with pytest.raises(VocabularyError) as exc:
            load_triples(bad, vocab)
        assert set(exc.value.offenders) == {"Z", "Q", "r9"}

    def test_fixed_vocab_drop_mode_counts(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", ["A\tr1\tB"])
        _, vocab, _ = load_triples(path)
        mixed = write_lines(tmp_path, "m.tsv", ["A\tr1\tZ", "B\tr1\tA"])
        triples, _, stats = load_triples(mixed, vocab, on_oov="drop")
        assert len(triples) == 1
        assert stats.n_oov_dropped == 1

    def test_same_file_loads_identically(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", ["A\tr1\tB", "C\tr2\tA", "B\tr1\tC"])
        t1, v1, _ = load_triples(path)
        t2, v2, _ = load_triples(path)
        assert np.array_equal(t1, t2)
        assert v1.entity_labels == v2.entity_labels

    def test_write_then_load_round_trips(self, tmp_path):
        path = write_lines(tmp_path, "t.tsv", ["A\tr1\tB", "C\tr2\tA"])
        triples, vocab, _ = load_triples(path)
        out = tmp_path / "out.tsv"
        write_triples(out, triples, vocab)
        again, vocab2, _ = load_triples(out)
        assert np.array_equal(triples, again)
        assert vocab2.entity_labels == vocab.entity_labels


class TestVocabulary:
    def test_round_trip_identity(self):
        vocab = Vocabulary(("x", "y", "z"), ("p",))
        for label in vocab.entity_labels:
            assert vocab.entity_labels[vocab.entity_id(label)] == label
        for i in range(vocab.n_entities):
            assert vocab.entity_id(vocab.entity_labels[i]) == i

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(("x", "x"), ("p",))


class TestPartition:
    def test_balanced_split_10_into_3(self):
        triples = np.arange(30).reshape(10, 3)
        parts = partition(triples, 3, seed=0)
        assert [len(p) for p in parts] == [4, 3, 3]

    def test_single_worker_is_shuffled_whole(self):
        triples = np.arange(30).reshape(10, 3)
        parts = partition(triples, 1, seed=0)
        assert len(parts) == 1
        assert len(parts[0]) == 10
        assert sorted(map(tuple, parts[0].triples.tolist())) == sorted(
            map(tuple, triples.tolist())
        )

    def test_deterministic_for_fixed_seed(self):
        triples = np.arange(60).reshape(20, 3)
        a = partition(triples, 4, seed=123)
        b = partition(triples, 4, seed=123)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.triples, pb.triples)

    def test_workers_must_be_positive(self):
        with pytest.raises(ValueError):
            partition(np.zeros((3, 3), dtype=np.int64), 0, seed=0)

    def test_disjoint_union_property(self):
        rng = np.random.default_rng(5)
        for _ in range(60):
            n = int(rng.integers(1, 40))
            workers = int(rng.integers(1, n + 1))
            triples = np.arange(3 * n).reshape(n, 3)
            parts = partition(triples, workers, seed=int(rng.integers(1 << 30)))
            sizes = [len(p) for p in parts]
            assert max(sizes) - min(sizes) <= 1
            seen = [tuple(row) for p in parts for row in p.triples.tolist()]
            assert sorted(seen) == sorted(map(tuple, triples.tolist()))


class TestSyntheticKg:
    def test_size_contract_and_split(self):
        ds = make_synthetic_translation_kg(50, 4, 16, 100, seed=1)
        total = len(ds.train) + len(ds.valid) + len(ds.test)
        assert total <= 400
        assert len(ds.valid) == total // 10
        assert len(ds.test) == total // 10
        all_rows = [tuple(r) for r in ds.all_triples().tolist()]
        assert len(set(all_rows)) == total

    def test_deterministic_per_seed(self):
        a = make_synthetic_translation_kg(30, 3, 8, 40, seed=9)
        b = make_synthetic_translation_kg(30, 3, 8, 40, seed=9)
        assert np.array_equal(a.train, b.train)
        assert np.array_equal(a.valid, b.valid)
        assert np.array_equal(a.test, b.test)

    def test_collinear_chain(self):
        # three equally spaced points on a line, translation = spacing:
        # nearest(h + r) follows the chain, the endpoint maps to itself
        points = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        vecs = np.array([[1.0, 0.0]])
        triples = nearest_translation_triples(points, vecs)
        expected = brute_force_nearest(points, vecs)
        assert sorted(map(tuple, triples.tolist())) == sorted(expected)
        assert (0, 0, 1) in expected and (1, 0, 2) in expected and (2, 0, 2) in expected

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(17)
        points = rng.uniform(-1, 1, size=(12, 3))
        vecs = rng.normal(size=(2, 3)) * 0.8
        triples = nearest_translation_triples(points, vecs)
        expected = brute_force_nearest(points, vecs)
        assert sorted(map(tuple, triples.tolist())) == sorted(expected)

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            make_synthetic_translation_kg(0, 1, 2, 3, seed=0)
        with pytest.raises(ValueError):
            make_synthetic_translation_kg(5, 1, 2, 0, seed=0)


def brute_force_nearest(points, relation_vecs):
    """Independent oracle: exhaustive nearest-entity enumeration."""
    out = []
    for r, vec in enumerate(relation_vecs):
        for h in range(len(points)):
            target = points[h] + vec
            best, best_d = None, None
            for t in range(len(points)):
                d = float(((target - points[t]) ** 2).sum())
                if best_d is None or d < best_d:
                    best, best_d = t, d
            out.append((h, r, best))
    return out


def test_dataset_splits_are_read_only():
    ds = make_synthetic_translation_kg(10, 1, 2, 5, seed=0)
    with pytest.raises(ValueError):
        ds.train[0, 0] = 99


class TestLoadDataset:
    def test_vocab_fixed_across_splits(self, tmp_path):
        train = write_lines(tmp_path, "train.tsv", ["A\tr\tB", "B\tr\tC"])
        valid = write_lines(tmp_path, "valid.tsv", ["C\tr\tA"])
        ds, stats = load_dataset(train, valid)
        assert ds.vocab.n_entities == 3
        assert len(ds.valid) == 1
        assert stats["train"].n_triples == 2

    def test_oov_in_valid_raises(self, tmp_path):
        train = write_lines(tmp_path, "train.tsv", ["A\tr\tB"])
        valid = write_lines(tmp_path, "valid.tsv", ["A\tr\tNEW"])
        with pytest.raises(VocabularyError):
            load_dataset(train, valid)
