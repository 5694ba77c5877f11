import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from dccl.data import (
    UNLABELED,
    EmbeddingSet,
    GcdDataset,
    SplitSpec,
    generate_synthetic,
    load_embeddings,
    load_labels,
    make_gcd_split,
    save_embeddings,
    save_labels,
)


def _matched_accuracy(pred, truth):
    clusters, pi = np.unique(pred, return_inverse=True)
    classes, ti = np.unique(truth, return_inverse=True)
    cont = np.zeros((clusters.size, classes.size), dtype=np.int64)
    np.add.at(cont, (pi, ti), 1)
    r, c = linear_sum_assignment(-cont)
    return cont[r, c].sum() / pred.shape[0]


class TestEmbeddingSet:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            EmbeddingSet(np.array([[1.0, np.nan]]))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            EmbeddingSet(np.zeros((0, 3)))

    def test_shape_properties(self):
        es = EmbeddingSet(np.ones((4, 2)))
        assert (es.count, es.dim) == (4, 2)


class TestGenerateSynthetic:
    def test_zero_sigma_collapses_to_class_mean(self):
        es, labels = generate_synthetic(1, 1, 5, 2, 0.0, 1.0, seed=3)
        assert es.count == 5
        assert np.all(es.data == es.data[0])
        assert np.all(labels == 0)

    def test_kmeans_oracle_on_generated_data(self):
        es, labels = generate_synthetic(2, 5, 100, 32, 0.05, 1.0, seed=7)
        assert es.data.shape == (1000, 32)
        km = KMeans(n_clusters=10, n_init=10, random_state=0).fit(es.data)
        assert _matched_accuracy(km.labels_, labels) >= 0.99

    def test_deterministic(self):
        a, la = generate_synthetic(2, 3, 10, 8, 0.1, 1.0, seed=42)
        b, lb = generate_synthetic(2, 3, 10, 8, 0.1, 1.0, seed=42)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(la, lb)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(num_superclasses=0),
            dict(classes_per_super=0),
            dict(instances_per_class=0),
            dict(dim=0),
            dict(superclass_spread=0.0),
            dict(intra_class_sigma=-0.1),
        ],
    )
    def test_rejects_degenerate_parameters(self, kwargs):
        base = dict(
            num_superclasses=1,
            classes_per_super=2,
            instances_per_class=3,
            dim=2,
            intra_class_sigma=0.1,
            superclass_spread=1.0,
        )
        base.update(kwargs)
        with pytest.raises(ValueError):
            generate_synthetic(**base)

    def test_empirical_class_means_converge(self):
        # sigma=0 with the same seed replays the exact drawn class means.
        means, _ = generate_synthetic(1, 3, 1000, 4, 0.0, 1.0, seed=11)
        es, labels = generate_synthetic(1, 3, 1000, 4, 0.01, 1.0, seed=11)
        for cls in range(3):
            true_mean = means.data[labels == cls][0]
            emp_mean = es.data[labels == cls].mean(axis=0)
            assert np.max(np.abs(emp_mean - true_mean)) < 0.01


class TestMakeGcdSplit:
    def test_paper_split_pattern(self):
        es, labels = generate_synthetic(2, 5, 100, 4, 0.1, 1.0, seed=0)
        ds = make_gcd_split(es, labels, SplitSpec(0.5, 0.5, seed=1))
        assert ds.num_labeled_classes == 5
        assert int(ds.labeled_mask.sum()) == 250
        assert int((~ds.labeled_mask).sum()) == 750

    def test_degenerate_split_rejected(self):
        es, labels = generate_synthetic(1, 2, 10, 2, 0.1, 1.0, seed=0)
        with pytest.raises(ValueError):
            make_gcd_split(es, labels, SplitSpec(1.0, 1.0, seed=0))

    def test_two_class_split_counts(self):
        es, labels = generate_synthetic(1, 2, 10, 2, 0.1, 1.0, seed=0)
        ds = make_gcd_split(es, labels, SplitSpec(0.5, 1.0, seed=0))
        assert ds.num_labeled_classes == 1
        assert int(ds.labeled_mask.sum()) == 10
        assert int((~ds.labeled_mask).sum()) == 10

    def test_single_class_rejected(self):
        es = EmbeddingSet(np.random.default_rng(0).normal(size=(5, 2)))
        with pytest.raises(ValueError):
            make_gcd_split(es, np.zeros(5, dtype=int), SplitSpec(0.5, 0.5, seed=0))

    def test_deterministic_under_seed(self):
        es, labels = generate_synthetic(2, 4, 25, 3, 0.1, 1.0, seed=5)
        a = make_gcd_split(es, labels, SplitSpec(0.5, 0.5, seed=9))
        b = make_gcd_split(es, labels, SplitSpec(0.5, 0.5, seed=9))
        assert np.array_equal(a.labels, b.labels)
        assert a.labeled_class_set == b.labeled_class_set

    def test_labeled_count_matches_ceiling_identity(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            n_classes = int(rng.integers(2, 7))
            sizes = rng.integers(1, 30, size=n_classes)
            labels = np.repeat(np.arange(n_classes), sizes)
            es = EmbeddingSet(rng.normal(size=(labels.size, 3)))
            frac_c = float(rng.uniform(0.2, 0.9))
            frac_i = float(rng.uniform(0.2, 0.9))
            try:
                ds = make_gcd_split(es, labels, SplitSpec(frac_c, frac_i, seed=int(rng.integers(1000))))
            except ValueError:
                continue  # split left zero labeled/unlabeled; not this test's concern
            expected = sum(
                math.ceil(frac_i * int(np.sum(labels == c))) for c in ds.labeled_class_set
            )
            assert int(ds.labeled_mask.sum()) == expected

    def test_spec_validates_fractions(self):
        with pytest.raises(ValueError):
            SplitSpec(0.0, 0.5)
        with pytest.raises(ValueError):
            SplitSpec(0.5, 1.5)


class TestGcdDatasetInvariants:
    def test_needs_labeled_and_unlabeled(self):
        es = EmbeddingSet(np.eye(3))
        with pytest.raises(ValueError):
            GcdDataset(embeddings=es, labels=np.array([UNLABELED] * 3))
        with pytest.raises(ValueError):
            GcdDataset(embeddings=es, labels=np.array([0, 1, 2]))

    def test_label_outside_class_set_rejected(self):
        es = EmbeddingSet(np.eye(3))
        with pytest.raises(ValueError):
            GcdDataset(
                embeddings=es,
                labels=np.array([0, 7, UNLABELED]),
                labeled_class_set=frozenset({0}),
            )

    def test_labeled_classes_must_appear_in_eval_labels(self):
        es = EmbeddingSet(np.eye(3))
        with pytest.raises(ValueError):
            GcdDataset(
                embeddings=es,
                labels=np.array([0, UNLABELED, UNLABELED]),
                eval_labels=np.array([1, 1, 2]),
            )


class TestEmbeddingIO:
    def test_csv_parse_example(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("1,0\n0,1\n1,1\n")
        es = load_embeddings(p, fmt="csv")
        assert (es.count, es.dim) == (3, 2)
        assert np.array_equal(es.data, np.array([[1, 0], [0, 1], [1, 1]], dtype=np.float32))

    def test_binary_roundtrip_bit_identical(self, tmp_path):
        es = EmbeddingSet(np.random.default_rng(0).normal(size=(17, 5)).astype(np.float32))
        p = tmp_path / "e.bin"
        save_embeddings(es, p, fmt="binary")
        back = load_embeddings(p, fmt="binary")
        assert np.array_equal(back.data, es.data)

    def test_csv_roundtrip_bit_identical(self, tmp_path):
        es = EmbeddingSet(np.random.default_rng(1).normal(size=(11, 4)).astype(np.float32))
        p = tmp_path / "e.csv"
        save_embeddings(es, p, fmt="csv")
        back = load_embeddings(p, fmt="csv")
        assert np.array_equal(back.data, es.data)

    def test_binary_empty_set_rejected(self, tmp_path):
        import struct

        p = tmp_path / "e.bin"
        p.write_bytes(b"DCCL" + struct.pack("<III", 1, 0, 4))
        with pytest.raises(ValueError, match="empty"):
            load_embeddings(p, fmt="binary")

    def test_binary_bad_magic(self, tmp_path):
        p = tmp_path / "e.bin"
        p.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(ValueError, match="magic"):
            load_embeddings(p, fmt="binary")

    def test_binary_size_mismatch(self, tmp_path):
        import struct

        p = tmp_path / "e.bin"
        p.write_bytes(b"DCCL" + struct.pack("<III", 1, 2, 2) + b"\x00" * 4)
        with pytest.raises(ValueError, match="size mismatch"):
            load_embeddings(p, fmt="binary")

    def test_binary_nonfinite_rejected(self, tmp_path):
        import struct

        p = tmp_path / "e.bin"
        payload = np.array([[np.inf, 0.0]], dtype="<f4").tobytes()
        p.write_bytes(b"DCCL" + struct.pack("<III", 1, 1, 2) + payload)
        with pytest.raises(ValueError, match="non-finite"):
            load_embeddings(p, fmt="binary")

    def test_csv_ragged_rejected(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(ValueError, match="columns"):
            load_embeddings(p, fmt="csv")


class TestLabelIO:
    def test_parse_with_defaults(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("0,3\n2,-1\n")
        assert np.array_equal(load_labels(p, 3), np.array([3, UNLABELED, UNLABELED]))

    def test_out_of_range_index(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("5,0\n")
        with pytest.raises(ValueError, match="out of range"):
            load_labels(p, 3)

    def test_duplicate_index(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("1,0\n1,2\n")
        with pytest.raises(ValueError, match="duplicate"):
            load_labels(p, 3)

    def test_empty_file_all_unlabeled(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("")
        assert np.all(load_labels(p, 4) == UNLABELED)

    def test_roundtrip(self, tmp_path):
        labels = np.array([2, UNLABELED, 0, 5])
        p = tmp_path / "l.csv"
        save_labels(labels, p)
        assert np.array_equal(load_labels(p, 4), labels)
