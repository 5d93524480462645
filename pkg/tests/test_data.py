from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedfta.core import SeededRng, Stream
from fedfta.data import (
    REFERENCE_CLASS_COUNTS,
    Dataset,
    PartitionPlan,
    blob_centers,
    generate_blobs,
    load_csv,
    partition_dirichlet,
    partition_iid,
    partition_shards,
    round_half_up,
    sample_blobs,
    save_csv,
    stratified_split,
)
from fedfta.errors import ArgumentError, DimensionError, GenerationError, IngestionError, PartitionError


def balanced(counts, dim=2, seed=0) -> Dataset:
    gen = np.random.default_rng(seed)
    labels = np.concatenate([np.full(c, k) for k, c in enumerate(counts)])
    return Dataset(gen.normal(size=(len(labels), dim)), labels, len(counts))


def assert_disjoint_cover(plan: PartitionPlan, n: int) -> None:
    flat = np.concatenate([np.asarray(a) for a in plan.assignments])
    assert all(len(a) > 0 for a in plan.assignments)
    assert flat.size == n
    np.testing.assert_array_equal(np.sort(flat), np.arange(n))


class TestDataset:
    def test_row_mismatch(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int), 2)

    def test_label_range(self):
        with pytest.raises(ArgumentError):
            Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)

    def test_non_finite_features(self):
        with pytest.raises(ArgumentError):
            Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)

    def test_classes_may_be_absent(self):
        ds = Dataset(np.zeros((2, 1)), np.array([0, 0]), 3)
        assert ds.class_counts().tolist() == [2, 0, 0]


class TestGenerateBlobs:
    def test_table2_counts(self):
        ds = generate_blobs(REFERENCE_CLASS_COUNTS, 20, 6.0, 1.0, SeededRng(1, Stream.DATA))
        assert ds.class_counts().tolist() == [684, 633, 810]
        assert len(ds) == 2127 and ds.input_dim == 20

    def test_deterministic(self):
        a = generate_blobs([10, 20], 3, 2.0, 1.0, SeededRng(5, Stream.DATA))
        b = generate_blobs([10, 20], 3, 2.0, 1.0, SeededRng(5, Stream.DATA))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    @pytest.mark.parametrize("seed", range(10))
    def test_center_separation(self, seed):
        centers = blob_centers(5, 4, 3.0, seed)
        gaps = np.linalg.norm(centers[:, None] - centers[None], axis=2)[np.triu_indices(5, 1)]
        assert gaps.min() >= 3.0

    def test_nearest_centroid_oracle(self):
        gen = SeededRng(77, Stream.DATA).generator
        centers = blob_centers(3, 20, 10.0, gen)
        fresh = sample_blobs(centers, [500, 500, 500], 0.5, gen)
        dist = np.linalg.norm(fresh.features[:, None, :] - centers[None], axis=2)
        assert np.mean(np.argmin(dist, axis=1) == fresh.labels) >= 0.99

    def test_infeasible_placement(self):
        # a 1-D sphere holds only 2 points, so 3 mutually separated centers cannot exist
        with pytest.raises(GenerationError):
            blob_centers(3, 1, 1.0, 0)

    @pytest.mark.parametrize("kwargs", [dict(class_counts=[5]), dict(class_counts=[5, 0]), dict(separation=0.0)])
    def test_preconditions(self, kwargs):
        args = dict(class_counts=[5, 5], input_dim=2, separation=1.0, noise_std=1.0, rng=0)
        args.update(kwargs)
        with pytest.raises(ArgumentError):
            generate_blobs(**args)


class TestCsv:
    def test_two_row_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,f1,label\n0.5,1.5,0\n-2,3e-1,1\n", encoding="utf-8")
        ds = load_csv(p)
        assert len(ds) == 2 and ds.n_classes == 2
        np.testing.assert_array_equal(ds.features, [[0.5, 1.5], [-2.0, 0.3]])

    def test_fractional_label_names_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,label\n1.0,0\n2.0,2.5\n", encoding="utf-8")
        with pytest.raises(IngestionError) as info:
            load_csv(p)
        assert info.value.row == 3
        assert "row 3" in str(info.value)

    @pytest.mark.parametrize(
        "body, row",
        [("f0,label\n1.0,0,7\n", 2), ("f0,label\nabc,0\n", 2), ("x0,label\n1.0,0\n", 1), ("f0,label\ninf,0\n", 2)],
    )
    def test_malformed(self, tmp_path, body, row):
        p = tmp_path / "d.csv"
        p.write_text(body, encoding="utf-8")
        with pytest.raises(IngestionError) as info:
            load_csv(p)
        assert info.value.row == row

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_csv(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        ds = generate_blobs([7, 9, 4], 5, 3.0, 1.0, 3)
        p = tmp_path / "rt.csv"
        save_csv(ds, p)
        back = load_csv(p)
        np.testing.assert_allclose(back.features, ds.features, atol=1e-9)
        np.testing.assert_array_equal(back.labels, ds.labels)
        raw = p.read_bytes()
        assert b"\r\n" not in raw and raw.startswith(b"f0,f1,f2,f3,f4,label\n")

    def test_save_is_byte_stable(self, tmp_path):
        ds = generate_blobs([5, 5], 3, 2.0, 1.0, 9)
        save_csv(ds, tmp_path / "a.csv")
        save_csv(ds, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestStratifiedSplit:
    def test_reported_440_of_2127(self):
        # two classes of 1063/1064 round to 220 + 220 test samples
        ds = balanced([1063, 1064])
        train, val, test = stratified_split(ds, 0.2069, 0.0, 0)
        assert len(test) == 440 and len(train) + len(val) == 1687

    def test_reference_proportions_round_per_class(self):
        # per-class half-up rounding of 141.52 / 130.97 / 167.59
        ds = balanced(list(REFERENCE_CLASS_COUNTS))
        _, _, test = stratified_split(ds, 0.2069, 0.0, 0)
        assert test.class_counts().tolist() == [142, 131, 168]

    def test_exact_proportions(self):
        _, val, test = stratified_split(balanced([100, 100]), 0.2, 0.0, 0)
        assert test.class_counts().tolist() == [20, 20] and len(val) == 0

    def test_hand_rounded_three_way(self):
        train, val, test = stratified_split(balanced([684, 633, 810]), 0.2, 0.1, 0)
        assert test.class_counts().tolist() == [137, 127, 162]
        assert val.class_counts().tolist() == [55, 51, 65]
        assert train.class_counts().tolist() == [492, 455, 583]

    def test_disjoint_cover(self):
        ds = balanced([30, 41, 17], seed=4)
        tagged = Dataset(np.arange(len(ds), dtype=float)[:, None], ds.labels, 3)  # feature = row id
        parts = stratified_split(tagged, 0.25, 0.2, 1)
        ids = np.concatenate([p.features[:, 0] for p in parts])
        np.testing.assert_array_equal(np.sort(ids), np.arange(len(ds)))
        for p in parts:
            np.testing.assert_array_equal(p.labels, ds.labels[p.features[:, 0].astype(int)])

    @settings(max_examples=100)
    @given(st.lists(st.integers(3, 200), min_size=2, max_size=5), st.floats(0.05, 0.95), st.floats(0.0, 0.9))
    def test_class_ratios_preserved(self, counts, test_ratio, val_ratio):
        _, val, test = stratified_split(balanced(counts), test_ratio, val_ratio, 0)
        for c, n in enumerate(counts):
            n_test = test.class_counts()[c]
            assert abs(n_test - round_half_up(n * test_ratio)) <= 1
            assert val.class_counts()[c] == round_half_up((n - n_test) * val_ratio)

    @pytest.mark.parametrize("tr, vr", [(0.0, 0.1), (1.0, 0.1), (0.2, 1.0), (0.2, -0.1)])
    def test_bad_ratios(self, tr, vr):
        with pytest.raises(ArgumentError):
            stratified_split(balanced([10, 10]), tr, vr, 0)

    def test_tiny_class(self):
        with pytest.raises(ArgumentError):
            stratified_split(balanced([10, 2]), 0.2, 0.1, 0)

    def test_deterministic(self):
        a = stratified_split(balanced([50, 50]), 0.2, 0.1, SeededRng(1, Stream.SPLIT))
        b = stratified_split(balanced([50, 50]), 0.2, 0.1, SeededRng(1, Stream.SPLIT))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)


class TestPartitions:
    def test_iid_unit_shards(self):
        plan = partition_iid(balanced([5, 5]), 10, 0)
        assert plan.sizes() == [1] * 10

    def test_iid_pigeonhole(self):
        plan = partition_iid(balanced([50, 51]), 10, 0)
        assert set(plan.sizes()) <= {10, 11} and sum(plan.sizes()) == 101

    def test_iid_single_client(self):
        plan = partition_iid(balanced([5, 5]), 1, 0)
        assert sorted(plan.assignments[0]) == list(range(10))

    def test_iid_too_many_clients(self):
        with pytest.raises(ArgumentError):
            partition_iid(balanced([2, 2]), 5, 0)

    def test_dirichlet_large_alpha_near_uniform(self):
        ds = balanced([1000, 1000, 1000])
        plan = partition_dirichlet(ds, 10, 1000.0, SeededRng(2024, Stream.PARTITION))
        for c in range(3):
            total = np.sum(ds.labels == c)
            shares = [np.sum(ds.labels[list(a)] == c) / total for a in plan.assignments]
            assert all(abs(s - 0.1) <= 0.02 for s in shares)

    def test_dirichlet_small_alpha_skewed(self):
        ds = balanced([1000, 1000, 1000])
        plan = partition_dirichlet(ds, 10, 0.1, SeededRng(2024, Stream.PARTITION))
        dominant = [np.bincount(ds.labels[list(a)], minlength=3).max() / len(a) for a in plan.assignments]
        assert max(dominant) >= 0.8

    def test_dirichlet_unsatisfiable(self):
        # 10 clients over 10 samples with extreme skew: the nonempty constraint cannot be met
        with pytest.raises(PartitionError):
            partition_dirichlet(balanced([5, 5]), 10, 1e-3, 0, max_retries=5)

    @pytest.mark.parametrize("k, alpha", [(1, 0.5), (3, 0.0)])
    def test_dirichlet_preconditions(self, k, alpha):
        with pytest.raises(ArgumentError):
            partition_dirichlet(balanced([5, 5]), k, alpha, 0)

    def test_shards_few_labels_per_client(self):
        ds = balanced([100] * 5)
        plan = partition_shards(ds, 10, 2, 0)
        assert_disjoint_cover(plan, len(ds))
        assert all(len(np.unique(ds.labels[list(a)])) <= 2 for a in plan.assignments)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 12), st.sampled_from(["iid", "dirichlet", "shards"]))
    def test_every_plan_is_disjoint_cover(self, seed, k, kind):
        ds = balanced([40, 25, 35])
        if kind == "iid":
            plan = partition_iid(ds, k, seed)
        elif kind == "dirichlet":
            plan = partition_dirichlet(ds, k, 0.5, seed)
        else:
            plan = partition_shards(ds, k, 2, seed)
        assert_disjoint_cover(plan, len(ds))
        plan.validate(len(ds))

    def test_validate_rejects_overlap_and_gaps(self):
        with pytest.raises(PartitionError):
            PartitionPlan(((0, 1), (1, 2))).validate(3)
        with pytest.raises(PartitionError):
            PartitionPlan(((0,), (2,))).validate(3)
        with pytest.raises(PartitionError):
            PartitionPlan(((0, 1, 2), ())).validate(3)
