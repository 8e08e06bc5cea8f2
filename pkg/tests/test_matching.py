"""Unit tests for SAD differences, difference vectors, local neighborhood
normalization, the padded difference matrix, and store persistence."""

import numpy as np
import pytest

from seqmatch.matching import (
    DifferenceMatrix,
    TemplateStore,
    difference_vector,
    neighborhood_normalize,
    sad_difference,
)


class TestSadDifference:
    def test_identity(self):
        t = np.random.default_rng(0).normal(size=(4, 4))
        assert sad_difference(t, t) == 0.0

    def test_one_by_two_case(self):
        assert sad_difference([[0.0, 1.0]], [[1.0, 0.0]]) == 1.0

    def test_symmetry_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b = rng.normal(size=(2, 6, 8))
            assert sad_difference(a, b) == sad_difference(b, a)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(2, 5, 7))
        total = 0.0
        for y in range(5):
            for x in range(7):
                total += abs(a[y, x] - b[y, x])
        assert sad_difference(a, b) == pytest.approx(total / 35.0, rel=1e-12)

    def test_metric_axioms(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            a, b, c = rng.normal(size=(3, 4, 4))
            dab, dba = sad_difference(a, b), sad_difference(b, a)
            assert dab >= 0.0
            assert dab == dba
            assert sad_difference(a, a) == 0.0
            assert sad_difference(a, c) <= dab + sad_difference(b, c) + 1e-12

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            sad_difference(np.zeros((2, 2)), np.zeros((2, 3)))


def make_store(templates, patch_size=1):
    templates = np.asarray(templates, dtype=np.float64)
    store = TemplateStore(templates.shape[2], templates.shape[1], patch_size)
    store.extend(templates)
    return store


class TestDifferenceVector:
    def test_singleton_self_match_is_zero(self):
        t = np.random.default_rng(4).normal(size=(1, 4, 4))
        store = make_store(t)
        np.testing.assert_array_equal(difference_vector(store, t[0]), [0.0])

    def test_one_hot_store(self):
        eye = np.zeros((3, 1, 3))
        for k in range(3):
            eye[k, 0, k] = 1.0
        store = make_store(eye)
        scores = difference_vector(store, eye[1, :, :])
        assert scores[1] == 0.0
        assert scores[0] > 0 and scores[2] > 0

    def test_length_grows_by_one_per_learned_frame(self):
        rng = np.random.default_rng(5)
        store = TemplateStore(4, 4, 1)
        q = rng.normal(size=(4, 4))
        for i in range(10):
            assert len(difference_vector(store, q)) == i
            store.append(rng.normal(size=(4, 4)))

    def test_empty_store_gives_empty_vector(self):
        store = TemplateStore(4, 4, 1)
        assert difference_vector(store, np.zeros((4, 4))).shape == (0,)

    def test_geometry_mismatch_rejected(self):
        store = make_store(np.zeros((1, 4, 4)))
        with pytest.raises(ValueError):
            difference_vector(store, np.zeros((4, 5)))

    def test_slots_equal_scalar_op(self):
        rng = np.random.default_rng(6)
        stack = rng.normal(size=(40, 8, 8))
        store = make_store(stack)
        q = rng.normal(size=(8, 8))
        got = difference_vector(store, q)
        q32 = q.astype(np.float32)
        expect = np.array([sad_difference(store[k], q32) for k in range(40)])
        np.testing.assert_array_equal(got, expect)

    def test_parallel_bit_identical(self):
        rng = np.random.default_rng(7)
        stack = rng.normal(size=(101, 8, 8))
        store = make_store(stack)
        q = rng.normal(size=(8, 8))
        serial = difference_vector(store, q, n_jobs=1)
        for jobs in (2, 3, 7):
            np.testing.assert_array_equal(
                difference_vector(store, q, n_jobs=jobs), serial
            )

    def test_order_preserving_under_store_permutation(self):
        rng = np.random.default_rng(8)
        stack = rng.normal(size=(12, 4, 4))
        q = rng.normal(size=(4, 4))
        perm = rng.permutation(12)
        base = difference_vector(make_store(stack), q)
        permuted = difference_vector(make_store(stack[perm]), q)
        np.testing.assert_array_equal(permuted, base[perm])


class TestNeighborhoodNormalize:
    def test_constant_vector_maps_to_zero(self):
        np.testing.assert_array_equal(
            neighborhood_normalize(np.array([5.0, 5.0, 5.0, 5.0]), 2),
            np.zeros(4),
        )

    def test_hand_computed_oracle(self):
        # windows clipped at the ends, sample stddev (divisor m - 1)
        got = neighborhood_normalize(np.array([0.0, 0.0, 10.0, 0.0, 0.0]), 2)
        expect = [
            -np.sqrt(3) / 3,  # window [0,0,10]: mean 10/3, std 10/sqrt(3)
            -0.5,             # window [0,0,10,0]: mean 2.5, std 5
            8 / np.sqrt(20),  # full window: mean 2, std sqrt(20)
            -0.5,
            -np.sqrt(3) / 3,
        ]
        np.testing.assert_allclose(got, expect, rtol=1e-9)

    def test_windowed_zscore_recomputation(self):
        rng = np.random.default_rng(9)
        vec = rng.normal(size=200)
        half = 10
        got = neighborhood_normalize(vec, half)
        for k in range(len(vec)):
            lo, hi = max(0, k - half), min(len(vec), k + half + 1)
            win = vec[lo:hi]
            mean = win.mean()
            std = np.sqrt(((win - mean) ** 2).sum() / (len(win) - 1))
            assert got[k] == pytest.approx((vec[k] - mean) / std, abs=1e-9)

    def test_affine_invariance(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            vec = rng.normal(size=60)
            a = float(rng.uniform(0.1, 10.0))
            b = float(rng.uniform(-10.0, 10.0))
            base = neighborhood_normalize(vec, 5)
            scaled = neighborhood_normalize(a * vec + b, 5)
            np.testing.assert_allclose(scaled, base, atol=1e-9)

    def test_short_vectors_returned_unchanged(self):
        np.testing.assert_array_equal(neighborhood_normalize(np.array([7.0]), 3), [7.0])
        assert neighborhood_normalize(np.array([]), 3).shape == (0,)

    def test_rejects_bad_half_window(self):
        with pytest.raises(ValueError):
            neighborhood_normalize(np.zeros(5), 0)


class TestDifferenceMatrix:
    def test_single_push(self):
        m = DifferenceMatrix(3)
        m.push(np.array([1.0, 2.0]), 0)
        assert len(m) == 1
        assert not m.is_full

    def test_window_eviction(self):
        m = DifferenceMatrix(3)
        for i in range(4):
            m.push(np.full(5, float(i)), i)
        assert len(m) == 3
        assert m.query_indices == [1, 2, 3]

    def test_padding_with_sentinel(self):
        m = DifferenceMatrix(3)
        m.push(np.ones(3), 0)
        m.push(np.ones(4), 1)
        m.push(np.ones(5), 2)
        arr = m.to_array()
        assert arr.shape == (5, 3)
        assert np.isnan(arr[3:, 0]).all() and np.isnan(arr[4:, 1]).all()
        assert not np.isnan(arr[:, 2]).any()
        assert m.column_lengths == [3, 4, 5]

    def test_out_of_order_rejected(self):
        m = DifferenceMatrix(3)
        m.push(np.ones(2), 0)
        with pytest.raises(ValueError):
            m.push(np.ones(2), 2)

    def test_shrinking_columns_rejected(self):
        m = DifferenceMatrix(3)
        m.push(np.ones(4), 0)
        with pytest.raises(ValueError):
            m.push(np.ones(3), 1)

    def test_column_count_invariant(self):
        m = DifferenceMatrix(4)
        for i in range(10):
            m.push(np.zeros(6), i)
            assert len(m) == min(i + 1, 4)


class TestStorePersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        store = make_store(rng.normal(size=(7, 6, 8)), patch_size=2)
        path = tmp_path / "templates.sqsm"
        store.save(path)
        loaded = TemplateStore.load(path)
        assert (loaded.rx, loaded.ry, loaded.patch_size) == (8, 6, 2)
        assert len(loaded) == 7
        np.testing.assert_array_equal(loaded.values, store.values)
        assert loaded.values.dtype == store.values.dtype

    def test_file_layout(self, tmp_path):
        store = make_store(np.zeros((2, 2, 4)), patch_size=2)
        path = tmp_path / "t.sqsm"
        store.save(path)
        raw = path.read_bytes()
        assert raw[:4] == b"SQSM"
        assert len(raw) == 24 + 2 * 2 * 4 * 4
        # header little-endian u32s: version, rx, ry, patch, count
        assert np.frombuffer(raw[4:24], dtype="<u4").tolist() == [1, 4, 2, 2, 2]

    def test_save_reload_save_identical_bytes(self, tmp_path):
        rng = np.random.default_rng(12)
        store = make_store(rng.normal(size=(3, 4, 4)))
        p1, p2 = tmp_path / "a.sqsm", tmp_path / "b.sqsm"
        store.save(p1)
        TemplateStore.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.sqsm"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(ValueError):
            TemplateStore.load(path)

    def test_rejects_truncated_file(self, tmp_path):
        store = make_store(np.zeros((2, 2, 4)), patch_size=2)
        path = tmp_path / "t.sqsm"
        store.save(path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(ValueError):
            TemplateStore.load(path)

    def test_geometry_enforced_on_append(self):
        store = TemplateStore(4, 4, 2)
        with pytest.raises(ValueError):
            store.append(np.zeros((4, 5)))
