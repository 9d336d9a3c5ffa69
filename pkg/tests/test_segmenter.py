import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from tagseg.dense_features import PixelFeatureMap
from tagseg.errors import InputError, ParameterError
from tagseg.segmenter import (
    DeterministicKMeans,
    SegmentPartition,
    kmeans,
    pool_segments,
)


def blob_data(seed=7, per_blob=100, sigma=0.05):
    rng = np.random.default_rng(seed)
    centers = np.eye(3, 4)  # pairwise distance sqrt(2) >= 1
    points = np.concatenate(
        [centers[i] + sigma * rng.standard_normal((per_blob, 4)) for i in range(3)]
    ).astype(np.float32)
    labels = np.repeat(np.arange(3), per_blob)
    return points, labels


def feature_map_from_points(points, height, width):
    assert points.shape[0] == height * width
    return PixelFeatureMap(values=points.T.reshape(-1, height, width))


class TestDeterministicKMeans:
    def test_blob_recovery(self):
        points, generated = blob_data()
        model = DeterministicKMeans(n_clusters=3, seed=0).fit(points)
        assert adjusted_rand_score(generated, model.labels_) == 1.0

    def test_identical_across_worker_counts(self):
        points, _ = blob_data(seed=11, per_blob=4000)
        results = [
            DeterministicKMeans(n_clusters=3, seed=0, n_workers=w).fit(points).labels_
            for w in (1, 4, 8)
        ]
        assert results[0].tobytes() == results[1].tobytes() == results[2].tobytes()

    def test_identical_across_runs(self):
        points, _ = blob_data(seed=13)
        first = DeterministicKMeans(n_clusters=3, seed=0).fit(points)
        second = DeterministicKMeans(n_clusters=3, seed=0).fit(points)
        assert first.labels_.tobytes() == second.labels_.tobytes()
        np.testing.assert_array_equal(first.cluster_centers_, second.cluster_centers_)

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(17)
        points = rng.standard_normal((500, 8)).astype(np.float32)
        model = DeterministicKMeans(n_clusters=6, seed=1).fit(points)
        history = np.array(model.inertia_history_)
        assert np.all(np.diff(history) <= history[:-1] * 1e-12 + 1e-9)

    def test_k_larger_than_points_rejected(self):
        with pytest.raises(ParameterError, match="n_clusters"):
            DeterministicKMeans(n_clusters=10, seed=0).fit(np.ones((4, 2)))

    def test_non_finite_rejected(self):
        bad = np.ones((8, 2))
        bad[3, 1] = np.inf
        with pytest.raises(InputError, match="finite"):
            DeterministicKMeans(n_clusters=2, seed=0).fit(bad)

    def test_get_params_round_trip(self):
        model = DeterministicKMeans(n_clusters=7, seed=3, n_workers=2)
        params = model.get_params()
        assert params["n_clusters"] == 7 and params["seed"] == 3
        clone = DeterministicKMeans(**params)
        assert clone.get_params() == params

    def test_predict_matches_fit_labels(self):
        points, _ = blob_data(seed=19)
        model = DeterministicKMeans(n_clusters=3, seed=0).fit(points)
        np.testing.assert_array_equal(model.predict(points), model.labels_)


class TestKmeansPartition:
    def test_single_cluster(self):
        rng = np.random.default_rng(23)
        fmap = PixelFeatureMap(values=rng.standard_normal((4, 5, 6)).astype(np.float32))
        part = kmeans(fmap, 1, seed=0)
        assert part.n_segments == 1
        assert np.all(part.assignment == 0)
        assert part.counts.tolist() == [30]

    def test_three_blob_recovery_as_image(self):
        points, generated = blob_data(seed=29, per_blob=100)
        fmap = feature_map_from_points(points, 15, 20)
        part = kmeans(fmap, 3, seed=0)
        assert adjusted_rand_score(generated, part.assignment.ravel()) == 1.0
        assert part.counts.sum() == 300

    def test_identical_features_merge(self):
        fmap = PixelFeatureMap(values=np.ones((3, 4, 4), dtype=np.float32))
        with pytest.warns(UserWarning, match="duplicate|distinct"):
            part = kmeans(fmap, 2, seed=0)
        assert part.counts.sum() == 16
        assert np.all(part.counts >= 1)

    def test_pixel_conservation(self):
        rng = np.random.default_rng(31)
        fmap = PixelFeatureMap(values=rng.standard_normal((6, 9, 7)).astype(np.float32))
        part = kmeans(fmap, 5, seed=2)
        assert int(part.counts.sum()) == 63
        np.testing.assert_array_equal(
            np.bincount(part.assignment.ravel(), minlength=part.n_segments), part.counts
        )

    def test_k_exceeding_pixels_rejected(self):
        fmap = PixelFeatureMap(values=np.ones((2, 2, 2), dtype=np.float32))
        with pytest.raises(ParameterError):
            kmeans(fmap, 5, seed=0)


class TestPoolSegments:
    def test_constant_features(self):
        part = SegmentPartition(
            assignment=np.array([[0, 0], [1, 1]], dtype=np.int32),
            counts=np.array([2, 2]),
            n_segments=2,
        )
        fmap = PixelFeatureMap(values=np.full((3, 2, 2), 4.0, dtype=np.float32))
        pooled = pool_segments(part, fmap)
        np.testing.assert_allclose(pooled.vectors, 4.0)

    def test_singleton_segment(self):
        part = SegmentPartition(
            assignment=np.array([[0, 1], [1, 1]], dtype=np.int32),
            counts=np.array([1, 3]),
            n_segments=2,
        )
        rng = np.random.default_rng(37)
        values = rng.standard_normal((5, 2, 2)).astype(np.float32)
        pooled = pool_segments(part, PixelFeatureMap(values=values))
        np.testing.assert_allclose(pooled.vectors[0], values[:, 0, 0], rtol=1e-6)

    def test_matches_double_precision_oracle(self):
        rng = np.random.default_rng(41)
        values = rng.standard_normal((16, 8, 8)).astype(np.float32)
        assignment = rng.integers(0, 3, size=(8, 8)).astype(np.int32)
        counts = np.bincount(assignment.ravel(), minlength=3).astype(np.int64)
        part = SegmentPartition(assignment=assignment, counts=counts, n_segments=3)
        pooled = pool_segments(part, PixelFeatureMap(values=values))

        # independent accumulation, one pixel at a time in float64
        expected = np.zeros((3, 16), dtype=np.float64)
        tally = np.zeros(3, dtype=np.int64)
        for y in range(8):
            for x in range(8):
                seg = assignment[y, x]
                expected[seg] += values[:, y, x].astype(np.float64)
                tally[seg] += 1
        expected /= tally[:, None]
        np.testing.assert_allclose(pooled.vectors, expected, rtol=1e-5)

    def test_linearity(self):
        rng = np.random.default_rng(43)
        values = rng.standard_normal((4, 6, 6)).astype(np.float32)
        assignment = rng.integers(0, 2, size=(6, 6)).astype(np.int32)
        counts = np.bincount(assignment.ravel(), minlength=2).astype(np.int64)
        part = SegmentPartition(assignment=assignment, counts=counts, n_segments=2)
        base = pool_segments(part, PixelFeatureMap(values=values)).vectors
        scaled = pool_segments(part, PixelFeatureMap(values=3.0 * values)).vectors
        np.testing.assert_allclose(scaled, 3.0 * base, rtol=1e-5)

    def test_shape_mismatch_rejected(self):
        part = SegmentPartition(
            assignment=np.zeros((2, 2), dtype=np.int32),
            counts=np.array([4]),
            n_segments=1,
        )
        with pytest.raises(InputError, match="match"):
            pool_segments(part, PixelFeatureMap(values=np.ones((1, 3, 3), dtype=np.float32)))

    def test_degenerate_flag_for_zero_segment(self):
        values = np.zeros((2, 2, 2), dtype=np.float32)
        values[:, 0, :] = 1.0
        part = SegmentPartition(
            assignment=np.array([[0, 0], [1, 1]], dtype=np.int32),
            counts=np.array([2, 2]),
            n_segments=2,
        )
        pooled = pool_segments(part, PixelFeatureMap(values=values))
        assert not pooled.degenerate[0]
        assert pooled.degenerate[1]
