import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagseg.dense_features import (
    DenseFeatureMap,
    cosine,
    l2_normalize,
    load_feature_map,
    save_feature_map,
    upsample,
)
from tagseg.errors import DegenerateVectorWarning, InputError


def bilinear_oracle(values, patch, height, width):
    """Scalar half-pixel bilinear interpolation, written independently."""
    depth, grid_h, grid_w = values.shape
    out = np.zeros((depth, height, width), dtype=np.float64)
    for y in range(height):
        for x in range(width):
            gy = min(max((y + 0.5) / patch - 0.5, 0.0), grid_h - 1.0)
            gx = min(max((x + 0.5) / patch - 0.5, 0.0), grid_w - 1.0)
            y0 = min(int(np.floor(gy)), grid_h - 2) if grid_h > 1 else 0
            x0 = min(int(np.floor(gx)), grid_w - 2) if grid_w > 1 else 0
            fy = gy - y0 if grid_h > 1 else 0.0
            fx = gx - x0 if grid_w > 1 else 0.0
            y1 = min(y0 + 1, grid_h - 1)
            x1 = min(x0 + 1, grid_w - 1)
            for d in range(depth):
                out[d, y, x] = (
                    values[d, y0, x0] * (1 - fy) * (1 - fx)
                    + values[d, y1, x0] * fy * (1 - fx)
                    + values[d, y0, x1] * (1 - fy) * fx
                    + values[d, y1, x1] * fy * fx
                )
    return out


def make_map(values, patch):
    values = np.asarray(values, dtype=np.float32)
    height = values.shape[1] * patch
    width = values.shape[2] * patch
    return DenseFeatureMap(values=values, image_size=(height, width), patch_size=patch)


class TestUpsample:
    def test_constant_map_preserved(self):
        fmap = make_map(np.full((3, 4, 5), 2.5), patch=4)
        out = upsample(fmap)
        np.testing.assert_allclose(out.values, 2.5, atol=1e-6)

    def test_single_patch_grid(self):
        fmap = make_map(np.arange(6, dtype=np.float32).reshape(6, 1, 1), patch=7)
        out = upsample(fmap)
        assert out.values.shape == (6, 7, 7)
        for d in range(6):
            np.testing.assert_array_equal(out.values[d], np.full((7, 7), d))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        values = rng.standard_normal((3, 4, 3)).astype(np.float32)
        fmap = make_map(values, patch=5)
        out = upsample(fmap)
        expected = bilinear_oracle(values.astype(np.float64), 5, 20, 15)
        np.testing.assert_allclose(out.values, expected, rtol=1e-5, atol=1e-6)

    def test_midpoint_of_two_by_two_is_mean_of_four(self):
        # the grid midpoint in continuous coordinates carries weight 1/4
        # from each patch; verified against the closed-form evaluation
        rng = np.random.default_rng(5)
        values = rng.standard_normal((2, 2, 2)).astype(np.float64)
        patch = 4
        gy = gx = 0.5  # midpoint between the two patch centers on each axis
        closed_form = (
            values[:, 0, 0] * (1 - gy) * (1 - gx)
            + values[:, 1, 0] * gy * (1 - gx)
            + values[:, 0, 1] * (1 - gy) * gx
            + values[:, 1, 1] * gy * gx
        )
        np.testing.assert_allclose(closed_form, values.mean(axis=(1, 2)), atol=1e-12)
        # the pixels bracketing the midpoint agree with the oracle there
        fmap = make_map(values.astype(np.float32), patch=patch)
        out = upsample(fmap)
        expected = bilinear_oracle(values, patch, 8, 8)
        np.testing.assert_allclose(out.values[:, 3:5, 3:5], expected[:, 3:5, 3:5], rtol=1e-6)

    def test_patch_center_pixel_equals_patch_feature_odd_patch(self):
        rng = np.random.default_rng(7)
        values = rng.standard_normal((2, 3, 3)).astype(np.float32)
        patch = 3  # odd: pixel j*patch + 1 sits exactly at the patch center
        out = upsample(make_map(values, patch))
        for j in range(3):
            for i in range(3):
                np.testing.assert_allclose(
                    out.values[:, j * patch + 1, i * patch + 1], values[:, j, i], rtol=1e-6
                )

    def test_values_bounded_by_neighbors(self):
        rng = np.random.default_rng(13)
        values = rng.standard_normal((1, 3, 3)).astype(np.float32)
        out = upsample(make_map(values, patch=4))
        assert out.values.max() <= values.max() + 1e-6
        assert out.values.min() >= values.min() - 1e-6

    def test_channel_permutation_commutes(self):
        rng = np.random.default_rng(17)
        values = rng.standard_normal((4, 2, 3)).astype(np.float32)
        perm = [2, 0, 3, 1]
        direct = upsample(make_map(values[perm], patch=2)).values
        swapped = upsample(make_map(values, patch=2)).values[perm]
        np.testing.assert_array_equal(direct, swapped)

    def test_nearest_mode(self):
        values = np.arange(4, dtype=np.float32).reshape(1, 2, 2)
        out = upsample(make_map(values, patch=2), mode="nearest")
        np.testing.assert_array_equal(
            out.values[0],
            [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]],
        )

    def test_geometry_smaller_than_patch_rejected(self):
        fmap = DenseFeatureMap(
            values=np.ones((1, 1, 1), dtype=np.float32), image_size=(3, 3), patch_size=4
        )
        with pytest.raises(InputError, match="geometry"):
            upsample(fmap)

    def test_non_finite_rejected(self):
        with pytest.raises(InputError, match="finite"):
            DenseFeatureMap(
                values=np.full((1, 1, 1), np.nan, dtype=np.float32),
                image_size=(2, 2),
                patch_size=2,
            )

    def test_inconsistent_grid_rejected(self):
        with pytest.raises(InputError, match="inconsistent"):
            DenseFeatureMap(
                values=np.ones((1, 2, 2), dtype=np.float32), image_size=(10, 10), patch_size=3
            )


class TestCosine:
    def test_orthogonal(self):
        assert cosine([1, 0], [0, 1]) == 0.0

    def test_scale_invariance(self):
        assert cosine([2, 0], [1, 0]) == 1.0

    def test_matches_direct_arithmetic(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([4.0, 5.0, 6.0])
        expected = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert cosine(a, b) == pytest.approx(expected, abs=1e-12)

    def test_zero_vector_warns(self):
        with pytest.warns(DegenerateVectorWarning):
            assert cosine([0, 0], [1, 0]) == 0.0

    def test_self_similarity(self):
        rng = np.random.default_rng(23)
        v = rng.standard_normal(8)
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        scale=st.floats(0.01, 100.0, allow_nan=False),
    )
    def test_positive_scaling_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(6)
        b = rng.standard_normal(6)
        assert cosine(a, scale * b) == pytest.approx(cosine(a, b), abs=1e-9)


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], rtol=1e-6)

    def test_unit_vector_unchanged(self):
        np.testing.assert_allclose(l2_normalize([1.0, 0.0]), [1.0, 0.0], atol=1e-7)

    def test_zero_passes_through_with_warning(self):
        with pytest.warns(DegenerateVectorWarning):
            np.testing.assert_array_equal(l2_normalize([0.0, 0.0]), [0.0, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 32))
    def test_norm_is_one(self, seed, dim):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(dim) * 10
        out = l2_normalize(v)
        assert abs(float(np.linalg.norm(out.astype(np.float64))) - 1.0) < 1e-6

    def test_idempotent(self):
        rng = np.random.default_rng(29)
        v = rng.standard_normal(5).astype(np.float32)
        once = l2_normalize(v)
        np.testing.assert_allclose(l2_normalize(once), once, atol=2e-7)


class TestFeatureMapIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(31)
        fmap = DenseFeatureMap(
            values=rng.standard_normal((4, 2, 3)).astype(np.float32),
            image_size=(8, 12),
            patch_size=4,
            source="dinov2-vitl14",
        )
        save_feature_map(fmap, tmp_path / "img.tens")
        loaded = load_feature_map(tmp_path / "img.tens")
        np.testing.assert_array_equal(loaded.values, fmap.values)
        assert loaded.image_size == (8, 12)
        assert loaded.patch_size == 4
        assert loaded.source == "dinov2-vitl14"

    def test_missing_sidecar(self, tmp_path):
        from tagseg.tensor_store import save_tensor

        save_tensor(np.ones((1, 1, 1), dtype=np.float32), tmp_path / "img.tens")
        with pytest.raises(InputError, match="sidecar"):
            load_feature_map(tmp_path / "img.tens")
