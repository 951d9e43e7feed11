"""Volume rendering quadrature and ray sampling."""

import numpy as np
import pytest
from scipy import stats

from waternerf.geometry import Ray
from waternerf.render import (
    FunctionField,
    VoxelField,
    composite,
    composite_backward,
    importance_samples,
    render_ray,
    render_rays,
    stratified_samples,
    )

RAY = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, 5.0)


def slab_field(lo=2.0, hi=3.0, sigma=1e4):
    def sig(p):
        return np.where((p[:, 2] >= lo) & (p[:, 2] <= hi), sigma, 0.0)

    return FunctionField(sig, lambda p, d: np.tile([1.0, 0.0, 0.0], (len(p), 1)))


class TestStratified:
    def test_zero_jitter_uniform_partition(self):
        t = stratified_samples(1.0, 3.0, 8, jitter=False)
        np.testing.assert_allclose(t, np.linspace(1.0, 3.0, 9), atol=1e-15)

    def test_seeded_determinism(self):
        a = stratified_samples(np.zeros(4), np.ones(4), 16, np.random.default_rng(3))
        b = stratified_samples(np.zeros(4), np.ones(4), 16, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_sorted_and_bounded(self):
        t = stratified_samples(np.full(50, 0.5), np.full(50, 4.0), 32, np.random.default_rng(0))
        assert t.shape == (50, 33)
        assert np.all(np.diff(t, axis=-1) >= 0)
        np.testing.assert_array_equal(t[:, 0], 0.5)
        np.testing.assert_array_equal(t[:, -1], 4.0)

    def test_one_sample_per_stratum(self):
        t = stratified_samples(0.0, 1.0, 10, np.random.default_rng(1))
        mids = 0.5 * (t[1:] + t[:-1])
        # each interval midpoint lies in a distinct stratum
        assert len(np.unique(np.floor(mids * 10).astype(int))) >= 9

    def test_needs_rng_for_jitter(self):
        with pytest.raises(ValueError):
            stratified_samples(0.0, 1.0, 4)


class TestImportance:
    def test_concentrated_weights(self):
        t = np.linspace(0, 1, 11)
        w = np.zeros(10)
        w[6] = 1.0
        merged = importance_samples(t, w, 200, np.random.default_rng(0))
        new = np.setdiff1d(merged, t)
        assert np.mean((new >= 0.6) & (new <= 0.7)) >= 0.9

    def test_uniform_weights_chi_square(self):
        t = np.linspace(0, 1, 9)
        merged = importance_samples(t, np.ones(8), 4000, np.random.default_rng(1))
        new = merged[~np.isin(merged, t)]
        counts, _ = np.histogram(new, bins=8, range=(0, 1))
        assert stats.chisquare(counts).pvalue > 0.05

    def test_all_zero_weights_fall_back_to_uniform(self):
        t = np.linspace(0, 1, 5)
        merged = importance_samples(t, np.zeros(4), 8)
        new = np.sort(np.setdiff1d(merged, t))
        np.testing.assert_allclose(new, (np.arange(8) + 0.5) / 8)

    def test_merged_sorted_batch(self):
        rng = np.random.default_rng(2)
        t = stratified_samples(np.zeros(6), np.full(6, 2.0), 16, rng)
        merged = importance_samples(t, rng.random((6, 16)), 16, rng)
        assert merged.shape == (6, 33)
        assert np.all(np.diff(merged, axis=-1) >= 0)


class TestComposite:
    def test_empty_space(self):
        r = render_ray(FunctionField(lambda p: np.zeros(len(p)), lambda p, d: np.ones((len(p), 3))),
                       np.linspace(0, 5, 65), RAY)
        np.testing.assert_array_equal(r.color, 0.0)
        assert r.opacity == 0.0 and r.depth == 0.0

    def test_opaque_slab(self):
        t = np.linspace(0, 5, 513)
        r = render_ray(slab_field(), t, RAY)
        width = t[1] - t[0]
        np.testing.assert_allclose(r.color, [1, 0, 0], atol=1e-3)
        assert abs(r.opacity - 1.0) < 1e-6
        assert abs(r.depth - 2.0) <= width

    def test_homogeneous_medium_converges(self):
        sigma, length = 0.7, 5.0
        exact = 1 - np.exp(-sigma * length)
        field = FunctionField(lambda p: np.full(len(p), sigma), lambda p, d: np.full((len(p), 3), 0.5))
        # piecewise-constant sigma: the quadrature is exact for any sample count
        for n in (64, 128, 256, 512):
            r = render_ray(field, np.linspace(0, length, n + 1), RAY)
            assert abs(r.opacity - exact) < 1e-12

    def test_weights_match_definition(self):
        rng = np.random.default_rng(0)
        t = np.sort(rng.random(9))
        sigma = rng.random(8) * 3
        comp = composite(sigma[None], rng.random((1, 8, 3)), t[None])
        delta = np.diff(t)
        for k in range(8):
            T = np.exp(-np.sum(sigma[:k] * delta[:k]))
            assert comp.weights[0, k] == pytest.approx(T * (1 - np.exp(-sigma[k] * delta[k])), rel=1e-12)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        t = np.sort(rng.random((3, 11)), axis=-1)
        sigma = rng.random((3, 10)) * 4
        color = rng.random((3, 10, 3))
        g = rng.normal(size=(3, 3))

        def loss(s, c):
            return np.sum(composite(s, c, t).color * g)

        gs, gc = composite_backward(composite(sigma, color, t), color, g)
        h = 1e-6
        for idx in np.ndindex(sigma.shape):
            e = np.zeros_like(sigma)
            e[idx] = h
            fd = (loss(sigma + e, color) - loss(sigma - e, color)) / (2 * h)
            assert gs[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)
        for idx in [(0, 0, 0), (1, 4, 2), (2, 9, 1)]:
            e = np.zeros_like(color)
            e[idx] = h
            fd = (loss(sigma, color + e) - loss(sigma, color - e)) / (2 * h)
            assert gc[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_unsorted_boundaries_rejected(self):
        with pytest.raises(ValueError):
            render_ray(slab_field(), np.array([0.0, 2.0, 1.0]), RAY)


class TestFields:
    def test_voxel_lookup(self):
        sigma = np.zeros((2, 2, 2))
        sigma[1, 1, 1] = 5.0
        color = np.zeros((2, 2, 2, 3))
        color[1, 1, 1] = [0, 1, 0]
        f = VoxelField(sigma, color, [0, 0, 0], [2, 2, 2])
        s, c = f.query(np.array([[1.5, 1.5, 1.5], [0.5, 0.5, 0.5], [3, 0, 0]]), np.zeros((3, 3)))
        np.testing.assert_array_equal(s, [5, 0, 0])
        np.testing.assert_array_equal(c[0], [0, 1, 0])

    def test_render_rays_batch(self):
        o = np.zeros((4, 3))
        d = np.tile([0, 0, 1.0], (4, 1))
        t = np.tile(np.linspace(0, 5, 257), (4, 1))
        comp, sigma, color = render_rays(slab_field(), o, d, t)
        assert sigma.shape == (4, 256) and color.shape == (4, 256, 3)
        np.testing.assert_allclose(comp.color, np.tile([1, 0, 0], (4, 1)), atol=1e-3)
