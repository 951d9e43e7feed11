"""Underwater image formation: transmission, degradation and restoration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waternerf.imgform import DEFAULT_T_FLOOR, WaterParams, degrade, restore, transmission


def params(beta, veiling=(0.0, 0.0, 0.0)):
    return WaterParams(beta=beta, veiling=veiling)


class TestWaterParams:
    def test_vector_round_trip(self):
        p = params([0.4, 0.2, 0.1], [0.1, 0.15, 0.3])
        q = WaterParams.from_vector(p.to_vector())
        np.testing.assert_array_equal(q.beta, p.beta)
        np.testing.assert_array_equal(q.veiling, p.veiling)

    def test_dict_round_trip(self):
        p = params([0.4, 0.2, 0.1], [0.1, 0.15, 0.3])
        q = WaterParams.from_dict(p.to_dict())
        np.testing.assert_array_equal(q.to_vector(), p.to_vector())

    @pytest.mark.parametrize(
        "beta, veiling",
        [([-0.1, 0, 0], [0, 0, 0]), ([0, 0, 0], [0, 1.5, 0]), ([0, 0, 0], [-0.01, 0, 0]), ([np.nan, 0, 0], [0, 0, 0])],
    )
    def test_rejects_invalid(self, beta, veiling):
        with pytest.raises(ValueError):
            params(beta, veiling)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            WaterParams(beta=[0.1, 0.2], veiling=[0, 0, 0])


class TestTransmission:
    def test_zero_attenuation(self):
        np.testing.assert_array_equal(transmission(params([0, 0, 0]), 5.0), [1, 1, 1])

    def test_unit_optical_depth(self):
        np.testing.assert_allclose(transmission(params([0.5] * 3), 2.0), np.full(3, np.exp(-1)), rtol=1e-15)

    def test_per_channel(self):
        t = transmission(params([0.1, 0.2, 0.3]), 10.0)
        np.testing.assert_allclose(t, np.exp([-1.0, -2.0, -3.0]), rtol=1e-14)

    def test_broadcasts_over_maps(self):
        t = transmission(params([0.1, 0.2, 0.3]), np.ones((4, 5)))
        assert t.shape == (4, 5, 3)

    @pytest.mark.parametrize("bad", [-1.0, np.inf, np.nan])
    def test_rejects_bad_range(self, bad):
        with pytest.raises(ValueError):
            transmission(params([0.1] * 3), np.array([1.0, bad]))


class TestDegrade:
    def test_identity_without_attenuation(self):
        out = degrade([0.8, 0.4, 0.2], params([0, 0, 0], [0.3, 0.3, 0.3]), 7.0)
        np.testing.assert_array_equal(out, [0.8, 0.4, 0.2])

    def test_full_extinction_gives_veiling_light(self):
        out = degrade([0.9, 0.2, 0.7], params([50] * 3, [0.1, 0.3, 0.5]), 1.0)
        np.testing.assert_allclose(out, [0.1, 0.3, 0.5], atol=1e-15, rtol=0)

    def test_pure_attenuation(self):
        out = degrade([1, 1, 1], params([0.5] * 3), 2.0)
        np.testing.assert_allclose(out, np.full(3, np.exp(-1)), rtol=1e-15)

    def test_hand_value(self):
        # t = exp(-0.2 * 2) per channel
        t = np.exp(-0.4)
        out = degrade([0.5, 0.5, 0.5], params([0.2] * 3, [0.1, 0.2, 0.3]), 2.0)
        np.testing.assert_allclose(out, 0.5 * t + (1 - t) * np.array([0.1, 0.2, 0.3]), rtol=1e-15)


class TestRestore:
    def test_pure_backscatter_restores_to_black(self):
        p = params([0.3, 0.2, 0.1], [0.1, 0.2, 0.3])
        observed = (1 - transmission(p, 2.0)) * p.veiling
        np.testing.assert_allclose(restore(observed, p, 2.0), 0.0, atol=1e-15)

    def test_veiling_light_is_a_fixed_point(self):
        # an object colored exactly like the water is unchanged by the medium
        p = params([0.3, 0.2, 0.1], [0.1, 0.2, 0.3])
        np.testing.assert_allclose(restore(p.veiling, p, 2.0), p.veiling, rtol=1e-14)

    def test_identity_without_attenuation(self):
        img = np.random.default_rng(0).random((3, 4, 3))
        p = params([0, 0, 0], [0.2, 0.4, 0.6])
        np.testing.assert_array_equal(restore(img, p, np.full((3, 4), 2.5)), img)

    def test_transmission_floor_bounds_amplification(self):
        p = params([10.0] * 3, [0.0] * 3)
        out = restore([0.5, 0.5, 0.5], p, 100.0)
        np.testing.assert_allclose(out, 0.5 / DEFAULT_T_FLOOR)

    def test_no_clipping(self):
        out = restore([0.9, 0.9, 0.9], params([1.0] * 3, [0.0] * 3), 1.0)
        assert np.all(out > 1.0)

    def test_rejects_nonpositive_floor(self):
        with pytest.raises(ValueError):
            restore([0.5] * 3, params([0.1] * 3), 1.0, t_floor=0.0)

    def test_vectorized_round_trip(self):
        rng = np.random.default_rng(3)
        n = 20000
        j = rng.random((n, 3))
        beta = rng.uniform(0, 1, 3)
        p = params(beta, rng.random(3))
        d = rng.uniform(0, 5 / beta.max(), n)
        np.testing.assert_allclose(restore(degrade(j, p, d), p, d), j, atol=1e-9, rtol=0)

    @settings(max_examples=200, deadline=None)
    @given(
        j=st.lists(st.floats(0, 1), min_size=3, max_size=3),
        beta=st.lists(st.floats(0, 2), min_size=3, max_size=3),
        veil=st.lists(st.floats(0, 1), min_size=3, max_size=3),
        frac=st.floats(0, 1),
    )
    def test_round_trip_property(self, j, beta, veil, frac):
        p = params(beta, veil)
        bmax = max(beta)
        d = frac * (5.0 / bmax if bmax > 0 else 10.0)
        np.testing.assert_allclose(restore(degrade(j, p, d), p, d), j, atol=1e-9, rtol=0)
