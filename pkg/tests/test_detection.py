import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import gini_lorenz, gini_pairwise, top_half_by_sort
from wheezenmf.detection import (
    classify,
    cluster_bases,
    detect,
    gini_columns,
    gini_index,
    spectral_energy,
)
from wheezenmf.exceptions import InvalidInputError
from wheezenmf.factorization import NmfModel


class TestGini:
    def test_uniform(self):
        assert gini_index([1, 1, 1, 1]) == 0.0

    def test_one_hot(self):
        assert gini_index([0, 0, 0, 1]) == 0.75

    def test_ramp(self):
        assert gini_index([0.1, 0.2, 0.3, 0.4]) == pytest.approx(0.25, abs=1e-15)
        assert gini_lorenz([0.1, 0.2, 0.3, 0.4]) == pytest.approx(0.25, abs=1e-15)

    def test_order_invariant(self):
        assert gini_index([0.4, 0.1, 0.3, 0.2]) == gini_index([0.1, 0.2, 0.3, 0.4])

    def test_all_zero(self):
        assert gini_index(np.zeros(5)) == 0.0

    def test_rejects_negative(self):
        with pytest.raises(InvalidInputError):
            gini_index([1.0, -0.5])

    def test_lorenz_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            b = rng.exponential(size=rng.integers(2, 40)) * rng.integers(0, 2, 1)
            assert abs(gini_index(b) - gini_lorenz(b)) <= 1e-12
            assert abs(gini_index(b) - gini_pairwise(b)) <= 1e-12

    def test_columns(self):
        B = np.random.default_rng(1).uniform(0, 1, (12, 5))
        np.testing.assert_allclose(gini_columns(B), [gini_index(c) for c in B.T], atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1e6)))
    def test_range_and_scale(self, b):
        g = gini_index(b)
        assert 0 <= g <= 1
        assert gini_index(3.5 * b) == pytest.approx(g, abs=1e-12)


class TestCluster:
    def test_one_hot_beats_uniform(self):
        B = np.column_stack([np.ones(4), [0, 0, 1, 0]])
        scores, sel = cluster_bases(B, np.ones((2, 3)))
        np.testing.assert_allclose(scores.beta, [0.0, 0.75])
        assert list(sel.selected_indices) == [1]

    def test_ties_go_to_lower_indices(self):
        B = np.tile(np.random.default_rng(2).uniform(0, 1, (10, 1)), (1, 6))
        _, sel = cluster_bases(B, np.ones((6, 4)))
        assert list(sel.selected_indices) == [0, 1, 2]

    def test_sort_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            B = rng.exponential(size=(32, 8)) ** rng.uniform(0.5, 4, 8)
            G = rng.uniform(0, 1, (8, 7))
            scores, sel = cluster_bases(B, G)
            assert list(sel.selected_indices) == top_half_by_sort([gini_lorenz(c) for c in B.T])
            np.testing.assert_allclose(sel.X_W, sel.B_W @ sel.G_W, atol=1e-12)
            assert sel.B_W.shape == (32, 4)

    def test_median(self):
        B = np.random.default_rng(4).uniform(0, 1, (10, 4))
        scores, _ = cluster_bases(B, np.ones((4, 2)))
        s = sorted(scores.beta)
        assert scores.threshold == pytest.approx((s[1] + s[2]) / 2, abs=1e-15)

    def test_mismatch(self):
        with pytest.raises(InvalidInputError):
            cluster_bases(np.ones((5, 4)), np.ones((3, 2)))


class TestEnergyAndClassify:
    def test_zero(self):
        assert not spectral_energy(np.zeros((4, 3))).any()

    def test_single_row(self):
        X = np.zeros((6, 5))
        X[2] = np.arange(1, 6)
        xi = spectral_energy(X)
        assert np.flatnonzero(xi).tolist() == [2]

    def test_loop_oracle(self):
        X = np.random.default_rng(5).uniform(0, 1, (6, 5))
        expected = [sum(X[f, t] for t in range(5)) for f in range(6)]
        np.testing.assert_allclose(spectral_energy(X), expected, atol=1e-12)

    def test_classify(self):
        assert classify(np.eye(5)[3]) == 1
        assert classify(np.ones(5)) == 0
        # gini of (0, 1) is exactly 0.5; the boundary counts as wheezing
        assert gini_index([0.0, 1.0]) == 0.5
        assert classify(np.array([0.0, 1.0])) == 1
        assert classify(np.array([0.0, 1.0]), threshold=0.51) == 0


def _model(B_S, K_V=2, T=6, seed=0):
    rng = np.random.default_rng(seed)
    F, K_S = B_S.shape
    u = lambda *s: rng.uniform(0.1, 1, s)
    return NmfModel(B_S, u(F, K_V), np.ones((K_S, T)), u(K_V, T), u(K_V, T))


class TestDetect:
    def test_narrowband_bases(self):
        F = 32
        B = np.full((F, 4), 1e-12)
        B[5, :] = 1.0
        B[6, 2:] = 0.2
        result = detect(_model(B))
        assert result.label == 1 and result.profile_gini >= 0.5

    def test_flat_bases(self):
        result = detect(_model(np.ones((32, 4))))
        assert result.label == 0 and result.profile_gini < 0.5

    def test_result_json(self):
        result = detect(_model(np.random.default_rng(6).uniform(0, 1, (16, 4))))
        d = json.loads(result.to_json())
        assert d["omega"] == result.label
        assert len(d["basis_gini"]) == 4 and len(d["selected_indices"]) == 2
        assert len(d["energy_profile"]) == 16
