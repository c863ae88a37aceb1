import json

import numpy as np
import pytest
import scipy.sparse as sp

from coinflip.errors import InvalidArgumentError, TrainingDivergedError
from coinflip.function_approx import (
    AdamState,
    MlpParams,
    MlpSpec,
    SparseRows,
    adam_update,
    finite_difference_check,
    forward,
    init_params,
    load_params,
    min_abs_preactivation,
    mse_grad_step,
    params_from_dict,
    params_to_dict,
    save_params,
    to_sparse_rows,
    weighted_mse,
)


def reference_forward(params, x):
    """Straight-line re-implementation used as an oracle."""
    h = np.atleast_2d(x)
    n = len(params.weights)
    for i in range(n):
        z = np.einsum("bi,ij->bj", h, params.weights[i]) + params.biases[i]
        if i < n - 1:
            z = np.maximum(z, 0.0) if params.spec.activation == "relu" else np.tanh(z)
        h = z
    return h


class TestSpec:
    def test_invalid_sizes(self):
        with pytest.raises(InvalidArgumentError):
            MlpSpec(0)
        with pytest.raises(InvalidArgumentError):
            MlpSpec(3, (4, 0))
        with pytest.raises(InvalidArgumentError):
            MlpSpec(3, activation="sigmoid")


class TestInit:
    def test_no_hidden_layers_is_linear(self, rng):
        p = init_params(MlpSpec(5, (), 3), rng)
        assert [w.shape for w in p.weights] == [(5, 3)]

    def test_seeded_determinism(self):
        spec = MlpSpec(4, (8, 8), 2)
        a = init_params(spec, np.random.default_rng(9))
        b = init_params(spec, np.random.default_rng(9))
        assert a.checksum() == b.checksum()

    def test_relu_layer_variance(self, rng):
        p = init_params(MlpSpec(64, (160,), 2), rng)
        w = p.weights[0].ravel()[:10_000]
        assert abs(w.var(ddof=1) - 2 / 64) < 0.1 * 2 / 64

    def test_biases_zero(self, rng):
        p = init_params(MlpSpec(3, (4,), 2), rng)
        assert all(np.all(b == 0) for b in p.biases)


class TestForward:
    def test_zero_params(self, rng):
        spec = MlpSpec(3, (4,), 2)
        p = init_params(spec, rng)
        for a in p.arrays():
            a[...] = 0.0
        assert np.array_equal(forward(p, rng.standard_normal(3)), np.zeros(2))

    def test_identity_layer(self):
        spec = MlpSpec(3, (), 3)
        p = MlpParams(spec, [np.eye(3)], [np.zeros(3)])
        x = np.array([0.5, -2.0, 3.0])
        assert np.array_equal(forward(p, x), x)

    @pytest.mark.parametrize("act", ["relu", "tanh"])
    def test_matches_reference(self, rng, act):
        p = init_params(MlpSpec(6, (7, 5), 4, act), rng)
        for a in p.biases:
            a[...] = rng.standard_normal(a.shape)
        x = rng.standard_normal((10, 6))
        assert np.allclose(forward(p, x), reference_forward(p, x), rtol=0, atol=1e-12)

    def test_single_vector_returns_vector(self, rng):
        p = init_params(MlpSpec(6, (7,), 4), rng)
        assert forward(p, np.ones(6)).shape == (4,)

    def test_shape_mismatch(self, rng):
        p = init_params(MlpSpec(6, (7,), 4), rng)
        with pytest.raises(InvalidArgumentError):
            forward(p, np.ones(5))

    def test_sparse_inputs_agree(self, rng):
        p = init_params(MlpSpec(10, (8,), 3), rng)
        dense = np.zeros((5, 10))
        dense[np.arange(5), [1, 4, 4, 9, 0]] = 1.0
        rows, _ = to_sparse_rows(dense)
        assert np.allclose(forward(p, rows), forward(p, dense), atol=1e-14)
        assert np.allclose(forward(p, sp.csr_matrix(dense)), forward(p, dense), atol=1e-14)

    def test_determinism(self, rng):
        p = init_params(MlpSpec(6, (7,), 4), rng)
        x = rng.standard_normal((3, 6))
        assert np.array_equal(forward(p, x), forward(p, x))


class TestSparseRows:
    def test_round_trip(self, rng):
        dense = np.where(rng.random((6, 9)) < 0.2, rng.standard_normal((6, 9)), 0.0)
        rows = SparseRows.from_dense(dense)
        assert np.array_equal(rows.toarray(), dense)

    def test_products(self, rng):
        dense = np.where(rng.random((6, 9)) < 0.3, rng.standard_normal((6, 9)), 0.0)
        rows = SparseRows.from_dense(dense)
        w = rng.standard_normal((9, 4))
        delta = rng.standard_normal((6, 4))
        assert np.allclose(rows @ w, dense @ w, atol=1e-13)
        assert np.allclose(rows.T @ delta, dense.T @ delta, atol=1e-13)


class TestWeightedMse:
    def test_loss_definition(self, rng):
        p = init_params(MlpSpec(3, (4,), 2), rng)
        x = rng.standard_normal((5, 3))
        t = rng.standard_normal((5, 2))
        w = rng.random(5)
        loss, _ = weighted_mse(p, x, t, w)
        expected = np.sum(w[:, None] * (t - forward(p, x)) ** 2) / (5 * 2)
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_target_shape_mismatch(self, rng):
        p = init_params(MlpSpec(3, (4,), 2), rng)
        with pytest.raises(InvalidArgumentError):
            weighted_mse(p, np.ones((2, 3)), np.ones((2, 3)))

    def test_negative_weights_rejected(self, rng):
        p = init_params(MlpSpec(3, (4,), 2), rng)
        with pytest.raises(InvalidArgumentError):
            weighted_mse(p, np.ones((2, 3)), np.ones((2, 2)), [1.0, -1.0])

    def test_reweighting_matches_finite_differences(self, rng):
        p = init_params(MlpSpec(3, (5,), 2, "tanh"), rng)
        x = rng.standard_normal((3, 3))
        t = rng.standard_normal((3, 2))
        base = np.array([1.0, 1.0, 1.0])
        moved = np.array([2.0, 0.5, 1.0])
        assert finite_difference_check(p, x, t, weights=moved) < 1e-6
        _, g_base = weighted_mse(p, x, t, base)
        _, g_moved = weighted_mse(p, x, t, moved)
        # gradients are linear in the example weights
        parts = [weighted_mse(p, x, t, np.eye(3)[i])[1] for i in range(3)]
        for k in range(len(g_moved)):
            combo = sum(moved[i] * parts[i][k] for i in range(3))
            assert np.allclose(g_moved[k], combo, atol=1e-12)
            assert not np.allclose(g_moved[k], g_base[k])


class TestGradStep:
    def test_zero_learning_rate(self, rng):
        p = init_params(MlpSpec(3, (4,), 2), rng)
        before = p.checksum()
        opt = AdamState.for_params(p)
        _, loss = mse_grad_step(p, np.ones((1, 3)), np.zeros((1, 2)), None, opt, 0.0)
        assert p.checksum() == before
        assert loss > 0

    def test_linear_regression_converges(self, rng):
        p = init_params(MlpSpec(4, (), 3), rng)
        x = rng.standard_normal((1, 4))
        t = rng.standard_normal((1, 3))
        opt = AdamState.for_params(p)
        for _ in range(5000):
            _, loss = mse_grad_step(p, x, t, None, opt, 1e-2)
        assert weighted_mse(p, x, t)[0] < 1e-6

    def test_alternating_signs_average_to_zero(self, rng):
        p = init_params(MlpSpec(2, (), 4), rng)
        x = np.array([[1.0, 0.0], [1.0, 0.0]])
        t = np.array([np.ones(4), -np.ones(4)])
        opt = AdamState.for_params(p)
        for _ in range(3000):
            mse_grad_step(p, x, t, None, opt, 1e-2)
        assert np.allclose(forward(p, x[0]), 0.0, atol=1e-4)

    def test_non_finite_loss(self, rng):
        p = init_params(MlpSpec(2, (), 1), rng)
        opt = AdamState.for_params(p)
        with pytest.raises(TrainingDivergedError):
            mse_grad_step(p, np.ones((1, 2)), np.array([[np.inf]]), None, opt, 1e-3)

    def test_adam_first_step_size(self, rng):
        # bias-corrected Adam's first step is lr * sign(g) up to eps
        p = init_params(MlpSpec(3, (), 2), rng)
        before = [a.copy() for a in p.arrays()]
        _, g = weighted_mse(p, np.ones((1, 3)), np.full((1, 2), 5.0))
        adam_update(p, g, AdamState.for_params(p), 0.01)
        for b, a, gr in zip(before, p.arrays(), g):
            assert np.allclose(b - a, 0.01 * np.sign(gr), atol=1e-8)


class TestFiniteDifference:
    def test_linear_scalar(self, rng):
        p = init_params(MlpSpec(1, (), 1), rng)
        assert finite_difference_check(p, np.array([[0.7]]), np.array([[0.3]])) < 1e-7

    def test_tanh_network(self, rng):
        p = init_params(MlpSpec(4, (6, 5), 3, "tanh"), rng)
        x = rng.standard_normal((1, 4))
        assert finite_difference_check(p, x, rng.standard_normal((1, 3))) < 1e-4

    def test_relu_away_from_kinks(self, rng):
        p = init_params(MlpSpec(4, (6, 5), 3, "relu"), rng)
        x = rng.standard_normal((1, 4))
        while min_abs_preactivation(p, x) < 1e-3:
            x = rng.standard_normal((1, 4))
        assert finite_difference_check(p, x, rng.standard_normal((1, 3))) < 1e-4


class TestCheckpoint:
    def test_round_trip(self, rng, tmp_path):
        p = init_params(MlpSpec(4, (6,), 3, "tanh"), rng)
        path = tmp_path / "net.json"
        save_params(p, path)
        q = load_params(path)
        assert q.spec == p.spec
        assert q.checksum() == p.checksum()
        data = json.loads(path.read_text())
        assert data["format"] == "coinflip.mlp"

    def test_rejects_wrong_format(self, rng):
        d = params_to_dict(init_params(MlpSpec(2, (), 1), rng))
        d["format"] = "other"
        with pytest.raises(InvalidArgumentError):
            params_from_dict(d)

    def test_rejects_bad_shapes(self, rng):
        d = params_to_dict(init_params(MlpSpec(2, (3,), 1), rng))
        d["shapes"][0] = [3, 3]
        with pytest.raises(InvalidArgumentError):
            params_from_dict(d)
