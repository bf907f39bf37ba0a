import numpy as np
import pytest

from conftest import linear_dataset, linear_model
from ftda.data import CLASSIFICATION, REGRESSION, Task
from ftda.model import (ModelError, ModelState, build_gauss_newton_context,
                        forward, gnvp, grad, hvp, init_mlp, load_model, loss,
                        losses, pack, param_count, per_example_grads, predict,
                        save_model, scalar_output, scalar_output_grads,
                        unpack)


def loop_forward(m, x):
    """Independent forward oracle: explicit loops, no matmul."""
    layers = unpack(m.theta, m.arch)
    h = list(x)
    for li, (w, b) in enumerate(layers):
        out = []
        for o in range(w.shape[0]):
            acc = b[o]
            for i in range(w.shape[1]):
                acc += w[o, i] * h[i]
            out.append(acc)
        if li < len(layers) - 1:
            if m.activation == "tanh":
                out = [np.tanh(v) for v in out]
            else:
                out = [max(v, 0.0) for v in out]
        h = out
    return np.asarray(h)


def fd_grad(m, X, Y, weights=None, eps=1e-6):
    base = m.theta
    out = np.zeros(m.p)
    for i in range(m.p):
        tp, tm = base.copy(), base.copy()
        tp[i] += eps
        tm[i] -= eps
        lp = (losses(m.with_theta(tp), X, Y)
              * (1.0 if weights is None else np.asarray(weights))).sum()
        lm = (losses(m.with_theta(tm), X, Y)
              * (1.0 if weights is None else np.asarray(weights))).sum()
        out[i] = (lp - lm) / (2 * eps)
    return out


class TestParamLayout:
    def test_param_count_matches_arch(self):
        arch = (3, 5, 4, 2)
        assert param_count(arch) == 4 * 5 + 6 * 4 + 5 * 2

    def test_pack_unpack_round_trip(self, rng):
        arch = (3, 4, 2)
        theta = rng.normal(size=param_count(arch))
        assert np.array_equal(pack(unpack(theta, arch)), theta)

    def test_theta_length_checked(self):
        with pytest.raises(ModelError):
            ModelState(np.zeros(7), (2, 2), "tanh", Task(REGRESSION))


class TestForward:
    def test_zero_network_outputs_zero(self):
        m = init_mlp(3, [4], Task(REGRESSION), seed=0)
        m = m.with_theta(np.zeros(m.p))
        assert forward(m, np.ones(3)) == 0.0

    def test_single_linear_layer_dot_product(self):
        m = linear_model(linear_dataset(d=2))
        theta = np.array([1.0, 2.0, 0.0])  # w = [1, 2], bias 0
        m = m.with_theta(theta)
        assert forward(m, np.array([3.0, 4.0])) == pytest.approx(11.0)

    def test_matches_loop_oracle(self, tiny_regression, tiny_classification):
        for ds, _, m in (tiny_regression, tiny_classification):
            for i in range(3):
                got = forward(m, ds.features[i])
                want = loop_forward(m, ds.features[i])
                got = np.atleast_1d(got)
                np.testing.assert_allclose(got, want, atol=1e-12)

    def test_dimension_mismatch(self, tiny_regression):
        _, _, m = tiny_regression
        with pytest.raises(ModelError):
            predict(m, np.ones((2, m.arch[0] + 1)))


class TestLoss:
    def test_perfect_regression_prediction(self):
        ds = linear_dataset(noise=0.0)
        w, *_ = np.linalg.lstsq(
            np.hstack([ds.features, np.ones((ds.n, 1))]), ds.targets,
            rcond=None)
        m = linear_model(ds, theta=w)
        assert loss(m, ds.features[0], ds.targets[0]) < 1e-20

    def test_uniform_logits_binary_cross_entropy(self):
        m = init_mlp(2, [], Task(CLASSIFICATION, 2), seed=0)
        m = m.with_theta(np.zeros(m.p))
        assert loss(m, np.ones(2), 1) == pytest.approx(np.log(2.0))

    def test_scalar_formula_oracle(self, tiny_regression):
        ds, _, m = tiny_regression
        f = forward(m, ds.features[0])
        assert loss(m, ds.features[0], ds.targets[0]) == pytest.approx(
            0.5 * (f - ds.targets[0]) ** 2, rel=1e-12)


class TestGrad:
    def test_zero_weights_zero_gradient(self, tiny_regression):
        ds, _, m = tiny_regression
        g = grad(m, ds.features, ds.targets, np.zeros(ds.n))
        np.testing.assert_array_equal(g, np.zeros(m.p))

    def test_linear_regression_hand_gradient(self):
        # d/dw 0.5 (w.x - y)^2 = (w.x - y) x, d/db = (w.x - y)
        ds = linear_dataset(d=2)
        m = linear_model(ds, theta=np.array([0.5, -1.0, 0.2]))
        x, y = ds.features[0], ds.targets[0]
        resid = 0.5 * x[0] - 1.0 * x[1] + 0.2 - y
        g = grad(m, x[None, :], [y])
        np.testing.assert_allclose(g, np.array([resid * x[0], resid * x[1],
                                                resid]), rtol=1e-12)

    @pytest.mark.parametrize("fixture", ["tiny_regression",
                                         "tiny_classification"])
    def test_matches_finite_differences(self, fixture, request, rng):
        ds, _, m = request.getfixturevalue(fixture)
        w = rng.uniform(0.5, 2.0, size=ds.n)
        g = grad(m, ds.features, ds.targets, w)
        fd = fd_grad(m, ds.features, ds.targets, w)
        assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-5

    def test_affine_in_theta_for_quadratic_risk(self, rng):
        ds = linear_dataset()
        m = linear_model(ds)
        t1 = rng.normal(size=m.p)
        t2 = rng.normal(size=m.p)
        a = 0.3
        g_mix = grad(m.with_theta(a * t1 + (1 - a) * t2), ds.features,
                     ds.targets)
        g1 = grad(m.with_theta(t1), ds.features, ds.targets)
        g2 = grad(m.with_theta(t2), ds.features, ds.targets)
        np.testing.assert_allclose(g_mix, a * g1 + (1 - a) * g2, atol=1e-9)


class TestPerExampleGrads:
    def test_single_instance_equals_grad(self, tiny_regression):
        ds, _, m = tiny_regression
        row = per_example_grads(m, ds.features[:1], ds.targets[:1])
        np.testing.assert_array_equal(
            row[0], grad(m, ds.features[:1], ds.targets[:1]))

    def test_identical_instances_identical_rows(self, tiny_classification):
        ds, _, m = tiny_classification
        X = np.repeat(ds.features[:1], 2, axis=0)
        Y = np.repeat(ds.targets[:1], 2)
        rows = per_example_grads(m, X, Y)
        np.testing.assert_array_equal(rows[0], rows[1])

    def test_rows_sum_to_batch_grad(self, tiny_regression):
        ds, _, m = tiny_regression
        rows = per_example_grads(m, ds.features, ds.targets)
        total = grad(m, ds.features, ds.targets)
        np.testing.assert_allclose(rows.sum(axis=0), total, atol=1e-10)


class TestHvp:
    def test_zero_vector(self, tiny_regression):
        ds, _, m = tiny_regression
        out = hvp(m, ds.features, ds.targets, np.zeros(m.p))
        np.testing.assert_array_equal(out, np.zeros(m.p))

    def test_linear_regression_dense_oracle(self, rng):
        # For sum of 0.5 (w.x + b - y)^2 the Hessian is sum of outer
        # products of the bias-augmented inputs.
        ds = linear_dataset(n=20, d=4)
        m = linear_model(ds, theta=rng.normal(size=5))
        xb = np.hstack([ds.features, np.ones((ds.n, 1))])
        H = xb.T @ xb
        v = rng.normal(size=5)
        np.testing.assert_allclose(hvp(m, ds.features, ds.targets, v), H @ v,
                                   atol=1e-10 * np.abs(H @ v).max())

    @pytest.mark.parametrize("fixture", ["tiny_regression",
                                         "tiny_classification"])
    def test_matches_grad_finite_difference(self, fixture, request, rng):
        ds, _, m = request.getfixturevalue(fixture)
        v = rng.normal(size=m.p)
        hv = hvp(m, ds.features, ds.targets, v)
        eps = 1e-5
        gp = grad(m.with_theta(m.theta + eps * v), ds.features, ds.targets)
        gm = grad(m.with_theta(m.theta - eps * v), ds.features, ds.targets)
        fd = (gp - gm) / (2 * eps)
        assert np.abs(hv - fd).max() / np.abs(fd).max() < 1e-4

    def test_symmetry(self, tiny_classification, rng):
        ds, _, m = tiny_classification
        u = rng.normal(size=m.p)
        v = rng.normal(size=m.p)
        left = u @ hvp(m, ds.features, ds.targets, v)
        right = v @ hvp(m, ds.features, ds.targets, u)
        assert abs(left - right) < 1e-8 * max(abs(left), 1.0)

    def test_linear_in_v(self, tiny_regression, rng):
        ds, _, m = tiny_regression
        u = rng.normal(size=m.p)
        v = rng.normal(size=m.p)
        lhs = hvp(m, ds.features, ds.targets, 2.0 * u - 3.0 * v)
        rhs = (2.0 * hvp(m, ds.features, ds.targets, u)
               - 3.0 * hvp(m, ds.features, ds.targets, v))
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * np.abs(rhs).max())


class TestGaussNewton:
    def test_gnvp_matches_dense(self, tiny_classification, rng):
        ds, _, m = tiny_classification
        ctx = build_gauss_newton_context(m, ds)
        dense = ctx.G.T @ np.diag(ctx.V) @ ctx.G
        v = rng.normal(size=m.p)
        want = dense @ v
        np.testing.assert_allclose(gnvp(ctx, v), want,
                                   atol=1e-10 * np.abs(want).max())

    def test_gnvp_rank_one(self, tiny_regression, rng):
        ds, _, m = tiny_regression
        ctx = build_gauss_newton_context(m, ds, indices=[0])
        v = rng.normal(size=m.p)
        g1 = ctx.G[0]
        want = ctx.V[0] * (g1 @ v) * g1
        np.testing.assert_allclose(gnvp(ctx, v), want, rtol=1e-12)

    def test_gnvp_orthogonal_vector(self, tiny_regression):
        ds, _, m = tiny_regression
        ctx = build_gauss_newton_context(m, ds, indices=[0, 1])
        # Build v orthogonal to both rows.
        q, _ = np.linalg.qr(ctx.G.T)
        v = np.random.default_rng(0).normal(size=m.p)
        v -= q @ (q.T @ v)
        out = gnvp(ctx, v)
        assert np.abs(out).max() < 1e-10 * np.abs(ctx.G).max() ** 2

    def test_psd(self, tiny_classification, rng):
        ds, _, m = tiny_classification
        ctx = build_gauss_newton_context(m, ds)
        for _ in range(5):
            v = rng.normal(size=m.p)
            assert v @ gnvp(ctx, v) >= -1e-10 * (v @ v)

    def test_mse_context_fields(self, tiny_regression):
        ds, _, m = tiny_regression
        ctx = build_gauss_newton_context(m, ds)
        preds = predict(m, ds.features)
        np.testing.assert_allclose(ctx.r, -(preds - ds.targets), rtol=1e-12)
        np.testing.assert_array_equal(ctx.V, np.ones(ds.n))

    def test_gn_equals_hessian_for_linear_mse(self, rng):
        # With an identity composition the Gauss-Newton matrix G^T G is the
        # exact Hessian of a linear-regression risk; check densely.
        ds = linear_dataset(n=30, d=6)
        m = linear_model(ds, theta=rng.normal(size=7))
        ctx = build_gauss_newton_context(m, ds)
        v = rng.normal(size=m.p)
        np.testing.assert_allclose(gnvp(ctx, v),
                                   hvp(m, ds.features, ds.targets, v),
                                   atol=1e-10 * np.abs(v).max() * ds.n)


class TestScalarOutput:
    def test_regression_perfect_fit(self):
        ds = linear_dataset(noise=0.0, d=2)
        w, *_ = np.linalg.lstsq(
            np.hstack([ds.features, np.ones((ds.n, 1))]), ds.targets,
            rcond=None)
        m = linear_model(ds, theta=w)
        fbar, l1, l2 = scalar_output(m, ds.features[0], ds.targets[0])
        assert abs(fbar) < 1e-10
        assert abs(l1) < 1e-10
        assert l2 == 1.0

    def test_binary_even_odds(self):
        m = init_mlp(2, [], Task(CLASSIFICATION, 2), seed=0)
        m = m.with_theta(np.zeros(m.p))  # uniform logits => p = 1/2
        fbar, _, l2 = scalar_output(m, np.ones(2), 0)
        assert fbar == pytest.approx(0.0, abs=1e-12)
        assert l2 == pytest.approx(0.25, rel=1e-12)

    @pytest.mark.parametrize("fixture", ["tiny_regression",
                                         "tiny_classification"])
    def test_chain_rule_identity(self, fixture, request):
        ds, _, m = request.getfixturevalue(fixture)
        gl = per_example_grads(m, ds.features, ds.targets)
        gf = scalar_output_grads(m, ds.features, ds.targets)
        l1 = np.array([scalar_output(m, ds.features[i], ds.targets[i])[1]
                       for i in range(ds.n)])
        err = np.abs(gl - l1[:, None] * gf).max()
        assert err / np.abs(gl).max() < 1e-8

    def test_second_derivative_nonnegative(self, tiny_classification):
        ds, _, m = tiny_classification
        for i in range(ds.n):
            assert scalar_output(m, ds.features[i], ds.targets[i])[2] >= 0


class TestSerialization:
    def test_bit_exact_round_trip(self, tmp_path, tiny_classification):
        _, _, m = tiny_classification
        path = tmp_path / "model.bin"
        save_model(m, path)
        back = load_model(path)
        assert back.arch == m.arch
        assert back.activation == m.activation
        assert back.task == m.task
        assert np.array_equal(back.theta, m.theta)

    def test_reject_garbage(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"nonsense")
        with pytest.raises(ModelError):
            load_model(path)
