"""Network module tests: layout, forward pass, and the TD-loss gradient
against the central finite-difference oracle."""

import numpy as np
import pytest

from optreset import (
    MlpDef,
    Transition,
    finite_diff_grad,
    forward,
    forward_batch,
    grad_td_loss,
    init_params,
    param_count,
    td_loss,
)
from optreset.nets import params_from_bytes, params_to_bytes, split_params


def random_instance(rng, widths=None, batch_size=None, activation="tanh"):
    """Small random net + batch for gradient checks.

    Uses smooth tanh by default. For relu, instances are resampled until
    every hidden pre-activation is at least 1e-3 from the kink, so the
    finite-difference stencil (h=1e-5) never crosses it.
    """
    if widths is None:
        n_hidden = rng.integers(0, 3)
        widths = tuple(int(rng.integers(1, 9)) for _ in range(n_hidden + 2))
    if batch_size is None:
        batch_size = int(rng.integers(1, 17))
    mlp = MlpDef(widths, activation=activation, seed=int(rng.integers(2**31)))
    for _ in range(200):
        w = rng.normal(size=param_count(mlp))
        theta = rng.normal(size=param_count(mlp))
        batch = [
            Transition(
                s=rng.normal(size=widths[0]),
                a=int(rng.integers(widths[-1])),
                r=float(rng.normal()),
                s_next=rng.normal(size=widths[0]),
                terminal=bool(rng.random() < 0.2),
            )
            for _ in range(batch_size)
        ]
        if activation == "relu" and _min_preactivation_margin(mlp, w, batch) < 1e-3:
            continue
        return mlp, w, theta, batch
    raise AssertionError("could not sample a relu instance away from kinks")


def _min_preactivation_margin(mlp, w, batch):
    margin = np.inf
    x = np.stack([t.s for t in batch])
    h = x
    for wmat, b in split_params(mlp, w)[:-1]:
        z = h @ wmat + b
        margin = min(margin, float(np.min(np.abs(z))))
        h = np.maximum(z, 0.0)
    return margin


class TestInitParams:
    def test_biases_zero(self):
        mlp = MlpDef((2, 1), seed=3)
        p = init_params(mlp)
        # layout: 2 weights then 1 bias
        assert p[2] == 0.0

    def test_deterministic(self):
        mlp = MlpDef((3, 5, 2), seed=11)
        assert np.array_equal(init_params(mlp), init_params(mlp))

    def test_param_count_layout(self):
        assert param_count(MlpDef((4, 8, 3))) == 4 * 8 + 8 + 8 * 3 + 3 == 67

    def test_glorot_range(self):
        mlp = MlpDef((10, 20), seed=0)
        w = split_params(mlp, init_params(mlp))[0][0]
        limit = np.sqrt(6.0 / 30.0)
        assert np.all(np.abs(w) <= limit)

    def test_seed_changes_weights(self):
        a = init_params(MlpDef((3, 3), seed=1))
        b = init_params(MlpDef((3, 3), seed=2))
        assert not np.array_equal(a, b)


class TestForward:
    def test_zero_params_zero_output(self):
        mlp = MlpDef((3, 4, 2))
        q = forward(mlp, np.zeros(param_count(mlp)), np.array([1.0, -2.0, 0.5]))
        assert np.array_equal(q, np.zeros(2))

    def test_affine_single_layer(self):
        mlp = MlpDef((1, 1))
        q = forward(mlp, np.array([2.0, 1.0]), np.array([3.0]))
        assert q == pytest.approx([7.0])

    def test_shape_and_finiteness(self):
        rng = np.random.default_rng(0)
        mlp = MlpDef((2, 4, 3), seed=5)
        q = forward(mlp, init_params(mlp), rng.normal(size=2))
        assert q.shape == (3,)
        assert np.all(np.isfinite(q))

    def test_dimension_mismatch(self):
        mlp = MlpDef((2, 3))
        with pytest.raises(ValueError):
            forward(mlp, np.zeros(param_count(mlp)), np.zeros(5))

    def test_output_never_aliases_params(self):
        mlp = MlpDef((2, 2), seed=9)
        p = init_params(mlp)
        before = p.copy()
        q = forward(mlp, p, np.array([1.0, 1.0]))
        q[:] = 123.0
        assert np.array_equal(p, before)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        mlp = MlpDef((3, 5, 2), seed=2)
        p = init_params(mlp)
        xs = rng.normal(size=(6, 3))
        batched = forward_batch(mlp, p, xs)
        for i, x in enumerate(xs):
            assert np.allclose(batched[i], forward(mlp, p, x), rtol=0, atol=1e-14)


class TestGradTdLoss:
    def test_zero_network_loss(self):
        mlp = MlpDef((2, 2))
        zeros = np.zeros(param_count(mlp))
        batch = [Transition(np.array([1.0, 0.0]), 0, 1.0, np.array([0.0, 1.0]), False)]
        loss, _ = grad_td_loss(mlp, zeros, zeros, batch, gamma=0.9)
        assert loss == pytest.approx(0.5)

    def test_linear_one_hot_gradient_by_hand(self):
        # linear net over one-hot features: d loss / d W[s, a] = -td_error
        mlp = MlpDef((3, 2))
        w = np.zeros(param_count(mlp))
        theta = np.zeros(param_count(mlp))
        tr = Transition(np.eye(3)[1], a=0, r=2.0, s_next=np.eye(3)[2], terminal=False)
        loss, grad = grad_td_loss(mlp, w, theta, [tr], gamma=0.9)
        td_error = 2.0 - 0.0  # target - q
        expected = np.zeros_like(w)
        expected[1 * 2 + 0] = -td_error  # W[1, 0] in row-major (d, A) layout
        expected[3 * 2 + 0] = -td_error  # bias of action 0
        assert np.allclose(grad, expected, atol=1e-12)
        assert loss == pytest.approx(0.5 * td_error**2)

    def test_empty_batch_rejected(self):
        mlp = MlpDef((2, 2))
        with pytest.raises(ValueError):
            grad_td_loss(mlp, np.zeros(param_count(mlp)), np.zeros(param_count(mlp)), [], 0.9)

    def test_terminal_uses_reward_only(self):
        rng = np.random.default_rng(1)
        mlp = MlpDef((2, 2), seed=8)
        w, theta = init_params(mlp), rng.normal(size=param_count(mlp))
        tr = Transition(rng.normal(size=2), 1, 3.0, rng.normal(size=2), True)
        loss, _ = grad_td_loss(mlp, w, theta, [tr], gamma=0.9)
        q = forward(mlp, w, tr.s)[1]
        assert loss == pytest.approx(0.5 * (q - 3.0) ** 2)

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_matches_finite_differences(self, activation):
        rng = np.random.default_rng(42)
        for _ in range(20):
            mlp, w, theta, batch = random_instance(rng, activation=activation)
            _, grad = grad_td_loss(mlp, w, theta, batch, gamma=0.9)
            fd = finite_diff_grad(mlp, w, theta, batch, gamma=0.9, h=1e-5)
            scale = max(1.0, np.max(np.abs(grad)))
            assert np.max(np.abs(grad - fd)) / scale <= 1e-4

    def test_theta_enters_through_targets_only(self):
        # freezing the targets reduces the gradient to plain least squares
        rng = np.random.default_rng(7)
        mlp, w, theta, batch = random_instance(rng, widths=(3, 4, 2), batch_size=8)
        _, grad = grad_td_loss(mlp, w, theta, batch, gamma=0.9)

        from optreset import bellman_target

        frozen = [
            Transition(t.s, t.a, bellman_target(mlp, theta, t, 0.9), t.s_next, True)
            for t in batch
        ]  # terminal=True makes the target exactly the stored r
        _, regression_grad = grad_td_loss(mlp, w, w, frozen, gamma=0.9)
        assert np.allclose(grad, regression_grad, rtol=0, atol=1e-12)

    def test_changing_theta_changes_loss(self):
        rng = np.random.default_rng(3)
        mlp, w, theta, batch = random_instance(rng, widths=(2, 3), batch_size=4)
        batch = [Transition(t.s, t.a, t.r, t.s_next, False) for t in batch]
        l1 = td_loss(mlp, w, theta, batch, 0.9)
        l2 = td_loss(mlp, w, theta + 0.5, batch, 0.9)
        assert l1 != l2


class TestFiniteDiff:
    def test_quadratic_exact(self):
        # single weight, quadratic loss: central differences are exact up to O(h^2)
        mlp = MlpDef((1, 1))
        theta = np.zeros(2)
        tr = Transition(np.array([1.0]), 0, 1.0, np.array([1.0]), True)
        w = np.array([3.0, 0.0])
        fd = finite_diff_grad(mlp, w, theta, [tr], gamma=0.9, h=1e-4)
        # loss = 1/2 (w*1 + b - 1)^2, d/dw = (w - 1) = 2
        assert fd[0] == pytest.approx(2.0, abs=1e-9)

    def test_step_must_be_positive(self):
        mlp = MlpDef((1, 1))
        with pytest.raises(ValueError):
            finite_diff_grad(mlp, np.zeros(2), np.zeros(2), [], 0.9, h=0.0)

    def test_agreement_at_1e5(self):
        rng = np.random.default_rng(11)
        mlp, w, theta, batch = random_instance(rng, widths=(4, 6, 3), batch_size=8)
        _, grad = grad_td_loss(mlp, w, theta, batch, gamma=0.95)
        fd = finite_diff_grad(mlp, w, theta, batch, gamma=0.95, h=1e-5)
        assert np.allclose(grad, fd, rtol=1e-5, atol=1e-7)


class TestSerialization:
    def test_round_trip(self):
        mlp = MlpDef((3, 5, 2), seed=1)
        values = init_params(mlp)
        widths, back, off = params_from_bytes(params_to_bytes(mlp.layer_widths, values))
        assert widths == (3, 5, 2)
        assert np.array_equal(back, values)

    def test_layout_is_little_endian(self):
        blob = params_to_bytes((1, 1), np.array([1.0, 0.0]))
        assert blob[:4] == b"\x02\x00\x00\x00"  # two widths, LE uint32
        assert blob[4:12] == b"\x01\x00\x00\x00\x01\x00\x00\x00"

    def test_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            params_to_bytes((2, 2), np.zeros(3))
