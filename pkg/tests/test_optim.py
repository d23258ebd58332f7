"""Optimizer tests: step math against pure-python scalar replays of the
moment recurrences, reset semantics, and the RMSProp-as-reduced-Adam
equivalence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optreset import (
    OptimHyper,
    OptimizerState,
    adam_step,
    apply_proximal,
    fresh_state,
    optimizer_step,
    radam_step,
    reset_state,
    rmsprop_step,
    sgd_step,
)
from optreset.optim import KINDS


def scalar_adam_replay(grads, p, alpha, b1, b2, eps, debias_v=True):
    """Independent scalar replay of the moment recurrences, python floats."""
    m = v = 0.0
    traj = []
    for i, g in enumerate(grads, start=1):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**i)
        v_hat = v / (1.0 - b2**i) if debias_v else v
        p = p - alpha * m_hat / (math.sqrt(v_hat) + eps)
        traj.append(p)
    return traj


def run_steps(step_fn, params, grads, h, state=None):
    state = fresh_state(params.shape) if state is None else state
    traj = []
    for g in grads:
        params, state, report = step_fn(params, g, state, h)
        traj.append((params, state, report))
    return traj


class TestFreshAndReset:
    def test_fresh_rank1(self):
        s = fresh_state((3,))
        assert np.array_equal(s.m, np.zeros(3))
        assert np.array_equal(s.v, np.zeros(3))
        assert s.i == 0

    def test_fresh_rank2(self):
        s = fresh_state((2, 2))
        assert s.m.shape == (2, 2) and not s.m.any() and not s.v.any()

    def test_fresh_is_deterministic(self):
        a, b = fresh_state((4,)), fresh_state((4,))
        assert np.array_equal(a.m, b.m) and a.i == b.i

    def test_reset_zeroes_counter(self):
        s = OptimizerState(m=np.ones(2), v=np.ones(2), i=17)
        r = reset_state(s)
        assert r.i == 0 and not r.m.any() and not r.v.any()

    def test_reset_equals_fresh_one_step(self):
        h = OptimHyper(alpha=0.1)
        dirty = OptimizerState(m=np.array([3.0]), v=np.array([2.0]), i=9)
        g = np.array([0.7])
        p = np.array([1.0])
        from_reset = adam_step(p, g, reset_state(dirty), h)
        from_fresh = adam_step(p, g, fresh_state((1,)), h)
        assert np.array_equal(from_reset[0], from_fresh[0])

    def test_reset_idempotent(self):
        s = OptimizerState(m=np.ones(3), v=np.ones(3), i=5)
        once, twice = reset_state(s), reset_state(reset_state(s))
        assert np.array_equal(once.m, twice.m) and once.i == twice.i


class TestAdam:
    def test_first_step_identity(self):
        h = OptimHyper(alpha=0.1, beta1=0.9, beta2=0.999, epsilon=1e-8)
        p, st, rep = adam_step(np.array([1.0]), np.array([2.0]), fresh_state((1,)), h)
        m_hat = st.m / rep.debias1
        v_hat = st.v / rep.debias2
        assert m_hat[0] == pytest.approx(2.0, rel=1e-12)
        assert v_hat[0] == pytest.approx(4.0, rel=1e-12)
        assert p[0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), rel=1e-12)

    def test_zero_gradient(self):
        h = OptimHyper()
        p, st, _ = adam_step(np.array([5.0]), np.array([0.0]), fresh_state((1,)), h)
        assert p[0] == 5.0
        assert st.m[0] == 0.0 and st.v[0] == 0.0 and st.i == 1

    def test_constant_gradient_matches_replay(self):
        h = OptimHyper(alpha=0.05)
        grads = [np.array([1.0])] * 3
        traj = run_steps(adam_step, np.array([0.0]), grads, h)
        oracle = scalar_adam_replay([1.0] * 3, 0.0, h.alpha, h.beta1, h.beta2, h.epsilon)
        prev = 0.0
        for (p, _, _), expect in zip(traj, oracle):
            assert p[0] == pytest.approx(expect, abs=1e-15)
            # displacement is -alpha to within the epsilon perturbation
            assert (p[0] - prev) == pytest.approx(-h.alpha, abs=1e-9)
            prev = p[0]

    def test_random_trajectory_matches_replay(self):
        rng = np.random.default_rng(0)
        h = OptimHyper(alpha=0.01)
        grads = [np.array([g]) for g in rng.normal(size=100)]
        traj = run_steps(adam_step, np.array([0.3]), grads, h)
        oracle = scalar_adam_replay(
            [float(g[0]) for g in grads], 0.3, h.alpha, h.beta1, h.beta2, h.epsilon
        )
        for (p, _, _), expect in zip(traj, oracle):
            assert p[0] == pytest.approx(expect, abs=1e-13)

    def test_state_stores_raw_moments(self):
        # debiased working copies never leak into the stored state
        rng = np.random.default_rng(5)
        h = OptimHyper()
        grads = [np.array([g]) for g in rng.normal(size=10)]
        traj = run_steps(adam_step, np.array([0.0]), grads, h)
        m = v = 0.0
        for (_, st, _), g in zip(traj, grads):
            m = h.beta1 * m + (1 - h.beta1) * float(g[0])
            v = h.beta2 * v + (1 - h.beta2) * float(g[0]) ** 2
            assert st.m[0] == pytest.approx(m, rel=1e-15, abs=1e-300)
            assert st.v[0] == pytest.approx(v, rel=1e-15, abs=1e-300)

    def test_non_finite_gradient_rejected(self):
        h = OptimHyper()
        with pytest.raises(ValueError, match="non-finite"):
            adam_step(np.zeros(1), np.array([np.nan]), fresh_state((1,)), h)

    def test_shape_mismatch_rejected(self):
        h = OptimHyper()
        with pytest.raises(ValueError, match="shape"):
            adam_step(np.zeros(2), np.zeros(3), fresh_state((2,)), h)

    def test_inputs_not_mutated(self):
        h = OptimHyper()
        p = np.array([1.0, 2.0])
        g = np.array([0.5, -0.5])
        st = fresh_state((2,))
        adam_step(p, g, st, h)
        assert np.array_equal(p, [1.0, 2.0]) and not st.m.any() and st.i == 0


class TestRmsprop:
    def test_first_step_value(self):
        h = OptimHyper(alpha=0.1, beta2=0.999)
        p, st, _ = rmsprop_step(np.array([0.0]), np.array([3.0]), fresh_state((1,)), h)
        assert st.v[0] == pytest.approx(0.001 * 9.0, rel=1e-15)
        assert p[0] == pytest.approx(-0.1 * 3.0 / (math.sqrt(0.009) + h.epsilon), rel=1e-14)

    def test_zero_gradient(self):
        p, _, _ = rmsprop_step(np.array([2.0]), np.array([0.0]), fresh_state((1,)), OptimHyper())
        assert p[0] == 2.0

    def test_first_moment_untouched(self):
        _, st, _ = rmsprop_step(np.array([0.0]), np.array([1.0]), fresh_state((1,)), OptimHyper())
        assert st.m[0] == 0.0 and st.i == 1

    def test_reduction_to_adam_beta1_zero_no_v_debias(self):
        # bit-identical to the general recurrence at beta1=0 with the
        # second-moment debias skipped; 50 sequences run elementwise
        rng = np.random.default_rng(9)
        h = OptimHyper(alpha=0.07, beta1=0.5, beta2=0.99)  # beta1 ignored by rmsprop
        grads = rng.normal(size=(200, 50))
        p = rng.normal(size=50)
        p_ref = p.copy()
        m = np.zeros(50)
        v = np.zeros(50)
        state = fresh_state((50,))
        for i, g in enumerate(grads, start=1):
            p, state, _ = rmsprop_step(p, g, state, h)
            b1 = 0.0
            m = b1 * m + (1.0 - b1) * g
            v = h.beta2 * v + (1.0 - h.beta2) * g * g
            m_hat = m / (1.0 - b1**i)
            v_hat = v  # debias skipped
            p_ref = p_ref - h.alpha * m_hat / (np.sqrt(v_hat) + h.epsilon)
            assert np.array_equal(p, p_ref)


class TestRadam:
    def test_first_step_rectifier_inactive(self):
        h = OptimHyper(alpha=0.1, beta2=0.999)
        rho_inf = 2.0 / (1.0 - h.beta2) - 1.0
        rho_1 = rho_inf - 2.0 * h.beta2 / (1.0 - h.beta2)
        assert rho_1 <= h.radam_threshold  # scalar evaluation: rho_1 = 1
        p, st, rep = radam_step(np.array([0.0]), np.array([2.0]), fresh_state((1,)), h)
        assert not rep.rectifier_active
        m_hat = st.m[0] / rep.debias1
        assert p[0] == pytest.approx(-h.alpha * m_hat, rel=1e-15)

    def test_large_i_limit_is_adam(self):
        h = OptimHyper(alpha=0.01)
        rng = np.random.default_rng(2)
        m = rng.random(3) + 0.1
        v = rng.random(3) + 0.5
        state = OptimizerState(m=m.copy(), v=v.copy(), i=10**6 - 1)
        g = rng.normal(size=3)
        p = rng.normal(size=3)
        p_radam, _, rep = radam_step(p, g, state, h)
        p_adam, _, _ = adam_step(p, g, OptimizerState(m=m.copy(), v=v.copy(), i=10**6 - 1), h)
        assert rep.rectifier_active
        assert np.allclose(p_radam - p, p_adam - p, rtol=1e-3)

    def test_zero_gradient_fresh(self):
        p, _, _ = radam_step(np.array([1.5]), np.array([0.0]), fresh_state((1,)), OptimHyper())
        assert p[0] == 1.5

    def test_rectifier_activates_once_variance_is_tractable(self):
        # with beta2=0.9, rho_inf=19; rho_i crosses 4 at small i
        h = OptimHyper(alpha=0.1, beta2=0.9)
        state = fresh_state((1,))
        p = np.array([0.0])
        seen_active = False
        for _ in range(20):
            p, state, rep = radam_step(p, np.array([1.0]), state, h)
            seen_active = seen_active or rep.rectifier_active
        assert seen_active

    def test_threshold_below_four_rejected(self):
        with pytest.raises(ValueError, match="radam_threshold"):
            OptimHyper(radam_threshold=3.0)


class TestSgd:
    def test_update(self):
        h = OptimHyper(alpha=0.5, kind="sgd")
        p, _, _ = sgd_step(np.zeros(2), np.array([1.0, -1.0]), fresh_state((2,)), h)
        assert np.array_equal(p, [-0.5, 0.5])

    def test_reset_has_no_effect_on_trajectory(self):
        h = OptimHyper(alpha=0.1, kind="sgd")
        rng = np.random.default_rng(1)
        grads = [rng.normal(size=2) for _ in range(20)]
        p1, p2 = np.zeros(2), np.zeros(2)
        s1, s2 = fresh_state((2,)), fresh_state((2,))
        for k, g in enumerate(grads):
            if k % 3 == 0:
                s2 = reset_state(s2)
            p1, s1, _ = sgd_step(p1, g, s1, h)
            p2, s2, _ = sgd_step(p2, g, s2, h)
        assert np.array_equal(p1, p2)

    def test_counter_increments(self):
        h = OptimHyper(kind="sgd")
        st = fresh_state((1,))
        for expected in (1, 2, 3):
            _, st, _ = sgd_step(np.zeros(1), np.zeros(1), st, h)
            assert st.i == expected


class TestApplyProximal:
    def test_zero_coefficient_is_identity(self):
        g = np.array([1.0, 2.0])
        assert apply_proximal(g, np.ones(2), np.zeros(2), 0.0) is g

    def test_equal_params_is_identity(self):
        g = np.array([1.0, -1.0])
        w = np.array([3.0, 4.0])
        assert np.array_equal(apply_proximal(g, w, w.copy(), 0.5), g)

    def test_linear_term(self):
        out = apply_proximal(np.zeros(1), np.array([1.0]), np.array([0.0]), 0.5)
        assert out[0] == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_proximal(np.zeros(2), np.zeros(3), np.zeros(3), 0.1)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(KINDS),
    seed=st.integers(0, 2**31),
    prefix=st.integers(0, 30),
    length=st.integers(1, 40),
)
def test_reset_equals_fresh_property(kind, seed, prefix, length):
    """Replaying any gradient sequence after a reset is bit-identical to
    replaying it from a fresh state, for every optimizer kind."""
    rng = np.random.default_rng(seed)
    h = OptimHyper(alpha=0.05, kind=kind, beta2=0.99)
    dirty = fresh_state((4,))
    p = rng.normal(size=4)
    for _ in range(prefix):
        _, dirty, _ = optimizer_step(p, rng.normal(size=4), dirty, h)
    grads = [rng.normal(size=4) for _ in range(length)]
    pa, sa = p.copy(), reset_state(dirty)
    pb, sb = p.copy(), fresh_state((4,))
    for g in grads:
        pa, sa, _ = optimizer_step(pa, g, sa, h)
        pb, sb, _ = optimizer_step(pb, g, sb, h)
        assert np.array_equal(pa, pb)
        assert np.array_equal(sa.m, sb.m) and np.array_equal(sa.v, sb.v)


def test_debias_factor_limits():
    # beta1=0.9: the factor is within 1e-6 of 1 from n=132 on, and exactly 1
    # in float64 by n=8000
    assert 0.9**132 < 1e-6 < 0.9**131
    h = OptimHyper()
    st = fresh_state((1,))
    p = np.zeros(1)
    for n in range(1, 133):
        p, st, rep = adam_step(p, np.array([0.1]), st, h)
    assert abs(1.0 - rep.debias1) < 1e-6
    st = OptimizerState(m=np.zeros(1), v=np.zeros(1), i=7999)
    _, _, rep = adam_step(p, np.array([0.1]), st, h)
    assert rep.debias1 == 1.0


def test_steps_are_pure_and_repeatable():
    rng = np.random.default_rng(10)
    p = rng.normal(size=5)
    g = rng.normal(size=5)
    st = OptimizerState(m=rng.normal(size=5), v=rng.random(5), i=12)
    h = OptimHyper(alpha=0.02)
    out1 = adam_step(p, g, st, h)
    out2 = adam_step(p, g, st, h)
    assert np.array_equal(out1[0], out2[0])
    assert np.array_equal(out1[1].m, out2[1].m)
    assert out1[2] == out2[2]
