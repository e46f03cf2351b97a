"""Optimizer update rules: hand-computed single steps, convergence, errors."""

import numpy as np
import pytest

from fairkan.errors import ConfigError, NumericError, ShapeError
from fairkan.optim import OPTIMIZER_KINDS, apply_step, make_optimizer


def scalar(v=0.0):
    return [np.array([float(v)])]


# ---------------------------------------------------------------- fixtures


def test_adam_single_step_hand_value():
    # theta=0, g=1, lr=0.1: m_hat = v_hat = 1 after bias correction,
    # so the update is exactly lr / (1 + eps).
    params = scalar(0.0)
    st = make_optimizer("adam", params, 0.1, beta1=0.9, beta2=0.999,
                        epsilon=1e-8)
    apply_step(st, params, scalar(1.0))
    assert params[0][0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-15)
    assert st.step == 1


def test_adam_two_steps_match_reference_recurrence():
    params = scalar(0.0)
    st = make_optimizer("adam", params, 0.05)
    m = v = 0.0
    theta = 0.0
    for t, g in enumerate([0.7, -1.3, 2.1], start=1):
        apply_step(st, params, scalar(g))
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert params[0][0] == pytest.approx(theta, abs=1e-14)


def test_oadam_first_step_doubles_adam_update():
    # No previous update stored yet, so step 1 is -2 * (adam update).
    params = scalar(0.0)
    st = make_optimizer("oadam", params, 0.1, epsilon=1e-8)
    apply_step(st, params, scalar(1.0))
    assert params[0][0] == pytest.approx(-0.2 / (1.0 + 1e-8), abs=1e-15)


def test_oadam_second_step_adds_back_previous_update():
    # With g=1 both steps the bias-corrected ratio stays 1, so
    # u1 = u2 = 0.1/(1+eps) and theta_2 = -2 u1 - 2 u2 + u1 = -3 u1.
    params = scalar(0.0)
    st = make_optimizer("oadam", params, 0.1, epsilon=1e-8)
    apply_step(st, params, scalar(1.0))
    apply_step(st, params, scalar(1.0))
    u = 0.1 / (1.0 + 1e-8)
    assert params[0][0] == pytest.approx(-3.0 * u, abs=1e-14)
    assert st.previous_update[0][0] == pytest.approx(u, abs=1e-15)


def test_adopt_seed_step_then_hand_update():
    # First call only captures v0 = g0^2 and must not move parameters.
    params = scalar(0.0)
    st = make_optimizer("adopt", params, 0.1, beta1=0.9, epsilon=1e-6)
    apply_step(st, params, scalar(2.0))
    assert params[0][0] == 0.0
    assert st.second_moment[0][0] == 4.0
    # Second call: m1 = 0.1 * (2 / sqrt(4)) = 0.1, theta = -lr * m1.
    apply_step(st, params, scalar(2.0))
    assert params[0][0] == pytest.approx(-0.01, abs=1e-15)
    # v updates after the parameter move: 0.9999*4 + 0.0001*4 = 4.
    assert st.second_moment[0][0] == pytest.approx(4.0, abs=1e-12)


def test_adopt_normalizes_before_first_moment():
    params = scalar(0.0)
    st = make_optimizer("adopt", params, 0.1, epsilon=1e-6)
    apply_step(st, params, scalar(4.0))   # v0 = 16
    apply_step(st, params, scalar(1.0))   # m1 = 0.1 * 1/4
    assert params[0][0] == pytest.approx(-0.1 * 0.1 * 0.25, abs=1e-15)


def test_adopt_clip_caps_normalized_gradient():
    # Tiny seed gradient makes the normalized ratio explode; the clip
    # variant caps it at t**0.25 = 1 on the first real update.
    base = scalar(0.0)
    clipped = scalar(0.0)
    st_b = make_optimizer("adopt", base, 0.1, epsilon=1e-6)
    st_c = make_optimizer("adopt", clipped, 0.1, epsilon=1e-6,
                          clip_updates=True)
    for st, p in ((st_b, base), (st_c, clipped)):
        apply_step(st, p, scalar(1e-4))
        apply_step(st, p, scalar(1.0))
    assert abs(base[0][0]) > 10.0
    assert clipped[0][0] == pytest.approx(-0.1 * 0.1 * 1.0, abs=1e-15)


# ---------------------------------------------------------------- invariants


@pytest.mark.parametrize("kind", sorted(OPTIMIZER_KINDS))
def test_quadratic_convergence(kind):
    # f(theta) = 0.5 * (theta - 3)^2 from theta=0, lr=0.1, <=500 steps.
    params = scalar(0.0)
    st = make_optimizer(kind, params, 0.1)
    for _ in range(500):
        apply_step(st, params, [params[0] - 3.0])
    assert abs(params[0][0] - 3.0) < 1e-2


def test_determinism_same_gradient_history():
    rng = np.random.default_rng(3)
    shapes = [(4, 3), (5,)]
    history = [[rng.normal(size=s) for s in shapes] for _ in range(20)]

    def run():
        params = [np.zeros(s) for s in shapes]
        st = make_optimizer("oadam", params, 0.02)
        for grads in history:
            apply_step(st, params, [g.copy() for g in grads])
        return params

    a, b = run(), run()
    for pa, pb in zip(a, b):
        assert np.array_equal(pa, pb)


def test_adam_first_step_sign_pattern_scale_invariant():
    rng = np.random.default_rng(11)
    grads = [rng.normal(size=(6, 4))]
    moved = []
    for scale in (1.0, 17.3):
        params = [np.zeros((6, 4))]
        st = make_optimizer("adam", params, 0.1)
        apply_step(st, params, [scale * grads[0]])
        moved.append(np.sign(params[0]))
    assert np.array_equal(moved[0], moved[1])
    assert np.array_equal(moved[0], -np.sign(grads[0]))


def test_zero_gradient_first_step_is_noop():
    for kind in sorted(OPTIMIZER_KINDS):
        params = [np.full((3,), 1.5)]
        st = make_optimizer(kind, params, 0.1)
        apply_step(st, params, [np.zeros(3)])
        assert np.array_equal(params[0], np.full((3,), 1.5))


def test_zero_learning_rate_leaves_params_fixed():
    params = [np.arange(4.0)]
    st = make_optimizer("adam", params, 0.0)
    for _ in range(5):
        apply_step(st, params, [np.ones(4)])
    assert np.array_equal(params[0], np.arange(4.0))


def test_state_tracks_multiple_arrays():
    params = [np.zeros((2, 2)), np.ones(3)]
    st = make_optimizer("adam", params, 0.1)
    gr = [np.ones((2, 2)), -np.ones(3)]
    apply_step(st, params, gr)
    assert (params[0] < 0).all() and (params[1] > 1).all()
    assert len(st.first_moment) == 2 and len(st.second_moment) == 2


# ---------------------------------------------------------------- errors


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        make_optimizer("sgd", scalar(), 0.1)


def test_negative_learning_rate_rejected():
    with pytest.raises(ConfigError):
        make_optimizer("adam", scalar(), -0.1)


def test_bad_betas_and_epsilon_rejected():
    with pytest.raises(ConfigError):
        make_optimizer("adam", scalar(), 0.1, beta1=1.0)
    with pytest.raises(ConfigError):
        make_optimizer("adam", scalar(), 0.1, beta2=-0.2)
    with pytest.raises(ConfigError):
        make_optimizer("adam", scalar(), 0.1, epsilon=0.0)


def test_clip_switch_is_adopt_only():
    with pytest.raises(ConfigError):
        make_optimizer("adam", scalar(), 0.1, clip_updates=True)
    make_optimizer("adopt", scalar(), 0.1, clip_updates=True)


def test_shape_mismatch_raises():
    params = [np.zeros((2, 3))]
    st = make_optimizer("adam", params, 0.1)
    with pytest.raises(ShapeError):
        apply_step(st, params, [np.zeros((3, 2))])
    with pytest.raises(ShapeError):
        apply_step(st, params, [np.zeros((2, 3)), np.zeros(1)])


def test_nonfinite_gradient_raises():
    params = [np.zeros(2)]
    st = make_optimizer("adam", params, 0.1)
    with pytest.raises(NumericError):
        apply_step(st, params, [np.array([1.0, np.nan])])
    with pytest.raises(NumericError):
        apply_step(st, params, [np.array([np.inf, 0.0])])


def test_default_beta2_depends_on_kind():
    assert make_optimizer("adam", scalar(), 0.1).beta2 == 0.999
    assert make_optimizer("oadam", scalar(), 0.1).beta2 == 0.999
    assert make_optimizer("adopt", scalar(), 0.1).beta2 == 0.9999
