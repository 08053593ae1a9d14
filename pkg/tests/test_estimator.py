import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quadrgp.drag import DragParams
from quadrgp.dynamics import ConfigurationError, QuadParams, QuadState, physics_field, quat_normalize, rk4_step
from quadrgp.estimator import ResidualConfig, estimate_drag_observation, observe_states
from quadrgp.sim import SimConfig, plant_step

small = arrays(float, 3, elements=st.floats(-5, 5))


def test_perfect_model_gives_zero():
    obs = estimate_drag_observation([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.01, 0.0)
    assert np.array_equal(obs.a_tilde, np.zeros(3))


def test_residual_arithmetic():
    obs = estimate_drag_observation([0.01, 0, 0], [0, 0, 0], 0.01, 1.5)
    assert np.allclose(obs.a_tilde, [1.0, 0, 0], atol=1e-15)
    assert obs.t == 1.5
    assert np.array_equal(obs.v_B, [0.01, 0, 0])


@given(small, small, small)
def test_linearity_in_prediction(v_meas, v_pred, delta):
    cfg = ResidualConfig(outlier_cap=1e9)
    a = estimate_drag_observation(v_meas, v_pred, 0.01, 0.0, cfg).a_tilde
    b = estimate_drag_observation(v_meas, v_pred + delta, 0.01, 0.0, cfg).a_tilde
    assert np.allclose(b - a, -delta / 0.01, atol=1e-9)


def test_short_step_rejected():
    assert estimate_drag_observation([1, 0, 0], [0, 0, 0], 1e-6, 0.0) is None


def test_non_finite_rejected():
    assert estimate_drag_observation([np.nan, 0, 0], [0, 0, 0], 0.01, 0.0) is None
    assert estimate_drag_observation([0, 0, 0], [np.inf, 0, 0], 0.01, 0.0) is None


def test_outliers_clipped():
    obs = estimate_drag_observation([1.0, -1.0, 0.0], [0, 0, 0], 0.01, 0.0, ResidualConfig(outlier_cap=20.0))
    assert np.array_equal(obs.a_tilde, [20.0, -20.0, 0.0])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ResidualConfig(dt_min=0.0)
    with pytest.raises(ConfigurationError):
        ResidualConfig(outlier_cap=-1.0)


def _one_control_step(x0, u, cfg):
    """Plant and physics-only predictor over one control period at matched substeps."""
    f = physics_field(cfg.quad)
    x_meas, x_pred = x0, x0
    for _ in range(cfg.substeps):
        x_meas = plant_step(x_meas, u, cfg)
        x_pred = rk4_step(f, x_pred, u, cfg.delta_t_sim)
    return x_meas, x_pred


def test_one_step_recovers_simplified_drag():
    cfg = SimConfig(drag_profile="simplified", drag=DragParams(C_D=0.01, C_rD=0.0))
    x0 = QuadState(p=np.array([0, 0, 5.0]), v=np.array([2.0, 0, 0]))
    x_meas, x_pred = _one_control_step(x0, cfg.quad.hover_input, cfg)
    obs = observe_states(x_meas, x_pred, cfg.control_dt, 0.01)
    assert obs.a_tilde[0] == pytest.approx(-0.04, rel=0.05)


def test_body_frame_conversion_uses_each_attitude():
    q = quat_normalize([0.9, 0.1, -0.2, 0.3])
    cfg = SimConfig(drag_profile="simplified", drag=DragParams(C_D=0.01, C_rD=0.0))
    x0 = QuadState(p=np.array([0, 0, 5.0]), q=q, v=np.array([1.0, -2.0, 0.5]))
    x_meas, x_pred = _one_control_step(x0, np.full(4, 0.4), cfg)
    obs = observe_states(x_meas, x_pred, cfg.control_dt, 0.0)
    from quadrgp.drag import drag_accel_body
    from quadrgp.dynamics import rotation_matrix
    v_B = rotation_matrix(q).T @ x0.v
    expected = drag_accel_body(v_B, np.full(4, 0.4), cfg.drag, cfg.quad.m, "simplified")
    assert np.allclose(obs.a_tilde, expected, rtol=0.05, atol=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_drag_free_plant_gives_vanishing_residuals(seed):
    rng = np.random.default_rng(seed)
    cfg = SimConfig(drag_profile="none")
    x = QuadState(p=np.array([0, 0, 5.0]), q=quat_normalize(rng.normal(size=4)),
                  v=rng.uniform(-5, 5, 3), w=rng.uniform(-1, 1, 3))
    for _ in range(20):
        u = rng.uniform(0.2, 0.6, 4)
        x_meas, x_pred = _one_control_step(x, u, cfg)
        obs = observe_states(x_meas, x_pred, cfg.control_dt, 0.0)
        assert np.linalg.norm(obs.a_tilde) < 1e-6
        x = x_meas
