from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_difference
from quadrgp.augmented import RgpParamVector, f_pred, f_rgp, pred_batch, pred_jacobian
from quadrgp.dynamics import ConfigurationError, QuadParams, QuadState, f_phys, quat_mul, quat_normalize, rotation_matrix
from quadrgp.rgp import DragObservation, KernelHyperparams, ensemble_update, rgp_infer, rgp_init, rgp_update

P = QuadParams()
HYPER = KernelHyperparams(1.0, 4.0, 0.1)

quat_raw = arrays(float, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1)
vec3 = arrays(float, 3, elements=st.floats(-6, 6))
unit_u = arrays(float, 4, elements=st.floats(0, 1))


@lru_cache(maxsize=None)
def trained_params(seed=0):
    rng = np.random.default_rng(seed)
    ens = rgp_init(8.0, 12, HYPER)
    for _ in range(40):
        v = rng.uniform(-8, 8, 3)
        ens = ensemble_update(ens, DragObservation(v, -0.05 * v * np.abs(v) + 0.01 * rng.normal(size=3)))
    return ens, RgpParamVector.from_ensemble(ens)


def state(q, v, w=(0.0, 0.0, 0.0)):
    return QuadState(p=np.array([1.0, 2.0, 3.0]), q=quat_normalize(q), v=np.asarray(v, float), w=np.asarray(w, float))


def test_zero_params_give_zero_contribution():
    x = state([1, 0.2, 0, 0], [1.0, -2.0, 3.0])
    assert np.array_equal(f_rgp(x, RgpParamVector.zeros(8.0, 12, HYPER)), np.zeros(13))


def test_zero_params_reproduce_physics_exactly():
    x = state([0.9, 0.1, -0.3, 0.2], [3.0, -1.0, 0.5], [0.2, 0.1, -0.4])
    u = np.array([0.3, 0.6, 0.5, 0.4])
    zero = RgpParamVector.from_ensemble(rgp_init(8.0, 12, HYPER))
    assert np.array_equal(f_pred(x, u, P, zero), f_phys(x, u, P))


@given(quat_raw, vec3)
def test_only_velocity_slots_nonzero(q, v):
    _, rp = trained_params()
    out = f_rgp(state(q, v, [1.0, 2.0, 3.0]), rp)
    assert np.all(out[0:7] == 0) and np.all(out[10:13] == 0)


def test_single_axis_value():
    ens = rgp_init(8.0, 12, HYPER)
    x_dim = ens.dims[0]
    for _ in range(30):
        x_dim = rgp_update(x_dim, 2.0, -0.04)
    ens = type(ens)((x_dim, ens.dims[1], ens.dims[2]))
    rp = RgpParamVector.from_ensemble(ens)
    out = f_rgp(state([1, 0, 0, 0], [2.0, 0, 0]), rp)
    expected = rgp_infer(x_dim, 2.0)[0]
    assert out[7] == pytest.approx(expected, abs=1e-12)
    assert out[7] == pytest.approx(-0.04, abs=2e-3)
    assert out[8] == 0.0 and out[9] == 0.0


def test_hover_with_nonzero_mean_is_not_equilibrium():
    ens, rp = trained_params()
    ens = ensemble_update(ens, DragObservation(np.zeros(3), np.array([0.3, -0.2, 0.1])))
    rp = RgpParamVector.from_ensemble(ens)
    x = state([1, 0, 0, 0], [0, 0, 0])
    out = f_pred(x, P.hover_input, P, rp)
    mu0 = np.array([rgp_infer(d, 0.0)[0] for d in ens.dims])
    assert np.allclose(out[7:10], mu0, atol=1e-12)
    assert np.linalg.norm(out[7:10]) > 0


@given(quat_raw, vec3, vec3, unit_u)
def test_additivity(q, v, w, u):
    _, rp = trained_params()
    x = state(q, v, w)
    total = f_pred(x, u, P, rp)
    assert np.array_equal(total, f_phys(x, u, P) + f_rgp(x, rp))
    assert np.allclose(total - f_phys(x, u, P), f_rgp(x, rp), rtol=0, atol=4 * np.finfo(float).eps * max(1.0, np.max(np.abs(total))))


def test_jacobian_matches_finite_differences():
    _, rp = trained_params(1)
    rng = np.random.default_rng(3)
    for _ in range(15):
        x = np.concatenate([rng.normal(size=3), quat_normalize(rng.normal(size=4)), rng.uniform(-6, 6, 3), rng.normal(size=3)])
        u = rng.uniform(size=4)
        Fx, Fu = pred_jacobian(x[None], u[None], P, rp)
        Fx_fd = central_difference(lambda z: pred_batch(z[None], u[None], P, rp)[0], x)
        Fu_fd = central_difference(lambda z: pred_batch(x[None], z[None], P, rp)[0], u)
        scale = max(1.0, np.max(np.abs(Fx_fd)))
        assert np.max(np.abs(Fx[0] - Fx_fd)) / scale < 1e-4
        assert np.max(np.abs(Fu[0] - Fu_fd)) / max(1.0, np.max(np.abs(Fu_fd))) < 1e-4


@given(quat_raw, quat_raw, vec3)
def test_contribution_is_frame_consistent(q, r, v):
    _, rp = trained_params()
    q, r = quat_normalize(q), quat_normalize(r)
    x1 = state(q, v)
    # rotate attitude and world velocity together
    x2 = state(quat_mul(r, q), rotation_matrix(r) @ v)
    a1 = rotation_matrix(x1.q).T @ f_rgp(x1, rp)[7:10]
    a2 = rotation_matrix(x2.q).T @ f_rgp(x2, rp)[7:10]
    assert np.allclose(a1, a2, atol=1e-9)


def test_shape_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        RgpParamVector(np.zeros((3, 5)), np.zeros((3, 4)), np.zeros((3, 5)), (HYPER,) * 3)
    with pytest.raises(ConfigurationError):
        RgpParamVector(np.zeros((2, 5)), np.zeros((2, 5)), np.zeros((2, 5)), (HYPER,) * 3)


def test_non_finite_rejected():
    bad = np.zeros((3, 4))
    bad[0, 0] = np.nan
    with pytest.raises(ConfigurationError):
        RgpParamVector(np.tile(np.arange(4.0), (3, 1)), bad, np.zeros((3, 4)), (HYPER,) * 3)


def test_param_vector_is_immutable():
    _, rp = trained_params()
    with pytest.raises(ValueError):
        rp.mean[0, 0] = 1.0
