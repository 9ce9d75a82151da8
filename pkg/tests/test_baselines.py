import numpy as np
import pytest

from dincikf import baselines as bl
from dincikf import dynamics as dyn
from dincikf import liegroup as lg
from dincikf.filter import VirtualObservation

from conftest import random_tangent


def numeric_jacobian(fun, dim, h=1e-6):
    cols = []
    for k in range(dim):
        d = np.zeros(dim)
        d[k] = h
        cols.append((fun(d) - fun(-d)) / (2 * h))
    return np.array(cols).T


def stdekf_difference(x, y):
    """(dtheta, dp, dv) with ``R_y = R_x exp(dtheta)``."""
    return np.concatenate([lg.log_so3(x[:3, :3].T @ y[:3, :3]), y[:3, 3] - x[:3, 3], y[:3, 4] - x[:3, 4]])


def test_transition_matches_finite_differences(rng):
    spec = dyn.ImuNoiseSpec(0.0, 0.0, np.array([0.01, 0.0, -0.01]), np.array([0.1, 0.0, 0.0]))
    for _ in range(50):
        x = lg.exp(random_tangent(rng))
        u = dyn.ImuSample(rng.standard_normal(3), rng.standard_normal(3) * 3)
        dt = 0.01
        x1 = dyn.propagate_mean(x, u, spec, dt)
        num = numeric_jacobian(
            lambda d: stdekf_difference(x1, dyn.propagate_mean(bl.stdekf_inject(x, d), u, spec, dt)), 9
        )
        assert np.abs(num - bl.stdekf_transition(x, u, spec, dt)).max() < 1e-5


def test_residual_jacobian_matches_finite_differences(rng):
    for _ in range(50):
        x = lg.exp(random_tangent(rng))
        T = lg.exp(random_tangent(rng, 6, max_angle=1.0, scale=0.5)) @ lg.pose_of(x)
        obs = VirtualObservation(0, T, np.eye(6))
        y, H = bl.stdekf_residual_and_jacobian(x, obs)
        num = numeric_jacobian(lambda d: bl.stdekf_residual_and_jacobian(bl.stdekf_inject(x, d), obs)[0], 9)
        assert np.abs(num + H).max() < 1e-5


def test_process_noise_is_psd():
    Q = bl.stdekf_process_noise(dyn.ImuNoiseSpec(0.1, 0.2), 0.01)
    assert np.linalg.eigvalsh(Q).min() > -1e-18


def test_stdekf_error_convention(rng):
    x = lg.exp(random_tangent(rng))
    d = random_tangent(rng, scale=0.1)
    f = bl.StdEKF(0, x, np.eye(9), dyn.ImuNoiseSpec())
    np.testing.assert_allclose(f.error(bl.stdekf_inject(x, d)), d, atol=1e-12)


@pytest.mark.parametrize("cls", [bl.InEKFNaive, bl.StdEKF])
def test_exact_observation_pulls_towards_truth(cls, rng):
    x_true = lg.exp(random_tangent(rng))
    x0 = lg.exp(random_tangent(rng, scale=0.05, max_angle=0.05)) @ x_true
    f = cls(0, x0, np.eye(9) * 0.01, dyn.ImuNoiseSpec())
    obs = VirtualObservation(0, lg.pose_of(x_true), np.eye(6) * 1e-8, 1)
    out, _ = f.update([obs], [])
    e0 = np.linalg.norm(x0[:3, 3] - x_true[:3, 3])
    e1 = np.linalg.norm(out.x_hat[:3, 3] - x_true[:3, 3])
    assert e1 < 1e-2 * e0
    assert np.trace(out.p_hat) < np.trace(f.p_hat)


@pytest.mark.parametrize("step", [bl.inekf_naive_step, bl.stdekf_step])
@pytest.mark.parametrize("cls", [bl.InEKFNaive, bl.StdEKF])
def test_step_helpers(step, cls, rng):
    x = lg.exp(random_tangent(rng))
    f = cls(0, x, np.eye(9) * 0.01, dyn.ImuNoiseSpec(0.01, 0.1))
    u = dyn.ImuSample(np.zeros(3), -x[:3, :3].T @ dyn.GRAVITY)
    out = step(f, u, 0.01)
    assert out.x_hat.shape == (5, 5) and np.trace(out.p_hat) > np.trace(f.p_hat)
