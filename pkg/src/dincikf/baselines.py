"""Comparison filters driven by the same simulator.

``InEKFNaive``
    The invariant filter with neighbour observations fused by ordinary Kalman
    updates, i.e. pretending they are independent of the agent's own prior.

``StdEKF``
    Our reconstruction of a conventional error-state EKF: rotation error
    right-multiplicative about the estimate (``R = R_hat exp(dtheta)``),
    additive position and velocity errors, Jacobians of the global-frame
    kinematics and pose observations treated as independent rotation-vector
    and position noise.  It uses the same fusion schedule as ``InEKFNaive``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics as dyn
from . import liegroup as lg
from .errors import NearSingularLogarithm
from .filter import AgentFilter, FusionInfo, _sequential_kf, make_virtual_relative
from .fusion import spd_inv

INEKF_NAIVE = "inekf_naive"
STDEKF = "stdekf"
BASELINE_KINDS = (INEKF_NAIVE, STDEKF)


@dataclass(frozen=True)
class InEKFNaive(AgentFilter):
    kind = INEKF_NAIVE

    def fuse_neighbors(self, observations):
        x, p, _, rejected = _sequential_kf(self.x_hat, self.p_hat, observations, self.gate_angle)
        return replace(self, x_hat=x, p_hat=p), FusionInfo(rejected=rejected)


def inekf_naive_step(filt, imu, dt, neighbor_obs=(), env_obs=()):
    out, _ = filt.predict(imu, dt).update(neighbor_obs, env_obs)
    return out


# --- standard EKF -----------------------------------------------------------------


def stdekf_transition(x, u, spec, dt):
    """Jacobian of the discrete mean map w.r.t. the (dtheta, dp, dv) error."""
    R = x[:3, :3]
    w = (np.asarray(u.omega_m) - spec.bias_g) * dt
    f = np.asarray(u.accel_m) - spec.bias_a
    B = -R @ lg.skew(lg.exp_so3(0.5 * w) @ f)
    Phi = np.eye(9)
    Phi[0:3, 0:3] = lg.exp_so3(w).T
    Phi[3:6, 0:3] = 0.5 * dt * dt * B
    Phi[3:6, 6:9] = dt * np.eye(3)
    Phi[6:9, 0:3] = dt * B
    return Phi


def stdekf_process_noise(spec, dt):
    """Covariance of one IMU interval of sampled white noise."""
    Q = np.zeros((9, 9))
    qa = spec.sigma_a**2
    Q[0:3, 0:3] = spec.sigma_g**2 * dt * np.eye(3)
    Q[3:6, 3:6] = qa * dt**3 / 4.0 * np.eye(3)
    Q[3:6, 6:9] = Q[6:9, 3:6] = qa * dt**2 / 2.0 * np.eye(3)
    Q[6:9, 6:9] = qa * dt * np.eye(3)
    return Q


def stdekf_residual_and_jacobian(x, obs):
    """Innovation ``(log(R_hat^T R_m), p_m - p_hat)`` and ``H`` with y ~ H dx."""
    R = x[:3, :3]
    y_rot = lg.log_so3(R.T @ obs.pose[:3, :3])
    y = np.concatenate([y_rot, obs.pose[:3, 3] - x[:3, 3]])
    H = np.zeros((6, 9))
    H[0:3, 0:3] = lg.jl_inv_so3(y_rot)
    H[3:6, 3:6] = np.eye(3)
    return y, H


def stdekf_inject(x, dx):
    out = x.copy()
    out[:3, :3] = lg.normalize_rotation(x[:3, :3] @ lg.exp_so3(dx[0:3]))
    out[:3, 3] = x[:3, 3] + dx[3:6]
    out[:3, 4] = x[:3, 4] + dx[6:9]
    return out


@dataclass(frozen=True)
class StdEKF:
    agent_id: int
    x_hat: np.ndarray
    p_hat: np.ndarray
    noise: dyn.ImuNoiseSpec
    gravity: np.ndarray = field(default_factory=lambda: dyn.GRAVITY.copy())
    prior_trace: str = "full"  # unused; keeps the constructor interchangeable
    gate_angle: float = np.pi / 2
    ci_weights: str = "trace_min"  # unused

    kind = STDEKF

    @property
    def pose(self):
        return lg.pose_of(self.x_hat)

    def predict(self, imu, dt):
        Phi = stdekf_transition(self.x_hat, imu, self.noise, dt)
        Q = stdekf_process_noise(self.noise, dt)
        x = dyn.propagate_mean(self.x_hat, imu, self.noise, dt, self.gravity)
        return replace(self, x_hat=x, p_hat=dyn.propagate_covariance(self.p_hat, Phi, Q))

    def message(self, rel_meas, r_rel, receiver):
        return make_virtual_relative(self.pose, rel_meas, r_rel, self.p_hat, receiver, self.agent_id)

    def _kf(self, x, p, observations):
        rejected = 0
        for obs in observations:
            try:
                y, H = stdekf_residual_and_jacobian(x, obs)
            except NearSingularLogarithm:
                rejected += 1
                continue
            if np.sqrt(y[:3] @ y[:3]) >= self.gate_angle:
                rejected += 1
                continue
            S = H @ p @ H.T + obs.noise6
            K = p @ H.T @ spd_inv(S, "innovation covariance")
            x = stdekf_inject(x, K @ y)
            p = (np.eye(9) - K @ H) @ p
            p = 0.5 * (p + p.T)
        return x, p, rejected

    def update(self, neighbor_obs=(), env_obs=()):
        x, p, rej1 = self._kf(self.x_hat, self.p_hat, list(neighbor_obs))
        x, p, rej2 = self._kf(x, p, list(env_obs))
        return replace(self, x_hat=x, p_hat=p), FusionInfo(rejected=rej1 + rej2)

    def error(self, x_true):
        xh = self.x_hat
        return np.concatenate(
            [
                lg.log_so3(xh[:3, :3].T @ x_true[:3, :3]),
                x_true[:3, 3] - xh[:3, 3],
                x_true[:3, 4] - xh[:3, 4],
            ]
        )


def stdekf_step(filt, imu, dt, neighbor_obs=(), env_obs=()):
    out, _ = filt.predict(imu, dt).update(neighbor_obs, env_obs)
    return out


__all__ = [
    "InEKFNaive",
    "StdEKF",
    "inekf_naive_step",
    "stdekf_step",
    "stdekf_transition",
    "stdekf_residual_and_jacobian",
]
