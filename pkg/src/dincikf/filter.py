"""Per-agent distributed invariant CI-Kalman filter.

Each step runs prediction, then covariance intersection of the pose
observations received from neighbours (their estimates may be correlated with
ours), then an invariant Kalman update with environmental observations (which
are independent of everything else).

Both kinds of observation arrive as *virtual pose observations* of this agent:
a pose ``T_m ~ exp(-n) T_i`` with ``n ~ N(0, noise6)``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics as dyn
from . import liegroup as lg
from .errors import InvalidArgument, NearSingularLogarithm
from .fusion import ci_weights, spd_inv

# Selects the pose block (rotation, position) of the 9-dim error.
J = np.hstack([np.eye(6), np.zeros((6, 3))])
JT = J.T

FEATURE = "feature"

PRIOR_TRACE_FULL = "full"
PRIOR_TRACE_POSE = "pose_block"

WEIGHTS_TRACE_MIN = "trace_min"
WEIGHTS_FAST = "fast"


@dataclass(frozen=True)
class VirtualObservation:
    observed_agent: int
    pose: np.ndarray  # 4x4
    noise6: np.ndarray  # 6x6
    source: object = FEATURE  # neighbour id or FEATURE


@dataclass(frozen=True)
class FusionInfo:
    """What a fusion step did; consumed by the stability verifier."""

    prior_weight: float = 1.0
    neighbor_weights: dict = field(default_factory=dict)
    env_information: np.ndarray = None  # sum of H^T R^-1 H over accepted features
    rejected: int = 0


def make_virtual_relative(t_bar_j, rel_meas, r_ij, p_bar_j, observed_agent=-1, source=None):
    """Pose observation of agent i computed by neighbour j.

    ``rel_meas`` is j's measurement of i, ``T_j^-1 exp(n) T_i``; composing with
    j's prior pose gives a pose of i whose noise also carries j's uncertainty.
    """
    pose = np.asarray(t_bar_j) @ np.asarray(rel_meas)
    noise = np.asarray(r_ij) + J @ p_bar_j @ JT
    return VirtualObservation(observed_agent, pose, 0.5 * (noise + noise.T), source)


def make_virtual_env(t_f, env_meas, r_if, observed_agent=-1):
    """Pose observation of agent i from a known feature pose."""
    pose = np.asarray(t_f) @ lg.invert(env_meas)
    return VirtualObservation(observed_agent, pose, np.asarray(r_if), FEATURE)


def _rotation_angle(phi):
    return float(np.sqrt(phi[:3] @ phi[:3]))


def pose_residual(obs_pose, x):
    """``log(T_m T^-1)`` for the pose part of extended pose ``x``."""
    return lg.log_group(obs_pose @ lg.invert(lg.pose_of(x)))


def ci_update(
    x_bar,
    p_bar,
    observations,
    prior_trace=PRIOR_TRACE_FULL,
    gate_angle=np.pi / 2,
    weights=WEIGHTS_TRACE_MIN,
):
    """Covariance intersection of the prior with neighbour pose observations.

    ``weights="trace_min"`` picks the weights minimising ``tr(P_breve)``;
    ``"fast"`` uses the ``1/tr`` rule on ``prior_trace`` and ``tr(R_tilde)``.
    Returns ``(xi_breve, P_breve, X_breve, info)``.  Observations whose
    residual rotation reaches ``gate_angle`` are dropped and counted.
    """
    if not observations:
        return np.zeros(9), p_bar, x_bar, FusionInfo()
    residuals, kept = [], []
    rejected = 0
    for obs in observations:
        try:
            z = pose_residual(obs.pose, x_bar)
        except NearSingularLogarithm:
            rejected += 1
            continue
        if _rotation_angle(z) >= gate_angle:
            rejected += 1
            continue
        residuals.append(z)
        kept.append(obs)
    if not kept:
        return np.zeros(9), p_bar, x_bar, FusionInfo(rejected=rejected)

    if prior_trace == PRIOR_TRACE_FULL:
        t0 = np.trace(p_bar)
    elif prior_trace == PRIOR_TRACE_POSE:
        t0 = np.trace(p_bar[:6, :6])
    else:
        raise InvalidArgument(f"unknown prior trace mode {prior_trace!r}")
    prior_info = spd_inv(p_bar, "prior covariance")
    obs_info = [spd_inv(o.noise6, "virtual observation noise") for o in kept]
    stack = np.zeros((len(kept) + 1, 9, 9))
    stack[0] = prior_info
    for k, Ri in enumerate(obs_info, start=1):
        stack[k, :6, :6] = Ri
    alpha = ci_weights(weights, stack, [t0] + [np.trace(o.noise6) for o in kept])

    info = np.tensordot(alpha, stack, axes=1)
    vec = np.zeros(9)
    for a, Ri, z in zip(alpha[1:], obs_info, residuals):
        vec[:6] += a * (Ri @ z)
    P = spd_inv(info, "CI information matrix")
    P = 0.5 * (P + P.T)
    xi = P @ vec
    X = lg.exp_group(xi) @ x_bar
    weights = {obs.source: float(a) for a, obs in zip(alpha[1:], kept)}
    return xi, P, X, FusionInfo(float(alpha[0]), weights, None, rejected)


def env_residual_and_jacobian(x_breve, obs):
    """Residual ``r = log(T_m T^-1)`` and its Jacobian ``dexp_{-r}^-1 J``."""
    r = pose_residual(obs.pose, x_breve)
    H = lg.left_jacobian_inv(-r) @ J
    return r, H


def kf_update(p_breve, x_breve, r, H, r_if):
    """Invariant Kalman update; returns ``(X_hat, P_hat, K r)``."""
    S = H @ p_breve @ H.T + r_if
    K = p_breve @ H.T @ spd_inv(S, "innovation covariance")
    dx = K @ r
    P = (np.eye(9) - K @ H) @ p_breve
    return lg.exp_group(dx) @ x_breve, 0.5 * (P + P.T), dx


def _sequential_kf(x, p, observations, gate_angle):
    """Fuse pose observations one at a time, relinearising after each."""
    info = np.zeros((9, 9))
    rejected = 0
    for obs in observations:
        try:
            r, H = env_residual_and_jacobian(x, obs)
        except NearSingularLogarithm:
            rejected += 1
            continue
        if _rotation_angle(r) >= gate_angle:
            rejected += 1
            continue
        x, p, _ = kf_update(p, x, r, H, obs.noise6)
        info += H.T @ spd_inv(obs.noise6, "observation noise") @ H
    return x, p, info, rejected


@dataclass(frozen=True)
class AgentFilter:
    agent_id: int
    x_hat: np.ndarray  # 5x5 extended pose
    p_hat: np.ndarray  # 9x9
    noise: dyn.ImuNoiseSpec
    gravity: np.ndarray = field(default_factory=lambda: dyn.GRAVITY.copy())
    prior_trace: str = PRIOR_TRACE_FULL
    gate_angle: float = np.pi / 2
    ci_weights: str = WEIGHTS_TRACE_MIN

    kind = "dincikf"

    @property
    def pose(self):
        return lg.pose_of(self.x_hat)

    def predict(self, imu, dt):
        A = dyn.state_transition(dt, self.gravity)
        Q = dyn.discretize_noise(self.noise, self.x_hat, dt, self.gravity)
        x = dyn.propagate_mean(self.x_hat, imu, self.noise, dt, self.gravity)
        return replace(self, x_hat=x, p_hat=dyn.propagate_covariance(self.p_hat, A, Q))

    def message(self, rel_meas, r_rel, receiver):
        """Virtual observation of ``receiver`` built from this agent's prior."""
        return make_virtual_relative(self.pose, rel_meas, r_rel, self.p_hat, receiver, self.agent_id)

    def fuse_neighbors(self, observations):
        _, p, x, info = ci_update(
            self.x_hat, self.p_hat, observations, self.prior_trace, self.gate_angle, self.ci_weights
        )
        return replace(self, x_hat=x, p_hat=p), info

    def update(self, neighbor_obs=(), env_obs=()):
        """CI with neighbours, then KF with environmental observations."""
        filt, info = self.fuse_neighbors(list(neighbor_obs))
        x, p, env_info, rejected = _sequential_kf(filt.x_hat, filt.p_hat, list(env_obs), self.gate_angle)
        info = replace(info, env_information=env_info, rejected=info.rejected + rejected)
        return replace(filt, x_hat=x, p_hat=p), info

    def error(self, x_true):
        """Right-invariant error coordinates ``log(X X_hat^-1)``."""
        return lg.log_group(x_true @ lg.invert(self.x_hat))


def agent_step(filt, imu, dt, neighbor_obs=(), env_obs=()):
    """Prediction, CI update, KF update (in that order) for one agent."""
    out, _ = filt.predict(imu, dt).update(neighbor_obs, env_obs)
    return out
