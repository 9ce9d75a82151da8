"""Ground truth, sensor synthesis and the synchronous multi-agent loop.

Randomness comes from counter-based Philox generators; every stream is keyed
by ``(master seed, agent, stream kind, extra)`` through
:class:`numpy.random.SeedSequence`, so a stream's draws never depend on which
filter runs or in which order agents are stepped.  All noise is drawn up
front for the whole run.
"""

import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import liegroup as lg
from .baselines import InEKFNaive, StdEKF
from .dynamics import ImuNoiseSpec, ImuSample
from .filter import AgentFilter, make_virtual_env
from .network import AugmentedGraph, Graph, Message, MessageBus, check_spanning_tree_from_feature

log = logging.getLogger(__name__)

STREAM_IMU, STREAM_REL, STREAM_ENV, STREAM_INIT = 0, 1, 2, 3

FILTER_CLASSES = {"dincikf": AgentFilter, "inekf_naive": InEKFNaive, "stdekf": StdEKF}


def rng_for(seed, agent, stream, extra=0):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(agent), int(stream), int(extra)))
    return np.random.Generator(np.random.Philox(ss))


# --- ground truth -----------------------------------------------------------------


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def trajectory_state(traj, t):
    """Closed-form (R, p, v, a_world, omega_body) of a trajectory at time ``t``."""
    w = 2.0 * np.pi * traj.frequency_hz
    arg = w * t + traj.phase
    p = traj.origin + traj.velocity * t + traj.amplitude * np.sin(arg)
    v = traj.velocity + traj.amplitude * w * np.cos(arg)
    a = -traj.amplitude * w * w * np.sin(arg)

    we = 2.0 * np.pi * traj.euler_frequency_hz
    arge = we * t + traj.euler_phase
    yaw, pitch, roll = traj.euler0 + traj.euler_rate * t + traj.euler_amplitude * np.sin(arge)
    dyaw, dpitch, droll = traj.euler_rate + traj.euler_amplitude * we * np.cos(arge)
    R = _rot_z(yaw) @ _rot_y(pitch) @ _rot_x(roll)
    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    omega = np.array(
        [
            droll - dyaw * sp,
            dpitch * cr + dyaw * cp * sr,
            -dpitch * sr + dyaw * cp * cr,
        ]
    )
    return R, p, v, a, omega


@dataclass
class GroundTruth:
    times: np.ndarray  # (N+1,)
    states: np.ndarray  # (N+1, n, 5, 5)
    omega: np.ndarray  # (N, n, 3) exact body rate at interval midpoints
    accel: np.ndarray  # (N, n, 3) exact specific force at interval midpoints


def gen_trajectory(specs, duration, rate, gravity=np.array([0.0, 0.0, -9.81])):
    """Sample every agent's trajectory at ``rate`` Hz plus exact IMU signals."""
    n_ticks = int(round(duration * rate))
    dt = 1.0 / rate
    times = np.arange(n_ticks + 1) * dt
    n = len(specs)
    states = np.zeros((n_ticks + 1, n, 5, 5))
    omega = np.zeros((n_ticks, n, 3))
    accel = np.zeros((n_ticks, n, 3))
    for i, traj in enumerate(specs):
        for k, t in enumerate(times):
            R, p, v, _, _ = trajectory_state(traj, t)
            states[k, i] = lg.make_extended_pose(R, p, v)
            if k < n_ticks:
                Rm, _, _, am, wm = trajectory_state(traj, t + 0.5 * dt)
                omega[k, i] = wm
                accel[k, i] = Rm.T @ (am - gravity)
    return GroundTruth(times, states, omega, accel)


# --- sensors ----------------------------------------------------------------------


@dataclass
class SensorStreams:
    """Pre-drawn noise for one run.  Shapes: imu (N, 6); rel/env (M, 6)."""

    imu: list
    rel: dict  # (sender, receiver) -> array
    env: dict  # (agent, feature) -> array


def draw_streams(cfg):
    N = cfg.n_ticks
    M = N // cfg.ratio + 1
    dt = cfg.dt
    imu, rel, env = [], {}, {}
    for i, a in enumerate(cfg.agents):
        z = rng_for(cfg.seed, i, STREAM_IMU).standard_normal((N, 6))
        scale = np.array([a.noise.sigma_g] * 3 + [a.noise.sigma_a] * 3) / np.sqrt(dt)
        imu.append(z * scale if cfg.inject_noise else np.zeros((N, 6)))
    for j, i in cfg.edges:
        std = np.sqrt(np.diag(cfg.agents[j].noise.r_rel))
        z = rng_for(cfg.seed, j, STREAM_REL, i).standard_normal((M, 6))
        rel[(j, i)] = z * std if cfg.inject_noise else np.zeros((M, 6))
    for i, a in enumerate(cfg.agents):
        std = np.sqrt(np.diag(a.noise.r_env))
        for f in range(len(cfg.features)):
            z = rng_for(cfg.seed, i, STREAM_ENV, f).standard_normal((M, 6))
            env[(i, f)] = z * std if cfg.inject_noise else np.zeros((M, 6))
    return SensorStreams(imu, rel, env)


def imu_sample(truth, streams, cfg, k, i):
    """Noisy IMU sample for interval ``k`` (``[t_k, t_k+1]``) of agent ``i``."""
    a = cfg.agents[i]
    n = streams.imu[i][k]
    return ImuSample(
        truth.omega[k, i] + a.noise.bias_g + n[:3],
        truth.accel[k, i] + a.noise.bias_a + n[3:],
        truth.times[k],
    )


def relative_measurement(T_j, T_i, noise6):
    """``T_j^-1 exp(n) T_i``: agent j's measurement of agent i."""
    return lg.invert(T_j) @ lg.exp_group(noise6) @ T_i


def environment_measurement(T_i, T_f, noise6):
    """``T_i^-1 exp(n) T_f``: agent i's measurement of a feature."""
    return lg.invert(T_i) @ lg.exp_group(noise6) @ T_f


def visible_features(cfg, i, meas_index):
    vis = cfg.agents[i].visibility
    if not cfg.features or not vis.visible(meas_index):
        return []
    return list(vis.features) if vis.features is not None else list(range(len(cfg.features)))


def synth_measurements(truth, streams, cfg, tick):
    """Sensor outputs available at IMU tick ``tick`` (1-based end of interval).

    Returns ``(imu, rel, env)``: the IMU samples that end at ``tick`` for all
    agents, ``{(j, i): T}`` relative measurements and ``{(i, f): T}``
    environmental measurements (both empty off measurement ticks).
    """
    imu = [imu_sample(truth, streams, cfg, tick - 1, i) for i in range(cfg.n_agents)]
    rel, env = {}, {}
    if tick % cfg.ratio == 0:
        m = tick // cfg.ratio
        poses = [lg.pose_of(truth.states[tick, i]) for i in range(cfg.n_agents)]
        for j, i in cfg.edges:
            rel[(j, i)] = relative_measurement(poses[j], poses[i], streams.rel[(j, i)][m])
        for i in range(cfg.n_agents):
            for f in visible_features(cfg, i, m):
                env[(i, f)] = environment_measurement(poses[i], cfg.features[f], streams.env[(i, f)][m])
    return imu, rel, env


# --- run loop ---------------------------------------------------------------------


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    filter: str
    times: np.ndarray  # (N+1,)
    truth: np.ndarray  # (N+1, n, 5, 5)
    estimate: np.ndarray  # (N+1, n, 5, 5)
    cov: np.ndarray  # (N+1, n, 9, 9) covariance after each tick
    xi: np.ndarray  # (N+1, n, 9) filter-specific error coordinates
    fusion_ticks: np.ndarray  # (M,)
    prior_cov: np.ndarray  # (M, n, 9, 9) covariance before fusion
    fusion_info: list = field(default_factory=list)  # [M][n] FusionInfo
    rejected: int = 0

    @property
    def n_agents(self):
        return self.truth.shape[1]

    def err_rot(self):
        Rt = self.truth[:, :, :3, :3]
        Re = self.estimate[:, :, :3, :3]
        rel = np.einsum("knji,knjl->knil", Re, Rt)
        out = np.zeros(rel.shape[:2])
        for k in range(rel.shape[0]):
            for i in range(rel.shape[1]):
                out[k, i] = np.linalg.norm(lg.log_so3(rel[k, i]))
        return out

    def err_pos(self):
        return np.linalg.norm(self.estimate[:, :, :3, 3] - self.truth[:, :, :3, 3], axis=-1)

    def trace(self):
        return np.trace(self.cov, axis1=-2, axis2=-1)

    def checkpoint_ticks(self, count):
        """``count`` evenly spaced fusion ticks ending at the last one."""
        ft = self.fusion_ticks
        idx = np.linspace(len(ft) / count, len(ft), count).round().astype(int) - 1
        return ft[idx]

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.times, self.truth, self.estimate, self.cov):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def initial_estimates(cfg, truth):
    """Truth perturbed as ``X_hat = exp(-eps) X`` with ``eps ~ N(0, P0)``."""
    out = []
    for i in range(cfg.n_agents):
        X = truth.states[0, i]
        if cfg.perturb_init:
            eps = rng_for(cfg.seed, i, STREAM_INIT).standard_normal(9) * cfg.init_sigma
            X = lg.exp_group(-eps) @ X
        out.append(X)
    return out


def make_filters(cfg, truth, kind=None):
    cls = FILTER_CLASSES[kind or cfg.filter]
    filters = []
    for i, (a, x0) in enumerate(zip(cfg.agents, initial_estimates(cfg, truth))):
        spec = ImuNoiseSpec(a.noise.sigma_g, a.noise.sigma_a, a.noise.bias_g, a.noise.bias_a)
        filters.append(
            cls(
                i, x0, cfg.p0.copy(), spec, cfg.gravity.copy(), cfg.ci_prior_trace, cfg.gate_angle_rad, cfg.ci_weights
            )
        )
    return filters


def run_scenario(cfg, truth=None, streams=None, kind=None):
    """Run one filter over a scenario; ``truth``/``streams`` may be shared."""
    kind = kind or cfg.filter
    if kind == "dincikf":
        ag = AugmentedGraph(Graph(cfg.n_agents, cfg.edges), cfg.feature_agents())
        missing = check_spanning_tree_from_feature(ag)
        if missing:
            warnings.warn(
                f"agents {sorted(missing)} are not reachable from any feature; "
                "their covariance is not guaranteed to stay bounded",
                stacklevel=2,
            )
    if truth is None:
        truth = gen_trajectory([a.trajectory for a in cfg.agents], cfg.duration_s, cfg.imu_rate_hz, cfg.gravity)
    if streams is None:
        streams = draw_streams(cfg)
    n, N, dt = cfg.n_agents, cfg.n_ticks, cfg.dt
    filters = make_filters(cfg, truth, kind)
    r_env = [a.noise.r_env for a in cfg.agents]
    r_rel = [a.noise.r_rel for a in cfg.agents]

    est = np.zeros((N + 1, n, 5, 5))
    cov = np.zeros((N + 1, n, 9, 9))
    xi = np.zeros((N + 1, n, 9))
    fusion_ticks, prior_cov, infos = [], [], []
    rejected = 0

    def record(k):
        for i, f in enumerate(filters):
            est[k, i] = f.x_hat
            cov[k, i] = f.p_hat
            xi[k, i] = f.error(truth.states[k, i])

    record(0)
    bus = MessageBus()
    for k in range(1, N + 1):
        imu, rel, env = synth_measurements(truth, streams, cfg, k)
        filters = [f.predict(u, dt) for f, u in zip(filters, imu)]
        if k % cfg.ratio == 0:
            prior_cov.append(np.array([f.p_hat for f in filters]))
            for (j, i), meas in rel.items():
                bus.post(Message(j, i, filters[j].message(meas, r_rel[j], i), k))
            tick_info = []
            updated = []
            for i, f in enumerate(filters):
                nbr = [m.payload for m in bus.deliver(i, k)]
                env_obs = [
                    make_virtual_env(cfg.features[fi], meas, r_env[i], i)
                    for (a, fi), meas in env.items()
                    if a == i
                ]
                f, info = f.update(nbr, env_obs)
                rejected += info.rejected
                tick_info.append(info)
                updated.append(f)
            filters = updated
            fusion_ticks.append(k)
            infos.append(tick_info)
        record(k)
    if rejected:
        log.warning("%d observations rejected by the residual gate", rejected)
    return RunRecord(
        config_hash=cfg.hash(),
        seed=cfg.seed,
        filter=kind,
        times=truth.times,
        truth=truth.states,
        estimate=est,
        cov=cov,
        xi=xi,
        fusion_ticks=np.array(fusion_ticks, dtype=int),
        prior_cov=np.array(prior_cov).reshape(-1, n, 9, 9),
        fusion_info=infos,
        rejected=rejected,
    )
