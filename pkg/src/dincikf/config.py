"""Scenario configuration: JSON schema, defaults and validation.

A scenario file is a JSON object.  Top-level keys::

    schema_version       required, must be 1
    name                 free text
    n_agents             number of agents
    edges                list of [sender, receiver]; the sender measures the
                         receiver's relative pose and transmits it
    features             list of {"position": [x,y,z], "rotation_vector": [..]}
    imu_rate_hz          default 100
    measurement_rate_hz  default 50, must divide imu_rate_hz
    duration_s           > 0
    seed                 master seed (non-negative integer)
    filter               "dincikf" | "inekf_naive" | "stdekf"
    gravity              default [0, 0, -9.81]
    inject_noise         default true; false gives noiseless sensors while the
                         filters keep their configured covariances
    ci_weights           "trace_min" (default) | "fast"
    ci_prior_trace       "full" | "pose_block" (prior trace used by "fast" weights)
    gate_angle_rad       residual rotation gate, default pi/2
    checkpoints          number of evenly spaced evaluation ticks, default 10
    initial              {"sigma_rot", "sigma_pos", "sigma_vel", "perturb"}
    agent_defaults       {"trajectory": {...}, "noise": {...}, "visibility": {...}}
    agents               list of n_agents objects with optional "trajectory",
                         "noise", "visibility" overriding agent_defaults

Per-agent ``noise``: ``sigma_g``, ``sigma_a`` (white-noise densities),
``bias_g``, ``bias_a`` (known constants), ``rel_sigma_rot``,
``rel_sigma_pos`` (relative-pose sensor std, used when this agent measures a
neighbour), ``env_sigma_rot``, ``env_sigma_pos`` (feature sensor std).

Per-agent ``trajectory`` (all entries optional, 3-vectors or scalars)::

    p(t)   = origin + velocity t + amplitude * sin(2 pi frequency_hz t + phase)
    eul(t) = euler0 + euler_rate t
             + euler_amplitude * sin(2 pi euler_frequency_hz t + euler_phase)

with Euler angles (yaw, pitch, roll) and ``R = Rz(yaw) Ry(pitch) Rx(roll)``.

Per-agent ``visibility``: ``{"mode": "always" | "never" | "every_k_ticks",
"k": int, "phase": int, "features": [indices]}``; ``every_k_ticks`` counts
measurement ticks.
"""

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1
FILTERS = ("dincikf", "inekf_naive", "stdekf")

_TOP_KEYS = {
    "schema_version", "name", "n_agents", "edges", "features", "imu_rate_hz",
    "measurement_rate_hz", "duration_s", "seed", "filter", "gravity", "inject_noise",
    "ci_weights", "ci_prior_trace", "gate_angle_rad", "checkpoints", "initial", "agent_defaults", "agents",
}
_TRAJ_KEYS = {
    "origin", "velocity", "amplitude", "frequency_hz", "phase", "euler0", "euler_rate",
    "euler_amplitude", "euler_frequency_hz", "euler_phase",
}
_NOISE_DEFAULTS = {
    "sigma_g": 0.0, "sigma_a": 0.0, "bias_g": [0.0, 0.0, 0.0], "bias_a": [0.0, 0.0, 0.0],
    "rel_sigma_rot": 0.01, "rel_sigma_pos": 0.05, "env_sigma_rot": 0.01, "env_sigma_pos": 0.05,
}
_INITIAL_DEFAULTS = {"sigma_rot": 0.01, "sigma_pos": 0.1, "sigma_vel": 0.05, "perturb": True}
_VIS_KEYS = {"mode", "k", "phase", "features"}


@dataclass(frozen=True)
class Trajectory:
    origin: np.ndarray
    velocity: np.ndarray
    amplitude: np.ndarray
    frequency_hz: np.ndarray
    phase: np.ndarray
    euler0: np.ndarray
    euler_rate: np.ndarray
    euler_amplitude: np.ndarray
    euler_frequency_hz: np.ndarray
    euler_phase: np.ndarray


@dataclass(frozen=True)
class AgentNoise:
    sigma_g: float
    sigma_a: float
    bias_g: np.ndarray
    bias_a: np.ndarray
    rel_sigma_rot: float
    rel_sigma_pos: float
    env_sigma_rot: float
    env_sigma_pos: float

    @property
    def r_rel(self):
        return np.diag([self.rel_sigma_rot**2] * 3 + [self.rel_sigma_pos**2] * 3)

    @property
    def r_env(self):
        return np.diag([self.env_sigma_rot**2] * 3 + [self.env_sigma_pos**2] * 3)


@dataclass(frozen=True)
class Visibility:
    mode: str  # always | never | every_k_ticks
    k: int = 1
    phase: int = 0
    features: tuple = None  # None: all features

    def visible(self, meas_index):
        if self.mode == "always":
            return True
        if self.mode == "never":
            return False
        return meas_index % self.k == self.phase


@dataclass(frozen=True)
class AgentSpec:
    trajectory: Trajectory
    noise: AgentNoise
    visibility: Visibility


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    n_agents: int
    edges: tuple
    features: tuple  # of 4x4 poses
    imu_rate_hz: float
    measurement_rate_hz: float
    duration_s: float
    seed: int
    filter: str
    gravity: np.ndarray
    inject_noise: bool
    ci_weights: str
    ci_prior_trace: str
    gate_angle_rad: float
    checkpoints: int
    init_sigma: np.ndarray  # 9 stds (rot, pos, vel)
    perturb_init: bool
    agents: tuple
    raw: dict

    @property
    def dt(self):
        return 1.0 / self.imu_rate_hz

    @property
    def n_ticks(self):
        return int(round(self.duration_s * self.imu_rate_hz))

    @property
    def ratio(self):
        return int(round(self.imu_rate_hz / self.measurement_rate_hz))

    @property
    def p0(self):
        return np.diag(self.init_sigma**2)

    def feature_agents(self, persistent_only=False):
        """Agents with a feature edge (only ``always`` ones if requested)."""
        out = set()
        for i, a in enumerate(self.agents):
            if a.visibility.mode == "never" or not self.features:
                continue
            if persistent_only and a.visibility.mode != "always":
                continue
            out.add(i)
        return out

    def hash(self):
        return config_hash(self.raw)

    def with_overrides(self, seed=None, filter=None, **raw_updates):
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if filter is not None:
            raw["filter"] = filter
        raw.update(raw_updates)
        return parse_config(raw)


def config_hash(raw):
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _vec3(value, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.full(3, float(value))
    if isinstance(value, list) and len(value) == 3 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        arr = np.array(value, dtype=float)
        if np.all(np.isfinite(arr)):
            return arr
    raise ConfigError(path, f"expected a number or a list of 3 numbers, got {value!r}")


def _number(value, path, minimum=None, strict=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
        raise ConfigError(path, f"expected a finite number, got {value!r}")
    if minimum is not None and (value <= minimum if strict else value < minimum):
        raise ConfigError(path, f"must be {'>' if strict else '>='} {minimum}, got {value}")
    return float(value)


def _integer(value, path, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return value


def _object(value, path, allowed):
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    return value


def _parse_trajectory(d, path):
    _object(d, path, _TRAJ_KEYS)
    zero = np.zeros(3)
    get = {k: (_vec3(d[k], f"{path}.{k}") if k in d else zero.copy()) for k in _TRAJ_KEYS}
    return Trajectory(**get)


def _parse_noise(d, path):
    _object(d, path, set(_NOISE_DEFAULTS))
    merged = {**_NOISE_DEFAULTS, **d}
    vals = {}
    for k, v in merged.items():
        if k.startswith("bias"):
            vals[k] = _vec3(v, f"{path}.{k}")
        else:
            vals[k] = _number(v, f"{path}.{k}", minimum=0.0)
    return AgentNoise(**vals)


def _parse_visibility(d, path, n_features):
    _object(d, path, _VIS_KEYS)
    mode = d.get("mode", "always")
    if mode not in ("always", "never", "every_k_ticks"):
        raise ConfigError(f"{path}.mode", f"unknown visibility mode {mode!r}")
    k = _integer(d.get("k", 1), f"{path}.k", minimum=1)
    phase = _integer(d.get("phase", 0), f"{path}.phase", minimum=0)
    if mode == "every_k_ticks" and phase >= k:
        raise ConfigError(f"{path}.phase", "phase must be < k")
    feats = d.get("features")
    if feats is not None:
        if not isinstance(feats, list):
            raise ConfigError(f"{path}.features", "expected a list of feature indices")
        for n, f in enumerate(feats):
            _integer(f, f"{path}.features[{n}]", minimum=0)
            if f >= n_features:
                raise ConfigError(f"{path}.features[{n}]", f"no feature with index {f}")
        feats = tuple(feats)
    return Visibility(mode, k, phase, feats)


def _merge(base, over):
    out = copy.deepcopy(base)
    out.update(over)
    return out


def parse_config(raw):
    """Validate a JSON-compatible tree and build a :class:`ScenarioConfig`."""
    from . import liegroup as lg

    _object(raw, "", _TOP_KEYS)
    if "schema_version" not in raw:
        raise ConfigError("schema_version", "required field missing")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {raw['schema_version']!r}")
    for key in ("n_agents", "duration_s", "agents"):
        if key not in raw:
            raise ConfigError(key, "required field missing")
    n = _integer(raw["n_agents"], "n_agents", minimum=1)

    edges = raw.get("edges", [])
    if not isinstance(edges, list):
        raise ConfigError("edges", "expected a list of [sender, receiver] pairs")
    parsed_edges = []
    for k, e in enumerate(edges):
        if not (isinstance(e, list) and len(e) == 2):
            raise ConfigError(f"edges[{k}]", "expected [sender, receiver]")
        j = _integer(e[0], f"edges[{k}][0]", minimum=0)
        i = _integer(e[1], f"edges[{k}][1]", minimum=0)
        if j >= n or i >= n:
            raise ConfigError(f"edges[{k}]", f"agent id out of range 0..{n - 1}")
        if i == j:
            raise ConfigError(f"edges[{k}]", "self-loop")
        parsed_edges.append((j, i))

    feats = raw.get("features", [])
    if not isinstance(feats, list):
        raise ConfigError("features", "expected a list")
    poses = []
    for k, f in enumerate(feats):
        _object(f, f"features[{k}]", {"position", "rotation_vector"})
        p = _vec3(f.get("position", 0.0), f"features[{k}].position")
        w = _vec3(f.get("rotation_vector", 0.0), f"features[{k}].rotation_vector")
        poses.append(lg.make_pose(lg.exp_so3(w), p))

    imu = _number(raw.get("imu_rate_hz", 100.0), "imu_rate_hz", minimum=0.0, strict=True)
    meas = _number(raw.get("measurement_rate_hz", 50.0), "measurement_rate_hz", minimum=0.0, strict=True)
    ratio = imu / meas
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError("measurement_rate_hz", "must divide imu_rate_hz")
    duration = _number(raw["duration_s"], "duration_s", minimum=0.0, strict=True)
    seed = _integer(raw.get("seed", 0), "seed", minimum=0)
    filt = raw.get("filter", "dincikf")
    if filt not in FILTERS:
        raise ConfigError("filter", f"unknown filter {filt!r}; choose from {FILTERS}")
    gravity = _vec3(raw.get("gravity", [0.0, 0.0, -9.81]), "gravity")
    inject = raw.get("inject_noise", True)
    if not isinstance(inject, bool):
        raise ConfigError("inject_noise", "expected true or false")
    weight_mode = raw.get("ci_weights", "trace_min")
    if weight_mode not in ("trace_min", "fast"):
        raise ConfigError("ci_weights", f"unknown mode {weight_mode!r}")
    trace_mode = raw.get("ci_prior_trace", "full")
    if trace_mode not in ("full", "pose_block"):
        raise ConfigError("ci_prior_trace", f"unknown mode {trace_mode!r}")
    gate = _number(raw.get("gate_angle_rad", math.pi / 2), "gate_angle_rad", minimum=0.0, strict=True)
    checkpoints = _integer(raw.get("checkpoints", 10), "checkpoints", minimum=1)

    init = _object(raw.get("initial", {}), "initial", set(_INITIAL_DEFAULTS))
    init = {**_INITIAL_DEFAULTS, **init}
    sig = [
        _number(init["sigma_rot"], "initial.sigma_rot", minimum=0.0, strict=True),
        _number(init["sigma_pos"], "initial.sigma_pos", minimum=0.0, strict=True),
        _number(init["sigma_vel"], "initial.sigma_vel", minimum=0.0, strict=True),
    ]
    if not isinstance(init["perturb"], bool):
        raise ConfigError("initial.perturb", "expected true or false")
    init_sigma = np.repeat(np.array(sig), 3)

    defaults = _object(raw.get("agent_defaults", {}), "agent_defaults", {"trajectory", "noise", "visibility"})
    agents_raw = raw["agents"]
    if not isinstance(agents_raw, list) or len(agents_raw) != n:
        raise ConfigError("agents", f"expected a list of {n} agent objects")
    agents = []
    for i, a in enumerate(agents_raw):
        path = f"agents[{i}]"
        _object(a, path, {"trajectory", "noise", "visibility"})
        traj = _parse_trajectory(_merge(defaults.get("trajectory", {}), a.get("trajectory", {})), f"{path}.trajectory")
        noise = _parse_noise(_merge(defaults.get("noise", {}), a.get("noise", {})), f"{path}.noise")
        vis = _parse_visibility(
            _merge(defaults.get("visibility", {}), a.get("visibility", {})), f"{path}.visibility", len(poses)
        )
        agents.append(AgentSpec(traj, noise, vis))

    return ScenarioConfig(
        name=str(raw.get("name", "")),
        n_agents=n,
        edges=tuple(sorted(set(parsed_edges))),
        features=tuple(poses),
        imu_rate_hz=imu,
        measurement_rate_hz=meas,
        duration_s=duration,
        seed=seed,
        filter=filt,
        gravity=gravity,
        inject_noise=inject,
        ci_weights=weight_mode,
        ci_prior_trace=trace_mode,
        gate_angle_rad=gate,
        checkpoints=checkpoints,
        init_sigma=init_sigma,
        perturb_init=init["perturb"],
        agents=tuple(agents),
        raw=copy.deepcopy(raw),
    )


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "scenario file not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    return parse_config(raw)


def bundled_scenario(name):
    """Path of a scenario shipped with the package (``scenario1.json`` etc.)."""
    return Path(__file__).parent / "scenarios" / name
