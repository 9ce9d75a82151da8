import numpy as np
import pytest

from dincikf import analysis as an
from dincikf import liegroup as lg
from dincikf.config import bundled_scenario, load_config, parse_config
from dincikf.simulator import (
    draw_streams,
    environment_measurement,
    gen_trajectory,
    relative_measurement,
    rng_for,
    run_scenario,
    trajectory_state,
)


def small_cfg(**over):
    raw = {
        "schema_version": 1,
        "n_agents": 2,
        "duration_s": 1.0,
        "seed": 4,
        "edges": [[0, 1], [1, 0]],
        "features": [{"position": [1, 2, 3]}],
        "agent_defaults": {
            "noise": {"sigma_g": 0.01, "sigma_a": 0.1},
            "trajectory": {"amplitude": [2, 2, 0.5], "frequency_hz": [0.1, 0.1, 0.2], "euler_rate": [0.2, 0, 0]},
        },
        "agents": [{"visibility": {"mode": "always"}}, {"visibility": {"mode": "never"}}],
    }
    raw.update(over)
    return parse_config(raw)


def test_rng_streams_are_keyed():
    a = rng_for(1, 0, 0).standard_normal(4)
    assert np.array_equal(a, rng_for(1, 0, 0).standard_normal(4))
    for other in [rng_for(2, 0, 0), rng_for(1, 1, 0), rng_for(1, 0, 1), rng_for(1, 0, 0, 1)]:
        assert not np.array_equal(a, other.standard_normal(4))


def test_trajectory_derivatives_are_consistent():
    cfg = small_cfg()
    traj = cfg.agents[0].trajectory
    t, h = 0.7, 1e-5
    R, p, v, a, w = trajectory_state(traj, t)
    Rp, pp, vp, _, _ = trajectory_state(traj, t + h)
    Rm, pm, vm, _, _ = trajectory_state(traj, t - h)
    np.testing.assert_allclose((pp - pm) / (2 * h), v, atol=1e-8)
    np.testing.assert_allclose((vp - vm) / (2 * h), a, atol=1e-8)
    np.testing.assert_allclose(lg.log_so3(R.T @ Rp) / h, w, atol=1e-5)


def test_ground_truth_shapes():
    cfg = small_cfg()
    truth = gen_trajectory([a.trajectory for a in cfg.agents], cfg.duration_s, cfg.imu_rate_hz, cfg.gravity)
    assert truth.states.shape == (101, 2, 5, 5)
    assert truth.omega.shape == truth.accel.shape == (100, 2, 3)


def test_noiseless_measurements_are_exact(rng):
    T_j, T_i = (lg.pose_of(lg.exp(rng.standard_normal(9))) for _ in range(2))
    z = relative_measurement(T_j, T_i, np.zeros(6))
    np.testing.assert_allclose(T_j @ z, T_i, atol=1e-12)
    z = environment_measurement(T_i, T_j, np.zeros(6))
    np.testing.assert_allclose(T_i @ z, T_j, atol=1e-12)


def test_streams_do_not_depend_on_filter():
    cfg = small_cfg()
    a, b = draw_streams(cfg), draw_streams(cfg.with_overrides(filter="stdekf"))
    for x, y in zip(a.imu, b.imu):
        assert np.array_equal(x, y)


def test_inject_noise_false_gives_zero_streams():
    s = draw_streams(small_cfg(inject_noise=False))
    assert all(np.abs(x).max() == 0.0 for x in s.imu)
    assert all(np.abs(x).max() == 0.0 for x in s.rel.values())


@pytest.mark.parametrize("kind", ["dincikf", "inekf_naive", "stdekf"])
def test_runs_are_deterministic(kind):
    cfg = small_cfg(filter=kind)
    assert run_scenario(cfg).digest() == run_scenario(cfg).digest()


def test_seed_changes_the_run():
    cfg = small_cfg()
    assert run_scenario(cfg).digest() != run_scenario(cfg.with_overrides(seed=5)).digest()


def test_record_layout():
    cfg = small_cfg()
    rec = run_scenario(cfg)
    assert rec.estimate.shape == (101, 2, 5, 5) and rec.cov.shape == (101, 2, 9, 9)
    assert list(rec.fusion_ticks) == list(range(2, 101, 2))
    assert rec.prior_cov.shape == (50, 2, 9, 9)
    assert len(rec.fusion_info) == 50
    assert list(rec.checkpoint_ticks(10)) == [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]


def test_unreachable_agent_warns():
    cfg = small_cfg(edges=[[1, 0]])
    with pytest.warns(UserWarning, match="not reachable"):
        run_scenario(cfg)


def test_zero_noise_run_tracks_truth():
    cfg = load_config(bundled_scenario("zero_noise.json")).with_overrides(duration_s=2.0)
    rec = run_scenario(cfg)
    rm = an.rmse_of(rec)
    assert rm.pos.max() < 1e-6 and rm.rot.max() < 1e-6
