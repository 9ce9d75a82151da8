import numpy as np
import pytest
from scipy import stats

from dincikf import analysis as an
from dincikf import dynamics as dyn
from dincikf import liegroup as lg
from dincikf.config import parse_config
from dincikf.errors import InvalidArgument
from dincikf.filter import J
from dincikf.simulator import run_scenario

from conftest import random_spd, random_tangent


def test_rmse_matches_direct_computation(rng):
    truth = np.array([[lg.exp(random_tangent(rng)) for _ in range(3)] for _ in range(4)])
    est = np.array([[lg.exp(random_tangent(rng, scale=0.1, max_angle=0.1)) @ x for x in row] for row in truth])
    out = an.rmse(est, truth)
    k = 2
    pos = np.sqrt(np.mean([np.sum((est[k, i, :3, 3] - truth[k, i, :3, 3]) ** 2) for i in range(3)]))
    rot = np.sqrt(np.mean([np.sum(lg.log_so3(est[k, i, :3, :3].T @ truth[k, i, :3, :3]) ** 2) for i in range(3)]))
    assert out.pos[k] == pytest.approx(pos) and out.rot[k] == pytest.approx(rot)


def test_rmse_rejects_mismatched_shapes():
    with pytest.raises(InvalidArgument):
        an.rmse(np.zeros((2, 1, 5, 5)), np.zeros((3, 1, 5, 5)))


def test_nees_of_whitened_error(rng):
    P = random_spd(rng, 9)
    L = np.linalg.cholesky(P)
    z = rng.standard_normal(9)
    assert an.nees(L @ z, P) == pytest.approx(z @ z)


def test_chi2_mean_bound():
    assert an.chi2_mean_bound(9, 200) == pytest.approx(stats.chi2.ppf(0.99, 1800) / 200)
    assert 9 < an.chi2_mean_bound(9, 200) < an.chi2_mean_bound(9, 20)


def test_psd_excess_sign(rng):
    B = random_spd(rng, 4)
    assert an.psd_excess(0.5 * B, B) == pytest.approx(-0.5)
    assert an.psd_excess(2.0 * B, B) == pytest.approx(1.0)


@pytest.mark.parametrize("rho", [-0.9, 0.0, 0.9])
@pytest.mark.parametrize("weights", ["fast", "trace_min"])
def test_ci_is_consistent_small_sample(rho, weights):
    p1, p2 = np.diag([1.0, 2.0, 0.5]), np.diag([0.7, 0.4, 1.5])
    chk = an.fusion_consistency(rho, p1, p2, n_samples=2000, n_boot=50, seed=1, weights=weights)
    assert chk.consistent


def test_kf_fusion_is_overconfident_under_correlation():
    p1, p2 = np.diag([1.0, 2.0, 0.5]), np.diag([0.7, 0.4, 1.5])
    assert not an.fusion_consistency(0.9, p1, p2, n_samples=2000, n_boot=50, seed=1, method="kf").consistent


def test_fusion_consistency_unknown_method():
    with pytest.raises(InvalidArgument):
        an.fusion_consistency(0.0, np.eye(2), np.eye(2), n_samples=10, n_boot=2, method="median")


def test_observability_rank_reference_cases():
    A = dyn.state_transition(0.01)
    assert an.observability_rank(A, J) == 9
    assert an.observability_rank(A, np.zeros((6, 9))) == 0
    # position only: rotation is seen through gravity except the yaw axis
    assert an.observability_rank(A, np.hstack([np.zeros((3, 3)), np.eye(3), np.zeros((3, 3))])) == 8


def test_relay_ranks_are_full():
    assert an.relay_ranks(dt=0.01, m_max=6) == [9] * 7


def test_relayed_output_zero_hops_is_j():
    np.testing.assert_array_equal(an.relayed_output(dyn.state_transition(0.02), 0), J)


def bound_case(rng, alpha=0.8):
    A = dyn.state_transition(0.02)
    Q = dyn.discretize_noise(dyn.ImuNoiseSpec(0.01, 0.1), lg.exp(random_tangent(rng)), 0.02)
    Q += 1e-10 * np.eye(9)
    R = np.diag([1e-4] * 3 + [2.5e-3] * 3)
    return A, Q, R, alpha


def test_aubs_converges_to_dare_solution(rng):
    A, Q, R, alpha = bound_case(rng)
    tr = an.aubs_recursion(J, R, alpha, A, Q, np.eye(9), steps=10, tol=1e-12, max_iter=3000)
    assert tr.converged and not tr.diverging
    ref = an.riccati_solution(A, J, R, alpha, Q)
    np.testing.assert_allclose(tr.pi_bar[-1], ref, rtol=1e-6, atol=1e-12)
    assert an.riccati_residual(ref, A, J, R, alpha, Q) < 1e-10


def test_aubs_diverges_without_observations(rng):
    A, Q, R, alpha = bound_case(rng)
    tr = an.aubs_recursion(np.zeros((6, 9)), np.eye(6), alpha, A, Q, np.eye(9), steps=10, max_iter=200)
    assert not tr.converged and tr.diverging


def test_aubs_runs_at_least_the_requested_steps(rng):
    A, Q, R, alpha = bound_case(rng)
    tr = an.aubs_recursion(J, R, alpha, A, Q, np.eye(9), steps=700, max_iter=500)
    assert tr.pi_hat.shape[0] >= 701


def test_dominating_noise_dominates(rng):
    qs = np.array([random_spd(rng, 5) for _ in range(7)])
    Qu = an.dominating_noise(qs)
    for q in qs:
        assert np.linalg.eigvalsh(Qu - q).min() > -1e-10


CHAIN = {
    "schema_version": 1,
    "n_agents": 3,
    "duration_s": 3.0,
    "seed": 2,
    "edges": [[0, 1], [1, 2]],
    "features": [{"position": [0, 0, 0]}],
    "initial": {"sigma_rot": 0.02, "sigma_pos": 0.1, "sigma_vel": 0.05},
    "agent_defaults": {
        "noise": {"sigma_g": 0.01, "sigma_a": 0.1},
        "trajectory": {"amplitude": [2, 2, 0.5], "frequency_hz": [0.1, 0.1, 0.2], "euler_rate": [0.2, 0, 0]},
        "visibility": {"mode": "never"},
    },
    "agents": [{"visibility": {"mode": "always"}}, {"trajectory": {"origin": [1, 1, 0]}}, {"trajectory": {"origin": [-1, 2, 0]}}],
}


@pytest.fixture(scope="module")
def chain_bound():
    cfg = parse_config(CHAIN)
    rec = run_scenario(cfg)
    summary = an.summarize_run(rec, cfg)
    tree = an.bound_tree(cfg, summary)
    return cfg, rec, summary, an.build_aubs(tree, summary)


def test_chain_bound_dominates_filter(chain_bound):
    cfg, rec, summary, aubs = chain_bound
    assert set(aubs) == {0, 1, 2}
    assert all(st.rank == 9 and st.trajectory.converged for st in aubs.values())
    assert an.verify_dominance(rec, aubs, start=summary.start).ok


def test_chain_constant_never_exceeds_direct_route(chain_bound):
    _, _, _, aubs = chain_bound
    for i in (1, 2):
        c = aubs[i].constants
        assert 0 < c["c_chain"] <= c["c_direct"] * (1 + 1e-12)
        assert 0 < c["gamma"] <= 1 and 0 < c["mu"] <= 1 + 1e-12


def test_dominance_check_catches_a_scaled_filter(chain_bound):
    _, rec, summary, aubs = chain_bound
    assert not an.verify_dominance(rec, aubs, start=summary.start, scale=10.0).ok


def test_checkpoint_before_start_is_a_violation(chain_bound):
    _, rec, summary, aubs = chain_bound
    if summary.start == 0:
        pytest.skip("bound starts at the first fusion")
    rep = an.verify_dominance(rec, aubs, start=summary.start, checkpoints=[rec.fusion_ticks[0]])
    assert not rep.ok


def test_summarize_needs_dincikf_run():
    cfg = parse_config({**CHAIN, "filter": "inekf_naive", "duration_s": 0.2})
    with pytest.raises(InvalidArgument):
        an.summarize_run(run_scenario(cfg), cfg)


def test_windowed_trace_spread_flat(chain_bound):
    _, rec, _, _ = chain_bound
    spread = an.windowed_trace_spread(rec, 1.5)
    assert spread.shape == (3,) and np.all(spread >= 0)
