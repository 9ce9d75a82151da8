import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from dincikf import fusion as fu
from dincikf.errors import InvalidArgument, NumericalSingularity

from conftest import random_spd


def slsqp_trace_min(infos):
    """Reference optimum of tr((sum a_i I_i)^-1) over the simplex."""
    k = len(infos)

    def f(a):
        m = np.tensordot(a, infos, axes=1)
        try:
            return np.trace(np.linalg.inv(m))
        except np.linalg.LinAlgError:
            return 1e30

    best = None
    for x0 in [np.full(k, 1.0 / k)] + [np.eye(k)[i] * 0.9 + 0.1 / k for i in range(k)]:
        res = minimize(
            f,
            x0,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * k,
            constraints=[{"type": "eq", "fun": lambda a: a.sum() - 1.0}],
            options={"ftol": 1e-15, "maxiter": 500},
        )
        if best is None or res.fun < best.fun:
            best = res
    return best


def test_spd_inv(rng):
    m = random_spd(rng, 6)
    np.testing.assert_allclose(fu.spd_inv(m) @ m, np.eye(6), atol=1e-10)


def test_spd_inv_fails_loudly():
    with pytest.raises(NumericalSingularity):
        fu.spd_inv(np.diag([1.0, 0.0, 1.0]))


def test_fast_weights_inverse_trace():
    np.testing.assert_allclose(fu.ci_weights_fast([1.0, 3.0]), [0.75, 0.25])


@pytest.mark.parametrize("bad", [[], [1.0, 0.0], [1.0, -2.0], [np.nan]])
def test_fast_weights_reject_bad_traces(bad):
    with pytest.raises(InvalidArgument):
        fu.ci_weights_fast(bad)


def test_single_estimate_returns_itself(rng):
    p = random_spd(rng, 4)
    est = fu.GaussianEstimate(rng.standard_normal(4), p)
    out = fu.ci_fuse([est], [1.0])
    np.testing.assert_allclose(out.mean, est.mean, atol=1e-12)
    np.testing.assert_allclose(out.cov, p, atol=1e-12)


def test_ci_of_identical_estimates_is_idempotent(rng):
    p = random_spd(rng, 4)
    est = fu.GaussianEstimate(rng.standard_normal(4), p)
    out = fu.ci_fuse([est, est], [0.3, 0.7])
    np.testing.assert_allclose(out.cov, p, atol=1e-10)
    np.testing.assert_allclose(out.mean, est.mean, atol=1e-10)


@pytest.mark.parametrize("w", [[0.5, 0.6], [-0.1, 1.1]])
def test_ci_rejects_non_convex_weights(w, rng):
    est = fu.GaussianEstimate(np.zeros(2), np.eye(2))
    with pytest.raises(InvalidArgument):
        fu.ci_fuse([est, est], w)


@given(a=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
def test_ci_covariance_dominates_any_weighted_sum(a, seed):
    rng = np.random.default_rng(seed)
    p1, p2 = random_spd(rng, 3), random_spd(rng, 3)
    out = fu.ci_fuse([fu.GaussianEstimate(np.zeros(3), p1), fu.GaussianEstimate(np.zeros(3), p2)], [a, 1 - a])
    # P_CI >= a P_CI P1^-1 P_CI + (1-a) ... is equivalent to information being a convex combination
    info = a * np.linalg.inv(p1) + (1 - a) * np.linalg.inv(p2)
    np.testing.assert_allclose(np.linalg.inv(out.cov), info, rtol=1e-8, atol=1e-10)


def test_kf_fuse_scalar():
    out = fu.kf_fuse_linear(fu.GaussianEstimate(np.array([0.0]), np.array([[1.0]])), [[1.0]], [2.0], [[1.0]])
    np.testing.assert_allclose(out.mean, [1.0])
    np.testing.assert_allclose(out.cov, [[0.5]])


@pytest.mark.parametrize("k", [2, 3, 4])
@pytest.mark.parametrize("case", range(6))
def test_trace_min_matches_slsqp(k, case):
    rng = np.random.default_rng(100 * k + case)
    infos = np.array([np.linalg.inv(random_spd(rng, 5, cond=rng.uniform(2, 200))) for _ in range(k)])
    a = fu.ci_weights_trace_min(infos)
    ref = slsqp_trace_min(infos)
    assert a.min() >= 0.0 and abs(a.sum() - 1.0) < 1e-12
    f = np.trace(np.linalg.inv(np.tensordot(a, infos, axes=1)))
    assert f <= ref.fun * (1 + 1e-9)


def test_trace_min_handles_rank_deficient_observations(rng):
    """Pose observations carry no velocity information (zero 3x3 block)."""
    infos = np.zeros((3, 9, 9))
    infos[0] = np.linalg.inv(random_spd(rng, 9))
    for k in (1, 2):
        infos[k, :6, :6] = np.linalg.inv(random_spd(rng, 6))
    a = fu.ci_weights_trace_min(infos)
    ref = slsqp_trace_min(infos)
    f = np.trace(np.linalg.inv(np.tensordot(a, infos, axes=1)))
    assert a[0] > 0
    assert f <= ref.fun * (1 + 1e-9)


def test_trace_min_vertex_when_neighbour_is_useless():
    i0 = np.eye(3)
    i1 = np.eye(3) * 1e-3
    np.testing.assert_allclose(fu.ci_weights_trace_min(np.array([i0, i1])), [1.0, 0.0])


def test_trace_min_is_never_worse_than_fast(rng):
    for _ in range(10):
        infos = np.array([np.linalg.inv(random_spd(rng, 4)) for _ in range(3)])
        traces = [np.trace(np.linalg.inv(m)) for m in infos]
        obj = lambda w: np.trace(np.linalg.inv(np.tensordot(w, infos, axes=1)))
        assert obj(fu.ci_weights("trace_min", infos, traces)) <= obj(fu.ci_weights("fast", infos, traces)) + 1e-12


def test_ci_weights_unknown_mode():
    with pytest.raises(InvalidArgument):
        fu.ci_weights("median", np.array([np.eye(2)]), [2.0])
