"""Metrics, observability checks and the covariance upper-bound verifier.

The upper-bound system (one per agent, built along a spanning tree rooted at
the feature node) is a time-invariant Kalman-type recursion

    Pi_bar(k) = A Pi_hat(k-1) A^T + Q_ub
    Pi_hat(k)^-1 = alpha Pi_bar(k)^-1 + H^T R^-1 H

whose covariance dominates the filter's when its constants are chosen from a
finished run: ``alpha`` is the smallest prior weight the agent used, ``Q_ub``
dominates every accumulated process-noise matrix between fusions, and
``(H, R)`` summarise the information the agent provably received (directly
from features for tree roots, through the parent's virtual observation
otherwise).  ``A`` is the transition over one fusion interval.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import stats

from . import dynamics as dyn
from . import liegroup as lg
from .errors import InvalidArgument, NumericalSingularity
from .filter import J, JT
from .fusion import GaussianEstimate, ci_fuse, ci_weights_fast, ci_weights_trace_min, kf_fuse_linear, spd_inv
from .network import FEATURE_NODE, AugmentedGraph, Graph, bfs_layers

# --- errors and consistency -------------------------------------------------------


@dataclass(frozen=True)
class RmseSeries:
    rot: np.ndarray
    pos: np.ndarray


def rmse(estimates, truths):
    """Per-tick RMSE over agents; inputs are ``(N, n, 5, 5)`` (or ``4x4``) arrays."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.shape != tru.shape or est.ndim != 4:
        raise InvalidArgument(f"shape mismatch {est.shape} vs {tru.shape}")
    n = est.shape[1]
    rel = np.einsum("knji,knjl->knil", est[:, :, :3, :3], tru[:, :, :3, :3])
    rot_sq = np.array([[np.sum(lg.log_so3(r) ** 2) for r in row] for row in rel]).reshape(est.shape[:2])
    pos_sq = np.sum((est[:, :, :3, 3] - tru[:, :, :3, 3]) ** 2, axis=-1)
    return RmseSeries(np.sqrt(rot_sq.sum(axis=1) / n), np.sqrt(pos_sq.sum(axis=1) / n))


def rmse_of(record):
    return rmse(record.estimate, record.truth)


def nees(xi, p):
    """``xi^T P^-1 xi``."""
    xi = np.asarray(xi, dtype=float)
    return float(xi @ spd_inv(p, "covariance") @ xi)


def nees_series(record, ticks):
    """NEES per agent at the given ticks, shape ``(len(ticks), n)``."""
    return np.array([[nees(record.xi[k, i], record.cov[k, i]) for i in range(record.n_agents)] for k in ticks])


def chi2_mean_bound(dof, n_runs, confidence=0.99):
    """Upper limit for the mean of ``n_runs`` chi-square(dof) draws."""
    return float(stats.chi2.ppf(confidence, dof * n_runs) / n_runs)


def psd_excess(sample_cov, bound_cov):
    """Largest eigenvalue of ``B^-1/2 (C - B) B^-1/2``; <= 0 means ``C <= B``."""
    w, v = np.linalg.eigh(bound_cov)
    s = v @ np.diag(w**-0.5) @ v.T
    return float(np.linalg.eigvalsh(s @ (sample_cov - bound_cov) @ s).max())


@dataclass(frozen=True)
class FusionCheck:
    rho: float
    method: str
    excess: float  # psd_excess of the sample error covariance over the claimed one
    slack: float  # bootstrap 99% half-width of ``excess``
    consistent: bool


def correlated_pair(rng, p1, p2, rho, size):
    """Errors of two estimates with ``cov(e1, e2) = rho L1 L2^T``."""
    l1, l2 = np.linalg.cholesky(p1), np.linalg.cholesky(p2)
    n = p1.shape[0]
    z1 = rng.standard_normal((size, n))
    z2 = rho * z1 + np.sqrt(1.0 - rho * rho) * rng.standard_normal((size, n))
    return z1 @ l1.T, z2 @ l2.T


def fusion_consistency(rho, p1, p2, n_samples=10_000, n_boot=200, seed=0, method="ci", weights="fast"):
    """Monte-Carlo check that a two-estimate fusion's covariance bounds its error."""
    rng = np.random.default_rng(seed)
    e1, e2 = correlated_pair(rng, p1, p2, rho, n_samples)
    n = p1.shape[0]
    if method == "ci":
        if weights == "fast":
            w = ci_weights_fast([np.trace(p1), np.trace(p2)])
        else:
            w = ci_weights_trace_min(np.array([spd_inv(p1), spd_inv(p2)]))
        i1, i2 = w[0] * spd_inv(p1), w[1] * spd_inv(p2)
        P = ci_fuse([GaussianEstimate(np.zeros(n), p1), GaussianEstimate(np.zeros(n), p2)], w).cov
        gains = (P @ i1, P @ i2)
    elif method == "kf":
        P = kf_fuse_linear(GaussianEstimate(np.zeros(n), p1), np.eye(n), np.zeros(n), p2).cov
        gains = (P @ spd_inv(p1), P @ spd_inv(p2))
    else:
        raise InvalidArgument(f"unknown fusion method {method!r}")
    err = e1 @ gains[0].T + e2 @ gains[1].T
    excess = psd_excess(err.T @ err / n_samples, P)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        s = err[rng.integers(0, n_samples, n_samples)]
        boot[b] = psd_excess(s.T @ s / n_samples, P)
    slack = float(np.quantile(np.abs(boot - excess), 0.99))
    return FusionCheck(float(rho), method, excess, slack, excess <= slack)


# --- observability ----------------------------------------------------------------


def observability_matrix(A, H):
    A = np.asarray(A, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = A.shape[0]
    blocks, M = [], H
    for _ in range(n):
        blocks.append(M)
        M = M @ A
    return np.vstack(blocks)


def observability_rank(A, H, rel_tol=1e-8):
    s = np.linalg.svd(observability_matrix(A, H), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def relayed_output(A, m):
    """``J (A^-1 J^T J)^m``: what an agent ``m`` hops below a feature observer sees."""
    step = np.linalg.solve(A, JT @ J)
    return J @ np.linalg.matrix_power(step, m)


def relay_ranks(dt=0.01, m_max=6, gravity=dyn.GRAVITY):
    A = dyn.state_transition(dt, gravity)
    return [observability_rank(A, relayed_output(A, m)) for m in range(m_max + 1)]


# --- upper-bound system -----------------------------------------------------------


@dataclass
class BoundTrajectory:
    pi_bar: np.ndarray  # (K+1, 9, 9); index 0 unused
    pi_hat: np.ndarray  # (K+1, 9, 9); index 0 is the initial covariance
    steps: np.ndarray  # Frobenius change of pi_hat per iteration
    converged: bool
    iterations: int  # first iteration with a step below tol (or the budget)
    diverging: bool = False


def aubs_recursion(H, R, alpha, A, Q, pi0, steps, tol=1e-8, max_iter=500):
    """Iterate the bound system for ``max(steps, convergence)`` fusion intervals.

    Convergence is declared at the first step whose Frobenius change is below
    ``tol`` within ``max_iter`` iterations; non-convergence is reported.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    info_meas = H.T @ spd_inv(R, "bound measurement noise") @ H if H.size and np.any(H) else np.zeros((9, 9))
    total = max(int(steps), int(max_iter))
    pi_bar = np.zeros((total + 1, 9, 9))
    pi_hat = np.zeros((total + 1, 9, 9))
    pi_hat[0] = pi0
    deltas = np.zeros(total)
    converged_at = None
    blown = False
    for k in range(1, total + 1):
        pb = dyn.symmetrize(A @ pi_hat[k - 1] @ A.T + Q)
        try:
            ph = spd_inv(alpha * spd_inv(pb, "bound prior") + info_meas, "bound information")
        except NumericalSingularity:
            ph = np.full((9, 9), np.inf)
        if not np.all(np.isfinite(ph)) or np.trace(ph) > 1e100:
            pi_bar[k:], pi_hat[k:], deltas[k - 1 :] = np.inf, np.inf, np.inf
            blown = True
            break
        pi_bar[k], pi_hat[k] = pb, dyn.symmetrize(ph)
        deltas[k - 1] = np.linalg.norm(pi_hat[k] - pi_hat[k - 1])
        if converged_at is None and deltas[k - 1] < tol and k <= max_iter:
            converged_at = k
        if converged_at is not None and k >= steps:
            pi_bar, pi_hat, deltas = pi_bar[: k + 1], pi_hat[: k + 1], deltas[:k]
            break
    tr = np.trace(pi_hat[np.isfinite(pi_hat).all(axis=(1, 2))], axis1=1, axis2=2)
    diverging = converged_at is None and (blown or bool(np.all(np.diff(tr[-50:]) > 0)))
    return BoundTrajectory(
        pi_bar, pi_hat, deltas, converged_at is not None, converged_at or max_iter, diverging
    )


def riccati_residual(pi_bar, A, H, R, alpha, Q):
    """Fixed-point residual of ``X = A (alpha X^-1 + H^T R^-1 H)^-1 A^T + Q``."""
    post = spd_inv(alpha * spd_inv(pi_bar) + H.T @ spd_inv(R) @ H)
    return float(np.linalg.norm(A @ post @ A.T + Q - pi_bar))


def riccati_solution(A, H, R, alpha, Q):
    """Stationary ``Pi_bar`` from the standard filtering DARE with ``A/sqrt(alpha)``."""
    a = np.asarray(A) / np.sqrt(alpha)
    return dyn.symmetrize(sla.solve_discrete_are(a.T, np.asarray(H).T, Q, alpha * np.asarray(R)))


def _sym_sqrt(m):
    w, v = np.linalg.eigh(dyn.symmetrize(m))
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _sym_inv_sqrt(m):
    w, v = np.linalg.eigh(dyn.symmetrize(m))
    return v @ np.diag(w**-0.5) @ v.T


def dominating_noise(qs):
    """``lam * mean(qs)`` with the smallest ``lam`` that dominates every ``q``."""
    qs = np.asarray(qs)
    S = dyn.symmetrize(qs.mean(axis=0))
    s = _sym_inv_sqrt(S)
    lam = max(np.linalg.eigvalsh(s @ dyn.symmetrize(q) @ s).max() for q in qs)
    return dyn.symmetrize(lam * S)


@dataclass(frozen=True)
class RunSummary:
    """The run quantities the bound system is built from.

    Fusions before ``start`` are skipped: the bound recursion starts from the
    filter's own covariance after fusion ``start - 1`` (``P0`` when 0).
    """

    A: np.ndarray  # transition over one fusion interval
    start: int
    pi0: np.ndarray  # (n, 9, 9) initial bound covariance
    alpha: np.ndarray  # (n,) smallest prior CI weight per agent
    link_alpha: dict  # (j, i) -> smallest weight i gave j's observation (0 if ever missing)
    q_ub: np.ndarray  # (n, 9, 9)
    env_kappa: np.ndarray  # (n,) min_k lambda_min(R^1/2 M_k R^1/2); 0 if a fusion lacked features
    r_env: tuple
    r_rel: tuple  # per sender
    n_fusions: int  # fusions covered, i.e. total minus start


def _link_weights(record, j, i):
    return np.array([info[i].neighbor_weights.get(j, 0.0) for info in record.fusion_info])


def _env_levels(record, i, r_env):
    rs = _sym_sqrt(r_env)
    out = []
    for info in record.fusion_info:
        m = info[i].env_information
        out.append(0.0 if m is None else max(np.linalg.eigvalsh(rs @ m[:6, :6] @ rs).min(), 0.0))
    return np.array(out)


def _tree(cfg, roots):
    return bfs_layers(AugmentedGraph(Graph(cfg.n_agents, cfg.edges), roots))


def bound_start(record, cfg):
    """First fusion after which every tree link and root feature edge is always active."""
    roots = cfg.feature_agents(persistent_only=True)
    tree = _tree(cfg, roots)
    last_gap = -1
    for i, parent in tree.parent.items():
        if parent == FEATURE_NODE:
            levels = _env_levels(record, i, cfg.agents[i].noise.r_env)
        else:
            levels = _link_weights(record, parent, i)
        gaps = np.flatnonzero(levels <= 0)
        if gaps.size:
            last_gap = max(last_gap, int(gaps.max()))
    return last_gap + 1


def summarize_run(record, cfg, start=None):
    if record.filter != "dincikf":
        raise InvalidArgument(f"bound system needs a dincikf run, got {record.filter!r}")
    if start is None:
        start = bound_start(record, cfg)
    ft = record.fusion_ticks
    if not 0 <= start < len(ft):
        raise InvalidArgument(f"bound start {start} leaves no fusions to cover")
    n = record.n_agents
    A = dyn.state_transition(cfg.ratio * cfg.dt, cfg.gravity)
    prev = np.concatenate([[0], ft[:-1]])
    span = range(start, len(ft))
    q = np.array([[record.prior_cov[m, i] - A @ record.cov[prev[m], i] @ A.T for m in span] for i in range(n)])
    infos = record.fusion_info[start:]
    alpha = np.array([min(info[i].prior_weight for info in infos) for i in range(n)])
    link_alpha = {(j, i): float(_link_weights(record, j, i)[start:].min()) for j, i in cfg.edges}
    r_env = tuple(a.noise.r_env for a in cfg.agents)
    kappa = np.array([_env_levels(record, i, r_env[i])[start:].min() for i in range(n)])
    return RunSummary(
        A=A,
        start=start,
        pi0=record.cov[prev[start]].copy(),
        alpha=alpha,
        link_alpha=link_alpha,
        q_ub=np.array([dominating_noise(q[i]) for i in range(n)]),
        env_kappa=kappa,
        r_env=r_env,
        r_rel=tuple(a.noise.r_rel for a in cfg.agents),
        n_fusions=len(ft) - start,
    )


@dataclass
class AubsState:
    agent: int
    parent: object  # FEATURE_NODE or agent id
    H: np.ndarray
    R: np.ndarray
    alpha: float
    constants: dict = field(default_factory=dict)  # sigma, beta, gamma, mu, s, c, c_direct
    rank: int = 0
    trajectory: BoundTrajectory = None


def link_constants(parent, summary, child, mode="chain"):
    """Scale ``c`` so that ``R_child = R_parent / c`` keeps the bound valid.

    ``mode="chain"`` follows the chain sigma -> beta -> gamma -> mu, each the
    tightest value for its matrix inequality; ``"direct"`` takes the tightest
    single scalar.  Both are computed; ``c`` is the selected one.
    """
    j = parent.agent
    A = summary.A
    traj = parent.trajectory
    a_link = summary.link_alpha.get((j, child), 0.0)
    Rj_inv = spd_inv(parent.R)
    G_full = parent.H.T @ Rj_inv @ parent.H
    Ainv = np.linalg.inv(A)
    G = J @ Ainv.T @ G_full @ Ainv @ JT  # 6x6
    r_rel = summary.r_rel[j]

    sigma = float(np.linalg.eigvalsh(r_rel + J @ summary.q_ub[j] @ JT).max())
    beta_p = 1.0 / max(np.linalg.eigvalsh(pb).max() for pb in traj.pi_bar[1 : summary.n_fusions + 1])
    beta = summary.alpha[j] * beta_p
    W = spd_inv(beta * np.eye(9) + G_full)
    s = max(1.0, float(np.linalg.eigvalsh(_sym_inv_sqrt(W) @ traj.pi_hat[0] @ _sym_inv_sqrt(W)).max()))
    M = A @ (s * W) @ A.T
    M11 = M[:6, :6]
    gamma_p = float(np.linalg.eigvalsh(M11).min())
    gamma = gamma_p / (sigma + gamma_p)
    schur = M11 - M[:6, 6:] @ np.linalg.solve(M[6:, 6:], M[6:, :6])
    m = _sym_inv_sqrt(M11)
    mu = float(np.linalg.eigvalsh(m @ schur @ m).min())
    c_chain = a_link * gamma * mu / s

    g_half = _sym_sqrt(G)
    worst = max(
        np.linalg.eigvalsh(g_half @ (r_rel + J @ pb @ JT) @ g_half).max()
        for pb in traj.pi_bar[1 : summary.n_fusions + 1]
    )
    c_direct = a_link / worst
    consts = dict(
        sigma=sigma, beta=beta, gamma=gamma, mu=mu, s=s, link_alpha=a_link, c_chain=c_chain, c_direct=c_direct
    )
    consts["c"] = c_chain if mode == "chain" else c_direct
    return consts


def bound_tree(cfg, summary):
    """Spanning tree from the feature node over agents that see a feature at every fusion."""
    return _tree(cfg, {i for i in cfg.feature_agents(persistent_only=True) if summary.env_kappa[i] > 0})


def build_aubs(tree, summary, mode="chain", tol=1e-8, max_iter=500):
    """Bound systems for every agent, parents first."""
    out = {}
    steps = summary.n_fusions
    for i in tree.order():
        parent = tree.parent[i]
        if parent == FEATURE_NODE:
            H = J.copy()
            R = summary.r_env[i] / summary.env_kappa[i]
            consts = dict(kappa=float(summary.env_kappa[i]))
        else:
            p = out[parent]
            consts = link_constants(p, summary, i, mode)
            if consts["c"] <= 0:
                H, R = np.zeros((6, 9)), np.eye(6)
            else:
                H = p.H @ np.linalg.solve(summary.A, JT @ J)
                R = p.R / consts["c"]
        st = AubsState(i, parent, H, R, float(summary.alpha[i]), consts)
        st.rank = observability_rank(summary.A, H)
        st.trajectory = aubs_recursion(
            H, R, st.alpha, summary.A, summary.q_ub[i], summary.pi0[i], steps, tol, max_iter
        )
        out[i] = st
    return out


@dataclass(frozen=True)
class DominanceReport:
    min_eig: np.ndarray  # (M, n) lambda_min(Pi_hat - P_hat) at each fusion
    checkpoints: np.ndarray  # fusion-tick values checked
    violations: list  # (tick, agent, lambda_min)
    slack: float

    @property
    def ok(self):
        return not self.violations


def verify_dominance(record, aubs, start=0, checkpoints=None, slack=1e-8, scale=1.0):
    """``lambda_min(Pi_hat_i(k) - scale * P_hat_i(k))`` at every covered fusion tick.

    Violations are listed for ``checkpoints`` (all covered fusions by default);
    a checkpoint before ``start`` counts as a violation.  ``scale`` exists
    for negative controls.
    """
    ft = record.fusion_ticks
    n = record.n_agents
    min_eig = np.full((len(ft), n), np.nan)
    for i, st in aubs.items():
        for m in range(start, len(ft)):
            diff = st.trajectory.pi_hat[m - start + 1] - scale * record.cov[ft[m], i]
            min_eig[m, i] = np.linalg.eigvalsh(dyn.symmetrize(diff)).min()
    missing = set(range(n)) - set(aubs)
    check = ft[start:] if checkpoints is None else np.asarray(checkpoints)
    where = {int(k): m for m, k in enumerate(ft)}
    viol = []
    for k in check:
        m = where[int(k)]
        for i in range(n):
            if i in missing or not np.isfinite(min_eig[m, i]) or min_eig[m, i] < -slack:
                viol.append((int(k), i, float(min_eig[m, i])))
    return DominanceReport(min_eig, np.asarray(check), viol, slack)


def windowed_trace_spread(record, start_s, n_windows=3):
    """Relative spread of per-window maxima of ``trace(P_hat_i)`` after ``start_s``.

    Returns ``(n,)``: ``(max - min) / max`` of the window maxima per agent.
    """
    t = record.times
    tr = record.trace()
    edges = np.linspace(start_s, t[-1], n_windows + 1)
    maxima = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (t >= a) & (t <= b)
        maxima.append(tr[sel].max(axis=0))
    maxima = np.array(maxima)
    return (maxima.max(axis=0) - maxima.min(axis=0)) / maxima.max(axis=0)
