"""Covariance intersection and Kalman fusion in R^n."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import InvalidArgument, NumericalSingularity


@dataclass(frozen=True)
class GaussianEstimate:
    mean: np.ndarray
    cov: np.ndarray


def spd_inv(m, what="matrix"):
    """Inverse of a symmetric positive definite matrix via Cholesky.

    Fails loudly instead of regularising; callers who want jitter add it.
    """
    m = np.asarray(m, dtype=float)
    try:
        c = np.linalg.cholesky(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalSingularity(f"{what} is not positive definite") from exc
    ci = np.linalg.inv(c)
    return ci.T @ ci


def ci_weights_fast(traces):
    """Non-iterative CI weights: ``alpha_i ∝ 1 / tr(P_i)``."""
    t = np.asarray(traces, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise InvalidArgument("need at least one trace")
    if np.any(~(t > 0)):
        raise InvalidArgument(f"traces must be positive, got {t}")
    inv = 1.0 / t
    return inv / inv.sum()


def _spd_inv_or_none(m):
    c, info = lapack.dpotrf(m, lower=1, clean=1)
    if info != 0:
        return None
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        return None
    return inv + inv.T - np.diag(np.diag(inv))


def ci_weights_trace_min(informations, start=None, tol=1e-11, max_iter=60):
    """CI weights minimising ``tr((sum a_i I_i)^-1)`` over the simplex.

    ``informations`` are the information matrices ``P_i^-1`` (singular ones
    allowed, as long as the fused matrix is invertible for the start weights).
    The objective is convex; we run an active-set Newton method with the
    analytic gradient ``-tr(P I_i P)`` and Hessian ``2 tr(P I_i P I_j P)``,
    starting from the better of ``start`` and the vertex putting all weight
    on the first input.
    """
    info = np.asarray(informations, dtype=float)
    if info.ndim != 3 or info.shape[0] == 0 or info.shape[1] != info.shape[2]:
        raise InvalidArgument("need a non-empty stack of square information matrices")
    k, n = info.shape[0], info.shape[1]
    if k == 1:
        return np.ones(1)
    if k == 2 and start is None:
        return _trace_min_pair(info[0], info[1], tol, max_iter)
    a = np.full(k, 1.0 / k) if start is None else np.array(start, dtype=float)
    if a.shape != (k,) or np.any(a < 0) or abs(a.sum() - 1.0) > 1e-9:
        raise InvalidArgument(f"start weights must be a convex combination, got {a}")
    a /= a.sum()
    flat = info.reshape(k, n * n)
    P = _spd_inv_or_none((a @ flat).reshape(n, n))
    if P is None:
        raise NumericalSingularity("CI information matrix singular at the start weights")
    f = np.trace(P)
    # Newton is slow from far inside a 1/t-shaped valley; try the first vertex too.
    P_v = _spd_inv_or_none(info[0])
    if P_v is not None and np.trace(P_v) < f:
        a, P, f = np.eye(k)[0], P_v, np.trace(P_v)
    for _ in range(max_iter):
        B = P @ info  # P I_i
        BP = B @ P
        g = -np.trace(BP, axis1=1, axis2=2)
        H = 2.0 * (BP.reshape(k, -1) @ B.transpose(0, 2, 1).reshape(k, -1).T)
        free = a > 0
        d, nu = _face_newton(g, H, free)
        slope = g @ d
        if slope > -tol * f:
            # optimal on this face; release the zero weight that helps most, if any
            cand = np.flatnonzero(~free & (g < nu - tol * abs(nu)))
            if cand.size == 0:
                break
            free[cand[np.argmin(g[cand])]] = True
            d, nu = _face_newton(g, H, free)
            slope = g @ d
            if slope > -tol * f:
                break
        neg = d < 0
        t_max = np.min(-a[neg] / d[neg]) if np.any(neg) else np.inf
        t = min(1.0, t_max)
        while True:
            trial = a + t * d
            if t == t_max:
                trial[neg & (trial <= 1e-15 * np.abs(a).max())] = 0.0
            trial = np.clip(trial, 0.0, None)
            trial /= trial.sum()
            P_new = _spd_inv_or_none((trial @ flat).reshape(n, n))
            f_new = np.inf if P_new is None else np.trace(P_new)
            if f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                return a
        a, f, P = trial, f_new, P_new
    return a


def _face_newton(g, H, free):
    """Newton direction within the face ``{a_i = 0, i not free}`` and its multiplier."""
    idx = np.flatnonzero(free)
    m = idx.size
    d = np.zeros(g.size)
    if m == 1:
        return d, g[idx[0]]
    kkt = np.ones((m + 1, m + 1))
    kkt[m, m] = 0.0
    kkt[:m, :m] = H[idx][:, idx] + 1e-12 * np.trace(H) * np.eye(m)
    rhs = np.zeros(m + 1)
    rhs[:m] = -g[idx]
    sol = np.linalg.solve(kkt, rhs)
    d[idx] = sol[:m]
    return d, -sol[m]


def _trace_min_pair(i0, i1, tol, max_iter):
    """Two-input case: safeguarded Newton on the weight ``t`` of ``i0``."""
    D = i0 - i1

    def grad(P):
        B = P @ D
        BP = B @ P
        return -np.trace(BP), 2.0 * np.einsum("ij,ji->", BP, B)

    for t_edge, P_edge, sign in ((1.0, _spd_inv_or_none(i0), -1.0), (0.0, _spd_inv_or_none(i1), 1.0)):
        if P_edge is not None and sign * grad(P_edge)[0] >= 0:
            return np.array([t_edge, 1.0 - t_edge])
    lo, hi, t = 0.0, 1.0, 0.5
    P = _spd_inv_or_none(t * D + i1)
    if P is None:
        raise NumericalSingularity("CI information matrix singular at equal weights")
    for _ in range(max_iter):
        g, h = grad(P)
        if g > 0:
            hi = t
        else:
            lo = t
        new = t - g / h if h > 0 else 0.5 * (lo + hi)
        if not lo < new < hi:
            new = 0.5 * (lo + hi)
        Pn = _spd_inv_or_none(new * D + i1)
        while Pn is None:
            new = 0.5 * (new + t)
            Pn = _spd_inv_or_none(new * D + i1)
        done = abs((new - t) * g) < tol * np.trace(P) or hi - lo < 1e-14
        t, P = new, Pn
        if done:
            break
    return np.array([t, 1.0 - t])


def ci_weights(mode, informations, traces):
    if mode == "fast":
        return ci_weights_fast(traces)
    if mode == "trace_min":
        start = None if len(traces) == 2 else ci_weights_fast(traces)
        return ci_weights_trace_min(informations, start=start)
    raise InvalidArgument(f"unknown CI weight mode {mode!r}")


def ci_fuse(estimates, weights):
    """Fuse estimates with unknown cross-correlation.

    ``P^-1 = sum a_i P_i^-1`` and ``P^-1 x = sum a_i P_i^-1 x_i``.
    """
    weights = np.asarray(weights, dtype=float)
    if len(estimates) != weights.size:
        raise InvalidArgument("one weight per estimate required")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise InvalidArgument(f"weights must be a convex combination, got {weights}")
    n = estimates[0].mean.shape[0]
    info = np.zeros((n, n))
    vec = np.zeros(n)
    for est, a in zip(estimates, weights):
        if est.mean.shape != (n,) or est.cov.shape != (n, n):
            raise InvalidArgument("estimates must share a dimension")
        if a == 0.0:
            continue
        Pi = spd_inv(est.cov, "CI input covariance")
        info += a * Pi
        vec += a * (Pi @ est.mean)
    P = spd_inv(info, "CI information matrix")
    return GaussianEstimate(P @ vec, 0.5 * (P + P.T))


def kf_fuse_linear(prior, H, z, R):
    """Standard Kalman update of ``prior`` with ``z = H x + v``, ``v ~ N(0, R)``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = prior.cov
    S = H @ P @ H.T + R
    K = P @ H.T @ spd_inv(S, "innovation covariance")
    mean = prior.mean + K @ (z - H @ prior.mean)
    cov = (np.eye(P.shape[0]) - K @ H) @ P
    return GaussianEstimate(mean, 0.5 * (cov + cov.T))
