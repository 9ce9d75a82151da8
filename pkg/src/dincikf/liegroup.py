"""SO(3), SE(3) and SE_2(3) operations on homogeneous matrices.

Group elements are plain numpy arrays:

* SO(3): 3x3 rotation ``R``
* SE(3): 4x4 pose ``[[R, p], [0, 1]]``
* SE_2(3): 5x5 extended pose ``[[R, p, v], [0, I_2]]``

Tangent vectors are ordered rotation first: ``(w,)``, ``(w, t)`` and
``(w, t1, t2)``.  For an extended pose the tangent is ``(w, p, v)`` so that the
first six coordinates are the SE(3) tangent of the pose part.

``exp`` maps a coordinate vector straight to the group (the hat map is applied
internally), i.e. ``exp(x) == expm(hat(x))``.
"""

import numpy as np

from .errors import InvalidArgument, NearSingularLogarithm

SO3 = "SO3"
SE3 = "SE3"
SE23 = "SE23"

_DIM_TO_GROUP = {3: SO3, 6: SE3, 9: SE23}
_MAT_TO_GROUP = {3: SO3, 4: SE3, 5: SE23}
_GROUP_TO_DIM = {SO3: 3, SE3: 6, SE23: 9}

# Above this angle the log would need an axis from R + R^T; we refuse instead.
LOG_ANGLE_LIMIT = np.pi - 1e-6
ORTHO_TOL = 1e-9
_SMALL = 1e-2

I3 = np.eye(3)


def skew(w):
    w = np.asarray(w, dtype=float)
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def _check_dim(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] not in _DIM_TO_GROUP:
        raise InvalidArgument(f"tangent must have length 3, 6 or 9, got shape {x.shape}")
    return x


def group_of(g):
    """Name of the group a homogeneous matrix belongs to (by shape)."""
    g = np.asarray(g)
    if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] not in _MAT_TO_GROUP:
        raise InvalidArgument(f"not a 3x3, 4x4 or 5x5 group element: shape {g.shape}")
    return _MAT_TO_GROUP[g.shape[0]]


def hat(x):
    """Coordinate vector to Lie algebra matrix."""
    x = _check_dim(x)
    n = x.shape[0]
    if n == 3:
        return skew(x)
    k = n // 3 - 1
    m = np.zeros((3 + k, 3 + k))
    m[:3, :3] = skew(x[:3])
    for j in range(k):
        m[:3, 3 + j] = x[3 + 3 * j : 6 + 3 * j]
    return m


def vee(m):
    """Inverse of :func:`hat`."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (3, 4, 5):
        raise InvalidArgument(f"cannot vee a matrix of shape {m.shape}")
    w = np.array([m[2, 1], m[0, 2], m[1, 0]])
    if m.shape[0] == 3:
        return w
    return np.concatenate([w] + [m[:3, j] for j in range(3, m.shape[0])])


# --- SO(3) scalar coefficients, with Taylor branches near zero ---------------


def _coeffs(theta):
    """Return (sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3)."""
    if theta < _SMALL:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
        b = 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0))
        c = 1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0))
        return a, b, c
    s, co = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - co) / theta**2, (theta - s) / theta**3


def exp_so3(w):
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    a, b, _ = _coeffs(theta)
    W = skew(w)
    return I3 + a * W + b * (W @ W)


def log_so3(R):
    R = np.asarray(R, dtype=float)
    v = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.sqrt(v @ v)
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    theta = np.arctan2(s, c)
    if theta > LOG_ANGLE_LIMIT:
        raise NearSingularLogarithm(f"rotation angle {theta:.9f} too close to pi")
    if theta < _SMALL:
        t2 = theta * theta
        scale = 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0 + 31.0 * t2**3 / 15120.0
    else:
        scale = theta / s
    return scale * v


def jl_so3(w):
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    _, b, c = _coeffs(theta)
    W = skew(w)
    return I3 + b * W + c * (W @ W)


def jl_inv_so3(w):
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    if theta >= 2.0 * np.pi:
        raise InvalidArgument(f"inverse left Jacobian undefined for |w| = {theta} >= 2 pi")
    if theta < _SMALL:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2**3 / 1209600.0
    else:
        d = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    W = skew(w)
    return I3 - 0.5 * W + d * (W @ W)


def _q_block(w, rho):
    """Off-diagonal block of the SE(3) left Jacobian for tangent (w, rho)."""
    theta = np.sqrt(w @ w)
    if theta < _SMALL:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        s, co = np.sin(theta), np.cos(theta)
        t2 = theta * theta
        c1 = (theta - s) / theta**3
        c2 = (t2 / 2.0 + co - 1.0) / t2**2
        c3 = -0.5 * (
            (1.0 - t2 / 2.0 - co) / t2**2 - 3.0 * (theta - s - theta**3 / 6.0) / theta**5
        )
    W = skew(w)
    P = skew(rho)
    WP = W @ P
    PW = P @ W
    WPW = WP @ W
    WW = W @ W
    return (
        0.5 * P
        + c1 * (WP + PW + WPW)
        + c2 * (WW @ P + PW @ W - 3.0 * WPW)
        + c3 * (WPW @ W + W @ WPW)
    )


# --- generic maps --------------------------------------------------------------


def exp_group(x, target=None):
    """Exponential map from coordinates to a group element.

    ``target`` defaults to the group matching ``len(x)``; passing it makes the
    intent explicit and is checked against the length.
    """
    x = _check_dim(x)
    n = x.shape[0]
    if target is not None and _GROUP_TO_DIM.get(target) != n:
        raise InvalidArgument(f"tangent of length {n} does not belong to {target}")
    w = x[:3]
    R = exp_so3(w)
    if n == 3:
        return R
    Jw = jl_so3(w)
    k = n // 3 - 1
    g = np.eye(3 + k)
    g[:3, :3] = R
    for j in range(k):
        g[:3, 3 + j] = Jw @ x[3 + 3 * j : 6 + 3 * j]
    return g


def log_group(g):
    """Logarithm of a group element, returned as coordinates."""
    kind = group_of(g)
    g = np.asarray(g, dtype=float)
    w = log_so3(g[:3, :3])
    if kind == SO3:
        return w
    Ji = jl_inv_so3(w)
    parts = [w] + [Ji @ g[:3, j] for j in range(3, g.shape[0])]
    return np.concatenate(parts)


def exp(x):
    return exp_group(x)


def log(g):
    return log_group(g)


def ad(x):
    """Matrix of the Lie bracket [x, .] in coordinates."""
    x = _check_dim(x)
    n = x.shape[0]
    W = skew(x[:3])
    if n == 3:
        return W
    m = np.zeros((n, n))
    for b in range(n // 3):
        m[3 * b : 3 * b + 3, 3 * b : 3 * b + 3] = W
    for j in range(1, n // 3):
        m[3 * j : 3 * j + 3, :3] = skew(x[3 * j : 3 * j + 3])
    return m


def adjoint(g):
    """Adjoint matrix: ``hat(Ad_g x) == g hat(x) g^-1``."""
    kind = group_of(g)
    g = np.asarray(g, dtype=float)
    R = g[:3, :3]
    if kind == SO3:
        return R.copy()
    n = _GROUP_TO_DIM[kind]
    m = np.zeros((n, n))
    for b in range(n // 3):
        m[3 * b : 3 * b + 3, 3 * b : 3 * b + 3] = R
    for j in range(1, n // 3):
        m[3 * j : 3 * j + 3, :3] = skew(g[:3, 2 + j]) @ R
    return m


def left_jacobian(x):
    """Left Jacobian ``dexp_x = sum_n ad_x^n / (n+1)!`` in closed form."""
    x = _check_dim(x)
    n = x.shape[0]
    w = x[:3]
    Jw = jl_so3(w)
    if n == 3:
        return Jw
    m = np.zeros((n, n))
    for b in range(n // 3):
        m[3 * b : 3 * b + 3, 3 * b : 3 * b + 3] = Jw
    for j in range(1, n // 3):
        m[3 * j : 3 * j + 3, :3] = _q_block(w, x[3 * j : 3 * j + 3])
    return m


def left_jacobian_inv(x):
    """Inverse of :func:`left_jacobian`; requires ``|w| < 2 pi``."""
    x = _check_dim(x)
    n = x.shape[0]
    w = x[:3]
    Ji = jl_inv_so3(w)
    if n == 3:
        return Ji
    m = np.zeros((n, n))
    for b in range(n // 3):
        m[3 * b : 3 * b + 3, 3 * b : 3 * b + 3] = Ji
    for j in range(1, n // 3):
        m[3 * j : 3 * j + 3, :3] = -Ji @ _q_block(w, x[3 * j : 3 * j + 3]) @ Ji
    return m


def left_jacobian_series(x, tol=1e-14, max_terms=200):
    """Left Jacobian by direct summation of the ad-series (reference path)."""
    x = _check_dim(x)
    A = ad(x)
    n = x.shape[0]
    out = np.eye(n)
    term = np.eye(n)
    for k in range(1, max_terms):
        term = term @ A / (k + 1)
        out = out + term
        if np.abs(term).max() < tol:
            break
    return out


# --- group structure -------------------------------------------------------------


def compose(a, b):
    if np.shape(a) != np.shape(b):
        raise InvalidArgument(f"cannot compose {np.shape(a)} with {np.shape(b)}")
    return np.asarray(a) @ np.asarray(b)


def invert(g):
    kind = group_of(g)
    g = np.asarray(g, dtype=float)
    Rt = g[:3, :3].T
    if kind == SO3:
        return Rt.copy()
    out = np.eye(g.shape[0])
    out[:3, :3] = Rt
    out[:3, 3:] = -Rt @ g[:3, 3:]
    return out


def identity(kind):
    return np.eye({SO3: 3, SE3: 4, SE23: 5}[kind])


def normalize_rotation(R):
    """Project onto SO(3) (polar decomposition) once drift exceeds 1e-9."""
    R = np.asarray(R, dtype=float)
    if np.linalg.norm(R.T @ R - I3) <= ORTHO_TOL:
        return R
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return bool(
        R.shape == (3, 3)
        and np.linalg.norm(R.T @ R - I3) < tol
        and abs(np.linalg.det(R) - 1.0) < tol
    )


# --- constructors / accessors ------------------------------------------------------


def make_pose(R, p):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p
    return T


def make_extended_pose(R, p, v):
    X = np.eye(5)
    X[:3, :3] = R
    X[:3, 3] = p
    X[:3, 4] = v
    return X


def pose_of(X):
    """SE(3) pose part (R, p) of an extended pose."""
    return make_pose(X[:3, :3], X[:3, 3])
