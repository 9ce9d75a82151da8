"""IMU mean propagation on SE_2(3) and the discrete error-state model.

The estimation error is the right-invariant ``eta = X Xbar^-1`` with
coordinates ``xi = log(eta)`` ordered ``(rotation, position, velocity)``.
Its linearised dynamics ``xi' = F xi + G n`` have a nilpotent ``F``
(``F^3 = 0``), so the transition matrix and the Van Loan noise integral are
both finite polynomials in ``dt`` and are evaluated exactly here.

IMU samples describe the interval ``[t, t + dt]`` and are taken at its
midpoint; the mean integrator uses the midpoint attitude for the specific
force so the local error is third order in ``dt``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import liegroup as lg
from .errors import InvalidArgument

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuSample:
    omega_m: np.ndarray
    accel_m: np.ndarray
    timestamp: float = 0.0


@dataclass(frozen=True)
class ImuNoiseSpec:
    """Continuous white-noise densities and known constant biases."""

    sigma_g: float = 0.0  # rad/s/sqrt(Hz)
    sigma_a: float = 0.0  # m/s^2/sqrt(Hz)
    bias_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_a: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.sigma_g < 0 or self.sigma_a < 0:
            raise InvalidArgument("noise densities must be non-negative")


def symmetrize(p):
    return 0.5 * (p + p.T)


def error_dynamics_matrix(g=GRAVITY):
    """Continuous-time ``F``: p' = v, v' = g^ w."""
    F = np.zeros((9, 9))
    F[3:6, 6:9] = np.eye(3)
    F[6:9, 0:3] = lg.skew(g)
    return F


def state_transition(dt, g=GRAVITY):
    """Discrete error transition ``A = expm(F dt) = I + F dt + F^2 dt^2 / 2``."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    G = lg.skew(g)
    A = np.eye(9)
    A[3:6, 0:3] = 0.5 * dt * dt * G
    A[3:6, 6:9] = dt * np.eye(3)
    A[6:9, 0:3] = dt * G
    return A


def propagate_mean(x, u, spec, dt, g=GRAVITY):
    """Integrate one IMU interval.

    Rotation uses the exact increment ``exp((w_m - b_g) dt)``; velocity and
    position use the specific force rotated by the mid-interval attitude.
    """
    R = x[:3, :3]
    p = x[:3, 3]
    v = x[:3, 4]
    w = (np.asarray(u.omega_m) - spec.bias_g) * dt
    f = np.asarray(u.accel_m) - spec.bias_a
    R_mid = R @ lg.exp_so3(0.5 * w)
    acc = R_mid @ f + g
    out = np.eye(5)
    out[:3, :3] = lg.normalize_rotation(R @ lg.exp_so3(w))
    out[:3, 3] = p + v * dt + 0.5 * acc * dt * dt
    out[:3, 4] = v + acc * dt
    return out


def continuous_noise(spec, x_ref):
    """Noise density ``Ad_X diag(Qg, 0, Qa) Ad_X^T`` driving the error state."""
    Ad = lg.adjoint(x_ref)
    Gg = Ad[:, 0:3]
    Ga = Ad[:, 6:9]
    return spec.sigma_g**2 * (Gg @ Gg.T) + spec.sigma_a**2 * (Ga @ Ga.T)


def discretize_noise(spec, x_ref, dt, g=GRAVITY):
    """``Q_d = int_0^dt expm(F s) Qc expm(F s)^T ds`` evaluated exactly.

    ``expm(F s) = I + F s + F^2 s^2 / 2`` so the integrand is a polynomial
    of degree four in ``s``.
    """
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    Qc = continuous_noise(spec, x_ref)
    F = error_dynamics_matrix(g)
    powers = (np.eye(9), F, 0.5 * (F @ F))
    Q = np.zeros((9, 9))
    for a in range(3):
        left = powers[a] @ Qc
        for b in range(3):
            e = a + b + 1
            Q += (dt**e / e) * (left @ powers[b].T)
    return symmetrize(Q)


def discretize_noise_van_loan(spec, x_ref, dt, g=GRAVITY):
    """Reference Van Loan construction via a block matrix exponential."""
    from scipy.linalg import expm

    Qc = continuous_noise(spec, x_ref)
    F = error_dynamics_matrix(g)
    M = np.zeros((18, 18))
    M[:9, :9] = -F
    M[:9, 9:] = Qc
    M[9:, 9:] = F.T
    E = expm(M * dt)
    Phi = E[9:, 9:].T
    return symmetrize(Phi @ E[:9, 9:])


def propagate_covariance(p, A, q):
    return symmetrize(A @ p @ A.T + q)
