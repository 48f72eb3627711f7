"""Invariant extended Kalman filtering core for an IMU-driven rigid body.

State: an SE2(3) extended pose plus accelerometer and gyroscope biases.
Uncertainty lives on the 15-dimensional right-invariant error state

    (xi_rot, xi_vel, xi_pos, d_bias_accel, d_bias_gyro)

following the package-wide tangent ordering.  The module provides strapdown
propagation of mean and covariance, the on-manifold correction operator, and
a baseline Gaussian update for body-frame velocity measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from coverage_inekf import se23
from coverage_inekf.se23 import Se23Element, skew

# Default gravity (m/s^2); campaign configs may override it.
GRAVITY = np.array([0.0, 0.0, -9.81])

ERROR_DIM = 15
NOISE_DIM = 12


@dataclass
class AugmentedState:
    """Navigation state plus IMU biases."""

    nav: Se23Element
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls) -> "AugmentedState":
        return cls(Se23Element.identity())


@dataclass
class ErrorBelief:
    """Gaussian over the 15-dim right-invariant error state."""

    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_std(cls, rot, vel, pos, bias_accel, bias_gyro) -> "ErrorBelief":
        """Diagonal belief from per-block standard deviations."""
        stds = np.concatenate(
            [np.broadcast_to(np.atleast_1d(np.asarray(s, dtype=float)), (3,))
             for s in (rot, vel, pos, bias_accel, bias_gyro)]
        )
        return cls(np.zeros(ERROR_DIM), np.diag(stds**2))

    def check_valid(self, atol: float = 1e-10) -> None:
        if np.abs(self.cov - self.cov.T).max() > atol:
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(self.cov).min() < -atol:
            raise ValueError("covariance has eigenvalues below -1e-10")


@dataclass
class ImuSample:
    """One accelerometer/gyroscope reading over a time step."""

    accel: np.ndarray
    gyro: np.ndarray
    dt: float

    def __post_init__(self):
        self.accel = np.asarray(self.accel, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)
        if not 0.0 < self.dt <= 0.1:
            raise ValueError(f"dt must lie in (0, 0.1] s, got {self.dt}")


@dataclass
class ProcessNoise:
    """Continuous-time noise power densities as a 12x12 PSD matrix.

    Block order matches the process noise vector
    (accel, gyro, accel bias walk, gyro bias walk).
    """

    q: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.q.shape != (NOISE_DIM, NOISE_DIM):
            raise ValueError("Q must be 12x12")
        if np.abs(self.q - self.q.T).max() > 1e-12:
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(self.q).min() < -1e-12:
            raise ValueError("Q must be PSD")
        # fast path for the common diagonal case
        off = self.q - np.diag(np.diag(self.q))
        self.diagonal = np.diag(self.q).copy() if not off.any() else None

    @classmethod
    def from_densities(cls, accel, gyro, accel_bias, gyro_bias) -> "ProcessNoise":
        """Diagonal Q from white-noise densities (per-axis or scalar)."""
        d = np.concatenate(
            [np.broadcast_to(np.atleast_1d(np.asarray(s, dtype=float)), (3,))
             for s in (accel, gyro, accel_bias, gyro_bias)]
        )
        return cls(np.diag(d**2))


def velocity_output_matrix(rot: np.ndarray) -> np.ndarray:
    """Observation matrix H of the body-velocity invariant output.

    Linearizing the output through the right-invariant error gives
    H = [0, -R^T, 0, 0, 0]: only the velocity error enters, rotated into the
    body frame; bias columns are zero.  Shared by the Gaussian baseline and
    the coverage update so the two differ only in the update rule.
    """
    h = np.zeros((3, ERROR_DIM))
    h[:, 3:6] = -rot.T
    return h


def predicted_body_velocity(x: AugmentedState) -> np.ndarray:
    """First three components of the invariant output X^-1 d."""
    return x.nav.rot.T @ x.nav.vel


_EYE3 = np.eye(3)
_EYE3.setflags(write=False)


def propagate_mean(
    x: AugmentedState, u: ImuSample, gravity: np.ndarray = GRAVITY
) -> AugmentedState:
    """Strapdown propagation of the state estimate over one IMU sample.

    Bias-corrected rates are held constant over the interval, for which the
    closed form below is exact: the rotation advances by the SO(3)
    exponential while velocity and position use its first and second
    integrals.  Biases are constant under the nominal dynamics.
    """
    w = (u.gyro - x.bias_gyro) * u.dt
    a = u.accel - x.bias_accel
    rot, vel, pos = x.nav.rot, x.nav.vel, x.nav.pos

    theta = math.sqrt(w @ w)
    ca, cb, cc, cd = se23._rodrigues_coefficients(theta)
    wx = skew(w)
    wx2 = wx @ wx
    gamma0 = _EYE3 + ca * wx + cb * wx2
    gamma1 = _EYE3 + cb * wx + cc * wx2
    gamma2 = 0.5 * _EYE3 + cc * wx + cd * wx2

    dt = u.dt
    nav = Se23Element(
        rot @ gamma0,
        vel + (rot @ (gamma1 @ a) + gravity) * dt,
        pos + vel * dt + (rot @ (gamma2 @ a) + 0.5 * gravity) * dt * dt,
        chain=x.nav.chain + 1,
    )
    if nav.chain > se23.RENORM_CHAIN_LENGTH:
        nav.rot = se23.orthonormalize(nav.rot)
        nav.chain = 0
    return AugmentedState(nav, x.bias_accel.copy(), x.bias_gyro.copy())


def error_dynamics_matrices(
    x: AugmentedState, gravity: np.ndarray = GRAVITY
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous right-invariant error dynamics (A, N).

    d/dt delta = A delta + N w, with w the 12-dim process noise in the order
    (accel, gyro, accel bias walk, gyro bias walk), evaluated at the current
    estimate.  N's top 9x9 action is the group adjoint carrying body-frame
    IMU noise into the invariant error coordinates.
    """
    rot, vel, pos = x.nav.rot, x.nav.vel, x.nav.pos
    vx_r = skew(vel) @ rot
    px_r = skew(pos) @ rot

    a_mat = np.zeros((ERROR_DIM, ERROR_DIM))
    a_mat[0:3, 12:15] = -rot
    a_mat[3:6, 0:3] = skew(gravity)
    a_mat[3:6, 9:12] = -rot
    a_mat[3:6, 12:15] = -vx_r
    a_mat[6:9, 3:6] = _EYE3
    a_mat[6:9, 12:15] = -px_r

    n_mat = np.zeros((ERROR_DIM, NOISE_DIM))
    n_mat[0:3, 3:6] = rot
    n_mat[3:6, 0:3] = rot
    n_mat[3:6, 3:6] = vx_r
    n_mat[6:9, 3:6] = px_r
    n_mat[9:12, 6:9] = -_EYE3
    n_mat[12:15, 9:12] = -_EYE3
    return a_mat, n_mat


def transition_from_dynamics(a_mat: np.ndarray, dt: float) -> np.ndarray:
    """exp(A dt) for the error dynamics matrix.

    A is nilpotent of index 4 (gravity feeds velocity feeds position, biases
    feed nothing), so the exponential equals the finite sum
    I + A dt + A^2 dt^2/2 + A^3 dt^3/6 exactly.
    """
    a_dt = a_mat * dt
    a2 = a_dt @ a_dt
    phi = a_dt + 0.5 * a2 + (a2 @ a_dt) / 6.0
    phi.flat[:: ERROR_DIM + 1] += 1.0
    return phi


def error_transition(
    x: AugmentedState,
    u: ImuSample,
    noise: ProcessNoise,
    gravity: np.ndarray = GRAVITY,
) -> tuple[np.ndarray, np.ndarray]:
    """Discrete error-state transition Phi and process noise Q_d.

    Phi is the exact exponential of the continuous dynamics over dt; Q_d
    uses the first-order discretization Phi N Q N^T Phi^T dt.
    """
    a_mat, n_mat = error_dynamics_matrices(x, gravity)
    phi = transition_from_dynamics(a_mat, u.dt)
    phi_n = phi @ n_mat
    if noise.diagonal is not None:
        q_d = (phi_n * noise.diagonal) @ phi_n.T
        q_d *= u.dt
    else:
        q_d = (phi_n @ noise.q @ phi_n.T) * u.dt
    return phi, 0.5 * (q_d + q_d.T)


def propagate_cov(bel: ErrorBelief, phi: np.ndarray, q_d: np.ndarray) -> ErrorBelief:
    """Covariance propagation Phi Sigma Phi^T + Q_d, symmetrized."""
    cov = phi @ bel.cov @ phi.T + q_d
    return ErrorBelief(phi @ bel.mean, 0.5 * (cov + cov.T))


def apply_correction(x: AugmentedState, delta: np.ndarray) -> AugmentedState:
    """On-manifold correction: nav <- exp(-xi^) nav, biases <- b - d_bias."""
    delta = np.asarray(delta, dtype=float)
    nav = se23.compose(se23.exp_se23(-delta[0:9]), x.nav)
    return AugmentedState(
        nav, x.bias_accel - delta[9:12], x.bias_gyro - delta[12:15]
    )


def realized_error(x_est: AugmentedState, x_true: AugmentedState) -> np.ndarray:
    """Error-state realization consistent with the correction operator.

    Returns delta such that x_true == x_est boxplus delta (to the group's
    exactness): the log of the right-invariant error, with bias differences
    appended.
    """
    rot_e = x_est.nav.rot @ x_true.nav.rot.T
    w = se23.so3_log(rot_e)
    jinv = se23.so3_left_jacobian_inv(w)
    out = np.empty(ERROR_DIM)
    out[0:3] = w
    out[3:6] = jinv @ (x_est.nav.vel - rot_e @ x_true.nav.vel)
    out[6:9] = jinv @ (x_est.nav.pos - rot_e @ x_true.nav.pos)
    out[9:12] = x_est.bias_accel - x_true.bias_accel
    out[12:15] = x_est.bias_gyro - x_true.bias_gyro
    return out


def gaussian_update(
    x: AugmentedState,
    bel: ErrorBelief,
    meas: np.ndarray,
    r: np.ndarray,
) -> tuple[AugmentedState, ErrorBelief]:
    """Baseline right-invariant Kalman update for a body-velocity measurement.

    ``meas`` is the measured body-frame velocity, ``r`` its assumed Gaussian
    noise covariance.  Innovation is formed from the invariant output
    residual; the posterior error mean is folded into the state and the
    returned belief mean is zero.
    """
    meas = np.asarray(meas, dtype=float)
    r = np.asarray(r, dtype=float)
    h = velocity_output_matrix(x.nav.rot)
    residual = meas - predicted_body_velocity(x)

    pht = bel.cov @ h.T
    s = h @ pht + r
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(
            f"innovation covariance is singular (cond={cond:.3e})"
        )
    k = pht @ np.linalg.inv(s)

    delta = bel.mean + k @ (residual - h @ bel.mean)
    ikh = np.eye(ERROR_DIM) - k @ h
    cov = ikh @ bel.cov @ ikh.T + k @ r @ k.T
    x_new = apply_correction(x, delta)
    return x_new, ErrorBelief(np.zeros(ERROR_DIM), 0.5 * (cov + cov.T))
