"""Coverage-constrained measurement update for the invariant filter.

Given a body-velocity pseudo-measurement whose error is known only to lie in
a calibrated box with probability at least gamma, the update finds the
distribution closest to the Gaussian prior in KL divergence subject to that
set-mass constraint, moment-matches it back to a Gaussian, and applies the
result on-manifold.

The set-mass constraint only involves the 3-dim output z = H dx, so the
expensive truncated-moment work runs in z-space; the full 15-dim posterior
is recovered by keeping the prior conditional p(dx | z) and swapping in the
new marginal over z.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from coverage_inekf import tmvn
from coverage_inekf.filter import (
    ERROR_DIM,
    AugmentedState,
    ErrorBelief,
    apply_correction,
    predicted_body_velocity,
    velocity_output_matrix,
)
from coverage_inekf.tmvn import PROB_FLOOR, BoxRegion, box_moments

log = logging.getLogger(__name__)

# Eigenvalue floor applied to posterior covariances so downstream Cholesky
# factorizations always succeed.
COV_EIG_FLOOR = 1e-12

# A posterior covariance with an eigenvalue below this is treated as a bug
# in the inputs rather than roundoff.
COV_EIG_HARD_MIN = -1e-8

# Complement reweighting becomes ill-conditioned when nearly all prior mass
# is already inside the set; such updates are flagged in the diagnostics.
NEAR_FULL_MASS = 1e-6


class DegenerateMassError(ValueError):
    """Estimated prior set mass fell below the probability floor."""


@dataclass
class CoverageSpec:
    """Calibrated per-axis error radii with joint confidence gamma."""

    epsilon: np.ndarray
    gamma: float

    def __post_init__(self):
        self.epsilon = np.asarray(self.epsilon, dtype=float)
        if self.epsilon.shape != (3,) or np.any(self.epsilon < 0.0):
            raise ValueError("epsilon must be three non-negative radii")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


@dataclass
class FeasibleSet:
    """Error-state region {dx : lower <= H dx <= upper} induced by coverage."""

    h: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def box(self) -> BoxRegion:
        return BoxRegion(self.lower, self.upper)


@dataclass
class ZPosterior:
    """Moment-matched posterior of the projected error z = H dx.

    ``prior_mass`` is the prior box probability pi, ``posterior_mass`` the
    box probability recomputed under the returned moments (a diagnostic;
    moment matching does not preserve set mass exactly).  ``prior_mean``
    is kept so the lift can form the mean shift.
    """

    mean: np.ndarray
    cov: np.ndarray
    prior_mass: float
    posterior_mass: float
    prior_mean: np.ndarray


@dataclass
class SamplerConfig:
    """Quadrature settings for the truncated-moment estimator.

    ``posterior_mass`` toggles the purely diagnostic re-estimation of the
    box mass under the moment-matched posterior; high-rate filter loops can
    turn it off to halve the estimator cost.
    """

    n_samples: int = 1000
    seed: int = 0
    posterior_mass: bool = True


@dataclass
class UpdateDiagnostics:
    """Per-update record: prior/posterior set mass and the branch taken."""

    pi_prior: float
    pi_post: float
    active: bool
    skipped: bool
    near_full_mass: bool = False


def _floor_spd(m: np.ndarray, context: str) -> np.ndarray:
    """Symmetrize and floor-clip eigenvalues; error on clearly indefinite input."""
    m = 0.5 * (m + m.T)
    try:
        np.linalg.cholesky(m)
        return m
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(m)
    if vals.min() < COV_EIG_HARD_MIN:
        raise np.linalg.LinAlgError(
            f"{context}: covariance lost positive semidefiniteness "
            f"(min eigenvalue {vals.min():.3e})"
        )
    return (vecs * np.maximum(vals, COV_EIG_FLOOR)) @ vecs.T


def build_feasible_set(
    prior_state: AugmentedState, meas: np.ndarray, spec: CoverageSpec
) -> FeasibleSet:
    """Feasible set of the error state induced by the coverage statement.

    H comes from the shared invariant-output linearization
    (:func:`coverage_inekf.filter.velocity_output_matrix`); the bounds are
    the innovation plus/minus the calibrated radii.
    """
    meas = np.asarray(meas, dtype=float)
    innovation = meas - predicted_body_velocity(prior_state)
    h = velocity_output_matrix(prior_state.nav.rot)
    return FeasibleSet(h, innovation - spec.epsilon, innovation + spec.epsilon)


def project_prior(
    bel: ErrorBelief, fs: FeasibleSet
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project the prior belief onto z = H dx.

    Returns (mean_z, cov_z, gain) where cov_z = H Sigma H^T is the projected
    covariance and gain = Sigma H^T cov_z^-1 lifts z-space corrections back
    to the full error state.
    """
    mean_z = fs.h @ bel.mean
    sigma_ht = bel.cov @ fs.h.T
    cov_z = fs.h @ sigma_ht
    cov_z = 0.5 * (cov_z + cov_z.T)
    # screen with the SPD bound cond <= trace^3/det; exact value only when
    # the bound trips, so the hot path stays cheap
    det = np.linalg.det(cov_z)
    trace = float(np.trace(cov_z))
    if det <= 0.0 or trace**3 / det > 1e12:
        cond = float(np.linalg.cond(cov_z))
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError(
                f"projected prior is numerically singular (cond={cond:.3e}); "
                "the prior has collapsed along a measured direction"
            )
    gain = sigma_ht @ np.linalg.inv(cov_z)
    return mean_z, cov_z, gain


def kl_coverage_posterior(
    mean_z: np.ndarray,
    cov_z: np.ndarray,
    fs: FeasibleSet,
    gamma: float,
    sampler: SamplerConfig,
) -> ZPosterior:
    """KL-minimal set-mass posterior in z-space, moment-matched to a Gaussian.

    If the prior already puts mass >= gamma in the box the constraint is
    inactive and the prior moments are returned unchanged.  Otherwise the
    minimizer rescales the prior to mass gamma inside the box and 1 - gamma
    outside; its first two moments follow from the truncated moments inside
    the box and the law of total expectation for the complement.

    Raises DegenerateMassError when the estimated prior mass is at the
    probability floor (extreme outlier; callers should skip the update).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    box = fs.box()
    tm = box_moments(mean_z, cov_z, box, sampler.n_samples, sampler.seed)
    pi = tm.prob
    if tm.degenerate:
        raise DegenerateMassError(
            f"prior set mass at or below floor ({PROB_FLOOR}); measurement "
            "is an extreme outlier for this prior"
        )
    if pi >= gamma:
        return ZPosterior(
            mean=mean_z.copy(),
            cov=cov_z.copy(),
            prior_mass=pi,
            posterior_mass=pi,
            prior_mean=mean_z.copy(),
        )

    second_prior = cov_z + np.outer(mean_z, mean_z)
    mean_comp = (mean_z - pi * tm.mean) / (1.0 - pi)
    second_comp = (second_prior - pi * tm.second_moment) / (1.0 - pi)

    mean_post = gamma * tm.mean + (1.0 - gamma) * mean_comp
    second_post = gamma * tm.second_moment + (1.0 - gamma) * second_comp
    cov_post = _floor_spd(
        second_post - np.outer(mean_post, mean_post), "moment matching"
    )

    if sampler.posterior_mass:
        pi_post = box_moments(
            mean_post, cov_post, box, sampler.n_samples, sampler.seed
        ).prob
    else:
        pi_post = float("nan")
    return ZPosterior(
        mean=mean_post,
        cov=cov_post,
        prior_mass=pi,
        posterior_mass=pi_post,
        prior_mean=mean_z.copy(),
    )


def lift_and_apply(
    x: AugmentedState,
    bel: ErrorBelief,
    zpost: ZPosterior,
    gain: np.ndarray,
    cov_z: np.ndarray,
) -> tuple[AugmentedState, ErrorBelief]:
    """Lift the z-space posterior to the full error state and apply it.

    Keeps the prior conditional p(dx | z): the full mean shifts along the
    gain, and the covariance changes only in the measured directions.  The
    correction is folded into the state; the returned belief mean is zero.
    """
    mean_full = bel.mean + gain @ (zpost.mean - zpost.prior_mean)
    cov_full = bel.cov + gain @ (zpost.cov - cov_z) @ gain.T
    cov_full = _floor_spd(cov_full, "lifted posterior")
    x_new = apply_correction(x, mean_full)
    return x_new, ErrorBelief(np.zeros(ERROR_DIM), cov_full)


def coverage_update(
    x: AugmentedState,
    bel: ErrorBelief,
    meas: np.ndarray,
    spec: CoverageSpec,
    sampler: SamplerConfig,
) -> tuple[AugmentedState, ErrorBelief, UpdateDiagnostics]:
    """Full coverage-constrained measurement update.

    Builds the feasible set, projects the prior to z-space, computes the
    KL-minimal moment-matched posterior, and lifts it back.  When the
    constraint is inactive the inputs are returned unchanged (the same
    objects).  When the prior set mass is at the probability floor the
    update is skipped entirely and logged.
    """
    fs = build_feasible_set(x, meas, spec)
    mean_z, cov_z, gain = project_prior(bel, fs)
    try:
        zpost = kl_coverage_posterior(mean_z, cov_z, fs, spec.gamma, sampler)
    except DegenerateMassError:
        log.debug(
            "coverage update skipped: prior set mass below %g (outlier)",
            PROB_FLOOR,
        )
        diag = UpdateDiagnostics(
            pi_prior=PROB_FLOOR, pi_post=PROB_FLOOR, active=False, skipped=True
        )
        return x, bel, diag

    near_full = (1.0 - zpost.prior_mass) < NEAR_FULL_MASS
    if zpost.prior_mass >= spec.gamma:
        diag = UpdateDiagnostics(
            pi_prior=zpost.prior_mass,
            pi_post=zpost.posterior_mass,
            active=False,
            skipped=False,
            near_full_mass=near_full,
        )
        return x, bel, diag

    x_new, bel_new = lift_and_apply(x, bel, zpost, gain, cov_z)
    diag = UpdateDiagnostics(
        pi_prior=zpost.prior_mass,
        pi_post=zpost.posterior_mass,
        active=True,
        skipped=False,
        near_full_mass=near_full,
    )
    return x_new, bel_new, diag
