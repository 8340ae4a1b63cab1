"""Measurement and stellar noise synthesis.

Two components: heteroscedastic white noise (per-point scatter plus an
optional jitter term added in quadrature) and correlated stellar activity,
drawn from a Gaussian process with a quasi-periodic rotation kernel

    k(tau) = sigma_gp^2 * exp(-tau^2 / (2 lambda^2)) * exp(-Gamma sin^2(pi tau / P_rot))

with frozen shape constants lambda = 3 * P_rot and Gamma = 2.  Freezing the
shape leaves two free parameters (amplitude and rotation period) and keeps
seeded draws reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

# coherence over ~3 rotations; moderate harmonic content
QP_LAMBDA_ROTATIONS = 3.0
QP_GAMMA = 2.0

_BASE_NUGGET = 1e-10
_NUGGET_RETRIES = 3


class DegenerateCovarianceError(Exception):
    """Covariance stayed non-factorizable after nugget escalation."""


@dataclass(frozen=True)
class GpSpec:
    """Quasi-periodic stellar noise parameters."""

    sigma_gp_ms: float
    p_rot_days: float

    def __post_init__(self):
        if not self.sigma_gp_ms > 0:
            raise ValueError("GP amplitude must be positive")
        if not self.p_rot_days > 0:
            raise ValueError("rotation period must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    """White-noise scale, jitter, and optional correlated component."""

    sigma_w_ms: float
    jitter_ms: float = 0.0
    gp: Optional[GpSpec] = None

    def __post_init__(self):
        if not self.sigma_w_ms > 0:
            raise ValueError("white-noise scale must be positive")
        if self.jitter_ms < 0:
            raise ValueError("jitter must be non-negative")


def reported_sigmas(point_sigmas_ms, spec: NoiseSpec):
    """Agent-visible error bars: per-point scatter and jitter in quadrature.

    The GP contribution is deliberately not folded in; correlated noise is
    the nuisance the difficulty rubric scores separately.
    """
    s = np.asarray(point_sigmas_ms, dtype=float)
    return np.sqrt(s ** 2 + spec.jitter_ms ** 2)


def quasi_periodic_kernel(tau, sigma_gp_ms: float, p_rot_days: float):
    """Kernel value at lag(s) tau in days."""
    tau = np.asarray(tau, dtype=float)
    lam = QP_LAMBDA_ROTATIONS * p_rot_days
    decay = np.exp(-tau ** 2 / (2.0 * lam ** 2))
    periodic = np.exp(-QP_GAMMA * np.sin(np.pi * tau / p_rot_days) ** 2)
    return sigma_gp_ms ** 2 * decay * periodic


def build_covariance(times, spec: NoiseSpec) -> np.ndarray:
    """GP covariance matrix over the given times; all-zero without a GP."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("times must be non-empty")
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")
    if spec.gp is None:
        return np.zeros((times.size, times.size))
    tau = np.abs(times[:, None] - times[None, :])
    return quasi_periodic_kernel(tau, spec.gp.sigma_gp_ms, spec.gp.p_rot_days)


def _factor_with_nugget(cov: np.ndarray, sigma_gp_ms: float) -> np.ndarray:
    nugget = _BASE_NUGGET * sigma_gp_ms ** 2
    eye = np.eye(cov.shape[0])
    for _ in range(_NUGGET_RETRIES + 1):
        try:
            return np.linalg.cholesky(cov + nugget * eye)
        except np.linalg.LinAlgError:
            nugget *= 10.0
    raise DegenerateCovarianceError(
        f"covariance not PSD after nugget escalation to {nugget:.3e}")


def sample_noise(rng: np.random.Generator, times, sigmas, spec: NoiseSpec):
    """Draw one realization of white + correlated noise, m/s.

    sigmas are the per-point white scales (without jitter); jitter is added
    in quadrature.  Draws are made in time-sorted order so a permutation of
    the inputs permutes the output instead of changing the realization, and
    the white component is drawn before the GP component so the zero-GP
    limit shares the white stream.
    """
    times = np.asarray(times, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.shape != times.shape:
        raise ValueError("sigmas and times must have the same length")
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")

    order = np.argsort(times, kind="stable")
    scale = np.sqrt(sigmas[order] ** 2 + spec.jitter_ms ** 2)
    eps_sorted = rng.standard_normal(times.size) * scale

    if spec.gp is not None:
        cov = build_covariance(times[order], spec)
        L = _factor_with_nugget(cov, spec.gp.sigma_gp_ms)
        eps_sorted = eps_sorted + L @ rng.standard_normal(times.size)

    eps = np.empty_like(eps_sorted)
    eps[order] = eps_sorted
    return eps
