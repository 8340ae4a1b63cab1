"""Keplerian kinematics: anomaly solving and radial-velocity forward models.

The phase convention throughout is mean longitude at a reference epoch:
``l = (Omega + omega + M0) mod 2*pi`` with ``t_ref`` equal to the first
observation time, so the mean anomaly at time t is

    M(t) = l - omega - Omega + 2*pi*(t - t_ref)/P   (mod 2*pi)

All angles are stored reduced to [0, 2*pi).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import G_SI, M_JUP_KG, M_SUN_KG, SECONDS_PER_DAY, TWO_PI

_KEPLER_TOL = 1e-12
_KEPLER_MAX_NEWTON = 50


def wrap_angle(theta):
    """Reduce an angle (scalar or array) to [0, 2*pi)."""
    return np.mod(theta, TWO_PI)


@dataclass(frozen=True)
class PlanetElements:
    """One planet's orbital parameterization.

    P_days: orbital period in days (> 0).
    m_sin_i_mjup: minimum mass in Jupiter masses (> 0).
    e: eccentricity, 0 <= e < 1.
    omega_rad: argument of periastron.
    l_rad: mean longitude at the reference epoch.
    Omega_rad: longitude of ascending node (0 for RV-only submissions).
    """

    P_days: float
    m_sin_i_mjup: float
    e: float
    omega_rad: float
    l_rad: float
    Omega_rad: float = 0.0

    def __post_init__(self):
        if not np.isfinite([self.P_days, self.m_sin_i_mjup, self.e,
                            self.omega_rad, self.l_rad, self.Omega_rad]).all():
            raise ValueError("non-finite orbital element")
        if self.P_days <= 0:
            raise ValueError(f"period must be positive, got {self.P_days}")
        if self.m_sin_i_mjup <= 0:
            raise ValueError(f"m sin i must be positive, got {self.m_sin_i_mjup}")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity outside [0, 1): {self.e}")
        object.__setattr__(self, "omega_rad", float(wrap_angle(self.omega_rad)))
        object.__setattr__(self, "l_rad", float(wrap_angle(self.l_rad)))
        object.__setattr__(self, "Omega_rad", float(wrap_angle(self.Omega_rad)))

    @classmethod
    def from_angles(cls, P_days, m_sin_i_mjup, e, omega_rad, M0_rad, Omega_rad=0.0):
        """Build from (omega, Omega, M0) instead of mean longitude."""
        l_rad = wrap_angle(Omega_rad + omega_rad + M0_rad)
        return cls(P_days, m_sin_i_mjup, e, omega_rad, float(l_rad), Omega_rad)

    def as_rv_only(self) -> "PlanetElements":
        """Fold the node into the mean longitude (Omega = 0 convention).

        Submissions carry no Omega field; the same orbit is expressed by
        l' = l - Omega so the mean anomaly at epoch is unchanged.
        """
        if self.Omega_rad == 0.0:
            return self
        return PlanetElements(self.P_days, self.m_sin_i_mjup, self.e,
                              self.omega_rad,
                              float(wrap_angle(self.l_rad - self.Omega_rad)),
                              0.0)


@dataclass(frozen=True)
class StarContext:
    """Host star mass and the reference epoch (first observation time)."""

    star_mass_sun: float
    t_ref_days: float = 0.0

    def __post_init__(self):
        if not self.star_mass_sun > 0:
            raise ValueError(f"star mass must be positive, got {self.star_mass_sun}")


@dataclass(frozen=True)
class AnomalyState:
    """Mean, eccentric and true anomaly of one orbital phase."""

    M: float
    E: float
    nu: float


def solve_kepler(M, e):
    """Solve E - e*sin(E) = M for the eccentric anomaly.

    Newton iteration from E0 = M + e*sin(M); points that have not met
    |E - e sin E - M| <= 1e-12 after 50 iterations fall back to bisection
    on [0, 2*pi], where the left side is monotone in E.

    Accepts scalars or arrays; M is reduced mod 2*pi internally, and the
    returned E lies in [0, 2*pi).
    """
    M_arr = np.asarray(M, dtype=float)
    e_arr = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(M_arr)) or not np.all(np.isfinite(e_arr)):
        raise ValueError("non-finite input to Kepler solver")
    if np.any(e_arr < 0) or np.any(e_arr >= 1):
        raise ValueError("eccentricity outside [0, 1)")

    scalar = M_arr.ndim == 0 and np.ndim(e) == 0
    Mr, e_b = np.broadcast_arrays(wrap_angle(M_arr), e_arr)
    Mr = np.array(Mr, dtype=float)
    e_b = np.array(e_b, dtype=float)

    E = Mr + e_b * np.sin(Mr)
    for _ in range(_KEPLER_MAX_NEWTON):
        f = E - e_b * np.sin(E) - Mr
        if np.all(np.abs(f) <= _KEPLER_TOL):
            break
        E = E - f / (1.0 - e_b * np.cos(E))

    bad = np.abs(E - e_b * np.sin(E) - Mr) > _KEPLER_TOL
    if np.any(bad):
        E_bad = _bisect_kepler(Mr[bad], e_b[bad])
        E = E.copy()
        E[bad] = E_bad

    E = np.where(E < 0.0, 0.0, E)
    E = np.where(E >= TWO_PI, np.nextafter(TWO_PI, 0.0), E)
    return float(E) if scalar else E


def _bisect_kepler(M, e):
    # f(E) = E - e sin E is monotone increasing, f(0)=0 <= M <= f(2*pi)=2*pi
    lo = np.zeros_like(M)
    hi = np.full_like(M, TWO_PI)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = mid - e * np.sin(mid) < M
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def true_anomaly(E, e):
    """Eccentric anomaly to true anomaly via the half-angle map."""
    return 2.0 * np.arctan2(np.sqrt(1.0 + e) * np.sin(E / 2.0),
                            np.sqrt(1.0 - e) * np.cos(E / 2.0))


def anomalies_at(planet: PlanetElements, t, star: StarContext) -> AnomalyState:
    """All three anomalies of a planet at a single time."""
    M = mean_anomaly_at(planet, t, star.t_ref_days)
    E = solve_kepler(M, planet.e)
    return AnomalyState(M=float(M), E=float(E), nu=float(true_anomaly(E, planet.e)))


def semi_amplitude(planet: PlanetElements, star: StarContext) -> float:
    """RV semi-amplitude in m/s.

    K = (2 pi G / P)^(1/3) * m sin i / ((M_star + m)^(2/3) * sqrt(1 - e^2)),
    treating sin i = 1 so that the companion mass entering the denominator is
    the minimum mass (inclination is unobservable in RV data).
    """
    if planet.e >= 1.0:
        raise ValueError("eccentricity must be < 1")
    P_s = planet.P_days * SECONDS_PER_DAY
    m = planet.m_sin_i_mjup * M_JUP_KG
    M_star = star.star_mass_sun * M_SUN_KG
    K = ((TWO_PI * G_SI / P_s) ** (1.0 / 3.0) * m
         / ((M_star + m) ** (2.0 / 3.0) * np.sqrt(1.0 - planet.e ** 2)))
    return float(K)


def mean_anomaly_at(planet: PlanetElements, t, t_ref: float):
    """Mean anomaly at time(s) t for the mean-longitude phase convention."""
    t = np.asarray(t, dtype=float)
    M = (planet.l_rad - planet.omega_rad - planet.Omega_rad
         + TWO_PI * (t - t_ref) / planet.P_days)
    M = wrap_angle(M)
    return float(M) if M.ndim == 0 else M


def rv_single(t, planet: PlanetElements, star: StarContext):
    """Radial velocity of the star due to one planet, m/s.

    v = K * (cos(nu + omega) + e * cos(omega)), strictly periodic in P.
    """
    K = semi_amplitude(planet, star)
    M = mean_anomaly_at(planet, t, star.t_ref_days)
    E = solve_kepler(M, planet.e)
    nu = true_anomaly(E, planet.e)
    v = K * (np.cos(nu + planet.omega_rad) + planet.e * np.cos(planet.omega_rad))
    return float(v) if np.ndim(t) == 0 else v


def rv_model(times, planets, star: StarContext, offsets, labels):
    """Multi-planet RV superposition plus per-instrument offsets.

    times: observation times, days.
    planets: iterable of PlanetElements (may be empty).
    offsets: mapping instrument label -> offset in m/s.
    labels: instrument label per observation (same length as times).

    Raises KeyError naming the instrument if a label has no offset.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    labels = list(labels)
    if len(labels) != times.size:
        raise ValueError("labels and times must have the same length")
    v = np.zeros_like(times)
    for planet in planets:
        v += rv_single(times, planet, star)
    for k, label in enumerate(labels):
        if label not in offsets:
            raise KeyError(f"no offset for instrument {label!r}")
        v[k] += offsets[label]
    return v
