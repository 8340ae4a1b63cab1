"""Deterministic classical solver: periodogram search, circular
initialization, multi-start Keplerian least squares, and greedy BIC-gated
planet addition.

The pipeline contains no randomness: the multi-start grid is fixed, ties
resolve to the lowest start index, and the same dataset always produces the
same submission.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .constants import G_SI, M_JUP_KG, M_SUN_KG, SECONDS_PER_DAY, TWO_PI
from .grading import Submission
from .orbits import PlanetElements, StarContext, solve_kepler, true_anomaly, wrap_angle
from .stats import bic, gaussian_loglike, null_predictions, per_instrument_weighted_means
from .tasks import RvDataset

DEFAULT_N_FREQ = 40_000
DEFAULT_F_MAX = 2.0  # cycles/day
BIC_GATE = 10.0
PLANET_CAP = 4
# escalate to another planet only while the residual scatter stays above
# this multiple of the median error bar (domain stopping heuristic)
ESCALATION_RMS_FACTOR = 2.0
# and only when one residual peak dominates: the candidate sinusoid must
# explain at least this fraction of the weighted residual variance
MIN_RESIDUAL_PEAK_POWER = 0.55
MIN_PERIOD_DAYS = 0.5000001  # strictly above the submission floor
ECC_STARTS = (0.0, 0.2, 0.4, 0.6)
PHASE_STARTS = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)


class InsufficientDataError(Exception):
    """Too few observations for a periodogram."""


class DegenerateFitError(Exception):
    """Linear fit has singular normal equations."""


class FitFailureError(Exception):
    """No multi-start converged."""


@dataclass(frozen=True)
class Periodogram:
    frequencies: np.ndarray
    powers: np.ndarray
    peaks: tuple  # (period_days, power), descending by power

    def top_period(self):
        return self.peaks[0][0] if self.peaks else None


@dataclass(frozen=True)
class FitResult:
    planets: tuple
    offsets: dict
    rms_ms: float
    bic: float
    n_starts_converged: int
    hit_period_bound: bool = False


def gls_periodogram(dataset: RvDataset, f_min: float = None,
                    f_max: float = DEFAULT_F_MAX,
                    n_freq: int = DEFAULT_N_FREQ) -> Periodogram:
    """Generalized (weighted, floating-mean) Lomb-Scargle periodogram.

    Power is the normalized chi-square reduction of a floating-mean sinusoid
    over the constant model, in [0, 1].  Per-instrument weighted means are
    removed first so instrument offsets cannot masquerade as long periods.
    """
    if dataset.n_obs < 5:
        raise InsufficientDataError(f"need >= 5 observations, have {dataset.n_obs}")
    if f_min is None:
        f_min = 1.0 / (3.0 * dataset.span_days)
    if not (f_min < f_max and n_freq >= 2):
        raise ValueError("need f_min < f_max and n_freq >= 2")

    t = dataset.times_days
    y = dataset.rvs_ms - null_predictions(dataset.rvs_ms, dataset.sigmas_ms,
                                          dataset.labels)
    w = 1.0 / dataset.sigmas_ms ** 2
    w = w / np.sum(w)

    Y = np.sum(w * y)
    yc = y - Y
    YY = np.sum(w * yc ** 2)
    freqs = np.linspace(f_min, f_max, n_freq)
    powers = np.zeros(n_freq)
    if YY <= 0:
        return Periodogram(freqs, powers, ())

    # chunked so trig workspaces stay ~ a few MB
    chunk = max(1, 2_000_000 // max(1, t.size))
    for lo in range(0, n_freq, chunk):
        f = freqs[lo:lo + chunk, None]
        arg = TWO_PI * f * t[None, :]
        cosx = np.cos(arg)
        sinx = np.sin(arg)
        C = cosx @ w
        S = sinx @ w
        YC = (cosx * y) @ w - Y * C
        YS = (sinx * y) @ w - Y * S
        CC = (cosx ** 2) @ w - C ** 2
        SS = (sinx ** 2) @ w - S ** 2
        CS = (cosx * sinx) @ w - C * S
        D = CC * SS - CS ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            p = (SS * YC ** 2 + CC * YS ** 2 - 2.0 * CS * YC * YS) / (YY * D)
        powers[lo:lo + chunk] = np.where(np.isfinite(p), p, 0.0)

    powers = np.clip(powers, 0.0, 1.0)
    interior = np.flatnonzero((powers[1:-1] >= powers[:-2])
                              & (powers[1:-1] > powers[2:])) + 1
    ranked = interior[np.argsort(-powers[interior], kind="stable")]
    peaks = tuple((1.0 / freqs[i], float(powers[i])) for i in ranked[:50])
    return Periodogram(freqs, powers, peaks)


def screen_aliases(perio: Periodogram, period: float) -> float:
    """Check the 1-day alias family of a candidate period.

    Candidates are {1/(1/P - 1), 1/(1/P + 1), P/2, 2P}; if a family member
    carries power within 5% of the best, prefer the shorter period.
    """
    f0 = 1.0 / period
    cands = [period]
    if f0 > 1.0:
        cands.append(1.0 / (f0 - 1.0))
    cands.extend([1.0 / (f0 + 1.0), period / 2.0, 2.0 * period])
    freqs, powers = perio.frequencies, perio.powers
    scored = []
    for p in cands:
        f = 1.0 / p
        if freqs[0] <= f <= freqs[-1]:
            scored.append((p, float(powers[np.argmin(np.abs(freqs - f))])))
    best_power = max(s for _, s in scored)
    viable = [p for p, s in scored if s >= 0.95 * best_power]
    return min(viable)


def fit_one_sine(dataset: RvDataset, period: float):
    """Weighted linear LS of a fixed-period sinusoid plus per-instrument
    constants; closed-form, no iteration.

    Returns (amplitude, phase, offsets, rms) with the convention
    model = amplitude * cos(2 pi (t - t_ref)/P + phase) + offset.
    """
    if period <= 0:
        raise ValueError("period must be positive")
    t = dataset.times_days
    x = TWO_PI * (t - dataset.t_ref_days) / period
    instruments = dataset.instruments()
    labels = np.asarray(dataset.labels)
    cols = [np.cos(x), np.sin(x)]
    cols.extend((labels == lab).astype(float) for lab in instruments)
    A = np.column_stack(cols)
    wroot = 1.0 / dataset.sigmas_ms
    Aw = A * wroot[:, None]
    yw = dataset.rvs_ms * wroot
    sol, residues, rank, _ = np.linalg.lstsq(Aw, yw, rcond=None)
    if rank < A.shape[1]:
        raise DegenerateFitError(
            f"{dataset.n_obs} points cannot constrain a sinusoid at P={period}")
    a, b = sol[0], sol[1]
    offsets = {lab: float(g) for lab, g in zip(instruments, sol[2:])}
    pred = A @ sol
    rms = float(np.sqrt(np.mean((dataset.rvs_ms - pred) ** 2)))
    return float(np.hypot(a, b)), float(np.arctan2(-b, a)), offsets, rms


def msini_from_semi_amplitude(K: float, period_days: float, e: float,
                              star_mass_sun: float) -> float:
    """Invert the semi-amplitude relation for the companion minimum mass.

    Fixed-point iteration on m; converges fast since m << M_star.
    """
    P_s = period_days * SECONDS_PER_DAY
    C = (TWO_PI * G_SI / P_s) ** (1.0 / 3.0)
    M_star = star_mass_sun * M_SUN_KG
    m = 0.0
    for _ in range(30):
        m = K * math.sqrt(1.0 - e ** 2) * (M_star + m) ** (2.0 / 3.0) / C
    return max(m / M_JUP_KG, 1e-9)


def _model_rv(theta, times, labels_idx, n_pl, n_inst, t_ref):
    v = np.zeros(times.size)
    for i in range(n_pl):
        P, K, e, omega, M0 = theta[5 * i:5 * i + 5]
        e = min(max(e, 0.0), 0.999)
        M = np.mod(M0 + TWO_PI * (times - t_ref) / P, TWO_PI)
        E = solve_kepler(M, e)
        nu = true_anomaly(E, e)
        v += K * (np.cos(nu + omega) + e * np.cos(omega))
    v += theta[5 * n_pl:][labels_idx]
    return v


def _model_jacobian(theta, times, labels_idx, n_pl, n_inst, t_ref):
    """Analytic partials of the RV model.

    Chain through Kepler's equation: dnu/dM = sqrt(1-e^2)/(1-e cosE)^2 and,
    at fixed M, dnu/de = (2 + e cos nu) sin nu / (1 - e^2).
    """
    n = times.size
    J = np.zeros((n, theta.size))
    for i in range(n_pl):
        P, K, e, omega, M0 = theta[5 * i:5 * i + 5]
        e = min(max(e, 0.0), 0.999)
        M = np.mod(M0 + TWO_PI * (times - t_ref) / P, TWO_PI)
        E = solve_kepler(M, e)
        nu = true_anomaly(E, e)
        beta = 1.0 - e * np.cos(E)
        dnu_dM = np.sqrt(1.0 - e ** 2) / beta ** 2
        dnu_de = (2.0 + e * np.cos(nu)) * np.sin(nu) / (1.0 - e ** 2)
        sin_no = np.sin(nu + omega)
        col = 5 * i
        J[:, col + 0] = (K * sin_no * dnu_dM
                         * TWO_PI * (times - t_ref) / P ** 2)
        J[:, col + 1] = np.cos(nu + omega) + e * math.cos(omega)
        J[:, col + 2] = K * (-sin_no * dnu_de + math.cos(omega))
        J[:, col + 3] = -K * (sin_no + e * math.sin(omega))
        J[:, col + 4] = -K * sin_no * dnu_dM
    for j in range(n_inst):
        J[labels_idx == j, 5 * n_pl + j] = 1.0
    return J


def _circular_init(dataset: RvDataset, period: float):
    """Initial (P, K, e, omega, M0) from the closed-form one-sine fit."""
    try:
        amp, phase, offsets, _ = fit_one_sine(dataset, period)
    except DegenerateFitError:
        amp, phase = 1.0, 0.0
        offsets = per_instrument_weighted_means(
            dataset.rvs_ms, dataset.sigmas_ms, dataset.labels)
    # K cos(x + M0) = A cos(x + phase) for e = 0
    return [period, max(amp, 1e-3), 0.0, 0.0, wrap_angle(phase)], offsets


def fit_keplerian(dataset: RvDataset, periods, init: FitResult = None,
                  max_period: float = None) -> FitResult:
    """Multi-start weighted Keplerian least squares at the given periods.

    The newest planet (last period) is multi-started over a fixed
    eccentricity x phase grid; earlier planets start from `init` when
    given.  Raises FitFailureError when no start converges.
    """
    periods = list(periods)
    n_pl = len(periods)
    if n_pl < 1:
        raise ValueError("need at least one initial period")
    t = dataset.times_days
    instruments = dataset.instruments()
    n_inst = len(instruments)
    labels_idx = np.array([instruments.index(lab) for lab in dataset.labels])
    sig = dataset.sigmas_ms
    if max_period is None:
        max_period = 3.0 * dataset.span_days
    k_hi = 10.0 * (dataset.rvs_ms.max() - dataset.rvs_ms.min() + 1.0)

    base = []
    if init is not None:
        for p in init.planets:
            M0 = wrap_angle(p.l_rad - p.omega_rad - p.Omega_rad)
            k = _k_of_elements(p, dataset.star_mass_sun)
            base.append([p.P_days, k, p.e, p.omega_rad, M0])
    while len(base) < n_pl - 1:
        seed_init, _ = _circular_init(dataset, periods[len(base)])
        base.append(seed_init)
    new_init, offsets0 = _circular_init(dataset, periods[-1])
    gamma0 = [offsets0.get(lab, 0.0) for lab in instruments]

    lo = ([MIN_PERIOD_DAYS, 0.0, 0.0, -np.inf, -np.inf] * n_pl
          + [-np.inf] * n_inst)
    hi = ([max_period, k_hi, 0.8, np.inf, np.inf] * n_pl + [np.inf] * n_inst)

    def resid(theta):
        return (dataset.rvs_ms - _model_rv(theta, t, labels_idx, n_pl,
                                           n_inst, dataset.t_ref_days)) / sig

    def jac(theta):
        return -_model_jacobian(theta, t, labels_idx, n_pl, n_inst,
                                dataset.t_ref_days) / sig[:, None]

    # stage 1: explore every start at loose tolerance; stage 2: polish the
    # best basin to the tight convergence contract.  Deterministic: fixed
    # start order, ties keep the earliest start.
    best = None
    best_cost = np.inf
    n_converged = 0
    for e0 in ECC_STARTS:
        for dphi in PHASE_STARTS:
            theta0 = []
            for params in base:
                theta0.extend(params)
            theta0.extend([new_init[0], new_init[1], e0, 0.0,
                           wrap_angle(new_init[4] + dphi)])
            theta0.extend(gamma0)
            theta0 = np.clip(theta0, lo, hi)
            try:
                res = least_squares(resid, theta0, jac=jac, bounds=(lo, hi),
                                    method="trf", x_scale="jac",
                                    gtol=1e-6, xtol=1e-8, ftol=1e-8,
                                    max_nfev=60 * (5 * n_pl + n_inst))
            except Exception:
                continue
            if res.status <= 0:
                continue
            n_converged += 1
            if res.cost < best_cost - 1e-12:
                best, best_cost = res, res.cost
    if best is None:
        raise FitFailureError("no converged start")
    try:
        polished = least_squares(resid, best.x, jac=jac, bounds=(lo, hi),
                                 method="trf", x_scale="jac",
                                 gtol=1e-8, xtol=1e-10, ftol=1e-12,
                                 max_nfev=200 * (5 * n_pl + n_inst))
        if polished.status > 0 and polished.cost <= best.cost + 1e-12:
            best = polished
    except Exception:
        pass
    return _result_from_theta(best.x, dataset, n_pl, instruments, labels_idx,
                              max_period, n_converged)


def _k_of_elements(p: PlanetElements, star_mass_sun: float) -> float:
    from .orbits import semi_amplitude
    return semi_amplitude(p, StarContext(star_mass_sun, 0.0))


def _result_from_theta(theta, dataset, n_pl, instruments, labels_idx,
                       max_period, n_converged) -> FitResult:
    planets = []
    hit_bound = False
    for i in range(n_pl):
        P, K, e, omega, M0 = theta[5 * i:5 * i + 5]
        if P >= max_period * (1.0 - 1e-6):
            hit_bound = True
        e = float(min(max(e, 0.0), 0.8))
        msini = msini_from_semi_amplitude(max(float(K), 1e-6), float(P), e,
                                          dataset.star_mass_sun)
        planets.append(PlanetElements.from_angles(
            P_days=float(P), m_sin_i_mjup=msini, e=e,
            omega_rad=float(wrap_angle(omega)), M0_rad=float(wrap_angle(M0))))
    planets.sort(key=lambda p: p.P_days)
    offsets = {lab: float(g) for lab, g in zip(instruments, theta[5 * n_pl:])}
    pred = _model_rv(theta, dataset.times_days, labels_idx, n_pl,
                     len(instruments), dataset.t_ref_days)
    rms = float(np.sqrt(np.mean((dataset.rvs_ms - pred) ** 2)))
    ll = gaussian_loglike(dataset.rvs_ms, pred, dataset.sigmas_ms)
    fit_bic = bic(ll, 5 * n_pl + len(instruments), dataset.n_obs)
    return FitResult(planets=tuple(planets), offsets=offsets, rms_ms=rms,
                     bic=float(fit_bic), n_starts_converged=n_converged,
                     hit_period_bound=hit_bound)


def _degenerate_periods(planets, min_ratio: float = 1.05) -> bool:
    """Two fitted planets within 5% in period are one signal, not two."""
    ps = sorted(p.P_days for p in planets)
    return any(b / a < min_ratio for a, b in zip(ps[:-1], ps[1:]))


def _null_bic(dataset: RvDataset) -> float:
    pred = null_predictions(dataset.rvs_ms, dataset.sigmas_ms, dataset.labels)
    ll = gaussian_loglike(dataset.rvs_ms, pred, dataset.sigmas_ms)
    return float(bic(ll, len(dataset.instruments()), dataset.n_obs))


def _forced_circular_result(dataset: RvDataset, periods) -> FitResult:
    """Fallback when no nonlinear start converges: stacked circular fits."""
    instruments = dataset.instruments()
    labels_idx = np.array([instruments.index(lab) for lab in dataset.labels])
    theta = []
    for P in periods:
        seed, offsets = _circular_init(dataset, P)
        theta.extend(seed)
    theta.extend(offsets.get(lab, 0.0) for lab in instruments)
    return _result_from_theta(np.asarray(theta), dataset, len(periods),
                              instruments, labels_idx,
                              3.0 * dataset.span_days, 0)


def _stacked_result(dataset: RvDataset, current: FitResult,
                    new_fit: FitResult) -> FitResult:
    """Prewhitening composition: previous planets frozen, new planet fitted
    on the residuals; offsets add per instrument."""
    instruments = dataset.instruments()
    labels_idx = np.array([instruments.index(lab) for lab in dataset.labels])
    planets = (current.planets if current else ()) + new_fit.planets
    offsets = {lab: (current.offsets.get(lab, 0.0) if current else 0.0)
               + new_fit.offsets.get(lab, 0.0) for lab in instruments}
    theta = []
    for p in planets:
        theta.extend([p.P_days, _k_of_elements(p, dataset.star_mass_sun),
                      p.e, p.omega_rad,
                      wrap_angle(p.l_rad - p.omega_rad - p.Omega_rad)])
    theta.extend(offsets[lab] for lab in instruments)
    return _result_from_theta(np.asarray(theta), dataset, len(planets),
                              instruments, labels_idx,
                              3.0 * dataset.span_days,
                              new_fit.n_starts_converged)


def greedy_solve(dataset: RvDataset, log=None, refit: str = "stacked",
                 escalation_factor: float = ESCALATION_RMS_FACTOR,
                 min_peak_power: float = MIN_RESIDUAL_PEAK_POWER) -> Submission:
    """Greedy planet addition gated on a BIC improvement > 10.

    Loop: periodogram of the current residuals, candidate at the screened
    top peak, re-fit, keep the candidate only if the BIC improves by more
    than the gate.  Worst case returns zero planets.

    Additions beyond the first planet are attempted only while the current
    residual RMS exceeds escalation_factor x the median error bar; residual
    scatter at the noise floor is not evidence of another planet.

    refit: "joint" re-fits all planets together from the current solution;
    "stacked" freezes previous planets and fits only the newcomer on the
    residuals (classic prewhitening).
    """
    def emit(msg):
        if log is not None:
            log.append(msg)

    current: FitResult = None
    bic_prev = _null_bic(dataset)
    emit(f"null model BIC = {bic_prev:.2f}")
    while current is None or len(current.planets) < PLANET_CAP:
        if current is None:
            residuals = dataset.rvs_ms - null_predictions(
                dataset.rvs_ms, dataset.sigmas_ms, dataset.labels)
        else:
            instruments = dataset.instruments()
            labels_idx = np.array([instruments.index(lab)
                                   for lab in dataset.labels])
            theta = []
            for p in current.planets:
                theta.extend([p.P_days,
                              _k_of_elements(p, dataset.star_mass_sun), p.e,
                              p.omega_rad,
                              wrap_angle(p.l_rad - p.omega_rad - p.Omega_rad)])
            theta.extend(current.offsets[lab] for lab in instruments)
            residuals = dataset.rvs_ms - _model_rv(
                np.asarray(theta), dataset.times_days, labels_idx,
                len(current.planets), len(instruments), dataset.t_ref_days)
        resid_rms = float(np.sqrt(np.mean(residuals ** 2)))
        sigma_med = float(np.median(dataset.sigmas_ms))
        if current is not None and resid_rms < escalation_factor * sigma_med:
            emit(f"residual rms {resid_rms:.3f} m/s at the noise floor "
                 f"(< {escalation_factor} x {sigma_med:.3f}); stop")
            break
        resid_ds = replace(dataset, rvs_ms=residuals)
        try:
            perio = gls_periodogram(resid_ds)
        except InsufficientDataError:
            break
        if not perio.peaks:
            emit("no periodogram peak in residuals; stop")
            break
        if current is not None and perio.peaks[0][1] < min_peak_power:
            emit(f"top residual peak power {perio.peaks[0][1]:.3f} below "
                 f"{min_peak_power}; stop")
            break
        candidate = screen_aliases(perio, perio.top_period())
        emit(f"candidate period {candidate:.4f} d "
             f"(top peak {perio.top_period():.4f} d, "
             f"power {perio.peaks[0][1]:.3f})")
        periods = [p.P_days for p in (current.planets if current else ())]
        periods.append(candidate)
        try:
            if refit == "stacked" and current is not None:
                new_fit = fit_keplerian(resid_ds, [candidate])
                trial = _stacked_result(dataset, current, new_fit)
            else:
                trial = fit_keplerian(dataset, periods, init=current)
        except FitFailureError:
            trial = _forced_circular_result(dataset, periods)
            emit("nonlinear fit failed; circular fallback")
        gain = bic_prev - trial.bic
        emit(f"{len(periods)}-planet fit: rms {trial.rms_ms:.3f} m/s, "
             f"BIC {trial.bic:.2f} (gain {gain:.2f})"
             + (", period at search bound" if trial.hit_period_bound else ""))
        if _degenerate_periods(trial.planets):
            emit("refit collapsed two planets onto one period; stop")
            break
        if gain > BIC_GATE:
            current = trial
            bic_prev = trial.bic
        else:
            emit("gate closed; stop")
            break
    if current is None:
        return Submission(planets=(), offsets=per_instrument_weighted_means(
            dataset.rvs_ms, dataset.sigmas_ms, dataset.labels))
    return Submission(planets=current.planets, offsets=current.offsets)
