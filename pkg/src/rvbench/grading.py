"""Grades a submitted planetary system against hidden truth.

Four pass/fail criteria, all of which must hold simultaneously:

  ok_rms        residual RMS <= 1.5x the median reported uncertainty
  ok_delta_bic  BIC(flat null) - BIC(model) per point strictly positive
  ok_match      truth/guess planets matched one-to-one (Hungarian) on a
                pairwise distance; mean exp(-d) minus a count penalty >= 0.8
  ok_count      submitted planet count equals the truth count

The pairwise distance compares noiseless single-planet RV curves with an
optimal constant offset removed, plus log-period, log-amplitude and
eccentricity terms:

  d = 4.0 * RMS(rv_t - rv_g)/K_t + |ln(P_g/P_t)| + 0.5|ln(K_g/K_t)| + 0.5|e_g - e_t|

Pairs with d > 5 are rejected before scoring.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .orbits import PlanetElements, StarContext, rv_single, semi_amplitude
from .stats import delta_bic_vs_null, per_instrument_weighted_means
from .tasks import TaskBundle

SUBMISSION_MIN_PERIOD_DAYS = 0.5
SUBMISSION_MAX_ECC = 0.8


class SubmissionFormatError(Exception):
    """Submission violates the field bounds; consumes an attempt when served."""


@dataclass(frozen=True)
class Submission:
    """Candidate planetary system; offsets are optional (fitted when absent)."""

    planets: tuple
    offsets: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "planets", tuple(self.planets))


@dataclass(frozen=True)
class MatchConfig:
    w_rv: float = 4.0
    w_period: float = 1.0
    w_amp: float = 0.5
    w_ecc: float = 0.5
    reject_d: float = 5.0
    count_penalty: float = 0.25
    pass_threshold: float = 0.8
    grid_points: int = 2048
    # stricter aggregation: normalize by the truth count instead of the
    # number of matched pairs (off by default, matches the primary metric)
    normalize_by_truth: bool = False

    def __post_init__(self):
        if min(self.w_rv, self.w_period, self.w_amp, self.w_ecc) <= 0:
            raise ValueError("distance weights must be positive")
        if not 0.0 < self.pass_threshold < 1.0:
            raise ValueError("pass threshold must lie in (0, 1)")


@dataclass(frozen=True)
class CriteriaReport:
    ok_rms: bool
    ok_delta_bic: bool
    ok_match: bool
    ok_count: bool
    rms_ms: Optional[float] = None
    median_sigma_ms: Optional[float] = None
    delta_bic_per_point: Optional[float] = None
    match_score: Optional[float] = None
    n_truth: Optional[int] = None
    n_guess: Optional[int] = None
    assignment: tuple = ()
    hints: dict = field(default_factory=dict)
    format_error: bool = False

    @property
    def passed(self) -> bool:
        return self.ok_rms and self.ok_delta_bic and self.ok_match and self.ok_count

    @classmethod
    def format_rejection(cls, message: str) -> "CriteriaReport":
        return cls(ok_rms=False, ok_delta_bic=False, ok_match=False,
                   ok_count=False, hints={"format": message}, format_error=True)


def validate_submission(sub: Submission, max_planets: int = 8) -> None:
    """Enforce the submission field bounds; raises SubmissionFormatError."""
    if len(sub.planets) > max_planets:
        raise SubmissionFormatError(
            f"submission has {len(sub.planets)} planets, cap is {max_planets}")
    for i, p in enumerate(sub.planets):
        if not isinstance(p, PlanetElements):
            raise SubmissionFormatError(f"planet {i} is not a planet record")
        if p.P_days <= SUBMISSION_MIN_PERIOD_DAYS:
            raise SubmissionFormatError(
                f"planet {i}: period {p.P_days} d must exceed "
                f"{SUBMISSION_MIN_PERIOD_DAYS} d")
        if p.e > SUBMISSION_MAX_ECC:
            raise SubmissionFormatError(
                f"planet {i}: eccentricity {p.e} above {SUBMISSION_MAX_ECC}")
    if sub.offsets is not None:
        for label, gamma in sub.offsets.items():
            if not np.isfinite(gamma):
                raise SubmissionFormatError(f"offset for {label!r} is not finite")


def forward_submission(sub: Submission, dataset) -> np.ndarray:
    """Model RVs at the observation times.

    Absent offsets are replaced by the weighted-least-squares optimal
    per-instrument constants given the planet signal (closed form: the
    weighted mean of the signal-subtracted data per instrument).
    """
    star = dataset.star
    signal = np.zeros(dataset.n_obs)
    for p in sub.planets:
        signal += rv_single(dataset.times_days, p, star)
    if sub.offsets is not None:
        offsets = sub.offsets
        missing = [lab for lab in dataset.instruments() if lab not in offsets]
        if missing:
            raise SubmissionFormatError(f"missing offsets for instruments {missing}")
    else:
        offsets = per_instrument_weighted_means(
            dataset.rvs_ms - signal, dataset.sigmas_ms, dataset.labels)
    labels = np.asarray(dataset.labels)
    pred = signal.copy()
    for lab, gamma in offsets.items():
        pred[labels == lab] += gamma
    return pred


def rms_check(observations, predictions, sigmas):
    rms = float(np.sqrt(np.mean((np.asarray(observations) -
                                 np.asarray(predictions)) ** 2)))
    median_sigma = float(np.median(sigmas))
    return bool(rms <= 1.5 * median_sigma), rms, median_sigma


def delta_bic_check(observations, sigmas, labels, predictions, n_pl):
    n = len(np.asarray(observations))
    if n < 2:
        raise ValueError("need at least two observations")
    dbic = delta_bic_vs_null(observations, sigmas, labels, predictions, n_pl)
    per_point = dbic / n
    return bool(per_point > 0.0), per_point


def _single_curve(planet, star, span, grid_points):
    grid = star.t_ref_days + np.linspace(0.0, span, grid_points)
    return rv_single(grid, planet, star)


def pair_distance(truth: PlanetElements, guess: PlanetElements,
                  star: StarContext, span: float,
                  cfg: MatchConfig = MatchConfig(),
                  truth_k_ms: Optional[float] = None) -> float:
    """Distance between one truth planet and one guess planet."""
    k_t = semi_amplitude(truth, star) if truth_k_ms is None else float(truth_k_ms)
    if k_t <= 0:
        raise ValueError("truth semi-amplitude must be positive")
    k_g = semi_amplitude(guess, star)
    diff = (_single_curve(truth, star, span, cfg.grid_points)
            - _single_curve(guess, star, span, cfg.grid_points))
    diff -= diff.mean()
    rv_term = float(np.sqrt(np.mean(diff ** 2))) / k_t
    return (cfg.w_rv * rv_term
            + cfg.w_period * abs(math.log(guess.P_days / truth.P_days))
            + cfg.w_amp * abs(math.log(k_g / k_t))
            + cfg.w_ecc * abs(guess.e - truth.e))


def optimal_assignment(dist: np.ndarray):
    """Minimum-cost one-to-one assignment over min(n_rows, n_cols) pairs."""
    rows, cols = linear_sum_assignment(dist)
    return list(zip(rows.tolist(), cols.tolist()))


def brute_force_assignment_cost(dist: np.ndarray) -> float:
    """Exhaustive permutation minimum; independent check of the solver."""
    n_r, n_c = dist.shape
    if n_r <= n_c:
        return min(sum(dist[i, c[i]] for i in range(n_r))
                   for c in itertools.permutations(range(n_c), n_r))
    return min(sum(dist[r[j], j] for j in range(n_c))
               for r in itertools.permutations(range(n_r), n_c))


def match_and_score(truth_planets, guess_planets, star: StarContext,
                    span: float, cfg: MatchConfig = MatchConfig(),
                    truth_k_ms=None):
    """Hungarian matching and the exp(-d) score with count penalty.

    Returns (ok_match, ok_count, score, assignment) where assignment lists
    the kept (truth_index, guess_index, distance) triples.
    """
    n_t, n_g = len(truth_planets), len(guess_planets)
    penalty = cfg.count_penalty * abs(n_t - n_g)
    assignment = []
    if n_t and n_g:
        dist = np.empty((n_t, n_g))
        for i, tp in enumerate(truth_planets):
            k_i = truth_k_ms[i] if truth_k_ms is not None else None
            for j, gp in enumerate(guess_planets):
                dist[i, j] = pair_distance(tp, gp, star, span, cfg, truth_k_ms=k_i)
        for i, j in optimal_assignment(dist):
            if dist[i, j] <= cfg.reject_d:
                assignment.append((i, j, float(dist[i, j])))
    if assignment:
        kept = np.array([d for _, _, d in assignment])
        denom = n_t if cfg.normalize_by_truth else kept.size
        score = float(np.sum(np.exp(-kept)) / denom - penalty)
    else:
        score = -penalty
    return score >= cfg.pass_threshold, n_t == n_g, score, tuple(assignment)


def _hints(ok_rms, ok_dbic, ok_match, ok_count, rms, median_sigma,
           dbic_pp, score, n_truth, n_guess, threshold):
    hints = {}
    if not ok_rms:
        hints["rms"] = (f"residual rms {rms:.3f} m/s exceeds 1.5x the median "
                        f"uncertainty ({1.5 * median_sigma:.3f} m/s)")
    if not ok_dbic:
        hints["delta_bic"] = (f"model is not preferred over a flat line "
                              f"(delta BIC per point = {dbic_pp:.3f})")
    if not ok_match:
        hints["match"] = (f"match score {score:.3f} is below {threshold}; "
                          f"periods or amplitudes are off")
    if not ok_count:
        direction = "add a planet" if n_guess < n_truth else "remove a planet"
        hints["count"] = f"planet count is wrong: {direction}"
    return hints


def evaluate(sub: Submission, bundle: TaskBundle,
             cfg: MatchConfig = MatchConfig(),
             max_planets: int = 8) -> CriteriaReport:
    """Run all four criteria on one submission."""
    validate_submission(sub, max_planets=max_planets)
    ds = bundle.dataset
    pred = forward_submission(sub, ds)
    ok_rms, rms, median_sigma = rms_check(ds.rvs_ms, pred, ds.sigmas_ms)
    ok_dbic, dbic_pp = delta_bic_check(ds.rvs_ms, ds.sigmas_ms, ds.labels,
                                       pred, len(sub.planets))
    ok_match, ok_count, score, assignment = match_and_score(
        bundle.truth_planets, sub.planets, ds.star, ds.span_days, cfg,
        truth_k_ms=bundle.truth_k_ms)
    return CriteriaReport(
        ok_rms=ok_rms, ok_delta_bic=ok_dbic, ok_match=ok_match,
        ok_count=ok_count, rms_ms=rms, median_sigma_ms=median_sigma,
        delta_bic_per_point=dbic_pp, match_score=score,
        n_truth=len(bundle.truth_planets), n_guess=len(sub.planets),
        assignment=assignment,
        hints=_hints(ok_rms, ok_dbic, ok_match, ok_count, rms, median_sigma,
                     dbic_pp, score, len(bundle.truth_planets),
                     len(sub.planets), cfg.pass_threshold))
