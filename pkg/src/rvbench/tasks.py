"""Seed-deterministic synthetic task generation.

A task is one draw of (planetary system, observation schedule, noise
realization), fully determined by an integer seed: attempt k of seed s uses
the substream SeedSequence(s, spawn_key=(k,)), so a rejected draw never
perturbs the next one and regeneration is bit-exact across processes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .noise import GpSpec, NoiseSpec, reported_sigmas, sample_noise
from .orbits import PlanetElements, StarContext, rv_model, semi_amplitude
from .stats import delta_bic_vs_null

TIERS = ("easy", "medium", "hard")

RESONANCE_RATIOS = (2.0, 1.5, 5.0 / 3.0)


class GenerationExhaustedError(Exception):
    """No identifiable task found within the attempt budget for a seed."""


@dataclass(frozen=True)
class GeneratorConfig:
    """All generation priors and filter thresholds in one place."""

    n_planets_max: int = 4
    n_planet_weights: tuple = (0.25, 0.25, 0.25, 0.25)
    period_range: tuple = (2.0, 300.0)
    resonance_prob: float = 0.25
    resonance_width: float = 0.03
    msini_range: tuple = (0.01, 1.0)
    ecc_alpha: float = 0.867
    ecc_beta: float = 3.03
    ecc_max: float = 0.8
    star_mass_range: tuple = (0.7, 1.3)
    n_obs_range: tuple = (30, 100)
    baseline_factor_range: tuple = (2.0, 4.0)
    white_log10_range: tuple = (-0.3, 0.7)
    sigma_point_spread: tuple = (0.7, 1.3)
    gp_prob: float = 0.4
    gp_amp_range: tuple = (0.05, 1.6)
    gp_prot_range: tuple = (10.0, 45.0)
    offset_range: tuple = (-20.0, 20.0)
    multi_instrument: bool = False
    # identifiability filter
    min_significance: float = 4.0
    max_period_to_baseline: float = 1.5
    require_truth_passes: bool = True
    max_attempts: int = 100


@dataclass(frozen=True)
class RvDataset:
    """The agent-visible observable."""

    times_days: np.ndarray
    rvs_ms: np.ndarray
    sigmas_ms: np.ndarray
    labels: tuple
    star_mass_sun: float
    t_ref_days: float

    def __post_init__(self):
        t = np.asarray(self.times_days, dtype=float)
        object.__setattr__(self, "times_days", t)
        object.__setattr__(self, "rvs_ms", np.asarray(self.rvs_ms, dtype=float))
        object.__setattr__(self, "sigmas_ms", np.asarray(self.sigmas_ms, dtype=float))
        object.__setattr__(self, "labels", tuple(self.labels))
        n = t.size
        if not (self.rvs_ms.size == n and self.sigmas_ms.size == n
                and len(self.labels) == n):
            raise ValueError("dataset arrays must have equal lengths")
        if n and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.sigmas_ms <= 0):
            raise ValueError("sigmas must be positive")
        if n and self.t_ref_days != t[0]:
            raise ValueError("t_ref must equal the first observation time")

    @property
    def n_obs(self) -> int:
        return self.times_days.size

    @property
    def span_days(self) -> float:
        return float(self.times_days[-1] - self.times_days[0])

    @property
    def star(self) -> StarContext:
        return StarContext(self.star_mass_sun, self.t_ref_days)

    def instruments(self) -> list:
        return list(dict.fromkeys(self.labels))


@dataclass(frozen=True)
class DifficultyBreakdown:
    d_base: int
    d_snr: int
    d_res: int
    d_cov: int
    d_obs: int
    d_gp: int
    d_total: int
    snr_value: float
    coverage_ratio: float
    n_res: int

    @property
    def factors(self):
        return dict(d_base=self.d_base, d_snr=self.d_snr, d_res=self.d_res,
                    d_cov=self.d_cov, d_obs=self.d_obs, d_gp=self.d_gp)


@dataclass(frozen=True)
class TaskBundle:
    """Dataset plus hidden truth; seed is None for ingested archival tasks.

    truth_k_ms carries published per-planet semi-amplitudes for archival
    tasks; when None the evaluator derives K from the elements.
    """

    seed: Optional[int]
    dataset: RvDataset
    truth_planets: tuple
    truth_offsets: dict
    noise: NoiseSpec
    difficulty: DifficultyBreakdown
    tier: str
    task_id: str = ""
    truth_k_ms: Optional[tuple] = None

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}")
        object.__setattr__(self, "truth_planets", tuple(self.truth_planets))
        if self.truth_k_ms is not None:
            ks = tuple(float(k) for k in self.truth_k_ms)
            if len(ks) != len(self.truth_planets):
                raise ValueError("truth_k_ms length must match truth_planets")
            object.__setattr__(self, "truth_k_ms", ks)
        if not self.task_id:
            tid = f"synth_{self.seed:06d}" if self.seed is not None else "archival"
            object.__setattr__(self, "task_id", tid)


def sample_system(rng: np.random.Generator, config: GeneratorConfig = GeneratorConfig()):
    """Draw one planetary system and its host star from the priors.

    Returns (planets, star) with planets sorted by increasing period.
    Draw order is fixed; changing it changes every seeded task.
    """
    star_mass = float(rng.uniform(*config.star_mass_range))
    weights = np.asarray(config.n_planet_weights, dtype=float)
    weights = weights / weights.sum()
    n_pl = int(rng.choice(np.arange(1, config.n_planets_max + 1), p=weights))

    lo, hi = np.log(config.period_range[0]), np.log(config.period_range[1])
    periods = np.sort(np.exp(rng.uniform(lo, hi, n_pl)))

    if n_pl >= 2 and rng.uniform() < config.resonance_prob:
        i = int(rng.integers(0, n_pl - 1))
        ratio = RESONANCE_RATIOS[int(rng.integers(0, len(RESONANCE_RATIOS)))]
        ratio *= 1.0 + rng.uniform(-config.resonance_width, config.resonance_width)
        outer = periods[i] * ratio
        if outer <= config.period_range[1]:
            periods[i + 1] = outer
        else:
            periods[i] = periods[i + 1] / ratio
        periods = np.sort(periods)

    msini = rng.uniform(*config.msini_range, n_pl)
    eccs = np.empty(n_pl)
    for j in range(n_pl):
        e = rng.beta(config.ecc_alpha, config.ecc_beta)
        while e > config.ecc_max:
            e = rng.beta(config.ecc_alpha, config.ecc_beta)
        eccs[j] = e
    omegas = rng.uniform(0.0, 2.0 * np.pi, n_pl)
    Omegas = rng.uniform(0.0, 2.0 * np.pi, n_pl)
    ells = rng.uniform(0.0, 2.0 * np.pi, n_pl)

    planets = tuple(
        PlanetElements(P_days=float(periods[j]), m_sin_i_mjup=float(msini[j]),
                       e=float(eccs[j]), omega_rad=float(omegas[j]),
                       l_rad=float(ells[j]), Omega_rad=float(Omegas[j]))
        for j in range(n_pl))
    return planets, StarContext(star_mass_sun=star_mass, t_ref_days=0.0)


def schedule_observations(rng: np.random.Generator, planets,
                          config: GeneratorConfig = GeneratorConfig()) -> np.ndarray:
    """Irregular timestamps over a baseline of 2-4x the shortest period."""
    if not planets:
        raise ValueError("need at least one planet to scale the baseline")
    n_obs = int(rng.integers(config.n_obs_range[0], config.n_obs_range[1] + 1))
    span = float(rng.uniform(*config.baseline_factor_range)) \
        * min(p.P_days for p in planets)
    times = np.sort(rng.uniform(0.0, span, n_obs))
    for i in range(1, n_obs):
        if times[i] <= times[i - 1]:
            times[i] = times[i - 1] + 1e-6
    return times


def count_resonant_pairs(periods, width: float = 0.03) -> int:
    """Planet pairs whose period ratio is within `width` of 2:1, 3:2 or 5:3."""
    ps = np.sort(np.asarray(periods, dtype=float))
    n = 0
    for i in range(ps.size):
        for j in range(i + 1, ps.size):
            ratio = ps[j] / ps[i]
            if any(abs(ratio / r - 1.0) <= width for r in RESONANCE_RATIOS):
                n += 1
    return n


def _snr_and_sigma_eff(planets, star, sigmas_ms, noise: NoiseSpec, truth_k=None):
    sigma_gp = noise.gp.sigma_gp_ms if noise.gp is not None else 0.0
    sigma_eff = math.sqrt(float(np.median(sigmas_ms)) ** 2 + sigma_gp ** 2)
    if truth_k is not None:
        ks = list(truth_k)
    else:
        ks = [semi_amplitude(p, star) for p in planets]
    return min(ks) / sigma_eff, sigma_eff, ks


def score_difficulty(bundle: TaskBundle) -> DifficultyBreakdown:
    """Six additive physics factors, total clipped to [1, 10]."""
    planets = bundle.truth_planets
    ds = bundle.dataset
    snr, _, _ = _snr_and_sigma_eff(planets, ds.star, ds.sigmas_ms, bundle.noise,
                                   bundle.truth_k_ms)
    n_res = count_resonant_pairs([p.P_days for p in planets])
    coverage = ds.span_days / max(p.P_days for p in planets)
    sigma_gp = bundle.noise.gp.sigma_gp_ms if bundle.noise.gp is not None else None
    return rubric_breakdown(len(planets), snr, n_res, coverage, ds.n_obs, sigma_gp)


def rubric_breakdown(n_planets, snr, n_res, coverage, n_obs, sigma_gp):
    """Band lookup for the six-factor rubric; sigma_gp None means no GP."""
    d_base = min(n_planets, 4)
    if snr > 5:
        d_snr = 0
    elif snr > 2:
        d_snr = 1
    elif snr > 1:
        d_snr = 2
    else:
        d_snr = 3
    d_res = min(2, n_res)
    if coverage >= 3:
        d_cov = 0
    elif coverage >= 2:
        d_cov = 1
    else:
        d_cov = 2
    if n_obs >= 80:
        d_obs = 0
    elif n_obs >= 50:
        d_obs = 1
    elif n_obs >= 30:
        d_obs = 2
    else:
        d_obs = 3
    if sigma_gp is None:
        d_gp = 0
    elif sigma_gp < 0.5:
        d_gp = 1
    elif sigma_gp < 1.0:
        d_gp = 2
    else:
        d_gp = 3
    total = d_base + d_snr + d_res + d_cov + d_obs + d_gp
    return DifficultyBreakdown(
        d_base=d_base, d_snr=d_snr, d_res=d_res, d_cov=d_cov, d_obs=d_obs,
        d_gp=d_gp, d_total=int(np.clip(total, 1, 10)),
        snr_value=float(snr), coverage_ratio=float(coverage), n_res=int(n_res))


def assign_tier(d: int) -> str:
    if not 1 <= d <= 10:
        raise ValueError(f"difficulty outside [1, 10]: {d}")
    if d <= 2:
        return "easy"
    if d <= 6:
        return "medium"
    return "hard"


def is_identifiable(bundle: TaskBundle,
                    config: GeneratorConfig = GeneratorConfig()) -> bool:
    """Whether the truth system is recoverable in principle.

    Every planet must clear a detection-significance floor
    (K * sqrt(n/2) / sigma_eff >= 4, inclusive) and fit inside the observing
    window (P <= 1.5 * baseline).
    """
    ds = bundle.dataset
    _, sigma_eff, ks = _snr_and_sigma_eff(bundle.truth_planets, ds.star,
                                          ds.sigmas_ms, bundle.noise,
                                          bundle.truth_k_ms)
    root_half_n = math.sqrt(ds.n_obs / 2.0)
    for planet, k in zip(bundle.truth_planets, ks):
        if k * root_half_n / sigma_eff < config.min_significance:
            return False
        if planet.P_days > config.max_period_to_baseline * ds.span_days:
            return False
    return True


def truth_passes_by_construction(bundle: TaskBundle) -> bool:
    """Whether the truth model grades cleanly on the realized noise draw.

    Ground truth must sit within the RMS gate (residual RMS <= 1.5x the
    median error bar) and be BIC-preferred over a flat line; the generator
    rejects draws that fail so every shipped task is solvable.
    """
    ds = bundle.dataset
    pred = rv_model(ds.times_days, bundle.truth_planets, ds.star,
                    bundle.truth_offsets, ds.labels)
    rms = float(np.sqrt(np.mean((ds.rvs_ms - pred) ** 2)))
    if rms > 1.5 * float(np.median(ds.sigmas_ms)):
        return False
    return delta_bic_vs_null(ds.rvs_ms, ds.sigmas_ms, ds.labels, pred,
                             len(bundle.truth_planets)) > 0


_INSTRUMENT_NAMES = tuple(f"inst_{c}" for c in "ABCDEFGH")


def _attempt_rng(seed: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))


def generate_task(seed: int,
                  config: GeneratorConfig = GeneratorConfig()) -> TaskBundle:
    """Generate the task for one seed, redrawing until identifiable."""
    for attempt in range(config.max_attempts):
        rng = _attempt_rng(seed, attempt)
        planets, star0 = sample_system(rng, config)
        times = schedule_observations(rng, planets, config)

        sigma_w = 10.0 ** rng.uniform(*config.white_log10_range)
        point_sigmas = sigma_w * rng.uniform(*config.sigma_point_spread, times.size)
        gp = None
        if rng.uniform() < config.gp_prob:
            gp = GpSpec(sigma_gp_ms=float(rng.uniform(*config.gp_amp_range)),
                        p_rot_days=float(rng.uniform(*config.gp_prot_range)))
        noise = NoiseSpec(sigma_w_ms=float(sigma_w), jitter_ms=0.0, gp=gp)

        if config.multi_instrument:
            n_inst = int(rng.integers(2, 4))
        else:
            n_inst = 1
        names = _INSTRUMENT_NAMES[:n_inst]
        offsets = {name: float(rng.uniform(*config.offset_range)) for name in names}
        if n_inst == 1:
            labels = tuple([names[0]] * times.size)
        else:
            labels = tuple(names[i] for i in rng.integers(0, n_inst, times.size))

        star = StarContext(star0.star_mass_sun, t_ref_days=float(times[0]))
        clean = rv_model(times, planets, star, offsets, labels)
        eps = sample_noise(rng, times, point_sigmas, noise)
        sigmas = reported_sigmas(point_sigmas, noise)

        dataset = RvDataset(times_days=times, rvs_ms=clean + eps,
                            sigmas_ms=sigmas, labels=labels,
                            star_mass_sun=star.star_mass_sun,
                            t_ref_days=star.t_ref_days)
        snr, _, _ = _snr_and_sigma_eff(planets, star, sigmas, noise)
        n_res = count_resonant_pairs([p.P_days for p in planets])
        coverage = dataset.span_days / max(p.P_days for p in planets)
        breakdown = rubric_breakdown(len(planets), snr, n_res, coverage,
                                        dataset.n_obs,
                                        gp.sigma_gp_ms if gp else None)
        bundle = TaskBundle(seed=seed, dataset=dataset, truth_planets=planets,
                            truth_offsets=offsets, noise=noise,
                            difficulty=breakdown,
                            tier=assign_tier(breakdown.d_total))
        if is_identifiable(bundle, config) and (
                not config.require_truth_passes
                or truth_passes_by_construction(bundle)):
            return bundle
    raise GenerationExhaustedError(
        f"seed {seed}: no identifiable task in {config.max_attempts} attempts")
