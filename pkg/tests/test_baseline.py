import numpy as np
import pytest

from rvbench.baseline import (
    DegenerateFitError,
    InsufficientDataError,
    fit_keplerian,
    fit_one_sine,
    gls_periodogram,
    greedy_solve,
    msini_from_semi_amplitude,
    screen_aliases,
)
from rvbench.grading import evaluate
from rvbench.orbits import PlanetElements, StarContext, rv_model, semi_amplitude
from rvbench.tasks import RvDataset, generate_task


def make_dataset(planets, n_obs=80, span=60.0, sigma=1.0, noise_seed=None,
                 offset=0.0, star_mass=1.0):
    rng = np.random.default_rng(noise_seed if noise_seed is not None else 0)
    times = np.sort(rng.uniform(0.0, span, n_obs))
    star = StarContext(star_mass, t_ref_days=float(times[0]))
    labels = tuple(["inst_A"] * n_obs)
    clean = rv_model(times, planets, star, {"inst_A": offset}, labels)
    rvs = clean + (rng.normal(0, sigma, n_obs) if noise_seed is not None
                   else 0.0)
    return RvDataset(times, rvs, np.full(n_obs, sigma), labels, star_mass,
                     float(times[0]))


class TestPeriodogram:
    def test_recovers_injected_period(self):
        p = PlanetElements(20.0, 0.6, 0.0, 0.0, 1.0)
        ds = make_dataset([p], n_obs=80, span=80.0)
        perio = gls_periodogram(ds)
        top_p, top_power = perio.peaks[0]
        df = perio.frequencies[1] - perio.frequencies[0]
        assert abs(1.0 / top_p - 1.0 / 20.0) <= df
        assert top_power > 0.9

    def test_constant_series_zero_power(self):
        times = np.linspace(0, 50, 40)
        ds = RvDataset(times, np.full(40, 7.7), np.ones(40),
                       tuple(["a"] * 40), 1.0, 0.0)
        perio = gls_periodogram(ds)
        assert np.max(perio.powers) <= 1e-10
        assert perio.peaks == ()

    def test_long_period_beyond_span_biased_peak(self):
        # period exceeding the data span still yields a dominant
        # low-frequency peak near (but biased from) the true period
        p = PlanetElements(117.6, 0.9, 0.25, 0.4, 2.0)
        ds = make_dataset([p], n_obs=75, span=106.7, sigma=1.05, noise_seed=3)
        perio = gls_periodogram(ds)
        assert perio.peaks[0][0] > 60.0

    def test_insufficient_data(self):
        times = np.linspace(0, 10, 4)
        ds = RvDataset(times, np.zeros(4), np.ones(4), tuple(["a"] * 4),
                       1.0, 0.0)
        with pytest.raises(InsufficientDataError):
            gls_periodogram(ds)

    def test_powers_bounded_and_grid(self):
        p = PlanetElements(9.0, 0.4, 0.3, 1.0, 2.0)
        ds = make_dataset([p], n_obs=60, span=40.0, sigma=0.5, noise_seed=1)
        perio = gls_periodogram(ds, n_freq=5000)
        assert perio.frequencies.size == 5000
        assert perio.powers.min() >= 0.0 and perio.powers.max() <= 1.0
        assert perio.frequencies[0] == pytest.approx(1 / (3 * ds.span_days))
        assert perio.frequencies[-1] == pytest.approx(2.0)

    def test_offsets_do_not_alias_as_long_periods(self):
        rng = np.random.default_rng(5)
        times = np.sort(rng.uniform(0, 60, 70))
        labels = tuple("inst_A" if i < 35 else "inst_B" for i in range(70))
        rvs = np.where(np.arange(70) < 35, 30.0, -25.0) + rng.normal(0, 1, 70)
        ds = RvDataset(times, rvs, np.ones(70), labels, 1.0, float(times[0]))
        perio = gls_periodogram(ds)
        assert perio.powers.max() < 0.5


class TestScreenAliases:
    def test_prefers_defended_peak(self):
        p = PlanetElements(20.0, 0.6, 0.0, 0.0, 1.0)
        ds = make_dataset([p], n_obs=80, span=80.0)
        perio = gls_periodogram(ds)
        assert screen_aliases(perio, perio.top_period()) == pytest.approx(
            perio.top_period())


class TestFitOneSine:
    def test_exact_on_noiseless_sinusoid(self):
        p = PlanetElements(12.0, 0.5, 0.0, 0.0, 2.0)
        ds = make_dataset([p], n_obs=60, span=50.0, offset=4.2)
        amp, phase, offsets, rms = fit_one_sine(ds, 12.0)
        assert rms <= 1e-9
        assert amp == pytest.approx(semi_amplitude(p, ds.star), rel=1e-9)
        assert offsets["inst_A"] == pytest.approx(4.2, abs=1e-9)

    def test_wrong_period_high_rms(self):
        p = PlanetElements(12.0, 0.5, 0.0, 0.0, 2.0)
        ds = make_dataset([p], n_obs=60, span=50.0)
        *_, rms = fit_one_sine(ds, 5.0)
        assert rms > 3.0  # far above the 1 m/s error bars

    def test_eccentric_signal_worse_than_keplerian(self):
        p = PlanetElements(15.0, 0.8, 0.5, 1.0, 2.0)
        ds = make_dataset([p], n_obs=90, span=60.0)
        *_, sine_rms = fit_one_sine(ds, 15.0)
        fit = fit_keplerian(ds, [15.0])
        assert fit.rms_ms < sine_rms

    def test_degenerate_normal_equations(self):
        times = np.array([0.0, 1.0])
        ds = RvDataset(times, np.zeros(2), np.ones(2), ("a", "a"), 1.0, 0.0)
        with pytest.raises(DegenerateFitError):
            fit_one_sine(ds, 10.0)


class TestMsiniInversion:
    def test_round_trip_through_semi_amplitude(self):
        for msini, P, e, M in [(0.5, 20.0, 0.3, 1.0), (1.0, 300.0, 0.0, 0.8),
                               (0.01, 2.0, 0.6, 1.3)]:
            p = PlanetElements(P, msini, e, 0.0, 0.0)
            star = StarContext(M, 0.0)
            k = semi_amplitude(p, star)
            back = msini_from_semi_amplitude(k, P, e, M)
            assert back == pytest.approx(msini, rel=1e-10)


class TestFitKeplerian:
    def test_truth_initialized_noiseless_fixed_point(self):
        p = PlanetElements(25.0, 0.7, 0.35, 1.2, 2.0)
        ds = make_dataset([p], n_obs=70, span=80.0, offset=-3.0)
        fit = fit_keplerian(ds, [25.0])
        assert fit.rms_ms <= 1e-6
        assert fit.n_starts_converged >= 1

    def test_high_snr_circular_recovery(self):
        p = PlanetElements(18.0, 0.8, 0.0, 0.0, 2.5)
        ds = make_dataset([p], n_obs=80, span=70.0, sigma=1.0, noise_seed=7)
        perio = gls_periodogram(ds)
        fit = fit_keplerian(ds, [perio.top_period()])
        best = fit.planets[0]
        assert abs(best.P_days - 18.0) / 18.0 < 0.01
        k_true = semi_amplitude(p, ds.star)
        k_fit = semi_amplitude(best, ds.star)
        assert abs(k_fit - k_true) / k_true < 0.10

    def test_period_bound_flagged(self):
        # signal period beyond the span drives the fit to the search bound
        p = PlanetElements(117.6, 0.9, 0.25, 0.4, 2.0)
        ds = make_dataset([p], n_obs=75, span=36.0, sigma=1.0, noise_seed=3)
        fit = fit_keplerian(ds, [105.0])
        if fit.hit_period_bound:
            assert max(q.P_days for q in fit.planets) >= 3 * ds.span_days * 0.99
        # the flag must at least exist and be boolean
        assert isinstance(fit.hit_period_bound, bool)

    def test_no_initial_periods(self):
        p = PlanetElements(18.0, 0.8, 0.0, 0.0, 2.5)
        ds = make_dataset([p])
        with pytest.raises(ValueError):
            fit_keplerian(ds, [])


class TestGreedySolve:
    def test_flat_noise_zero_planets(self):
        rng = np.random.default_rng(11)
        times = np.sort(rng.uniform(0, 60, 60))
        rvs = rng.normal(5.0, 1.0, 60)
        ds = RvDataset(times, rvs, np.ones(60), tuple(["a"] * 60), 1.0,
                       float(times[0]))
        sub = greedy_solve(ds)
        assert sub.planets == ()

    def test_single_strong_planet(self):
        p = PlanetElements(22.0, 0.9, 0.1, 0.5, 1.0)
        ds = make_dataset([p], n_obs=80, span=70.0, sigma=1.0, noise_seed=5)
        log = []
        sub = greedy_solve(ds, log=log)
        assert len(sub.planets) == 1
        assert abs(sub.planets[0].P_days - 22.0) / 22.0 < 0.01
        assert any("gain" in line for line in log)

    def test_determinism(self):
        b = generate_task(3)
        s1 = greedy_solve(b.dataset)
        s2 = greedy_solve(b.dataset)
        assert s1.planets == s2.planets
        assert s1.offsets == s2.offsets

    def test_submission_always_bounds_conformant(self):
        from rvbench.grading import validate_submission
        for seed in range(8):
            b = generate_task(seed)
            sub = greedy_solve(b.dataset)
            validate_submission(sub, max_planets=4)
            report = evaluate(sub, b)  # grades without format rejection
            assert report.format_error is False

    def test_residual_whitening_on_easy_singles(self):
        # post-fit residual rms within 1.2x the injected white scale on at
        # least 90% of single-planet easy fixtures
        from rvbench.grading import forward_submission, Submission
        whitened, total = 0, 0
        seed = 0
        while total < 10:
            b = generate_task(seed)
            seed += 1
            if b.tier != "easy" or len(b.truth_planets) != 1:
                continue
            total += 1
            sub = greedy_solve(b.dataset)
            pred = forward_submission(Submission(sub.planets, sub.offsets),
                                      b.dataset)
            rms = float(np.sqrt(np.mean((b.dataset.rvs_ms - pred) ** 2)))
            if rms <= 1.2 * b.noise.sigma_w_ms:
                whitened += 1
        assert whitened >= 9, (whitened, total)

    def test_gate_soundness_on_accepted_planets(self):
        # every accepted planet improved BIC by > 10: removing the last
        # accepted planet and re-fitting must cost > 10 BIC
        from rvbench.baseline import fit_keplerian as fk
        from rvbench.stats import bic, gaussian_loglike
        from rvbench.grading import forward_submission, Submission
        b = generate_task(1)  # single strong planet medium
        sub = greedy_solve(b.dataset)
        if len(sub.planets) < 1:
            pytest.skip("no planet accepted")
        ds = b.dataset
        pred = forward_submission(Submission(sub.planets, sub.offsets), ds)
        k_model = 5 * len(sub.planets) + 1
        full = bic(gaussian_loglike(ds.rvs_ms, pred, ds.sigmas_ms), k_model,
                   ds.n_obs)
        if len(sub.planets) == 1:
            from rvbench.stats import null_predictions
            null = null_predictions(ds.rvs_ms, ds.sigmas_ms, ds.labels)
            reduced = bic(gaussian_loglike(ds.rvs_ms, null, ds.sigmas_ms), 1,
                          ds.n_obs)
        else:
            fit = fk(ds, [p.P_days for p in sub.planets[:-1]])
            reduced = fit.bic
        assert reduced - full > 10.0
