"""Accident process: intensity, live load, sampling, moments, Kolmogorov."""

import math

import numpy as np
import pytest

from perimsim.fundamentals import DomainError, FundamentalDiagram, ReservoirParams
from perimsim.hawkes import (HawkesState, MomentState, decay_load, expected_load_step,
                             intensity, kolmogorov_forward, live_load_from_events,
                             moment_step, sample_accidents)


def _params(alpha=1.5e-4, beta=0.40, gamma=1.2, eta=5e-4):
    fd = FundamentalDiagram.triangular(35.0, 180.0, 1580.0)
    return ReservoirParams(id="A", L=328.9, fd=fd, alpha=alpha, beta=beta,
                           gamma=gamma, eta=eta, kappa=0.2)


def _poisson_pmf(n, mean):
    return math.exp(n * math.log(mean) - mean - math.lgamma(n + 1)) if mean > 0 else float(n == 0)


class TestIntensity:
    def test_empty_network(self):
        assert intensity(0.0, 0.0, 30.0, 30.0, _params()) == 0.0

    def test_exposure_term(self):
        assert intensity(1000.0, 0.0, 30.0, 30.0, _params()) == pytest.approx(0.15)

    def test_unit_jump_after_accident(self):
        p = _params(alpha=0.0, beta=0.40, eta=0.0)
        assert intensity(0.0, 1.0, 30.0, 30.0, p) == pytest.approx(0.40)

    def test_speed_dispersion_term(self):
        p = _params(alpha=0.0, beta=0.0, eta=5e-4)
        assert intensity(0.0, 0.0, 85.0, 35.0, p) == pytest.approx(5e-4 * 50.0)

    def test_negative_inputs_rejected(self):
        with pytest.raises(DomainError):
            intensity(-1.0, 0.0, 30.0, 30.0, _params())


class TestDecayLoad:
    def test_closed_form(self):
        assert decay_load(1.0, 1.2, 1.0) == pytest.approx(math.exp(-1.2))

    def test_zero_dt(self):
        assert decay_load(0.7, 1.2, 0.0) == 0.7

    def test_zero_load(self):
        assert decay_load(0.0, 1.2, 2.0) == 0.0

    def test_markov_sufficiency(self):
        # recursive decay+jump equals recomputation from the event history
        gamma = 1.2
        rng = np.random.default_rng(11)
        events = np.sort(rng.uniform(0.0, 2.0, 40))
        dt = 1.0 / 3600.0
        a, t = 0.0, 0.0
        i = 0
        while t < 2.5:
            a = decay_load(a, gamma, dt)
            t += dt
            while i < len(events) and events[i] <= t:
                # place the jump exactly at the event time, then decay remainder
                a += math.exp(-gamma * (t - events[i]))
                i += 1
        ref = live_load_from_events(events, 2.5 - 1e-15, gamma)
        assert a == pytest.approx(ref, abs=1e-9)


class TestSampling:
    def test_zero_intensity(self):
        rng = np.random.default_rng(0)
        assert all(sample_accidents(0.0, 1 / 3600, rng) == 0 for _ in range(100))

    def test_event_probability_closed_form(self):
        # empirical mean over many steps within 3 standard errors of 1-exp(-lam dt)
        lam, dt = 6.0, 1.0 / 3600.0
        p = 1.0 - math.exp(-lam * dt)
        n = 1_000_000
        rng = np.random.default_rng(42)
        hits = sample_accidents(lam, dt, rng, size=n).sum()
        se = math.sqrt(p * (1 - p) / n)
        assert abs(hits / n - p) < 3.0 * se

    def test_coarse_step_warns(self):
        rng = np.random.default_rng(1)
        with pytest.warns(RuntimeWarning):
            sample_accidents(400.0, 1.0 / 3600.0 * 4.0, rng)


class TestMomentStep:
    def test_poisson_closed_form(self):
        # constant total intensity: m = Lam*T and variance = Lam*T
        mom = MomentState()
        lam, T, n = 3.0, 1.0, 20000
        dt = T / n
        for _ in range(n):
            moment_step(mom, lam / 2, lam / 2, dt)
        assert mom.m == pytest.approx(lam * T, rel=1e-9)
        assert mom.variance == pytest.approx(lam * T, rel=1e-3)

    def test_zero_intensity(self):
        mom = MomentState()
        moment_step(mom, 0.0, 0.0, 0.1)
        assert mom.m == 0.0 and mom.s == 0.0

    def test_variance_nonnegative_random_paths(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            mom = MomentState()
            for lam in rng.uniform(0.0, 8.0, 500):
                moment_step(mom, lam, lam / 3, 1e-3)
            assert mom.variance >= -1e-9

    def test_matches_frozen_path_monte_carlo(self):
        # sampled counts along a state-frozen intensity path vs the ODE pair
        gamma, beta, alpha_n = 1.2, 0.4, 2.0  # alpha*N frozen at 2/h
        T, n_steps, n_paths = 1.0, 720, 10000
        dt = T / n_steps
        lam_path = np.empty(n_steps)
        a = 0.0
        for k in range(n_steps):
            lam_path[k] = alpha_n + beta * a
            a = expected_load_step(a, lam_path[k], gamma, dt)
        mom = MomentState()
        for lam in lam_path:
            moment_step(mom, lam, 0.0, dt)
        rng = np.random.default_rng(123)
        p_step = 1.0 - np.exp(-lam_path * dt)
        counts = (rng.random((n_paths, n_steps)) < p_step).sum(axis=1)
        mean, var = counts.mean(), counts.var(ddof=1)
        se_mean = counts.std(ddof=1) / math.sqrt(n_paths)
        m4 = np.mean((counts - mean) ** 4)
        se_var = math.sqrt(max(m4 - var**2, 0.0) / n_paths)
        assert abs(mean - mom.m) < 3.0 * se_mean
        assert abs(var - mom.variance) < 3.0 * se_var


class TestBranching:
    def test_subcritical_long_run_rate(self):
        # frozen exposure: long-run accident rate = mu * gamma/(gamma-beta);
        # long horizon keeps the cluster-count noise below the 5% band
        mu, beta, gamma = 2.0, 0.4, 1.2
        dt = 5e-3
        n_steps = 400_000
        rng = np.random.default_rng(77)
        a = 0.0
        hits = 0
        decay = math.exp(-gamma * dt)
        for _ in range(n_steps):
            lam = mu + beta * a
            event = rng.random() < 1.0 - math.exp(-lam * dt)
            a = a * decay + event
            hits += event
        rate = hits / (n_steps * dt)
        expected = mu * gamma / (gamma - beta)
        assert abs(rate - expected) / expected < 0.05


class TestKolmogorov:
    def test_constant_intensity_matches_poisson(self):
        lam, T = 3.0, 1.0
        p = kolmogorov_forward(lambda t: lam, n_max=40, T=T, dt=1e-3)
        ref = np.array([_poisson_pmf(n, lam * T) for n in range(41)])
        assert np.max(np.abs(p - ref)) < 1e-6
        assert abs(p.sum() - 1.0) < 1e-6

    def test_zero_intensity(self):
        p = kolmogorov_forward(lambda t: 0.0, n_max=5, T=1.0, dt=1e-3)
        assert p[0] == pytest.approx(1.0, abs=1e-12)

    def test_time_varying_mass_conservation(self):
        p = kolmogorov_forward(lambda t: 2.0 + 1.5 * math.sin(6.0 * t), n_max=40, T=1.5, dt=1e-3)
        assert abs(p.sum() - 1.0) < 1e-6

    def test_truncation_error_raised(self):
        with pytest.raises(DomainError, match="n_max"):
            kolmogorov_forward(lambda t: 8.0, n_max=6, T=1.0, dt=1e-3)


class TestHawkesState:
    def test_counts_match_events(self):
        st = HawkesState()
        st.event_times.extend([0.1, 0.2])
        st.n_acc = 2
        assert st.n_acc == len(st.event_times)
