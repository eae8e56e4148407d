"""Steady-state occupancy split vs a brute-force grid oracle."""

import numpy as np
import pytest

from perimsim.fundamentals import FundamentalDiagram, ReservoirParams
from perimsim.steady_state import (InfeasibleDemandError, discharge,
                                   risk_adjusted_occupancies, steady_state_gates,
                                   steady_state_occupancies, variance_coefficient)


def _res(rid="A", v_f=35.0, rho_j=180.0, q_max=1580.0, L=100.0, B=2.5,
         alpha=1e-3, beta=0.4, gamma=1.2):
    fd = FundamentalDiagram.triangular(v_f, rho_j, q_max)
    return ReservoirParams(id=rid, L=L, fd=fd, alpha=alpha, beta=beta,
                           gamma=gamma, eta=0.0, kappa=0.2, B_trip=B)


def _random_res(rng, rid):
    v_f = rng.uniform(25.0, 90.0)
    rho_j = rng.uniform(100.0, 200.0)
    q_max = v_f * rng.uniform(0.15, 0.45) * rho_j
    return _res(rid=rid, v_f=v_f, rho_j=rho_j, q_max=q_max,
                L=rng.uniform(20.0, 120.0), B=rng.uniform(1.5, 4.0),
                alpha=rng.uniform(1e-4, 5e-3), beta=rng.uniform(0.0, 0.6),
                gamma=rng.uniform(0.8, 2.0))


def _oracle_min_stock(F, pa, pb, w_a=1.0, w_b=1.0, grid=0.1):
    """Grid search: minimize w_a*N_A + w_b*N_B s.t. discharge >= F."""
    n_a_max = pa.fd.rho_c * pa.L
    n_b_max = pb.fd.rho_c * pb.L
    best = (np.inf, None, None)
    nb_grid = np.arange(0.0, n_b_max + grid, grid)
    gb_grid = nb_grid * pb.fd.v_f / pb.B_trip
    for n_a in np.arange(0.0, n_a_max + grid, grid):
        g_a = n_a * pa.fd.v_f / pa.B_trip
        need = F - g_a
        if need <= 0.0:
            n_b = 0.0
        else:
            idx = np.searchsorted(gb_grid, need)
            if idx >= len(nb_grid):
                continue
            n_b = nb_grid[idx]
        cost = w_a * n_a + w_b * n_b
        if cost < best[0]:
            best = (cost, n_a, n_b)
    return best


class TestSteadyStateOccupancies:
    def test_symmetric_split(self):
        pa, pb = _res("A"), _res("B")
        n_a, n_b = steady_state_occupancies(2000.0, 2000.0, pa, pb)
        assert n_a == pytest.approx(n_b, abs=1e-9)
        u_ab, u_ba = steady_state_gates((n_a, n_b), 2000.0, 2000.0, pa, pb)
        assert u_ab == 0.0 and u_ba == 0.0

    def test_total_outflow_matches_demand(self):
        pa = _res("A", v_f=35.0)
        pb = _res("B", v_f=85.0, rho_j=140.0, q_max=2350.0, B=2.0)
        f_a, f_b = 3000.0, 5000.0
        n_a, n_b = steady_state_occupancies(f_a, f_b, pa, pb)
        assert discharge(n_a, pa) + discharge(n_b, pb) == pytest.approx(f_a + f_b, rel=1e-9)

    def test_infeasible_demand_raises(self):
        pa, pb = _res("A", L=10.0), _res("B", L=10.0)
        cap = pa.fd.q_max * pa.L / pa.B_trip + pb.fd.q_max * pb.L / pb.B_trip
        with pytest.raises(InfeasibleDemandError):
            steady_state_occupancies(cap * 0.7, cap * 0.7, pa, pb)

    def test_matches_bruteforce_on_random_parameterizations(self):
        rng = np.random.default_rng(2024)
        for _ in range(10):
            pa, pb = _random_res(rng, "A"), _random_res(rng, "B")
            cap = pa.fd.q_max * pa.L / pa.B_trip + pb.fd.q_max * pb.L / pb.B_trip
            F = rng.uniform(0.2, 0.9) * cap
            n_a, n_b = risk_adjusted_occupancies(F, pa, pb, theta=0.0)
            _, o_a, o_b = _oracle_min_stock(F, pa, pb)
            assert n_a + n_b == pytest.approx(o_a + o_b, abs=0.25)

    def test_theta_zero_coincides_with_risk_neutral(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            pa, pb = _random_res(rng, "A"), _random_res(rng, "B")
            cap = pa.fd.q_max * pa.L / pa.B_trip + pb.fd.q_max * pb.L / pb.B_trip
            F = rng.uniform(0.2, 0.9) * cap
            n0 = steady_state_occupancies(F * 0.6, F * 0.4, pa, pb)
            nt = risk_adjusted_occupancies(F, pa, pb, theta=0.0)
            assert n0[0] == pytest.approx(nt[0], abs=1e-9)
            assert n0[1] == pytest.approx(nt[1], abs=1e-9)


class TestRiskAdjusted:
    def test_directional_bias_relieves_riskier_reservoir(self):
        # same discharge marginal cost; A carries more accident variance
        pa = _res("A", alpha=5e-3, beta=0.5, gamma=1.2)
        pb = _res("B", alpha=5e-4, beta=0.1, gamma=1.2)
        assert variance_coefficient(pa) > variance_coefficient(pb)
        F = 3000.0
        n0 = risk_adjusted_occupancies(F, pa, pb, theta=0.0)
        for theta in (0.5, 2.0, 10.0):
            nt = risk_adjusted_occupancies(F, pa, pb, theta=theta)
            assert nt[0] <= n0[0] + 1e-9
        n_big = risk_adjusted_occupancies(F, pa, pb, theta=50.0)
        assert n_big[0] < n0[0]

    def test_weighted_solution_matches_weighted_oracle(self):
        pa = _res("A", alpha=5e-3, beta=0.5)
        pb = _res("B", alpha=5e-4, beta=0.1, v_f=60.0, q_max=2000.0, rho_j=160.0)
        theta, c_T = 3.0, 1.0
        w_a = c_T + theta * variance_coefficient(pa) / pa.gamma**2
        w_b = c_T + theta * variance_coefficient(pb) / pb.gamma**2
        F = 2500.0
        n_a, n_b = risk_adjusted_occupancies(F, pa, pb, theta=theta, c_T=c_T)
        _, o_a, o_b = _oracle_min_stock(F, pa, pb, w_a=w_a, w_b=w_b)
        assert w_a * n_a + w_b * n_b == pytest.approx(w_a * o_a + w_b * o_b, abs=0.5)


class TestGates:
    def test_closed_form_offset(self):
        # engineered so F_A - F_B - g_A + g_B = 400 -> (200, 0)
        pa, pb = _res("A"), _res("B")
        n_a, n_b = 100.0, 100.0
        g = discharge(n_a, pa)
        f_a = g + 300.0
        f_b = g - 100.0
        u_ab, u_ba = steady_state_gates((n_a, n_b), f_a, f_b, pa, pb)
        assert u_ab == pytest.approx(200.0)
        assert u_ba == 0.0

    def test_clipping_to_metering_bound(self):
        pa, pb = _res("A"), _res("B")
        u_ab, u_ba = steady_state_gates((100.0, 100.0), 10000.0, 0.0, pa, pb,
                                        u_bar=(150.0, 150.0))
        assert u_ab == 150.0

    def test_negative_offset_routes_to_other_gate(self):
        pa, pb = _res("A"), _res("B")
        g = discharge(80.0, pa)
        u_ab, u_ba = steady_state_gates((80.0, 80.0), g - 500.0, g + 500.0, pa, pb)
        assert u_ab == 0.0
        assert u_ba == pytest.approx(500.0)
