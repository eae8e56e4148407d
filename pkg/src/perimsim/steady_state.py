"""Steady-state gating analytics for constant demand.

Under exponential trip lengths the bathtub reduces to dN/dt = F - N v(N)/B,
so each reservoir has a concave piecewise-linear discharge curve g(N). The
long-run optimal split minimizes (weighted) total occupancy subject to
total discharge matching total inflow; the shared-multiplier condition is
resolved by bisection with explicit handling of the kink at capacity.
"""

from __future__ import annotations

import numpy as np

from .bathtub import exit_flow_exponential
from .fundamentals import DomainError, ReservoirParams, speed


class InfeasibleDemandError(ValueError):
    """Total inflow exceeds the combined discharge capacity."""


def _g_max(p: ReservoirParams) -> float:
    """Peak discharge (veh/h) of the exponential-length bathtub."""
    return p.fd.q_max * p.L / p.B_trip


def discharge(N: float, p: ReservoirParams) -> float:
    """g(N) = N v(N/L) / B for one reservoir."""
    return exit_flow_exponential(N, p.B_trip, speed(N / p.L, p.fd))


def variance_coefficient(p: ReservoirParams) -> float:
    """Per-occupancy accident-count variance coefficient alpha*(gamma+beta)."""
    return p.alpha * (p.gamma + p.beta)


def risk_adjusted_occupancies(F: float, params_A: ReservoirParams, params_B: ReservoirParams,
                              theta: float, c_T: float = 1.0) -> tuple[float, float]:
    """Occupancy split minimizing risk-weighted stock at total outflow F.

    Solves min w_A N_A + w_B N_B s.t. g_A(N_A) + g_B(N_B) = F with
    w_r = c_T + theta*sigma_r/gamma_r^2. The optimality condition equalizes
    w_r / g_r'(N_r) through a shared multiplier; with piecewise-linear g the
    multiplier is located by bisection over the kink and ties are split in
    proportion to capacity (the uncongested branch always dominates).
    """
    if theta < 0.0 or c_T < 0.0:
        raise DomainError("theta and c_T must be non-negative")
    params = (params_A, params_B)
    g_max = [_g_max(p) for p in params]
    if F > g_max[0] + g_max[1] + 1e-9:
        raise InfeasibleDemandError(
            f"inflow {F:.1f} veh/h exceeds combined discharge capacity {g_max[0] + g_max[1]:.1f}"
        )
    if F < 0.0:
        raise DomainError("F must be non-negative")
    # marginal occupancy cost per unit of discharge on the free-flow branch
    w = [c_T + theta * variance_coefficient(p) / p.gamma ** 2 for p in params]
    m = [w[r] * params[r].B_trip / params[r].fd.v_f for r in (0, 1)]

    def supply(mu: float) -> float:
        return sum(g_max[r] for r in (0, 1) if m[r] <= mu)

    lo, hi = 0.0, max(m) + 1.0
    if supply(lo) >= F:
        mu_star = lo
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if supply(mid) >= F:
                hi = mid
            else:
                lo = mid
        mu_star = hi
    tol = 1e-9 * (1.0 + mu_star)
    full = [r for r in (0, 1) if m[r] < mu_star - tol]
    marginal = [r for r in (0, 1) if abs(m[r] - mu_star) <= tol]
    g = [0.0, 0.0]
    rest = F
    for r in full:
        g[r] = g_max[r]
        rest -= g_max[r]
    rest = max(0.0, rest)
    cap_marginal = sum(g_max[r] for r in marginal)
    for r in marginal:
        g[r] = rest * g_max[r] / cap_marginal if cap_marginal > 0.0 else 0.0
    N = [g[r] * params[r].B_trip / params[r].fd.v_f for r in (0, 1)]
    return N[0], N[1]


def steady_state_occupancies(F_A: float, F_B: float, params_A: ReservoirParams,
                             params_B: ReservoirParams) -> tuple[float, float]:
    """Risk-neutral optimal occupancies: minimize N_A + N_B at outflow F_A + F_B."""
    return risk_adjusted_occupancies(F_A + F_B, params_A, params_B, theta=0.0)


def steady_state_gates(N_star: tuple[float, float], F_A: float, F_B: float,
                       params_A: ReservoirParams, params_B: ReservoirParams,
                       u_bar: tuple[float, float] = (np.inf, np.inf)) -> tuple[float, float]:
    """Gate settings realizing the steady-state split.

    Net offset Delta_u = (F_A - F_B - g_A + g_B)/2; its positive part meters
    A->B, the negative part B->A, clipped to the physical bounds.
    """
    g_A = discharge(N_star[0], params_A)
    g_B = discharge(N_star[1], params_B)
    delta_u = 0.5 * (F_A - F_B - g_A + g_B)
    u_AB = min(max(delta_u, 0.0), u_bar[0])
    u_BA = min(max(-delta_u, 0.0), u_bar[1])
    return u_AB, u_BA
