"""Self-exciting accident process: intensity, live load, sampling, moments.

The accident intensity combines vehicle exposure, clustering through an
exponentially decaying live load, and a cross-reservoir speed-dispersion
term. The moment ODE pair (m, s) tracks mean and second moment of the
cumulative count along a deterministic intensity path; the Kolmogorov
forward solver is a test-side validator only.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fundamentals import DomainError, ReservoirParams


@dataclass
class HawkesState:
    """Recursive sufficient state of one reservoir's accident process."""

    lam: float = 0.0  # current intensity, 1/h
    a: float = 0.0  # live-accident load, dimensionless
    n_acc: int = 0  # cumulative accident count
    event_times: list[float] = field(default_factory=list)


@dataclass
class MomentState:
    """First and second moment accumulators of the incremental count."""

    m: float = 0.0
    s: float = 0.0

    @property
    def variance(self) -> float:
        return self.s - self.m * self.m


def intensity(N: float, a: float, v_A: float, v_B: float, params: ReservoirParams) -> float:
    """Accident intensity (1/h): alpha*N + beta*a + eta*|v_A - v_B|."""
    if min(N, a, v_A, v_B) < 0.0:
        raise DomainError("intensity inputs must be non-negative")
    return params.alpha * N + params.beta * a + params.eta * abs(v_A - v_B)


def decay_load(a: float, gamma: float, dt: float) -> float:
    """Exponentially decay the live load over dt hours."""
    if dt < 0.0:
        raise DomainError("dt must be non-negative")
    return a * math.exp(-gamma * dt)


def sample_accidents(lam: float, dt: float, rng: np.random.Generator, size: int | None = None):
    """Sample accident occurrences over one step of length dt hours.

    At most one event per step: Bernoulli with p = 1 - exp(-lam*dt). With
    ``size`` given, returns an int array of ``size`` independent steps.
    """
    if lam < 0.0:
        raise DomainError("intensity must be non-negative")
    if lam * dt > 0.1:
        warnings.warn(
            f"lambda*dt = {lam * dt:.3g} too coarse for the point process; reduce dt",
            RuntimeWarning,
            stacklevel=2,
        )
    p = -math.expm1(-lam * dt)
    if size is None:
        return 1 if rng.random() < p else 0
    return (rng.random(size) < p).astype(np.int64)


def moment_step(mom: MomentState, lambda_A: float, lambda_B: float, dt: float) -> MomentState:
    """Advance (m, s) by one explicit Euler step with total intensity.

    The second moment uses the pre-step m, then m is updated.
    """
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    total = lambda_A + lambda_B
    mom.s += (2.0 * mom.m + 1.0) * total * dt
    mom.m += total * dt
    return mom


def expected_load_step(a: float, lam: float, gamma: float, dt: float) -> float:
    """One step of the expected live-load ODE da/dt = -gamma*a + lam.

    Exact integral with the intensity held constant over the step; degrades
    gracefully to a + lam*dt as gamma -> 0.
    """
    if gamma * dt < 1e-12:
        return a + lam * dt
    decay = math.exp(-gamma * dt)
    return a * decay + lam * (1.0 - decay) / gamma


def kolmogorov_forward(lambda_path, n_max: int, T: float, dt: float) -> np.ndarray:
    """Integrate the counting-process forward equations to time T.

    ``lambda_path`` maps t (hours) to an intensity; returns the probability
    vector (p_0 .. p_n_max) at T, solved with classic RK4. Raises if the
    truncation leaks more than 1e-8 of probability mass.
    """
    if n_max < 1:
        raise DomainError("n_max must be at least 1")
    n_steps = max(1, int(round(T / dt)))
    h = T / n_steps
    p = np.zeros(n_max + 1)
    p[0] = 1.0

    def deriv(t: float, q: np.ndarray) -> np.ndarray:
        lam = lambda_path(t)
        dq = -lam * q
        dq[1:] += lam * q[:-1]
        return dq

    t = 0.0
    for _ in range(n_steps):
        k1 = deriv(t, p)
        k2 = deriv(t + 0.5 * h, p + 0.5 * h * k1)
        k3 = deriv(t + 0.5 * h, p + 0.5 * h * k2)
        k4 = deriv(t + h, p + h * k3)
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    tail = 1.0 - float(p.sum())
    if tail > 1e-8:
        raise DomainError(f"truncation tail mass {tail:.3g} > 1e-8; increase n_max")
    return p


def live_load_from_events(event_times, t: float, gamma: float) -> float:
    """Recompute the live load from the full event history (reference path)."""
    return float(sum(math.exp(-gamma * (t - ti)) for ti in event_times if ti <= t))
