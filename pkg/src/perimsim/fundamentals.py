"""Reservoir fundamentals: speed-density diagrams and accident degradation.

Pure, stateless functions shared by the simulator, the controller and the
steady-state analytics. Speeds are km/h, densities veh/km/lane, flows
veh/h/lane, lane lengths lane-km.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class DomainError(ValueError):
    """Input outside the physical domain of a fundamental-diagram function."""


@dataclass(frozen=True)
class FundamentalDiagram:
    """Piecewise speed-density relationship of one reservoir.

    ``triangular``: free-flow plateau up to the critical density, then a
    congested branch ``w (rho_j - rho) / rho``. ``trapezoidal`` adds a
    constant-capacity branch between ``rho_1`` and ``rho_2``.
    """

    shape: str  # "triangular" | "trapezoidal"
    v_f: float  # free-flow speed, km/h
    w: float  # congestion wave speed, km/h
    rho_c: float  # critical density (rho_1 for trapezoidal), veh/km/lane
    rho_j: float  # jam density, veh/km/lane
    q_max: float  # capacity, veh/h/lane
    rho_2: float = field(default=0.0)  # second breakpoint, trapezoidal only

    def __post_init__(self) -> None:
        if self.shape not in ("triangular", "trapezoidal"):
            raise DomainError(f"unknown fundamental diagram shape {self.shape!r}")
        if not (0.0 < self.rho_c < self.rho_j):
            raise DomainError("need 0 < rho_c < rho_j")
        if min(self.v_f, self.w, self.q_max) <= 0.0:
            raise DomainError("v_f, w and q_max must be positive")
        if not math.isclose(self.v_f * self.rho_c, self.q_max, rel_tol=1e-6):
            raise DomainError("q_max must equal v_f * rho_c")
        if self.shape == "triangular":
            # continuity of speed at rho_c
            if not math.isclose(self.v_f * self.rho_c, self.w * (self.rho_j - self.rho_c), rel_tol=1e-6):
                raise DomainError("triangular diagram discontinuous at rho_c: v_f*rho_c != w*(rho_j - rho_c)")
        else:
            if not (self.rho_c < self.rho_2 < self.rho_j):
                raise DomainError("trapezoidal diagram needs rho_1 < rho_2 < rho_j")
            if not math.isclose(self.q_max, self.w * (self.rho_j - self.rho_2), rel_tol=1e-6):
                raise DomainError("trapezoidal diagram needs q_max = w*(rho_j - rho_2)")

    @classmethod
    def triangular(cls, v_f: float, rho_j: float, q_max: float) -> "FundamentalDiagram":
        """Build a triangular diagram from (v_f, rho_j, q_max).

        The critical density and wave speed are derived: rho_c = q_max/v_f and
        w = q_max/(rho_j - rho_c), which makes the two branches meet at rho_c.
        """
        rho_c = q_max / v_f
        if rho_c >= rho_j:
            raise DomainError("q_max/v_f must lie below the jam density")
        w = q_max / (rho_j - rho_c)
        return cls(shape="triangular", v_f=v_f, w=w, rho_c=rho_c, rho_j=rho_j, q_max=q_max)

    @classmethod
    def trapezoidal(cls, v_f: float, rho_1: float, rho_2: float, rho_j: float) -> "FundamentalDiagram":
        """Build a trapezoidal diagram; capacity plateau between rho_1 and rho_2."""
        q_max = v_f * rho_1
        if not rho_1 < rho_2 < rho_j:
            raise DomainError("need rho_1 < rho_2 < rho_j")
        w = q_max / (rho_j - rho_2)
        return cls(shape="trapezoidal", v_f=v_f, w=w, rho_c=rho_1, rho_j=rho_j, q_max=q_max, rho_2=rho_2)


@dataclass(frozen=True)
class ReservoirParams:
    """Static physical and stochastic calibration of one reservoir."""

    id: str  # "A" | "B"
    L: float  # cumulative lane length, lane-km
    fd: FundamentalDiagram
    alpha: float  # accident exposure coefficient, 1/h per vehicle
    beta: float  # self-excitation gain, dimensionless
    gamma: float  # excitation decay, 1/h
    eta: float  # speed-dispersion coefficient, 1/h per km/h
    kappa: float  # accident impact coefficient on capacity
    B_trip: float = 2.5  # exponential trip-length scale (km), analytics only

    def __post_init__(self) -> None:
        if self.id not in ("A", "B"):
            raise DomainError(f"reservoir id must be 'A' or 'B', got {self.id!r}")
        if self.L <= 0.0:
            raise DomainError("lane length must be positive")
        for name in ("alpha", "beta", "gamma", "eta", "kappa"):
            if getattr(self, name) < 0.0:
                raise DomainError(f"{name} must be non-negative")
        if self.gamma <= self.beta:
            raise DomainError("need gamma > beta (subcritical self-excitation)")
        if self.B_trip <= 0.0:
            raise DomainError("B_trip must be positive")


@dataclass
class DegradationState:
    """Live-accident load and the capacity factor it implies."""

    a: float = 0.0
    chi: float = 1.0


def speed(rho: float, fd: FundamentalDiagram) -> float:
    """Speed (km/h) at density rho; piecewise per the diagram shape."""
    if rho < 0.0 or rho > fd.rho_j * (1.0 + 1e-12):
        raise DomainError(f"density {rho} outside [0, {fd.rho_j}]")
    if rho <= fd.rho_c:
        return fd.v_f
    if fd.shape == "trapezoidal" and rho < fd.rho_2:
        return fd.q_max / rho
    return max(0.0, fd.w * (fd.rho_j - rho) / rho)


def flow(rho: float, fd: FundamentalDiagram) -> float:
    """Flow (veh/h/lane) = rho * speed(rho); peaks at the critical density."""
    return rho * speed(rho, fd)


def degradation_factor(a: float, kappa: float) -> float:
    """Capacity reduction factor 1/(1 + kappa*a), in (0, 1]."""
    if a < 0.0 or kappa < 0.0:
        raise DomainError("live load and kappa must be non-negative")
    return 1.0 / (1.0 + kappa * a)


def effective_speed(rho: float, fd: FundamentalDiagram, chi: float) -> float:
    """Accident-adjusted speed: chi * speed(rho)."""
    if not 0.0 < chi <= 1.0:
        raise DomainError("chi must lie in (0, 1]")
    return chi * speed(rho, fd)
