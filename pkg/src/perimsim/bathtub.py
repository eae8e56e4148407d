"""Lagrangian two-reservoir bathtub simulator.

Every trip is a particle with up to three legs (reservoir, length). Within a
reservoir all particles move at the common accident-adjusted speed, so legs
are tracked on a cumulative-distance ladder: reservoir r accumulates
effective distance D_r(t) and a trip entering with length l completes its
leg when D_r passes its threshold D_enter + l. Steps therefore cost O(1)
plus O(log n) per leg event. A finished non-final leg parks the trip in a
FIFO gate queue until the metering control releases it into the next
reservoir; queued vehicles count toward conservation and delay but not
toward reservoir density.

The same machine runs in two modes: ``sampled`` draws accidents from the
point process, ``expected`` integrates the mean live-load ODE instead and
is used for controller rollouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fundamentals import DomainError, ReservoirParams, degradation_factor, speed
from .hawkes import expected_load_step, intensity, moment_step, sample_accidents, MomentState


class SimulationError(RuntimeError):
    pass


class GridlockError(SimulationError):
    """Density exceeded the jam density; the scenario is mis-calibrated."""


class ConservationError(SimulationError):
    """Trip accounting no longer balances; indicates an engine bug."""


RES_A, RES_B = 0, 1
_RES_NAME = ("A", "B")

#: Column order of the per-step time series emitted by the simulator.
SERIES_COLUMNS = (
    "t", "N_A", "N_B", "v_A", "v_B", "u_AB", "u_BA", "released_AB", "released_BA",
    "queue_AB", "queue_BA", "completed", "lambda_A", "lambda_B",
    "a_A", "a_B", "chi_A", "chi_B",
)


def detour_fractions(v_A: float, v_B: float, kappa_delta: float) -> tuple[float, float]:
    """Logistic share of intra-district demand that detours through the other side."""
    if v_A < 0.0 or v_B < 0.0:
        raise DomainError("speeds must be non-negative")

    def logistic(x: float) -> float:
        if x >= 0.0:
            z = math.exp(-x)
            return z / (1.0 + z)
        return 1.0 / (1.0 + math.exp(x))

    delta_a = logistic(kappa_delta * (v_A - v_B))
    delta_b = logistic(kappa_delta * (v_B - v_A))
    return delta_a, delta_b


def effective_demands(D_A: float, D_B: float, od_shares: dict, deltas: tuple[float, float]) -> tuple[float, float]:
    """Gate flow requests: direct OD demand plus detouring intra-district demand."""
    if min(D_A, D_B) < 0.0:
        raise DomainError("demands must be non-negative")
    delta_a, delta_b = deltas
    d_ab = (od_shares["AB"] + delta_a * od_shares["AA"]) * D_A
    d_ba = (od_shares["BA"] + delta_b * od_shares["BB"]) * D_B
    return d_ab, d_ba


def exit_flow_exponential(N: float, B_trip: float, v: float) -> float:
    """Trip completion rate N*v/B for exponential trip lengths (analytics only)."""
    if B_trip <= 0.0:
        raise DomainError("B_trip must be positive")
    if N < 0.0:
        raise DomainError("N must be non-negative")
    return N * v / B_trip


@dataclass(frozen=True)
class TripLengthDist:
    """Trip-length distribution for one class; mean/std in km.

    ``lognormal`` is moment-matched to the given mean and std (std 0 degrades
    to a point mass); ``exponential`` uses the mean as scale; ``fixed``
    always returns the mean.
    """

    kind: str = "lognormal"
    mean: float = 2.5
    std: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("lognormal", "exponential", "fixed"):
            raise DomainError(f"unknown trip length distribution {self.kind!r}")
        if self.mean <= 0.0 or self.std < 0.0:
            raise DomainError("trip length mean must be positive, std non-negative")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "fixed" or (self.kind == "lognormal" and self.std == 0.0):
            return np.full(n, self.mean)
        if self.kind == "exponential":
            return rng.exponential(self.mean, n)
        sigma2 = math.log(1.0 + (self.std / self.mean) ** 2)
        mu = math.log(self.mean) - 0.5 * sigma2
        return rng.lognormal(mu, math.sqrt(sigma2), n)


# Route classes in deterministic spawn order: (origin, kind).
_ROUTES = (
    ("A", "direct"), ("A", "cross"), ("A", "detour"),
    ("B", "direct"), ("B", "cross"), ("B", "detour"),
)


@dataclass
class DemandModel:
    """Deterministic inflow profile plus routing and trip-length classes."""

    profile: list  # [(t_h, rate_veh_h)], piecewise constant from each breakpoint
    share_A: float
    od_shares: dict  # keys AA, AB, BA, BB; rows sum to one
    lengths: dict  # keys "A", "B", "BA" -> TripLengthDist
    detour_enabled: bool = False
    kappa_delta: float = 0.0
    forecast_error_bound: float = 0.0
    demand_ceiling: tuple[float, float] = (1e9, 1e9)
    initial_vehicles: tuple[int, int] = (0, 0)  # seeded in-progress trips (A, B)

    def __post_init__(self) -> None:
        if not 0.0 <= self.share_A <= 1.0:
            raise DomainError("share_A must lie in [0, 1]")
        if min(self.initial_vehicles) < 0:
            raise DomainError("initial vehicle counts must be non-negative")
        for row in ("A", "B"):
            s = self.od_shares[row + "A"] + self.od_shares[row + "B"]
            if abs(s - 1.0) > 1e-9:
                raise DomainError(f"OD shares for origin {row} sum to {s}, expected 1")
        if self.forecast_error_bound < 0.0:
            raise DomainError("forecast error bound must be non-negative")
        peak = max(r for _, r in self.profile)
        if peak > self.demand_ceiling[0] + self.demand_ceiling[1]:
            raise DomainError("inflow profile exceeds the demand ceiling")

    def total_rate(self, t: float) -> float:
        rate = 0.0
        for t_i, r_i in self.profile:
            if t >= t_i - 1e-12:
                rate = r_i
            else:
                break
        return rate

    def origin_rates(self, t: float) -> tuple[float, float]:
        total = self.total_rate(t)
        return self.share_A * total, (1.0 - self.share_A) * total

    def planned_total(self, horizon_h: float) -> float:
        """Vehicles loaded over [0, horizon] under the deterministic profile."""
        total = 0.0
        for i, (t_i, r_i) in enumerate(self.profile):
            t_next = self.profile[i + 1][0] if i + 1 < len(self.profile) else horizon_h
            t_next = min(t_next, horizon_h)
            if t_next > t_i:
                total += r_i * (t_next - t_i)
        return total

    def route_rates(self, t: float, delta_a: float, delta_b: float) -> dict:
        """Instantaneous veh/h per route class, deterministic split."""
        d_a, d_b = self.origin_rates(t)
        od = self.od_shares
        return {
            ("A", "direct"): d_a * od["AA"] * (1.0 - delta_a),
            ("A", "cross"): d_a * od["AB"],
            ("A", "detour"): d_a * od["AA"] * delta_a,
            ("B", "direct"): d_b * od["BB"] * (1.0 - delta_b),
            ("B", "cross"): d_b * od["BA"],
            ("B", "detour"): d_b * od["BB"] * delta_b,
        }

    def route_legs(self, route: tuple, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Sample leg reservoirs and lengths for n trips of one route class."""
        origin, kind = route
        res = np.full((n, 3), -1, dtype=np.int8)
        lengths = np.zeros((n, 3))
        if origin == "A":
            if kind == "direct":
                res[:, 0] = RES_A
                lengths[:, 0] = self.lengths["A"].sample(rng, n)
            elif kind == "cross":
                res[:, 0], res[:, 1] = RES_A, RES_B
                lengths[:, 0] = self.lengths["A"].sample(rng, n)
                lengths[:, 1] = self.lengths["B"].sample(rng, n)
            else:  # A -> B -> A detour, origin length split around the excursion
                res[:, 0], res[:, 1], res[:, 2] = RES_A, RES_B, RES_A
                own = self.lengths["A"].sample(rng, n)
                lengths[:, 0] = 0.5 * own
                lengths[:, 1] = self.lengths["B"].sample(rng, n)
                lengths[:, 2] = 0.5 * own
        else:
            if kind == "direct":
                res[:, 0] = RES_B
                lengths[:, 0] = self.lengths["B"].sample(rng, n)
            elif kind == "cross":
                res[:, 0], res[:, 1] = RES_B, RES_A
                lengths[:, 0] = self.lengths["B"].sample(rng, n)
                lengths[:, 1] = self.lengths["BA"].sample(rng, n)
            else:  # B -> A -> B detour
                res[:, 0], res[:, 1], res[:, 2] = RES_B, RES_A, RES_B
                own = self.lengths["B"].sample(rng, n)
                lengths[:, 0] = 0.5 * own
                lengths[:, 1] = self.lengths["BA"].sample(rng, n)
                lengths[:, 2] = 0.5 * own
        return res, lengths

    def with_rate_noise(self, rng: np.random.Generator) -> "DemandModel":
        """Forecast copy with each profile rate perturbed by +-forecast_error_bound."""
        eps = self.forecast_error_bound
        if eps == 0.0:
            return self
        profile = [(t, max(0.0, r + rng.uniform(-eps, eps))) for t, r in self.profile]
        return DemandModel(
            profile=profile, share_A=self.share_A, od_shares=self.od_shares,
            lengths=self.lengths, detour_enabled=self.detour_enabled,
            kappa_delta=self.kappa_delta, forecast_error_bound=0.0,
            demand_ceiling=self.demand_ceiling,
        )


@dataclass
class Trip:
    """Materialized per-trip view (inspection and tests; the engine is SoA)."""

    id: int
    origin: str
    legs: list  # [(reservoir name, remaining km)]
    entry_time: float
    crossing_time: float | None
    completion_time: float | None
    queued_since: float | None


@dataclass
class GateState:
    """Snapshot of the metering boundary."""

    u_AB: float
    u_BA: float
    u_bar_AB: float
    u_bar_BA: float
    queue_AB: list
    queue_BA: list


def generate_arrivals(demand: DemandModel, t: float, dt: float, rng: np.random.Generator,
                      carries: dict | None = None, speeds: tuple[float, float] = (0.0, 0.0)) -> list[Trip]:
    """Spawn the deterministic arrivals of one step as Trip objects.

    Carries hold the fractional vehicle balance per route class between calls;
    pass the same dict across steps to realize the exact long-run rates.
    """
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    if carries is None:
        carries = {}
    if demand.detour_enabled:
        delta_a, delta_b = detour_fractions(speeds[0], speeds[1], demand.kappa_delta)
    else:
        delta_a, delta_b = 0.0, 0.0
    rates = demand.route_rates(t, delta_a, delta_b)
    trips: list[Trip] = []
    next_id = carries.setdefault("_next_id", 0)
    for route in _ROUTES:
        carry = carries.get(route, 0.0) + rates[route] * dt
        n = int(carry)
        carries[route] = carry - n
        if n == 0:
            continue
        res, lengths = demand.route_legs(route, rng, n)
        for k in range(n):
            legs = [(_RES_NAME[res[k, j]], float(lengths[k, j])) for j in range(3) if res[k, j] >= 0]
            trips.append(Trip(id=next_id, origin=route[0], legs=legs, entry_time=t + dt,
                              crossing_time=None, completion_time=None, queued_since=None))
            next_id += 1
    carries["_next_id"] = next_id
    return trips


_ST_TRAVEL, _ST_QUEUED, _ST_DONE = 0, 1, 2


class SystemState:
    """Complete dynamic state of the coupled traffic/accident system.

    Owns the trip particles, gate queues, accident processes and moment
    accumulators; `advance` is the single-step transition. Confine each
    instance to one worker.
    """

    def __init__(self, params_A: ReservoirParams, params_B: ReservoirParams,
                 demand: DemandModel, u_bar: tuple[float, float],
                 rng: np.random.Generator, mode: str = "sampled",
                 record: bool = False, est_steps: int = 0):
        if mode not in ("sampled", "expected"):
            raise DomainError(f"unknown mode {mode!r}")
        self.params = (params_A, params_B)
        self.demand = demand
        self.u_bar = u_bar  # (u_bar_AB, u_bar_BA)
        self.rng = rng
        self.mode = mode
        self.t = 0.0

        cap = 1024
        self._cap = cap
        self.n = 0
        self.legs_res = np.full((cap, 3), -1, dtype=np.int8)
        self.legs_len = np.zeros((cap, 3))
        self.cur_leg = np.zeros(cap, dtype=np.int8)
        self.cur_res = np.zeros(cap, dtype=np.int8)
        self.status = np.full(cap, _ST_DONE, dtype=np.int8)
        self.thresh = np.zeros(cap)  # ladder threshold of the current leg
        self.entry_time = np.zeros(cap)
        self.queued_since = np.full(cap, np.nan)
        self.crossing_time = np.full(cap, np.nan)
        self.completion_time = np.full(cap, np.nan)
        self.origin = np.zeros(cap, dtype=np.int8)

        self.N = [0, 0]
        self.entered = 0
        self.completed = 0
        self.a = [0.0, 0.0]
        self.n_acc = [0, 0]
        self.event_times: list[tuple[float, int]] = []
        self.event_log: list[tuple[float, str, float, float]] = []
        self.moments = MomentState()
        self.delay_veh_h = 0.0
        self.carries: dict = {}

        # cumulative effective distance per reservoir and the leg ladders
        # (append-only arrays; popped entries are neutralized to +inf)
        self._D = [0.0, 0.0]
        self._lth = [np.full(cap, np.inf), np.full(cap, np.inf)]
        self._lid = [np.zeros(cap, dtype=np.int64), np.zeros(cap, dtype=np.int64)]
        self._lm = [0, 0]  # used slots per ladder

        # FIFO queues: (A->B, B->A) index arrays with head/tail pointers
        self._q = [np.zeros(cap, dtype=np.int64), np.zeros(cap, dtype=np.int64)]
        self._q_head = [0, 0]
        self._q_tail = [0, 0]
        self._allow = [0.0, 0.0]

        self.record = record
        if record:
            self._series = np.zeros((max(est_steps, 64) + 8, len(SERIES_COLUMNS)))
        else:
            self._series = np.zeros((0, len(SERIES_COLUMNS)))
        self._series_n = 0

    # -- bookkeeping helpers -------------------------------------------------

    def _grow(self, needed: int) -> None:
        while self._cap < needed:
            self._cap *= 2
        cap = self._cap
        for name in ("legs_res", "legs_len", "cur_leg", "cur_res", "status", "thresh",
                     "entry_time", "queued_since", "crossing_time", "completion_time",
                     "origin"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
            new[: old.shape[0]] = old
            if name == "status":
                new[old.shape[0]:] = _ST_DONE
            setattr(self, name, new)
        for g in (0, 1):
            old_q = self._q[g]
            new_q = np.empty(cap, dtype=np.int64)
            new_q[: old_q.shape[0]] = old_q
            self._q[g] = new_q

    def queue_len(self, gate: int) -> int:
        return self._q_tail[gate] - self._q_head[gate]

    def _ladder_push(self, r: int, thetas: np.ndarray, ids) -> None:
        m = self._lm[r]
        k = len(thetas)
        if m + k > self._lth[r].shape[0]:
            # compact popped (+inf) slots before growing
            live = np.nonzero(np.isfinite(self._lth[r][:m]))[0]
            n_live = int(live.size)
            new_cap = self._lth[r].shape[0]
            while new_cap < n_live + k:
                new_cap *= 2
            th = np.full(new_cap, np.inf)
            li = np.zeros(new_cap, dtype=np.int64)
            th[:n_live] = self._lth[r][:m][live]
            li[:n_live] = self._lid[r][:m][live]
            self._lth[r], self._lid[r] = th, li
            m = self._lm[r] = n_live
        self._lth[r][m: m + k] = thetas
        self._lid[r][m: m + k] = ids
        self._lm[r] = m + k

    def density(self, r: int) -> float:
        return self.N[r] / self.params[r].L

    def speeds(self) -> tuple[float, float]:
        """Current accident-adjusted speeds (km/h) of both reservoirs."""
        out = []
        for r in (RES_A, RES_B):
            p = self.params[r]
            chi = degradation_factor(self.a[r], p.kappa)
            out.append(chi * speed(self.density(r), p.fd))
        return out[0], out[1]

    def degradation(self, r: int):
        """Live load and capacity factor of reservoir r as a DegradationState."""
        from .fundamentals import DegradationState

        return DegradationState(a=self.a[r], chi=degradation_factor(self.a[r], self.params[r].kappa))

    def hawkes_state(self, r: int):
        """Materialized accident-process state of reservoir r."""
        from .hawkes import HawkesState

        v_a, v_b = self.speeds()
        return HawkesState(
            lam=intensity(self.N[r], self.a[r], v_a, v_b, self.params[r]),
            a=self.a[r], n_acc=self.n_acc[r],
            event_times=[t for t, res in self.event_times if res == r],
        )

    def check_conservation(self) -> None:
        in_system = self.N[0] + self.N[1] + self.queue_len(0) + self.queue_len(1)
        if in_system + self.completed != self.entered:
            raise ConservationError(
                f"t={self.t:.6f}: entered={self.entered} but "
                f"N_A={self.N[0]} N_B={self.N[1]} queued={self.queue_len(0) + self.queue_len(1)} "
                f"completed={self.completed}"
            )

    def gate_state(self, u_AB: float = 0.0, u_BA: float = 0.0) -> GateState:
        return GateState(
            u_AB=u_AB, u_BA=u_BA, u_bar_AB=self.u_bar[0], u_bar_BA=self.u_bar[1],
            queue_AB=list(self._q[0][self._q_head[0]: self._q_tail[0]]),
            queue_BA=list(self._q[1][self._q_head[1]: self._q_tail[1]]),
        )

    def remaining_of(self, i: int) -> float:
        """Remaining distance (km) of trip i's current leg."""
        if self.status[i] == _ST_TRAVEL:
            return max(0.0, float(self.thresh[i] - self._D[self.cur_res[i]]))
        return 0.0

    def trips(self, ids=None) -> list[Trip]:
        """Materialize Trip views (tests/inspection; not used on the hot path)."""
        if ids is None:
            ids = range(self.n)
        out = []
        for i in ids:
            legs = []
            for j in range(3):
                if self.legs_res[i, j] < 0:
                    break
                if j < self.cur_leg[i] or self.status[i] == _ST_DONE:
                    rem = 0.0
                elif j == self.cur_leg[i]:
                    rem = self.remaining_of(i)
                else:
                    rem = float(self.legs_len[i, j])
                legs.append((_RES_NAME[self.legs_res[i, j]], rem))
            out.append(Trip(
                id=i, origin=_RES_NAME[self.origin[i]], legs=legs,
                entry_time=float(self.entry_time[i]),
                crossing_time=None if np.isnan(self.crossing_time[i]) else float(self.crossing_time[i]),
                completion_time=None if np.isnan(self.completion_time[i]) else float(self.completion_time[i]),
                queued_since=None if np.isnan(self.queued_since[i]) else float(self.queued_since[i]),
            ))
        return out

    def clone(self, mode: str | None = None, rng: np.random.Generator | None = None,
              record: bool = False) -> "SystemState":
        """Deep copy of the dynamic state (used for controller rollouts)."""
        other = SystemState.__new__(SystemState)
        other.params = self.params
        other.demand = self.demand
        other.u_bar = self.u_bar
        other.rng = rng if rng is not None else self.rng
        other.mode = mode if mode is not None else self.mode
        other.t = self.t
        n = self.n
        other._cap = max(1024, n)
        other.n = n
        for name in ("legs_res", "legs_len", "cur_leg", "cur_res", "status", "thresh",
                     "entry_time", "queued_since", "crossing_time", "completion_time",
                     "origin"):
            src = getattr(self, name)
            new = np.empty((other._cap,) + src.shape[1:], dtype=src.dtype)
            new[:n] = src[:n]
            if name == "status":
                new[n:] = _ST_DONE
            setattr(other, name, new)
        other.N = list(self.N)
        other.entered = self.entered
        other.completed = self.completed
        other.a = list(self.a)
        other.n_acc = list(self.n_acc)
        other.event_times = list(self.event_times)
        other.event_log = []
        other.moments = MomentState(self.moments.m, self.moments.s)
        other.delay_veh_h = self.delay_veh_h
        other.carries = dict(self.carries)
        other._D = list(self._D)
        other._lth = []
        other._lid = []
        other._lm = [0, 0]
        for r in (0, 1):
            # keep only live entries; popped slots carry +inf
            m = self._lm[r]
            live = np.nonzero(np.isfinite(self._lth[r][:m]))[0]
            k = int(live.size)
            cap_l = max(1024, k)
            th = np.full(cap_l, np.inf)
            li = np.zeros(cap_l, dtype=np.int64)
            th[:k] = self._lth[r][:m][live]
            li[:k] = self._lid[r][:m][live]
            other._lth.append(th)
            other._lid.append(li)
            other._lm[r] = k
        other._q = []
        other._q_head = [0, 0]
        other._q_tail = [0, 0]
        for g in (0, 1):
            q = np.empty(other._cap, dtype=np.int64)
            k = self.queue_len(g)
            q[:k] = self._q[g][self._q_head[g]: self._q_tail[g]]
            other._q.append(q)
            other._q_tail[g] = k
        other._allow = list(self._allow)
        other.record = record
        other._series = np.zeros((0, len(SERIES_COLUMNS)))
        other._series_n = 0
        return other

    def seed_initial_vehicles(self) -> "SystemState":
        """Spawn the demand model's initial in-progress trips at t = 0.

        Initial vehicles carry a single leg in their own reservoir drawn
        from that reservoir's length class (residual traffic already past
        any gate). Call once before the first step.
        """
        if self.t != 0.0 or self.entered != 0:
            raise SimulationError("initial vehicles must be seeded on a pristine state")
        for r, cls in ((RES_A, "A"), (RES_B, "B")):
            n_new = self.demand.initial_vehicles[r]
            if n_new == 0:
                continue
            if self.n + n_new > self._cap:
                self._grow(self.n + n_new)
            lengths = self.demand.lengths[cls].sample(self.rng, n_new)
            i0, i1 = self.n, self.n + n_new
            self.legs_res[i0:i1] = -1
            self.legs_res[i0:i1, 0] = r
            self.legs_len[i0:i1] = 0.0
            self.legs_len[i0:i1, 0] = lengths
            self.cur_leg[i0:i1] = 0
            self.cur_res[i0:i1] = r
            self.status[i0:i1] = _ST_TRAVEL
            self.entry_time[i0:i1] = 0.0
            self.queued_since[i0:i1] = np.nan
            self.crossing_time[i0:i1] = np.nan
            self.completion_time[i0:i1] = np.nan
            self.origin[i0:i1] = r
            thetas = self._D[r] + lengths
            self.thresh[i0:i1] = thetas
            self._ladder_push(r, thetas, np.arange(i0, i1, dtype=np.int64))
            self.n = i1
            self.entered += n_new
            self.N[r] += n_new
        self.check_conservation()
        return self

    # -- dynamics ------------------------------------------------------------

    def advance(self, controls: tuple[float, float], dt: float) -> "SystemState":
        """One explicit step of length dt hours under gate levels (u_AB, u_BA)."""
        if dt <= 0.0:
            raise DomainError("dt must be positive")
        u_AB = min(max(0.0, controls[0]), self.u_bar[0])
        u_BA = min(max(0.0, controls[1]), self.u_bar[1])
        pA, pB = self.params
        t = self.t

        rho_A, rho_B = self.density(RES_A), self.density(RES_B)
        if rho_A > pA.fd.rho_j or rho_B > pB.fd.rho_j:
            raise GridlockError(
                f"t={t:.4f} h: density rho_A={rho_A:.2f}, rho_B={rho_B:.2f} "
                f"exceeds jam density; scenario is mis-calibrated"
            )
        chi_A = degradation_factor(self.a[0], pA.kappa)
        chi_B = degradation_factor(self.a[1], pB.kappa)
        v_A = chi_A * speed(rho_A, pA.fd)
        v_B = chi_B * speed(rho_B, pB.fd)
        lam_A = intensity(self.N[0], self.a[0], v_A, v_B, pA)
        lam_B = intensity(self.N[1], self.a[1], v_A, v_B, pB)

        # delay accrues to every vehicle in the system, queued ones included;
        # trapezoidal in the completion count so sub-step splits do not bias
        # the integral (new arrivals enter at t+dt and accrue nothing here)
        in_system_0 = self.N[0] + self.N[1] + self.queue_len(0) + self.queue_len(1)
        completed_0 = self.completed

        # advance the distance ladders and pop finished legs in event order
        released_counts = [0, 0]
        for r, v in ((RES_A, v_A), (RES_B, v_B)):
            move = v * dt
            if move <= 0.0:
                continue
            d0 = self._D[r]
            d1 = d0 + move
            self._D[r] = d1
            m = self._lm[r]
            th = self._lth[r][:m]
            hit = np.nonzero(th <= d1)[0]
            if hit.size == 0:
                continue
            ids = self._lid[r][:m][hit]
            thetas = th[hit]
            order = np.lexsort((ids, thetas))
            ids = ids[order]
            thetas = thetas[order]
            th[hit] = np.inf
            t_event = t + (np.maximum(thetas, d0) - d0) / move * dt
            nxt = self.legs_res[ids, self.cur_leg[ids] + 1]
            last = nxt < 0
            done = ids[last]
            if done.size:
                self.status[done] = _ST_DONE
                self.completion_time[done] = t_event[last]
                self.N[r] -= int(done.size)
                self.completed += int(done.size)
            handoff = ids[~last]
            if handoff.size:
                gate = 0 if r == RES_A else 1  # gate 0: A->B, 1: B->A
                self.status[handoff] = _ST_QUEUED
                self.queued_since[handoff] = t_event[~last]
                self.N[r] -= int(handoff.size)
                tail = self._q_tail[gate]
                if tail + handoff.size > self._q[gate].shape[0]:
                    self._grow(tail + int(handoff.size))
                self._q[gate][tail: tail + handoff.size] = handoff
                self._q_tail[gate] = tail + int(handoff.size)

        # gate releases: token bucket at the commanded level, FIFO order
        for gate, u, dst in ((0, u_AB, RES_B), (1, u_BA, RES_A)):
            self._allow[gate] += u * dt
            k = min(int(self._allow[gate]), self.queue_len(gate))
            if k > 0:
                head = self._q_head[gate]
                ids = self._q[gate][head: head + k]
                self._q_head[gate] = head + k
                self._allow[gate] -= k
                leg = self.cur_leg[ids] + 1
                self.cur_leg[ids] = leg
                self.cur_res[ids] = dst
                self.status[ids] = _ST_TRAVEL
                ct = self.crossing_time[ids]
                self.crossing_time[ids] = np.where(np.isnan(ct), t + dt, ct)
                thetas = self._D[dst] + self.legs_len[ids, leg]
                self.thresh[ids] = thetas
                self._ladder_push(dst, thetas, ids)
                self.N[dst] += k
                released_counts[gate] = k
            self._allow[gate] = min(self._allow[gate], 1.0)

        self.delay_veh_h += (in_system_0 - 0.5 * (self.completed - completed_0)) * dt

        # accident processes: sampled jumps or expected live-load ODE; a mark
        # stamped at the step midpoint enters the end-of-step load with half
        # a step of decay so the recursion matches the event-history sum
        if self.mode == "sampled":
            for r, lam, p in ((0, lam_A, pA), (1, lam_B, pB)):
                event = sample_accidents(lam, dt, self.rng)
                self.a[r] *= math.exp(-p.gamma * dt)
                if event:
                    t_mid = t + 0.5 * dt
                    self.a[r] += math.exp(-p.gamma * 0.5 * dt)
                    self.n_acc[r] += 1
                    self.event_times.append((t_mid, r))
                    self.event_log.append(
                        (t_mid, _RES_NAME[r], lam, degradation_factor(self.a[r], p.kappa))
                    )
        else:
            self.a[0] = expected_load_step(self.a[0], lam_A, pA.gamma, dt)
            self.a[1] = expected_load_step(self.a[1], lam_B, pB.gamma, dt)
        moment_step(self.moments, lam_A, lam_B, dt)

        # deterministic arrivals with fractional carry per route class
        if self.demand.detour_enabled:
            delta_a, delta_b = detour_fractions(v_A, v_B, self.demand.kappa_delta)
            rates = self.demand.route_rates(t, delta_a, delta_b)
        elif self.demand.od_shares["AB"] == 0.0 and self.demand.od_shares["BA"] == 1.0:
            # fast path for the pure morning-peak routing
            d_a, d_b = self.demand.origin_rates(t)
            rates = {("A", "direct"): d_a, ("B", "cross"): d_b}
        else:
            rates = self.demand.route_rates(t, 0.0, 0.0)
        for route, rate in rates.items():
            carry = self.carries.get(route, 0.0) + rate * dt
            n_new = int(carry)
            self.carries[route] = carry - n_new
            if n_new == 0:
                continue
            if self.n + n_new > self._cap:
                self._grow(self.n + n_new)
            res, lengths = self.demand.route_legs(route, self.rng, n_new)
            i0, i1 = self.n, self.n + n_new
            self.legs_res[i0:i1] = res
            self.legs_len[i0:i1] = lengths
            self.cur_leg[i0:i1] = 0
            self.cur_res[i0:i1] = res[:, 0]
            self.status[i0:i1] = _ST_TRAVEL
            self.entry_time[i0:i1] = t + dt
            self.queued_since[i0:i1] = np.nan
            self.crossing_time[i0:i1] = np.nan
            self.completion_time[i0:i1] = np.nan
            origin_res = RES_A if route[0] == "A" else RES_B
            self.origin[i0:i1] = origin_res
            thetas = self._D[origin_res] + lengths[:, 0]
            self.thresh[i0:i1] = thetas
            self._ladder_push(origin_res, thetas, np.arange(i0, i1, dtype=np.int64))
            self.n = i1
            self.entered += n_new
            self.N[origin_res] += n_new

        self.t = t + dt
        self.check_conservation()

        if self.record:
            if self._series_n >= self._series.shape[0]:
                self._series = np.vstack([self._series, np.zeros_like(self._series)])
            self._series[self._series_n] = (
                self.t, self.N[0], self.N[1], v_A, v_B, u_AB, u_BA,
                released_counts[0] / dt, released_counts[1] / dt,
                self.queue_len(0), self.queue_len(1), self.completed,
                lam_A, lam_B, self.a[0], self.a[1], chi_A, chi_B,
            )
            self._series_n += 1
        return self

    def series(self) -> np.ndarray:
        """Recorded per-step time series, one row per step (see SERIES_COLUMNS)."""
        return self._series[: self._series_n]

    # -- end-of-run metrics ----------------------------------------------------

    def travel_times(self) -> tuple[np.ndarray, int]:
        """Per-trip time in system (hours) and the count of unfinished trips.

        Unfinished trips contribute the time accrued until the current clock.
        """
        n = self.n
        tt = np.where(
            np.isnan(self.completion_time[:n]),
            self.t - self.entry_time[:n],
            self.completion_time[:n] - self.entry_time[:n],
        )
        unfinished = int(np.sum(self.status[:n] != _ST_DONE))
        return tt, unfinished


def advance(state: SystemState, controls: tuple[float, float], dt: float) -> SystemState:
    """Advance the system by one step; mutates and returns the state."""
    return state.advance(controls, dt)
