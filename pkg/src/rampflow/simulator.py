"""Discrete-time freeway simulation with onramp queues.

State per cell: mainline density rho (cars/km) and onramp queue q (cars).
One step sends flows

    phi_0 = w_0(t)                          mainline inflow, never blocked
    phi_k = min(demand_k, capacity_k, supply_{k+1})   between cells
    phi_n = min(demand_n, capacity_n)       network exit

and updates

    rho_k += dt/length_k * (phi_{k-1} + r_k - phi_k / beta_bar_k)
    q_k   += dt * (w_k - r_k)

where r_k is the metering rate chosen for the onramp of cell k.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import FreewayModel

_BOX_TOL = 1e-9


class ContractViolationError(RuntimeError):
    """A caller or controller broke a simulation precondition."""


@dataclass
class SimState:
    """Densities and queues at one instant; arrays are copied on entry."""

    rho: np.ndarray   # cars/km, per cell
    q: np.ndarray     # cars, per onramp (0 for cells without one)

    def __post_init__(self):
        self.rho = np.array(self.rho, dtype=float)
        self.q = np.array(self.q, dtype=float)

    def copy(self) -> "SimState":
        return SimState(self.rho, self.q)


def zero_state(model: FreewayModel) -> SimState:
    return SimState(np.zeros(model.n), np.zeros(model.n))


@dataclass(frozen=True)
class DisturbanceSpec:
    """Multiplicative flow noise: each flow is scaled by N(1, sigma_phi),
    then clipped back into [0, unperturbed flow]."""

    sigma_phi: float = 0.0
    seed: int = 0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


class DemandProfile:
    """External arrivals per step: mainline w0 (cars/h) and per-ramp w (cars/h).

    ``w_ramp`` has shape (horizon, n); columns for cells without a ramp must
    be zero. Arrivals above the metering-rate cap are fine on ramps with
    queue storage (the queue absorbs the excess until its own box binds) but
    are rejected on queueless ramps, where traffic must pass straight through.
    """

    def __init__(self, w0: np.ndarray, w_ramp: np.ndarray):
        self.w0 = np.asarray(w0, dtype=float)
        self.w_ramp = np.asarray(w_ramp, dtype=float)
        if self.w0.ndim != 1 or self.w_ramp.ndim != 2:
            raise ValueError("w0 must be 1-d and w_ramp 2-d")
        if self.w_ramp.shape[0] != self.w0.shape[0]:
            raise ValueError(
                f"horizon mismatch: w0 has {self.w0.shape[0]} steps, "
                f"w_ramp has {self.w_ramp.shape[0]}")
        if np.any(self.w0 < 0.0) or np.any(self.w_ramp < 0.0):
            raise ValueError("demands must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.w0.shape[0]

    def check_against(self, model: FreewayModel) -> None:
        if self.w_ramp.shape[1] != model.n:
            raise ValueError(
                f"demand has {self.w_ramp.shape[1]} ramp columns for "
                f"{model.n} cells")
        # ramps with a queue buffer arrivals above the metering cap; ramps
        # without one must pass arrivals through, so there the cap is hard
        unbuffered = model.queue_max <= 0.0
        over = unbuffered[None, :] & (
            self.w_ramp > model.ramp_flow_max[None, :] + 1e-9)
        if np.any(over):
            t, k = np.argwhere(over)[0]
            raise ValueError(
                f"ramp demand {self.w_ramp[t, k]:g} at step {t}, cell {k + 1} "
                f"exceeds ramp_flow_max {model.ramp_flow_max[k]:g} and the "
                f"ramp has no queue storage")

    def row(self, t: int) -> np.ndarray:
        """Length n+1 vector (w0, w_1, ..., w_n) at step t."""
        return np.concatenate(([self.w0[t]], self.w_ramp[t]))


@dataclass
class Trajectory:
    """A simulated run: T+1 states plus the T flow/rate rows between them.

    ``flows[t]`` has length n+1 with entry 0 the mainline inflow; in a
    noiseless run consecutive states reproduce the dynamics with these
    flows and rates to floating-point accuracy.
    """

    rho: np.ndarray     # (T+1, n)
    q: np.ndarray       # (T+1, n)
    flows: np.ndarray   # (T, n+1)
    rates: np.ndarray   # (T, n)
    demand: DemandProfile

    @property
    def horizon(self) -> int:
        return self.flows.shape[0]

    def state(self, t: int) -> SimState:
        return SimState(self.rho[t], self.q[t])

    @property
    def states(self) -> list[SimState]:
        return [self.state(t) for t in range(self.rho.shape[0])]


def compute_flows(model: FreewayModel, state: SimState, w0: float) -> np.ndarray:
    """Flow row (phi_0 .. phi_n) the network realizes at this state."""
    return _flows(model, state.rho, float(w0))


def _flows(model: FreewayModel, rho: np.ndarray, w0: float) -> np.ndarray:
    d = model.demand(rho)
    phi = np.empty(model.n + 1)
    phi[0] = w0
    if model.n > 1:
        s = model.supply(rho)
        phi[1:-1] = np.minimum(np.minimum(d[:-1], model.capacity[:-1]), s[1:])
    phi[-1] = min(d[-1], model.capacity[-1])
    return phi


def feasible_rate_interval(model: FreewayModel, k: int, q_k: float,
                           w_k: float) -> tuple[float, float]:
    """Admissible metering rates for the ramp of cell k (1-based) given its
    queue and current arrivals: the rate cap and both queue-box limits."""
    lo, hi = _rate_bounds(model, np.array([q_k]), np.array([w_k]),
                          cell_slice=slice(k - 1, k))
    if lo[0] > hi[0] + 1e-9 * max(1.0, hi[0]):
        raise ContractViolationError(
            f"empty rate interval at cell {k}: [{lo[0]:g}, {hi[0]:g}]")
    return float(lo[0]), float(hi[0])


def _rate_bounds(model: FreewayModel, q: np.ndarray, w: np.ndarray,
                 relaxed: bool = False,
                 cell_slice: slice = slice(None)) -> tuple[np.ndarray, np.ndarray]:
    q_max = model.queue_max[cell_slice]
    r_max = model.ramp_flow_max[cell_slice]
    lo = (q - q_max) / model.dt + w
    hi = q / model.dt + w
    if not relaxed:
        lo = np.maximum(0.0, lo)
        hi = np.minimum(r_max, hi)
    return lo, hi


def _snap_into_box(x: np.ndarray, lo: np.ndarray | float, hi: np.ndarray,
                   what: str) -> np.ndarray:
    tol = _BOX_TOL * np.maximum(1.0, hi)
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        k = int(np.argmax(np.maximum(lo - x, x - hi)))
        raise ContractViolationError(
            f"{what} left its box at cell {k + 1}: value {x[k]:g} "
            f"outside [{np.broadcast_to(lo, x.shape)[k]:g}, {hi[k]:g}]")
    return np.clip(x, lo, hi)


def step(model: FreewayModel, state: SimState, rates: np.ndarray,
         w_row: np.ndarray, rng: np.random.Generator | None = None,
         sigma_phi: float = 0.0,
         relaxed: bool = False) -> tuple[SimState, np.ndarray]:
    """Advance one step and return (next state, realized flow row).

    ``w_row`` is (w0, w_1..w_n). Rates outside the feasible interval are a
    contract violation. With ``relaxed=True`` the constant rate bounds
    [0, ramp_flow_max] are waived and only the queue-box limits apply.
    """
    rates = np.asarray(rates, dtype=float)
    lo, hi = _rate_bounds(model, state.q, w_row[1:], relaxed=relaxed)
    tol = 1e-9 * np.maximum(1.0, np.abs(hi))
    if np.any(rates < lo - tol) or np.any(rates > hi + tol):
        k = int(np.argmax(np.maximum(lo - rates, rates - hi)))
        raise ContractViolationError(
            f"rate {rates[k]:g} at cell {k + 1} outside feasible "
            f"[{lo[k]:g}, {hi[k]:g}]")

    phi = _flows(model, state.rho, w_row[0])
    if sigma_phi > 0.0:
        if rng is None:
            raise ValueError("noise requested but no rng supplied")
        noisy = phi * rng.normal(1.0, sigma_phi, size=phi.shape)
        phi = np.clip(noisy, 0.0, phi)

    rho_next = state.rho + model.dt / model.length * (
        phi[:-1] + rates - phi[1:] / model.beta_bar)
    q_next = state.q + model.dt * (w_row[1:] - rates)

    if sigma_phi > 0.0:
        rho_next = np.clip(rho_next, 0.0, model.rho_jam)
        q_next = np.clip(q_next, 0.0, model.queue_max)
    else:
        rho_next = _snap_into_box(rho_next, 0.0, model.rho_jam, "density")
        q_next = _snap_into_box(q_next, 0.0, model.queue_max, "queue")
    return SimState(rho_next, q_next), phi


def simulate(model: FreewayModel, demand: DemandProfile,
             controller=None,
             disturbance: DisturbanceSpec | None = None,
             initial_state: SimState | None = None,
             relaxed: bool = False) -> Trajectory:
    """Run the closed loop over the demand horizon.

    ``controller`` is anything with ``compute_rates(state, w_row)``; None
    means every ramp releases as much as its bounds allow. Controller
    output is clamped into the feasible interval before it is applied, so
    a controller cannot break the queue boxes.
    """
    demand.check_against(model)
    state = initial_state.copy() if initial_state is not None else zero_state(model)
    T = demand.horizon
    n = model.n
    rho_hist = np.empty((T + 1, n))
    q_hist = np.empty((T + 1, n))
    flows = np.empty((T, n + 1))
    rates_hist = np.empty((T, n))
    rho_hist[0] = state.rho
    q_hist[0] = state.q

    sigma = disturbance.sigma_phi if disturbance is not None else 0.0
    rng = disturbance.rng() if disturbance is not None and sigma > 0.0 else None

    for t in range(T):
        w_row = demand.row(t)
        if controller is not None:
            r = np.asarray(controller.compute_rates(state, w_row), dtype=float)
        else:
            r = np.full(n, np.inf)
        lo, hi = _rate_bounds(model, state.q, w_row[1:], relaxed=relaxed)
        r = np.clip(r, lo, hi)
        state, phi = step(model, state, r, w_row, rng=rng,
                          sigma_phi=sigma, relaxed=relaxed)
        rho_hist[t + 1] = state.rho
        q_hist[t + 1] = state.q
        flows[t] = phi
        rates_hist[t] = r
    return Trajectory(rho=rho_hist, q=q_hist, flows=flows,
                      rates=rates_hist, demand=demand)


class RateSchedule:
    """Open-loop playback of a precomputed rate table (T, n)."""

    def __init__(self, rates: np.ndarray):
        self.rates = np.asarray(rates, dtype=float)
        self._t = 0

    def compute_rates(self, state: SimState, w_row: np.ndarray) -> np.ndarray:
        r = self.rates[self._t]
        self._t += 1
        return r


@dataclass(frozen=True)
class Metrics:
    tts: float           # car-hours spent in the network
    tft: float           # car-hours if every car ran at free-flow speed
    twt: float           # tts - tft, time lost to congestion and queues
    tdt: np.ndarray = field(repr=False, default=None)  # car-km per step

    def __iter__(self):
        return iter((self.tts, self.tft, self.twt))


def freeflow_traverse_times(model: FreewayModel) -> np.ndarray:
    """tau[k-1]: hours a car entering at cell k needs to leave the network
    at free-flow speed, weighted by the share that survives each offramp."""
    tau = np.empty(model.n)
    acc = 0.0
    for j in range(model.n - 1, -1, -1):
        acc = model.length[j] / model.v_free[j] + model.beta_bar[j] * acc
        tau[j] = acc
    return tau


def evaluate_metrics(model: FreewayModel, traj: Trajectory) -> Metrics:
    dt = model.dt
    tts = dt * float(np.sum(traj.rho @ model.length) + np.sum(traj.q))
    tau = freeflow_traverse_times(model)
    tft = dt * float(np.sum(traj.demand.w0) * tau[0]
                     + np.sum(traj.demand.w_ramp @ tau))
    tdt = dt * (traj.flows[:, 1:] @ model.length)
    return Metrics(tts=tts, tft=tft, twt=tts - tft, tdt=tdt)


def mass_conservation_residual(model: FreewayModel, traj: Trajectory) -> float:
    """Relative gap between cars entering and cars stored plus cars leaving."""
    dt = model.dt
    entered = dt * (float(np.sum(traj.demand.w0)) + float(np.sum(traj.demand.w_ramp)))
    stored0 = float(traj.rho[0] @ model.length + np.sum(traj.q[0]))
    storedT = float(traj.rho[-1] @ model.length + np.sum(traj.q[-1]))
    offramp = model.beta / model.beta_bar
    left = dt * float(np.sum(traj.flows[:, -1])
                      + np.sum(traj.flows[:, 1:] @ offramp))
    scale = max(1.0, entered + stored0)
    return abs(entered + stored0 - storedT - left) / scale
