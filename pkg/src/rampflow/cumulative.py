"""Cumulative-flow coordinates and optimality certification.

Instead of densities, track per-boundary cumulative counts:

    phi_cum[k]    cars that have crossed the downstream edge of cell k,
                  rescaled so offramp splits cancel; entry 0 is the
                  mainline inflow count
    inflow_cum[k] cars metered onto the mainline from ramp k
    demand_cum[k] cars that have arrived at ramp k (plus initial queue)

In these coordinates the one-step map is componentwise monotone: more
cumulative flow anywhere can never reduce future cumulative flow. That
turns greedy per-step flow maximization into a global optimality argument
whenever no cell is "restrictive" (throttling traffic while its ramp
queue still has slack in the binding direction). The total time spent is
an affine decreasing function of the cumulative flows, so certified
maximal flows mean certified minimal time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import make_controller
from .model import FreewayModel
from .simulator import (
    DemandProfile,
    SimState,
    Trajectory,
    _flows,
    evaluate_metrics,
    simulate,
)


class InconsistentStateError(ValueError):
    """Cumulative coordinates that do not decode to a physical state."""


@dataclass
class CumulativeState:
    """Snapshot of all cumulative counters at one step."""

    phi_cum: np.ndarray      # (n+1,) boundary counts, entry 0 = mainline inflow
    inflow_cum: np.ndarray   # (n,) metered cars per ramp
    demand_cum: np.ndarray   # (n,) arrived cars per ramp incl. initial queue
    virtual_cars: float      # cars accumulated past the last cell

    def copy(self) -> "CumulativeState":
        return CumulativeState(self.phi_cum.copy(), self.inflow_cum.copy(),
                               self.demand_cum.copy(), self.virtual_cars)


def _phi_from_density(model: FreewayModel, rho: np.ndarray,
                      inflow_cum: np.ndarray,
                      virtual_cars: float) -> np.ndarray:
    """Boundary counts consistent with the given densities and ramp counts.

    phi_cum[k] collects the (offramp-rescaled) cars currently downstream
    of boundary k plus everything that already left, minus cars the ramps
    injected downstream of k.
    """
    B = model.beta_run                    # B[j] = prod of beta_bar_1..j
    core = np.concatenate((model.length * rho - inflow_cum, [virtual_cars]))
    ratios = core / B                     # term j divides by B[j-1], j = 1..n+1
    tails = np.cumsum(ratios[::-1])[::-1]  # tails[k] = sum over j >= k+1
    return B * tails


def cumulative_from_state(model: FreewayModel, state: SimState,
                          inflow_cum: np.ndarray | None = None,
                          virtual_cars: float = 0.0) -> CumulativeState:
    """Lift a plain state into cumulative coordinates.

    With no history given, ramp counters start at zero and arrivals are
    chosen so queues decode correctly (demand_cum = inflow_cum + q).
    """
    if inflow_cum is None:
        inflow_cum = np.zeros(model.n)
    inflow_cum = np.asarray(inflow_cum, dtype=float)
    phi = _phi_from_density(model, state.rho, inflow_cum, virtual_cars)
    return CumulativeState(phi_cum=phi, inflow_cum=inflow_cum.copy(),
                           demand_cum=inflow_cum + state.q,
                           virtual_cars=virtual_cars)


def reconstruct_densities(model: FreewayModel, cum: CumulativeState,
                          tol: float = 1e-6) -> np.ndarray:
    """Decode densities; raises if they land outside [0, rho_jam]."""
    rho = (cum.phi_cum[:-1] - cum.phi_cum[1:] / model.beta_bar
           + cum.inflow_cum) / model.length
    slack = tol * np.maximum(1.0, model.rho_jam)
    if np.any(rho < -slack) or np.any(rho > model.rho_jam + slack):
        k = int(np.argmax(np.maximum(-rho, rho - model.rho_jam)))
        raise InconsistentStateError(
            f"decoded density {rho[k]:g} at cell {k + 1} outside "
            f"[0, {model.rho_jam[k]:g}]")
    return np.clip(rho, 0.0, model.rho_jam)


def reconstruct_queues(model: FreewayModel, cum: CumulativeState) -> np.ndarray:
    return cum.demand_cum - cum.inflow_cum


def to_cumulative(model: FreewayModel, traj: Trajectory) -> list[CumulativeState]:
    """Cumulative snapshots at every step of a simulated run."""
    dt = model.dt
    T = traj.horizon
    inflow = np.vstack((np.zeros(model.n), dt * np.cumsum(traj.rates, axis=0)))
    demand = traj.q[0] + np.vstack(
        (np.zeros(model.n), dt * np.cumsum(traj.demand.w_ramp[:T], axis=0)))
    phi0 = _phi_from_density(model, traj.rho[0], inflow[0], 0.0)
    out = [CumulativeState(phi0, inflow[0].copy(), demand[0].copy(), 0.0)]
    for t in range(T):
        prev = out[-1]
        phi = prev.phi_cum + dt * traj.flows[t]
        out.append(CumulativeState(phi, inflow[t + 1], demand[t + 1],
                                   prev.virtual_cars + dt * traj.flows[t][-1]))
    return out


def _decode_clipped(model: FreewayModel, cum: CumulativeState) -> np.ndarray:
    """Densities implied by the counters, clipped into the physical box."""
    rho = (cum.phi_cum[:-1] - cum.phi_cum[1:] / model.beta_bar
           + cum.inflow_cum) / model.length
    return np.clip(rho, 0.0, model.rho_jam)


def one_step_flows(model: FreewayModel, cum: CumulativeState,
                   w0: float = 0.0) -> np.ndarray:
    """Advanced boundary counts f(phi_cum, inflow_cum) after one step."""
    return cum.phi_cum + model.dt * _flows(model, _decode_clipped(model, cum), w0)


def cctm_step(model: FreewayModel, cum: CumulativeState,
              inflow_cum_next: np.ndarray, w_row: np.ndarray,
              relaxed: bool = False) -> CumulativeState:
    """Advance the cumulative dynamics one step.

    ``inflow_cum_next`` is the ramp counter after this step's metering; it
    must not decrease, must not grow faster than dt * ramp_flow_max
    (waived when relaxed), and must keep the decoded queue inside its box.
    """
    dt = model.dt
    inflow_cum_next = np.asarray(inflow_cum_next, dtype=float)
    demand_next = cum.demand_cum + dt * np.asarray(w_row[1:], dtype=float)
    tol = 1e-9 * np.maximum(1.0, demand_next)
    if not relaxed:
        if np.any(inflow_cum_next < cum.inflow_cum - tol):
            raise InconsistentStateError("ramp counter decreased")
        if np.any(inflow_cum_next
                  > cum.inflow_cum + dt * model.ramp_flow_max + tol):
            raise InconsistentStateError("ramp counter grew past the rate cap")
    if np.any(inflow_cum_next > demand_next + tol) \
            or np.any(inflow_cum_next < demand_next - model.queue_max - tol):
        raise InconsistentStateError("ramp counter leaves the queue box")

    rho = reconstruct_densities(model, cum)
    phi = _flows(model, rho, float(w_row[0]))
    return CumulativeState(
        phi_cum=cum.phi_cum + dt * phi,
        inflow_cum=inflow_cum_next,
        demand_cum=demand_next,
        virtual_cars=cum.virtual_cars + dt * phi[-1])


def tts_from_cumulative(model: FreewayModel,
                        states: list[CumulativeState]) -> float:
    """Total time spent, written purely in cumulative coordinates.

    The metered counters cancel between mainline and queue time, leaving
    an affine function that strictly decreases in every boundary count.
    """
    off = model.beta / model.beta_bar
    total = 0.0
    for cum in states:
        total += (cum.phi_cum[0] - cum.phi_cum[-1]
                  + float(np.sum(cum.demand_cum))
                  - float(off @ cum.phi_cum[1:]))
    return model.dt * total


# ---------------------------------------------------------------------------
# monotonicity probes

@dataclass(frozen=True)
class ProbeViolation:
    component: int    # boundary index 0..n
    magnitude: float  # how far the inequality failed, in cars

    def __str__(self) -> str:
        return f"boundary {self.component}: monotonicity off by {self.magnitude:g}"


def monotonicity_probe(model: FreewayModel, base: CumulativeState,
                       perturbed: CumulativeState, w0: float = 0.0,
                       tol: float = 1e-12) -> list[ProbeViolation]:
    """Check the one-step map against a perturbed state.

    Accepts either a flow probe (phi_cum raised somewhere, ramp counters
    equal: every advanced count must not drop) or an input probe (one
    ramp counter moved: its own boundary must move with it, the upstream
    boundary against it). Any reported violation falsifies monotonicity
    of the model, up to ``tol`` cars.
    """
    dphi = perturbed.phi_cum - base.phi_cum
    dR = perturbed.inflow_cum - base.inflow_cum
    flow_probe = np.any(dphi != 0.0)
    input_probe = np.any(dR != 0.0)
    if flow_probe and input_probe:
        raise ValueError("probe must perturb either phi_cum or inflow_cum")
    if flow_probe and np.any(dphi < 0.0):
        raise ValueError("flow probe must not decrease any boundary count")
    if input_probe and np.count_nonzero(dR) != 1:
        raise ValueError("input probe must move exactly one ramp counter")

    phi_b = _flows(model, _decode_clipped(model, base), w0)
    phi_p = _flows(model, _decode_clipped(model, perturbed), w0)
    # compare via increments so the large counters cancel exactly
    df = dphi + model.dt * (phi_p - phi_b)

    out: list[ProbeViolation] = []
    if input_probe:
        k = int(np.nonzero(dR)[0][0])          # ramp of cell k+1
        sign = 1.0 if dR[k] > 0 else -1.0
        if sign * df[k + 1] < -tol:            # own boundary moves along
            out.append(ProbeViolation(k + 1, float(-sign * df[k + 1])))
        if sign * df[k] > tol:                 # upstream boundary moves against
            out.append(ProbeViolation(k, float(sign * df[k])))
        return out
    for j in range(model.n + 1):
        if df[j] < -tol:
            out.append(ProbeViolation(j, float(-df[j])))
    return out


# ---------------------------------------------------------------------------
# restrictiveness

NONRESTRICTIVE = ""
SUPPLY_LIMITED = "supply_limited_with_space"
DEMAND_LIMITED = "demand_limited_with_queue"


def classify_cell(model: FreewayModel, state: SimState,
                  flows: np.ndarray, k: int) -> str:
    """Restrictiveness of cell k (1-based) at a step with the given flows.

    A cell is restrictive when its ramp could still trade cars against
    mainline flow: either congestion chokes the upstream flow below its
    cap while the queue has space, or the cell's own demand limits its
    outflow below the cap while a queue is waiting.
    """
    i = k - 1
    q, q_cap = state.q[i], model.queue_max[i]
    eps_q = 1e-9 * max(1.0, q_cap)
    if k >= 2:
        cap_up = model.capacity[i - 1]
        eps = 1e-6 * cap_up
        supply_here = float(model.supply(state.rho)[i])
        if (q < q_cap - eps_q and abs(flows[i] - supply_here) <= eps
                and flows[i] < cap_up - eps):
            return SUPPLY_LIMITED
    cap = model.capacity[i]
    eps = 1e-6 * cap
    demand_here = float(model.demand(state.rho)[i])
    if (q > eps_q and abs(flows[i + 1] - demand_here) <= eps
            and flows[i + 1] < cap - eps):
        return DEMAND_LIMITED
    return NONRESTRICTIVE


@dataclass
class RestrictivenessReport:
    reasons: list[list[str]]          # [t][cell-1] classification reason
    restrictive: np.ndarray           # (T, n) bool
    restrictive_fraction: float       # share of (metered cell, step) pairs
    interior_clean: bool              # no restrictive cell for 0 < t < T

    def rows(self):
        T, n = self.restrictive.shape
        for t in range(T):
            for k in range(n):
                status = "restrictive" if self.restrictive[t, k] \
                    else "nonrestrictive"
                yield t, k + 1, status, self.reasons[t][k]


def restrictiveness_report(model: FreewayModel,
                           traj: Trajectory) -> RestrictivenessReport:
    T, n = traj.horizon, model.n
    reasons = []
    flags = np.zeros((T, n), dtype=bool)
    for t in range(T):
        state = traj.state(t)
        row = [classify_cell(model, state, traj.flows[t], k)
               for k in range(1, n + 1)]
        reasons.append(row)
        flags[t] = [r != NONRESTRICTIVE for r in row]
    metered = model.queue_max > 0.0
    pairs = T * int(np.count_nonzero(metered))
    fraction = float(np.count_nonzero(flags[:, metered])) / pairs if pairs else 0.0
    interior_clean = not bool(np.any(flags[1:]))
    return RestrictivenessReport(reasons=reasons, restrictive=flags,
                                 restrictive_fraction=fraction,
                                 interior_clean=interior_clean)


# ---------------------------------------------------------------------------
# bounds

@dataclass(frozen=True)
class BoundsReport:
    tts_lb: float
    tts_be: float
    certificate: str          # "optimal" | "bounded"
    gap_abs: float
    gap_rel: float
    restrictive_fraction: float


def tts_bounds(model: FreewayModel, demand: DemandProfile,
               initial_state: SimState | None = None) -> BoundsReport:
    """Sandwich the minimal total time spent without solving anything.

    The greedy law gives the upper bound; rerunning it with the constant
    rate bounds waived gives a lower bound, because without those bounds
    the law provably maximizes all cumulative flows. When the greedy run
    is nonrestrictive at every interior step it is itself optimal and the
    certificate says so.
    """
    be = simulate(model, demand, controller=make_controller("best_effort", model),
                  initial_state=initial_state)
    tts_be = evaluate_metrics(model, be).tts
    report = restrictiveness_report(model, be)

    relaxed = simulate(model, demand,
                       controller=make_controller("relaxed_best_effort", model),
                       initial_state=initial_state, relaxed=True)
    tts_lb = evaluate_metrics(model, relaxed).tts

    certificate = "optimal" if report.interior_clean else "bounded"
    gap_abs = max(0.0, tts_be - tts_lb)
    gap_rel = gap_abs / tts_be if tts_be > 0.0 else 0.0
    return BoundsReport(tts_lb=tts_lb, tts_be=tts_be, certificate=certificate,
                        gap_abs=gap_abs, gap_rel=gap_rel,
                        restrictive_fraction=report.restrictive_fraction)
