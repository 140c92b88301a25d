"""Freeway geometry and fundamental diagram primitives.

A freeway is a chain of cells, each with a piecewise-affine demand curve
(how much traffic the cell wants to send downstream) and supply curve
(how much it can accept from upstream). Cells may carry an onramp with a
finite queue and a metering-rate cap, and an offramp taking a fixed split
of the cell outflow.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    """Raised when cell parameters cannot define a usable fundamental diagram."""


@dataclass(frozen=True)
class CellParams:
    """Static description of one mainline cell and its ramps.

    ``w_back`` and ``capacity`` may be left unset (None); use
    :func:`triangular_fd_defaults` or let :class:`FreewayModel` derive them.
    """

    length: float                 # km
    v_free: float                 # km/h, free-flow speed
    rho_crit: float               # cars/km, critical density
    rho_jam: float                # cars/km, jam density
    w_back: float | None = None   # km/h, congestion wave speed
    capacity: float | None = None  # cars/h, hard cap on cell outflow
    beta: float = 0.0             # offramp split, fraction of outflow leaving
    ramp_flow_max: float = 0.0    # cars/h, metering-rate upper bound
    queue_max: float = 0.0        # cars, onramp storage
    capacity_drop: float = 0.0    # fractional demand drop above rho_crit

    @property
    def beta_bar(self) -> float:
        """Fraction of cell outflow that continues to the next cell."""
        return 1.0 - self.beta


def triangular_fd_defaults(cell: CellParams) -> CellParams:
    """Fill unset fundamental-diagram parameters from the triangular shape.

    The congestion wave speed makes supply vanish exactly at jam density,
    and the default outflow cap sits at the supply peak so it stays
    inactive unless explicitly overridden.
    """
    if not (0.0 < cell.rho_crit < cell.rho_jam):
        raise GeometryError(
            f"need 0 < rho_crit < rho_jam, got rho_crit={cell.rho_crit}, "
            f"rho_jam={cell.rho_jam}"
        )
    if cell.v_free <= 0.0:
        raise GeometryError(f"need v_free > 0, got {cell.v_free}")
    w = cell.w_back
    if w is None:
        w = cell.v_free * cell.rho_crit / (cell.rho_jam - cell.rho_crit)
    cap = cell.capacity
    if cap is None:
        cap = cell.v_free * cell.rho_crit
    return replace(cell, w_back=w, capacity=cap)


def demand_value(cell: CellParams, rho: float) -> float:
    """Outflow the cell offers at density rho (cars/h).

    Increases at slope beta_bar * v_free up to rho_crit, then is flat;
    with a capacity drop the flat part steps down by that fraction for
    rho strictly above rho_crit.
    """
    _check_density(cell, rho)
    bv = cell.beta_bar * cell.v_free
    if rho <= cell.rho_crit:
        return bv * min(rho, cell.rho_crit)
    return (1.0 - cell.capacity_drop) * bv * cell.rho_crit


def supply_value(cell: CellParams, rho: float) -> float:
    """Inflow the cell accepts at density rho (cars/h).

    Flat at w_back * (rho_jam - rho_crit) below critical density, then
    decreases at slope w_back, hitting zero at jam density.
    """
    _check_density(cell, rho)
    w = cell.w_back
    if w is None:
        raise GeometryError("w_back unset; resolve defaults first")
    return min(w * (cell.rho_jam - cell.rho_crit), w * (cell.rho_jam - rho))


def _check_density(cell: CellParams, rho: float) -> None:
    tol = 1e-9 * max(1.0, cell.rho_jam)
    if rho < -tol or rho > cell.rho_jam + tol:
        raise ValueError(
            f"density {rho} outside [0, {cell.rho_jam}]"
        )


@dataclass(frozen=True)
class Violation:
    """One failed model check; ``cell`` is 1-based, 0 means model-level."""

    cell: int
    rule: str
    detail: str

    def __str__(self) -> str:
        where = f"cell {self.cell}" if self.cell else "model"
        return f"{where}: {self.rule}: {self.detail}"


class FreewayModel:
    """Immutable cell chain plus step length, with vectorized parameter arrays.

    Unset w_back/capacity entries are resolved with triangular defaults at
    construction. Parameter arrays are read-only numpy views indexed 0..n-1
    for cells 1..n.
    """

    def __init__(self, cells: Sequence[CellParams], dt: float):
        if len(cells) == 0:
            raise GeometryError("model needs at least one cell")
        if dt <= 0.0:
            raise GeometryError(f"need dt > 0, got {dt}")
        resolved = []
        for cell in cells:
            if cell.w_back is None or cell.capacity is None:
                cell = triangular_fd_defaults(cell)
            resolved.append(cell)
        self.cells: tuple[CellParams, ...] = tuple(resolved)
        self.dt = float(dt)          # hours
        self.n = len(resolved)

        def arr(get) -> np.ndarray:
            a = np.array([get(c) for c in resolved], dtype=float)
            a.flags.writeable = False
            return a

        self.length = arr(lambda c: c.length)
        self.v_free = arr(lambda c: c.v_free)
        self.rho_crit = arr(lambda c: c.rho_crit)
        self.rho_jam = arr(lambda c: c.rho_jam)
        self.w_back = arr(lambda c: c.w_back)
        self.capacity = arr(lambda c: c.capacity)
        self.beta = arr(lambda c: c.beta)
        self.beta_bar = arr(lambda c: c.beta_bar)
        self.ramp_flow_max = arr(lambda c: c.ramp_flow_max)
        self.queue_max = arr(lambda c: c.queue_max)
        self.capacity_drop = arr(lambda c: c.capacity_drop)
        # beta_run[j] = product of beta_bar over cells 1..j, beta_run[0] = 1
        run = np.concatenate(([1.0], np.cumprod(self.beta_bar)))
        run.flags.writeable = False
        self.beta_run = run

    @property
    def has_capacity_drop(self) -> bool:
        return bool(np.any(self.capacity_drop > 0.0))

    def with_cells(self, cells: Sequence[CellParams]) -> "FreewayModel":
        return FreewayModel(cells, self.dt)

    def demand(self, rho: np.ndarray) -> np.ndarray:
        """Vectorized demand curve over all cells."""
        rho = np.asarray(rho, dtype=float)
        bv = self.beta_bar * self.v_free
        free = bv * np.minimum(rho, self.rho_crit)
        dropped = (1.0 - self.capacity_drop) * bv * self.rho_crit
        return np.where(rho > self.rho_crit, dropped, free)

    def supply(self, rho: np.ndarray) -> np.ndarray:
        """Vectorized supply curve over all cells."""
        rho = np.asarray(rho, dtype=float)
        return np.minimum(
            self.w_back * (self.rho_jam - self.rho_crit),
            self.w_back * (self.rho_jam - rho),
        )


def validate_model(model: FreewayModel) -> list[Violation]:
    """Check geometry and the step-size conditions that make one simulation
    step well posed (density change per step bounded by the steepest
    demand and supply slopes).

    Returns an empty list for a usable model; violations are data, not
    exceptions, so callers can report all of them at once.
    """
    out: list[Violation] = []
    for i, c in enumerate(model.cells):
        k = i + 1
        if c.length <= 0.0:
            out.append(Violation(k, "length > 0", f"length={c.length}"))
        if c.v_free <= 0.0:
            out.append(Violation(k, "v_free > 0", f"v_free={c.v_free}"))
        if not (0.0 < c.rho_crit < c.rho_jam):
            out.append(Violation(
                k, "0 < rho_crit < rho_jam",
                f"rho_crit={c.rho_crit}, rho_jam={c.rho_jam}"))
        if c.w_back is None or c.w_back <= 0.0:
            out.append(Violation(k, "w_back > 0", f"w_back={c.w_back}"))
        if c.capacity is None or c.capacity <= 0.0:
            out.append(Violation(k, "capacity > 0", f"capacity={c.capacity}"))
        if not (0.0 <= c.beta < 1.0):
            out.append(Violation(k, "0 <= beta < 1", f"beta={c.beta}"))
        if c.ramp_flow_max < 0.0:
            out.append(Violation(
                k, "ramp_flow_max >= 0", f"ramp_flow_max={c.ramp_flow_max}"))
        if c.queue_max < 0.0:
            out.append(Violation(k, "queue_max >= 0", f"queue_max={c.queue_max}"))
        if not (0.0 <= c.capacity_drop < 1.0):
            out.append(Violation(
                k, "0 <= capacity_drop < 1", f"capacity_drop={c.capacity_drop}"))
        # Step-size conditions, using the slopes of the PWA pieces.
        c_d = c.beta_bar * c.v_free
        if model.dt * c_d > c.length * c.beta_bar + 1e-12:
            out.append(Violation(
                k, "dt * demand slope <= length * beta_bar",
                f"dt*{c_d:g} = {model.dt * c_d:g} > {c.length * c.beta_bar:g}"))
        if c.w_back is not None and model.dt * c.w_back > c.length + 1e-12:
            out.append(Violation(
                k, "dt * supply slope <= length",
                f"dt*{c.w_back:g} = {model.dt * c.w_back:g} > {c.length:g}"))
    return out
