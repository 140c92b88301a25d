"""Scenario definitions: geometry + demand + initial state.

Ships three builtins (``builtin:example1``, ``builtin:example2``,
``builtin:grenoble``) and a YAML loader for user scenarios. Also hosts the
synthetic rush-hour demand generator and the model-mismatch campaign used
to stress the controllers.
"""

from __future__ import annotations

import concurrent.futures as _futures
import csv
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .controllers import make_controller, sample_controller_model
from .model import CellParams, FreewayModel, validate_model
from .simulator import (
    DemandProfile,
    DisturbanceSpec,
    SimState,
    evaluate_metrics,
    simulate,
    zero_state,
)


class ScenarioError(ValueError):
    """A scenario file or builtin reference could not be turned into a model."""


@dataclass
class Scenario:
    label: str
    model: FreewayModel
    demand: DemandProfile
    initial: SimState

    @property
    def horizon(self) -> int:
        return self.demand.horizon


# ---------------------------------------------------------------------------
# builtins

def _piecewise_profile(model: FreewayModel, steps: int,
                       pieces: dict[int, list[tuple[float, float, float]]]
                       ) -> DemandProfile:
    """pieces maps column (0 = mainline, k = ramp of cell k) to
    (from_min, to_min, cars_per_hour) segments, half-open in time."""
    t_min = np.arange(steps) * model.dt * 60.0
    w0 = np.zeros(steps)
    w_ramp = np.zeros((steps, model.n))
    for col, segs in pieces.items():
        for lo, hi, value in segs:
            mask = (t_min >= lo) & (t_min < hi)
            if col == 0:
                w0[mask] += value
            else:
                w_ramp[mask, col - 1] += value
    return DemandProfile(w0=w0, w_ramp=w_ramp)


def builtin_example1() -> Scenario:
    """Two cells with a large offramp split upstream of a short weak cell.

    A mainline surge arrives after the ramp of cell 2 has already filled
    the cell to its critical density; holding ramp cars back earlier (a
    queue the greedy law never builds) would keep the surge moving.
    """
    cells = [
        CellParams(length=1.0, v_free=100.0, rho_crit=100.0, rho_jam=200.0,
                   capacity=1000.0, beta=0.8),
        # ramp cap equals the cell's discharge cap so that even a fully
        # open ramp cannot push the short cell past its jam density
        CellParams(length=1.0, v_free=100.0, rho_crit=10.0, rho_jam=20.0,
                   capacity=500.0, ramp_flow_max=500.0, queue_max=100.0),
    ]
    model = FreewayModel(cells, dt=10.0 / 3600.0)
    demand = _piecewise_profile(model, steps=180, pieces={
        0: [(2.0, 4.0, 5000.0)],
        2: [(0.0, 2.0, 2500.0)],
    })
    return Scenario("example1", model, demand, zero_state(model))


def builtin_example2() -> Scenario:
    """One metered cell where metering can only hurt: the queue drains
    slower than the mainline, so releasing everything is optimal."""
    cells = [
        CellParams(length=1.0, v_free=100.0, rho_crit=50.0, rho_jam=250.0,
                   ramp_flow_max=1800.0, queue_max=100.0),
    ]
    model = FreewayModel(cells, dt=10.0 / 3600.0)
    demand = _piecewise_profile(model, steps=120, pieces={
        0: [(0.0, 3.0, 4000.0)],
        1: [(0.0, 5.0, 1800.0)],
    })
    return Scenario("example2", model, demand, zero_state(model))


# cell: (length_km, queue_cap_or_None, v_kmh, rho_crit, beta)
# queue cap None = no onramp; 0 = onramp present but never metered
_GRENOBLE_TABLE = [
    (0.4, 0,    90.0, 49.0, 0.00),
    (0.5, 0,    90.0, 59.6, 0.00),
    (0.6, None, 90.0, 55.0, 0.00),
    (0.5, None, 90.0, 55.0, 0.10),
    (0.5, 200,  90.0, 47.9, 0.00),
    (0.7, None, 90.0, 52.0, 0.18),
    (0.5, 200,  90.0, 55.0, 0.00),
    (0.5, 200,  90.0, 51.1, 0.00),
    (0.7, None, 90.0, 54.2, 0.00),
    (1.3, None, 90.0, 48.0, 0.11),
    (0.5, 200,  90.0, 48.0, 0.00),
    (0.5, None, 90.0, 51.6, 0.00),
    (0.5, None, 90.0, 49.5, 0.10),
    (0.5, 200,  90.0, 54.7, 0.00),
    (0.5, None, 90.0, 51.2, 0.16),
    (0.5, 200,  90.0, 51.2, 0.00),
    (0.5, None, 90.0, 56.1, 0.00),
    (0.5, None, 90.0, 56.1, 0.10),
    (0.5, 200,  90.0, 56.1, 0.00),
    (0.5, None, 90.0, 56.1, 0.08),
    (0.5, 0,    90.0, 84.2, 0.00),
]

GRENOBLE_DT = 15.0 / 3600.0
GRENOBLE_RAMP_FLOW_MAX = 1800.0
GRENOBLE_BOTTLENECK_CAPACITY = 4300.0  # reduced outflow cap of cell 20
# Multi-lane aggregate jam density. Keeping it well above critical gives the
# congested branch a realistic ~13 km/h wave speed and enough storage that
# the bottleneck backup stays inside the metered section instead of sweeping
# back to the unmetered entry cells.
GRENOBLE_RHO_JAM = 450.0


def grenoble_cells() -> list[CellParams]:
    """South ring geometry: 21 cells, 7 metered onramps, 3 unmetered ones,
    and an outflow cap on cell 20 that acts as the recurrent bottleneck."""
    cells = []
    for i, (length, q_cap, v, rho_c, beta) in enumerate(_GRENOBLE_TABLE):
        cells.append(CellParams(
            length=length, v_free=v, rho_crit=rho_c, rho_jam=GRENOBLE_RHO_JAM,
            capacity=GRENOBLE_BOTTLENECK_CAPACITY if i == 19 else None,
            beta=beta,
            ramp_flow_max=0.0 if q_cap is None else GRENOBLE_RAMP_FLOW_MAX,
            queue_max=float(q_cap) if q_cap else 0.0,
        ))
    return cells


def grenoble_model() -> FreewayModel:
    return FreewayModel(grenoble_cells(), dt=GRENOBLE_DT)


# ---------------------------------------------------------------------------
# synthetic demand

@dataclass(frozen=True)
class SynthDemandSpec:
    """Trapezoidal rush-hour profile with optional smoothed jitter.

    ``windows`` lists (start_h, end_h) of each flat peak; demand ramps up
    and down over ``shoulder`` hours on both sides. ``ramp_peaks`` maps
    1-based cell indices to peak arrival rates.
    """

    horizon_steps: int
    mainline_peak: float
    mainline_base: float = 0.0
    ramp_peaks: dict = field(default_factory=dict)
    ramp_base_frac: float = 0.25
    windows: tuple = ((1.0, 2.5),)
    shoulder: float = 0.5
    jitter: float = 0.0


def _trapezoid(t_h: np.ndarray, windows, shoulder: float) -> np.ndarray:
    env = np.zeros_like(t_h)
    for start, end in windows:
        rise = np.clip((t_h - (start - shoulder)) / shoulder, 0.0, 1.0)
        fall = np.clip(((end + shoulder) - t_h) / shoulder, 0.0, 1.0)
        env = np.maximum(env, np.minimum(rise, fall))
    return env


def _smooth_noise(rng: np.random.Generator, steps: int, width: int) -> np.ndarray:
    raw = rng.normal(0.0, 1.0, size=steps + width)
    kernel = np.ones(width) / width
    return np.convolve(raw, kernel, mode="valid")[:steps]


def synth_demand(model: FreewayModel, spec: SynthDemandSpec,
                 seed: int = 0) -> DemandProfile:
    """Deterministic-per-seed daily profile for the given model."""
    for k, peak in spec.ramp_peaks.items():
        cap = model.ramp_flow_max[k - 1]
        if peak > cap + 1e-9:
            raise ScenarioError(
                f"ramp peak {peak:g} at cell {k} exceeds ramp_flow_max {cap:g}")
    rng = np.random.default_rng(seed)
    steps = spec.horizon_steps
    t_h = np.arange(steps) * model.dt
    env = _trapezoid(t_h, spec.windows, spec.shoulder)
    width = max(1, int(round(0.25 / model.dt)))

    def jittered(series: np.ndarray, cap: float) -> np.ndarray:
        if spec.jitter > 0.0:
            series = series * (1.0 + spec.jitter * _smooth_noise(rng, steps, width))
        return np.clip(series, 0.0, cap)

    w0 = jittered(spec.mainline_base + (spec.mainline_peak - spec.mainline_base) * env,
                  cap=np.inf)
    w_ramp = np.zeros((steps, model.n))
    for k, peak in sorted(spec.ramp_peaks.items()):
        base = spec.ramp_base_frac * peak
        w_ramp[:, k - 1] = jittered(base + (peak - base) * env,
                                    cap=model.ramp_flow_max[k - 1])
    return DemandProfile(w0=w0, w_ramp=w_ramp)


#: Rush-hour preset feeding the cell-20 bottleneck of the ring model.
#: Calibrated so that at peak only cell 20 is oversubscribed (~3% over its
#: effective arrival cap, ~6% over under the capacity-drop variant); every
#: other cell stays at or below ~0.87x its own cap, so the bottleneck backup
#: forms upstream of cell 20 but dissolves before reaching the unmetered
#: entry cells even with demand jitter, flow noise, or the drop active.
GRENOBLE_PRESET = SynthDemandSpec(
    horizon_steps=960,                      # 4 h at 15 s
    mainline_peak=3000.0,
    mainline_base=900.0,
    ramp_peaks={1: 400.0, 2: 450.0, 5: 150.0, 7: 450.0, 8: 300.0,
                11: 400.0, 14: 600.0, 16: 700.0, 19: 1200.0, 21: 150.0},
    windows=((1.0, 2.5),),
    shoulder=0.5,
    jitter=0.03,
)


def builtin_grenoble(seed: int = 0) -> Scenario:
    model = grenoble_model()
    demand = synth_demand(model, GRENOBLE_PRESET, seed=seed)
    return Scenario("grenoble", model, demand, zero_state(model))


# ---------------------------------------------------------------------------
# loader

_BUILTINS = {
    "example1": builtin_example1,
    "example2": builtin_example2,
    "grenoble": builtin_grenoble,
}

_CELL_FIELDS = {
    "length", "v_free", "rho_crit", "rho_jam", "w_back", "capacity",
    "beta", "ramp_flow_max", "queue_max", "capacity_drop",
}


def load_scenario(ref: str | Path) -> Scenario:
    """Load ``builtin:<name>`` or a YAML scenario file."""
    ref = str(ref)
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in _BUILTINS:
            raise ScenarioError(
                f"unknown builtin {name!r}; have {sorted(_BUILTINS)}")
        return _BUILTINS[name]()
    path = Path(ref)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ScenarioError(f"{path}: not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return _scenario_from_dict(doc, path)


def _scenario_from_dict(doc: dict, path: Path) -> Scenario:
    def fail(msg: str):
        raise ScenarioError(f"{path}: {msg}")

    label = str(doc.get("label", path.stem))
    if "dt" in doc:
        dt = float(doc["dt"])
    elif "dt_seconds" in doc:
        dt = float(doc["dt_seconds"]) / 3600.0
    else:
        fail("missing dt (hours) or dt_seconds")
    raw_cells = doc.get("cells")
    if not isinstance(raw_cells, list) or not raw_cells:
        fail("cells: need a non-empty list")
    cells = []
    for i, entry in enumerate(raw_cells):
        if not isinstance(entry, dict):
            fail(f"cells[{i}]: must be a mapping")
        unknown = set(entry) - _CELL_FIELDS
        if unknown:
            fail(f"cells[{i}]: unknown fields {sorted(unknown)}")
        try:
            cells.append(CellParams(**{k: float(v) for k, v in entry.items()}))
        except TypeError as e:
            fail(f"cells[{i}]: {e}")
    try:
        model = FreewayModel(cells, dt=dt)
    except ValueError as e:
        fail(str(e))
    violations = validate_model(model)
    if violations:
        fail("invalid model: " + "; ".join(str(v) for v in violations))

    demand = _demand_from_dict(doc.get("demand"), model, path, fail)
    try:
        demand.check_against(model)
    except ValueError as e:
        fail(f"demand: {e}")

    initial = zero_state(model)
    if "initial" in doc:
        init = doc["initial"]
        rho = np.asarray(init.get("rho", np.zeros(model.n)), dtype=float)
        q = np.asarray(init.get("q", np.zeros(model.n)), dtype=float)
        if rho.shape != (model.n,) or q.shape != (model.n,):
            fail(f"initial: rho and q must have length {model.n}")
        if np.any(rho < 0) or np.any(rho > model.rho_jam) \
                or np.any(q < 0) or np.any(q > model.queue_max):
            fail("initial: state outside the model boxes")
        initial = SimState(rho, q)
    return Scenario(label, model, demand, initial)


def _demand_from_dict(spec, model: FreewayModel, path: Path, fail) -> DemandProfile:
    if not isinstance(spec, dict):
        fail("demand: need a mapping with one of csv|table|piecewise|synth")
    kinds = [k for k in ("csv", "table", "piecewise", "synth") if k in spec]
    if len(kinds) != 1:
        fail("demand: give exactly one of csv|table|piecewise|synth")
    kind = kinds[0]
    if kind == "csv":
        return read_demand_csv(path.parent / spec["csv"], model.n)
    if kind == "table":
        tab = spec["table"]
        try:
            w0 = np.asarray(tab["w0"], dtype=float)
            steps = w0.shape[0]
            w_ramp = np.zeros((steps, model.n))
            for key, col in tab.items():
                if key == "w0":
                    continue
                k = int(key.lstrip("w"))
                w_ramp[:, k - 1] = np.asarray(col, dtype=float)
            return DemandProfile(w0=w0, w_ramp=w_ramp)
        except (KeyError, ValueError, IndexError) as e:
            fail(f"demand.table: {e}")
    if kind == "piecewise":
        pw = spec["piecewise"]
        steps = int(spec.get("steps", 0))
        if steps <= 0:
            fail("demand: piecewise needs a positive 'steps'")
        pieces: dict[int, list[tuple[float, float, float]]] = {}
        for key, segs in pw.items():
            k = int(str(key).lstrip("w"))
            pieces[k] = [(float(s["from_min"]), float(s["to_min"]),
                          float(s["value"])) for s in segs]
        return _piecewise_profile(model, steps, pieces)
    syn = dict(spec["synth"])
    seed = int(syn.pop("seed", 0))
    ramp_peaks = {int(k): float(v)
                  for k, v in dict(syn.pop("ramp_peaks", {})).items()}
    windows = tuple(tuple(float(x) for x in w)
                    for w in syn.pop("windows", ((1.0, 2.5),)))
    try:
        sspec = SynthDemandSpec(ramp_peaks=ramp_peaks, windows=windows,
                                **{k: (int(v) if k == "horizon_steps" else float(v))
                                   for k, v in syn.items()})
    except TypeError as e:
        fail(f"demand.synth: {e}")
    return synth_demand(model, sspec, seed=seed)


def write_demand_csv(path: str | Path, demand: DemandProfile) -> None:
    n = demand.w_ramp.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"w{k}" for k in range(n + 1)])
        for t in range(demand.horizon):
            writer.writerow([t] + [f"{v:.9g}" for v in demand.row(t)])


def read_demand_csv(path: str | Path, n_cells: int) -> DemandProfile:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"demand csv not found: {path}")
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expect = ["t"] + [f"w{k}" for k in range(n_cells + 1)]
        if header != expect:
            raise ScenarioError(
                f"{path}: bad header {header}, expected {expect}")
        rows = [[float(x) for x in row[1:]] for row in reader if row]
    data = np.asarray(rows)
    if data.size == 0:
        raise ScenarioError(f"{path}: no demand rows")
    return DemandProfile(w0=data[:, 0], w_ramp=data[:, 1:])


# ---------------------------------------------------------------------------
# model-mismatch campaign

MISMATCH_GRID = ((0.0, 0.0), (0.025, 0.05), (0.05, 0.10), (0.10, 0.20))


@dataclass(frozen=True)
class CampaignRow:
    variant: str              # monotonic | capacity_drop
    sigma: float
    dv: float
    drho: float
    controller: str
    mean_twt_improvement: float   # percent of open-loop waiting time saved
    stdev: float
    runs: int


def with_capacity_drop(model: FreewayModel, alpha: float) -> FreewayModel:
    return model.with_cells(
        [replace(c, capacity_drop=alpha) for c in model.cells])


def _twt(model: FreewayModel, demand, controller, initial, disturbance,
         relaxed: bool = False) -> float:
    traj = simulate(model, demand, controller=controller,
                    disturbance=disturbance, initial_state=initial,
                    relaxed=relaxed)
    return evaluate_metrics(model, traj).twt


def uncertainty_campaign(scenario: Scenario,
                         mismatch_grid=MISMATCH_GRID,
                         sigmas=(0.0, 0.05),
                         variants=("monotonic", "capacity_drop"),
                         runs: int = 20,
                         seed: int = 0,
                         drop_alpha: float = 0.10,
                         include_lp: bool = False,
                         threads: int = 1) -> list[CampaignRow]:
    """Mean waiting-time improvement over the unmetered baseline for the
    greedy and integral controllers across belief-model mismatch, flow
    noise, and a monotonic vs capacity-drop plant.

    Beliefs are always sampled from the monotonic nominal model. Run r of
    any grid point uses disturbance seed ``seed + r`` and belief seed
    ``seed + 1000 + r``, so rows are reproducible and paired across
    controllers.
    """
    nominal = scenario.model
    plants = {"monotonic": nominal,
              "capacity_drop": with_capacity_drop(nominal, drop_alpha)}
    rows: list[CampaignRow] = []
    pool = _futures.ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        def run_many(fn, count):
            if pool is None:
                return [fn(r) for r in range(count)]
            return list(pool.map(fn, range(count)))

        for variant in variants:
            if variant not in plants:
                raise ValueError(f"unknown variant {variant!r}")
            plant = plants[variant]
            for sigma in sigmas:
                def disturbance(r: int) -> DisturbanceSpec | None:
                    if sigma == 0.0:
                        return None
                    return DisturbanceSpec(sigma_phi=sigma, seed=seed + r)

                n_base = runs if sigma > 0.0 else 1
                base_twt = run_many(
                    lambda r: _twt(plant, scenario.demand,
                                   make_controller("none", nominal),
                                   scenario.initial, disturbance(r)),
                    n_base)

                def improvement(twt: float, r: int) -> float:
                    ol = base_twt[r % n_base]
                    if ol <= 0.0:
                        return 0.0
                    return 100.0 * (ol - twt) / ol

                for dv, drho in mismatch_grid:
                    def be_run(r: int) -> float:
                        belief = sample_controller_model(
                            nominal, dv, drho, seed=seed + 1000 + r)
                        twt = _twt(plant, scenario.demand,
                                   make_controller("best_effort", belief),
                                   scenario.initial, disturbance(r))
                        return improvement(twt, r)

                    vals = run_many(be_run, runs)
                    rows.append(CampaignRow(
                        variant, sigma, dv, drho, "best_effort",
                        statistics.fmean(vals),
                        statistics.pstdev(vals), runs))

                def alinea_run(r: int) -> float:
                    twt = _twt(plant, scenario.demand,
                               make_controller("alinea", nominal),
                               scenario.initial, disturbance(r))
                    return improvement(twt, r)

                vals = run_many(alinea_run, runs)
                rows.append(CampaignRow(
                    variant, sigma, 0.0, 0.0, "alinea",
                    statistics.fmean(vals), statistics.pstdev(vals), runs))
    finally:
        if pool is not None:
            pool.shutdown()

    if include_lp:
        from .lp import build_lp, solve_lp
        sol = solve_lp(build_lp(nominal, scenario.demand, scenario.initial))
        tft = evaluate_metrics(
            nominal, simulate(nominal, scenario.demand,
                              initial_state=scenario.initial)).tft
        twt_lp = sol.objective - tft
        ol = _twt(nominal, scenario.demand, make_controller("none", nominal),
                  scenario.initial, None)
        imp = 0.0 if ol <= 0.0 else 100.0 * (ol - twt_lp) / ol
        rows.append(CampaignRow("monotonic", 0.0, 0.0, 0.0, "lp",
                                imp, 0.0, 1))
    return rows
