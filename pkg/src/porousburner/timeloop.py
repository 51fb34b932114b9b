"""Implicit time stepping with alternating flow/transport coupling.

Each accepted step solves the flow system and the transport system in turn,
cycling until the combined iterate stops moving (relative for pressure and
temperature, absolute for the mass fraction).  The step size adapts: it
grows after easy steps, halves when any inner solver or the coupling loop
fails, and always lands exactly on schedule breakpoints so ramps and
switches are never straddled.  Per-step conservation sums (gas mass, energy,
reactant) are logged with every diagnostics row; a numerically steady state
ends the run early.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import flow as fl
from . import transport as tr
from .meshing import Mesh
from .physics import (GasProperties, MaterialField, ReactionModel,
                      SolidProperties, density_from_psq, ideal_gas_factor)

log = logging.getLogger(__name__)


class StepRejected(Exception):
    """Inner solver failure bubbled up for time-step reduction."""


@dataclass
class Ramp:
    """Piecewise-linear function of time (constant extrapolation outside)."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("ramp needs matching, nonempty times and values")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("ramp breakpoints must be sorted")

    def __call__(self, t):
        return float(np.interp(t, self.times, self.values))

    @classmethod
    def constant(cls, value):
        return cls((0.0,), (float(value),))


@dataclass
class Schedule:
    """Boundary and source timing of a burner run."""

    inflow_flux: Ramp                  # m_b(t), <= 0 at inflow
    inflow_fraction: Ramp              # y_b(t)
    outflow_psq: float                 # S_b, Pa^2
    ambient_temperature: float = 298.0
    ignition_off_time: float = 150.0   # source active while t <= this
    wall_cooling_on_time: float = 150.0
    wall_h_preheat: float = 1500.0     # W/(K m^2) on the wall over x < split
    wall_h_combustion: float = 100.0
    wall_split_x: float = 0.08

    def breakpoints(self):
        pts = set(self.inflow_flux.times) | set(self.inflow_fraction.times)
        pts.add(self.ignition_off_time)
        pts.add(self.wall_cooling_on_time)
        return sorted(p for p in pts if p > 0.0)

    def wall_heat_transfer(self, x, t):
        if t <= self.wall_cooling_on_time + 1e-12:
            return 0.0
        return self.wall_h_preheat if x[0] < self.wall_split_x else self.wall_h_combustion

    def ignition_active(self, t):
        return t <= self.ignition_off_time + 1e-12


@dataclass
class IgnitionSource:
    """Glow-igniter heat input over a small disc.

    In "point" mode `strength` is the total deposited power per unit depth
    before the (1 - porosity) weighting, spread uniformly over the covered
    elements; the disc only regularizes a point source so refinement studies
    stay meaningful.  In "volumetric" mode `strength` is applied as a plain
    power density (W/m^3) on the covered elements.
    """

    center: tuple[float, float] = (0.1, 0.07)
    radius: float = 0.005
    strength: float = 1.0e5
    mode: str = "point"

    def element_values(self, mesh: Mesh, porosity: np.ndarray) -> np.ndarray:
        sel = _elements_near(mesh, np.asarray(self.center), self.radius)
        values = np.zeros(mesh.n_elements)
        if not sel.any():
            raise ValueError(f"ignition point {self.center} lies outside the mesh")
        if self.mode == "point":
            covered = mesh.areas[sel].sum()
            values[sel] = (1.0 - porosity[sel]) * self.strength / covered
        elif self.mode == "volumetric":
            values[sel] = (1.0 - porosity[sel]) * self.strength
        else:
            raise ValueError(f"unknown ignition mode {self.mode!r}")
        return values


def _elements_near(mesh: Mesh, point, radius):
    """Elements whose closure intersects the disc around `point`."""
    pts = mesh.element_points()
    inside = np.ones(mesh.n_elements, dtype=bool)
    dmin = np.full(mesh.n_elements, np.inf)
    for i in range(3):
        a = pts[:, i, :]
        b = pts[:, (i + 1) % 3, :]
        ab = b - a
        tpar = np.clip(((point - a) * ab).sum(axis=1)
                       / np.maximum((ab * ab).sum(axis=1), 1e-300), 0.0, 1.0)
        proj = a + tpar[:, None] * ab
        dmin = np.minimum(dmin, np.linalg.norm(point - proj, axis=1))
        cross = ab[:, 0] * (point[1] - a[:, 1]) - ab[:, 1] * (point[0] - a[:, 0])
        inside &= cross >= 0.0
    dmin[inside] = 0.0
    return dmin <= radius


@dataclass
class TimeControls:
    t_end: float = 5000.0
    dt_initial: float = 0.5
    dt_min: float = 1e-3
    dt_max: float = 10.0
    dt_growth: float = 1.2
    easy_sweeps: int = 3
    tol_picard: float = 1e-6
    max_picard: int = 12
    steady_temp_rate: float = 1e-3     # K/s
    steady_fraction_rate: float = 1e-6  # 1/s
    steady_consecutive: int = 5


@dataclass
class SimulationState:
    """Accepted unknowns of one time level."""

    time: float
    step: int
    dt_next: float
    flow: fl.FlowState
    transport: tr.TransportState
    picard_sweeps: int = 0

    def copy(self):
        return SimulationState(self.time, self.step, self.dt_next,
                               self.flow.copy(), self.transport.copy(),
                               self.picard_sweeps)


class SimulationSetup:
    """Mesh stack plus physics plus schedules; owns per-level static data."""

    def __init__(self, meshes: list[Mesh], gas: GasProperties, solid: SolidProperties,
                 reaction: ReactionModel | None, materials: MaterialField,
                 schedule: Schedule, ignition: IgnitionSource | None,
                 initial_psq: float, initial_temperature: float,
                 initial_fraction: float, controls: TimeControls,
                 use_multigrid: bool = True):
        self.meshes = meshes
        self.gas = gas
        self.solid = solid
        self.reaction = reaction
        self.materials = materials
        self.schedule = schedule
        self.ignition = ignition
        self.initial_psq = initial_psq
        self.initial_temperature = initial_temperature
        self.initial_fraction = initial_fraction
        self.controls = controls

        self.discs = [fl.RT0Discretization(m) for m in meshes]
        self.porosity = [materials.porosity_of(m.regions) for m in meshes]
        self.permeability = [materials.permeability_of(m.regions) for m in meshes]
        self.ergun = [materials.ergun_of(m.regions) for m in meshes]
        self.lam_eff = [p * gas.conductivity + (1.0 - p) * solid.conductivity
                        for p in self.porosity]
        self.ignition_values = (
            [ignition.element_values(m, p) for m, p in zip(meshes, self.porosity)]
            if ignition is not None else None)
        self.flux_restrict = [tr.edge_flux_restriction_indices(m)
                              for m in meshes[1:]]

        self.use_multigrid = use_multigrid and len(meshes) > 1
        if self.use_multigrid:
            bcs = [self.flow_boundary(lvl, 0.0) for lvl in range(len(meshes))]
            self.flow_hierarchy = fl.FlowHierarchy(self.discs, bcs)
            self.transport_hierarchy = tr.TransportHierarchy(meshes)
        else:
            self.flow_hierarchy = None
            self.transport_hierarchy = None

    @property
    def mesh(self) -> Mesh:
        return self.meshes[-1]

    def flow_boundary(self, level, t) -> fl.FlowBoundary:
        sch = self.schedule
        m_b = sch.inflow_flux(t)
        return fl.FlowBoundary.from_tags(
            self.meshes[level],
            dirichlet={"O": lambda x: sch.outflow_psq},
            neumann={"I": lambda x: m_b, "W": lambda x: 0.0, "S": lambda x: 0.0})

    def transport_boundaries(self, level, t):
        sch = self.schedule
        mesh = self.meshes[level]
        m_b = sch.inflow_flux(t)
        t_b = sch.ambient_temperature
        cp_in = self.gas.heat_capacity(t_b)
        # thermal-equilibrium inflow rewritten as a Robin exchange with
        # sigma = -cp*m_b >= 0 (m_b <= 0); walls use Newton cooling
        heat = tr.field_boundary(
            mesh,
            mixed={"I": lambda x: (-cp_in * m_b, t_b),
                   "W": lambda x: (sch.wall_heat_transfer(x, t), t_b)},
            neumann={"O": lambda x: 0.0, "S": lambda x: 0.0})
        y_b = sch.inflow_fraction(t)
        species = tr.field_boundary(
            mesh,
            dirichlet={"I": lambda x: y_b},
            neumann={"O": lambda x: 0.0, "W": lambda x: 0.0, "S": lambda x: 0.0})
        return heat, species

    def flow_coefficients(self, level, temperature, density_prev, dt) -> fl.FlowCoefficients:
        mesh = self.meshes[level]
        gf = ideal_gas_factor(self.gas.mol_weight, temperature)
        alpha = 2.0 * self.gas.viscosity / (gf * self.permeability[level])
        beta = 2.0 * self.ergun[level] / (gf * np.sqrt(self.permeability[level]))
        acc = mesh.areas * self.porosity[level] * gf / dt
        rhs = mesh.areas * self.porosity[level] * density_prev / dt
        return fl.FlowCoefficients(alpha, beta, acc, rhs)

    def transport_problem(self, level, t_new, dt, density, density_prev,
                          temperature_prev, fraction_prev, edge_flux) -> tr.TransportProblem:
        mesh = self.meshes[level]
        heat_bc, species_bc = self.transport_boundaries(level, t_new)
        source = None
        if self.ignition_values is not None and self.schedule.ignition_active(t_new):
            source = self.ignition_values[level]
        return tr.TransportProblem(
            mesh=mesh,
            porosity=self.porosity[level],
            heat_diffusion=self.lam_eff[level],
            species_diffusion=self.porosity[level] * self.gas.diffusion,
            heat_capacity=self.gas.heat_capacity,
            solid_heat_capacity=self.solid.heat_capacity,
            solid_density=self.solid.density,
            reaction=self.reaction,
            density=density, density_prev=density_prev,
            temperature_prev=temperature_prev, fraction_prev=fraction_prev,
            edge_flux=edge_flux, heat_bc=heat_bc, species_bc=species_bc,
            dt=dt, heat_source=source)

    def initial_state(self) -> SimulationState:
        mesh = self.mesh
        n = mesh.n_elements
        psq = np.full(n, self.initial_psq)
        temp = np.full(n, self.initial_temperature)
        frac = np.full(n, self.initial_fraction)
        gf = ideal_gas_factor(self.gas.mol_weight, temp)
        density = density_from_psq(psq, gf)
        # uniform S0 makes the initial momentum balance give zero flux
        flow_state = fl.FlowState(edge_flux=np.zeros((n, 3)), psq=psq,
                                  trace=np.full(mesh.n_edges, self.initial_psq),
                                  density=density)
        return SimulationState(time=0.0, step=0, dt_next=self.controls.dt_initial,
                               flow=flow_state,
                               transport=tr.TransportState(temp, frac))


def picard_step(setup: SimulationSetup, state: SimulationState, dt: float,
                order: str = "flow_first"):
    """One implicit step of size dt from `state`; returns (new_state, sweeps).

    Alternates the flow solve (temperature frozen at the latest iterate) and
    the transport solve (mass flux and density frozen) until the combined
    increment falls under the coupling tolerance.  Raises StepRejected on
    any inner failure or if the sweep limit is exhausted.
    """
    ctl = setup.controls
    t_new = state.time + dt
    fine = len(setup.meshes) - 1
    mesh = setup.mesh

    temp = state.transport.temperature.copy()
    frac = state.transport.mass_fraction.copy()
    psq = state.flow.psq.copy()
    trace = state.flow.trace.copy()
    warm_m = state.flow.edge_flux.copy()
    density_prev = state.flow.density
    temp_prev = state.transport.temperature
    frac_prev = state.transport.mass_fraction

    flow_bc = setup.flow_boundary(fine, t_new)
    flow_state = state.flow
    temp_scale = max(1.0, float(np.abs(temp).max()))
    psq_scale = max(1.0, float(np.abs(psq).max()))

    solve_flow_now = order == "flow_first"
    if order not in ("flow_first", "transport_first"):
        raise ValueError(f"unknown coupling order {order!r}")

    for sweep in range(1, ctl.max_picard + 1):
        try:
            if solve_flow_now or sweep > 1:
                coeff = setup.flow_coefficients(fine, temp, density_prev, dt)
                flow_state = fl.solve_flow(
                    setup.discs[fine], coeff, flow_bc, trace0=trace,
                    warm_m=warm_m, warm_s=psq,
                    hierarchy=setup.flow_hierarchy,
                    gas_factor=ideal_gas_factor(setup.gas.mol_weight, temp))
            problem = setup.transport_problem(
                fine, t_new, dt, flow_state.density, density_prev,
                temp_prev, frac_prev, flow_state.edge_flux)
            hierarchy = None
            if setup.transport_hierarchy is not None:
                setup.transport_hierarchy.problems = _coarse_transport_problems(
                    setup, t_new, dt, flow_state, density_prev, temp_prev, frac_prev)
                hierarchy = setup.transport_hierarchy
            tr_state = tr.solve_transport(problem, temp, frac, hierarchy=hierarchy)
        except (fl.FlowSolverError, tr.TransportSolverError,
                np.linalg.LinAlgError) as exc:
            raise StepRejected(str(exc)) from exc

        d_temp = float(np.abs(tr_state.temperature - temp).max()) / temp_scale
        d_frac = float(np.abs(tr_state.mass_fraction - frac).max())
        d_psq = float(np.abs(flow_state.psq - psq).max()) / psq_scale
        temp, frac = tr_state.temperature, tr_state.mass_fraction
        psq, trace, warm_m = flow_state.psq, flow_state.trace, flow_state.edge_flux
        solve_flow_now = True
        if max(d_temp, d_frac, d_psq) <= ctl.tol_picard:
            new_state = SimulationState(
                time=t_new, step=state.step + 1, dt_next=state.dt_next,
                flow=flow_state, transport=tr_state, picard_sweeps=sweep)
            return new_state, sweep
    raise StepRejected(
        f"coupling iteration did not converge in {ctl.max_picard} sweeps "
        f"(last increments T {d_temp:.2e}, y {d_frac:.2e}, S {d_psq:.2e})")


def _coarse_transport_problems(setup, t_new, dt, flow_state, density_prev,
                               temp_prev, frac_prev):
    """Restricted per-level transport problems for the multigrid solve."""
    problems = []
    rho = flow_state.density
    rho_p = density_prev
    t_p = temp_prev
    y_p = frac_prev
    m = flow_state.edge_flux
    fields = [(rho, rho_p, t_p, y_p, m)]
    for lvl in range(len(setup.meshes) - 1, 0, -1):
        fine_mesh = setup.meshes[lvl]
        coarse_mesh = setup.meshes[lvl - 1]
        rho, rho_p, t_p, y_p = [
            _cell_restrict(fine_mesh, coarse_mesh, f) for f in (rho, rho_p, t_p, y_p)]
        m = tr.restrict_edge_flux(fine_mesh, m, setup.flux_restrict[lvl - 1])
        fields.insert(0, (rho, rho_p, t_p, y_p, m))
    for lvl in range(len(setup.meshes) - 1):
        rho, rho_p, t_p, y_p, m = fields[lvl]
        problems.append(setup.transport_problem(lvl, t_new, dt, rho, rho_p,
                                                t_p, y_p, m))
    return problems


def _cell_restrict(fine_mesh, coarse_mesh, values):
    out = np.zeros(coarse_mesh.n_elements)
    np.add.at(out, fine_mesh.parent.elem_parent, values * fine_mesh.areas)
    return out / coarse_mesh.areas


def front_position(transport_state: tr.TransportState, mesh: Mesh,
                   y_threshold: float) -> float:
    """Reaction-front abscissa along the symmetry-line element row.

    Walks the row of elements adjacent to the symmetry boundary in order of
    increasing x and returns the interpolated position where the reactant
    fraction first drops below the threshold.  Returns the left domain edge
    when even the first element is burnt out, and +inf when no crossing
    exists (uniform feed or no fuel).
    """
    edges = mesh.boundary_edges("S")
    row = np.unique(mesh.edge_elems[edges, 0])
    if len(row) == 0:
        return math.inf
    ordering = np.argsort(mesh.centroids[row, 0])
    row = row[ordering]
    xs = mesh.centroids[row, 0]
    ys = transport_state.mass_fraction[row]
    if ys[0] < y_threshold:
        return float(mesh.nodes[:, 0].min())
    for i in range(len(row) - 1):
        if ys[i] >= y_threshold > ys[i + 1]:
            w = (ys[i] - y_threshold) / max(ys[i] - ys[i + 1], 1e-300)
            return float(xs[i] + w * (xs[i + 1] - xs[i]))
    return math.inf


def gas_mass_balance(setup: SimulationSetup, state_prev: SimulationState,
                     state_new: SimulationState, dt: float) -> float:
    """Relative closure of gas-mass storage change versus boundary influx."""
    mesh = setup.mesh
    phi = setup.porosity[-1]
    storage = (mesh.areas * phi
               * (state_new.flow.density - state_prev.flow.density) / dt)
    bdry = mesh.boundary_edges()
    k = mesh.edge_elems[bdry, 0]
    lk = mesh.edge_local[bdry, 0]
    outflux = state_new.flow.edge_flux[k, lk]
    net = storage.sum() + outflux.sum()
    gross = np.abs(storage).sum() + np.abs(outflux).sum()
    return abs(net) / gross if gross > 0 else 0.0


@dataclass
class DiagnosticsRow:
    time: float
    dt: float
    picard_sweeps: int
    max_temperature: float
    min_fraction: float
    front_x: float
    mass_balance: float
    energy_balance: float
    species_balance: float


@dataclass
class RunResult:
    state: SimulationState
    history: list[DiagnosticsRow]
    steady: bool
    flux_continuity: float = 0.0


def _diagnostics(setup, state_prev, state_new, dt):
    problem = setup.transport_problem(
        len(setup.meshes) - 1, state_new.time, dt,
        state_new.flow.density, state_prev.flow.density,
        state_prev.transport.temperature, state_prev.transport.mass_fraction,
        state_new.flow.edge_flux)
    _, _, bal = tr.assemble_transport(
        problem, state_new.transport.temperature, state_new.transport.mass_fraction,
        want_jacobian=False, want_balance=True)
    e_clo = (abs(bal["heat_net"]) / bal["heat_gross"]
             if bal["heat_gross"] > 0 else 0.0)
    s_clo = (abs(bal["species_net"]) / bal["species_gross"]
             if bal["species_gross"] > 0 else 0.0)
    thr = 0.5 * setup.schedule.inflow_fraction(state_new.time)
    return DiagnosticsRow(
        time=state_new.time, dt=dt, picard_sweeps=state_new.picard_sweeps,
        max_temperature=float(state_new.transport.temperature.max()),
        min_fraction=float(state_new.transport.mass_fraction.min()),
        front_x=front_position(state_new.transport, setup.mesh, thr),
        mass_balance=gas_mass_balance(setup, state_prev, state_new, dt),
        energy_balance=e_clo, species_balance=s_clo)


def run(setup: SimulationSetup, t_end: float | None = None, observers=(),
        start_state: SimulationState | None = None, order="flow_first") -> RunResult:
    """March the simulation to t_end or to a numerically steady state.

    Observers are callables (state, diagnostics_row) -> None invoked after
    every accepted step.  Restarting from a checkpointed state resumes with
    identical trajectories.
    """
    ctl = setup.controls
    t_end = ctl.t_end if t_end is None else t_end
    state = setup.initial_state() if start_state is None else start_state
    breakpoints = [b for b in setup.schedule.breakpoints() if b < t_end] + [t_end]
    last_breakpoint = max(setup.schedule.breakpoints(), default=0.0)

    history: list[DiagnosticsRow] = []
    dt = min(state.dt_next, ctl.dt_max)
    steady_run = 0
    max_continuity = 0.0

    while state.time < t_end - 1e-9:
        target = next(b for b in breakpoints if b > state.time + 1e-9)
        dt_step = min(dt, ctl.dt_max, target - state.time)
        try:
            new_state, sweeps = picard_step(setup, state, dt_step, order=order)
        except StepRejected as exc:
            dt = 0.5 * dt_step
            if dt < ctl.dt_min:
                raise StepRejected(
                    f"time step fell below dt_min = {ctl.dt_min} at t = "
                    f"{state.time:.6g}: {exc}") from exc
            log.info("step rejected at t=%.6g (%s); retrying with dt=%.3g",
                     state.time, exc, dt)
            continue

        row = _diagnostics(setup, state, new_state, dt_step)
        max_continuity = max(max_continuity,
                             fl.flux_continuity_error(setup.mesh, new_state.flow))
        history.append(row)
        d_temp = (np.abs(new_state.transport.temperature
                         - state.transport.temperature).max() / dt_step)
        d_frac = (np.abs(new_state.transport.mass_fraction
                         - state.transport.mass_fraction).max() / dt_step)
        state = new_state
        if sweeps <= ctl.easy_sweeps:
            dt = min(dt_step * ctl.dt_growth, ctl.dt_max)
        else:
            dt = dt_step
        state.dt_next = dt
        for obs in observers:
            obs(state, row)

        if state.time >= last_breakpoint - 1e-9:
            if d_temp < ctl.steady_temp_rate and d_frac < ctl.steady_fraction_rate:
                steady_run += 1
                if steady_run >= ctl.steady_consecutive:
                    log.info("steady state reached at t=%.6g after %d steps",
                             state.time, state.step)
                    return RunResult(state, history, True, max_continuity)
            else:
                steady_run = 0
    return RunResult(state, history, False, max_continuity)


CHECKPOINT_MAGIC = "porousburner-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, state: SimulationState):
    """Full-precision ASCII dump of a simulation state."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        fh.write(f"time {state.time!r}\n")
        fh.write(f"step {state.step}\n")
        fh.write(f"dt_next {state.dt_next!r}\n")
        n = len(state.flow.psq)
        e = len(state.flow.trace)
        fh.write(f"sizes {n} {e}\n")
        for name, arr in (("psq", state.flow.psq),
                          ("density", state.flow.density),
                          ("temperature", state.transport.temperature),
                          ("fraction", state.transport.mass_fraction),
                          ("edge_flux", state.flow.edge_flux.ravel()),
                          ("trace", state.flow.trace)):
            fh.write(name + "\n")
            fh.write(" ".join(repr(v) for v in arr.tolist()) + "\n")


def load_checkpoint(path) -> SimulationState:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if head[0] != CHECKPOINT_MAGIC or int(head[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"not a version-{CHECKPOINT_VERSION} checkpoint: {path}")
    kv = {}
    arrays = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] in ("time", "step", "dt_next", "sizes"):
            kv[parts[0]] = parts[1:]
            i += 1
        else:
            arrays[parts[0]] = np.array(lines[i + 1].split(), dtype=float)
            i += 2
    n, e = int(kv["sizes"][0]), int(kv["sizes"][1])
    flow_state = fl.FlowState(
        edge_flux=arrays["edge_flux"].reshape(n, 3),
        psq=arrays["psq"], trace=arrays["trace"], density=arrays["density"])
    return SimulationState(
        time=float(kv["time"][0]), step=int(kv["step"][0]),
        dt_next=float(kv["dt_next"][0]), flow=flow_state,
        transport=tr.TransportState(arrays["temperature"], arrays["fraction"]))
