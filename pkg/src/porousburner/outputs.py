"""Run artifacts: legacy VTK snapshots, CSV diagnostics, and figure rendering.

All writers format numbers at fixed precision in a fixed order, so repeated
runs of the same configuration produce byte-identical files.  Figures are
rendered headlessly to PNG next to the delimited output: per-snapshot field
maps (temperature and reactant fraction on the triangulation) and a run
summary with the peak-temperature and front-position histories.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import matplotlib.tri as mtri

from . import flow as fl
from .meshing import Mesh
from .timeloop import DiagnosticsRow, SimulationSetup, SimulationState

CSV_HEADER = ("t,dt,picard_sweeps,maxT,minY,front_x1,"
              "mass_balance,energy_balance,species_balance")


def state_fields(setup: SimulationSetup, state: SimulationState) -> dict:
    """Cell data exported to VTK and figures."""
    disc = setup.discs[-1]
    pressure, velocity = fl.postprocess(disc, state.flow)
    fields = {
        "T": state.transport.temperature,
        "y": state.transport.mass_fraction,
        "S": state.flow.psq,
        "p": pressure,
        "rho": state.flow.density,
        "u": velocity,
    }
    if setup.reaction is not None:
        problem = setup.transport_problem(
            len(setup.meshes) - 1, state.time, 1.0, state.flow.density,
            state.flow.density, state.transport.temperature,
            state.transport.mass_fraction, state.flow.edge_flux)
        rate, _, _ = problem.reaction_rate(state.transport.temperature,
                                           state.transport.mass_fraction)
        fields["rate"] = rate
    else:
        fields["rate"] = np.zeros(setup.mesh.n_elements)
    return fields


def write_vtk(mesh: Mesh, fields: dict, path, title="porousburner snapshot"):
    """Legacy ASCII unstructured-grid file with per-cell scalars/vectors."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.9e} {y:.9e} 0.000000000e+00\n")
        fh.write(f"CELLS {mesh.n_elements} {4 * mesh.n_elements}\n")
        for i, j, k in mesh.tris:
            fh.write(f"3 {i} {j} {k}\n")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        fh.write("\n".join(["5"] * mesh.n_elements) + "\n")
        fh.write(f"CELL_DATA {mesh.n_elements}\n")
        for name in sorted(fields):
            data = np.asarray(fields[name])
            if data.ndim == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in data:
                    fh.write(f"{v:.9e}\n")
            else:
                fh.write(f"VECTORS {name} double\n")
                for vx, vy in data:
                    fh.write(f"{vx:.9e} {vy:.9e} 0.000000000e+00\n")


def parse_vtk_cell_data(path) -> dict:
    """Read back the cell arrays of a file written by write_vtk."""
    fields = {}
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    i = 0
    n_cells = 0
    while i < len(tokens):
        line = tokens[i].split()
        if line[:1] == ["CELL_DATA"]:
            n_cells = int(line[1])
        elif line[:1] == ["SCALARS"]:
            name = line[1]
            vals = [float(tokens[j]) for j in range(i + 2, i + 2 + n_cells)]
            fields[name] = np.asarray(vals)
            i += 1 + n_cells
        elif line[:1] == ["VECTORS"]:
            name = line[1]
            vals = [[float(v) for v in tokens[j].split()[:2]]
                    for j in range(i + 1, i + 1 + n_cells)]
            fields[name] = np.asarray(vals)
            i += n_cells
        i += 1
    return fields


def format_csv_row(row: DiagnosticsRow) -> str:
    front = "inf" if math.isinf(row.front_x) else f"{row.front_x:.8e}"
    return (f"{row.time:.8e},{row.dt:.8e},{row.picard_sweeps},"
            f"{row.max_temperature:.8e},{row.min_fraction:.8e},{front},"
            f"{row.mass_balance:.6e},{row.energy_balance:.6e},"
            f"{row.species_balance:.6e}")


def write_timeseries(history, path):
    """CSV diagnostics, one row per accepted step."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in history:
            fh.write(format_csv_row(row) + "\n")


def render_field_figure(mesh: Mesh, values, title, path, cmap="inferno"):
    """Flat-shaded map of one cell field on the triangulation."""
    triang = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.tris)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    im = ax.tripcolor(triang, np.asarray(values), shading="flat", cmap=cmap)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_aspect("equal")
    ax.set_xlabel("x1 (m)")
    ax.set_ylabel("x2 (m)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_summary_figure(history, path):
    """Peak temperature and front position over time."""
    t = [r.time for r in history]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 5.4), sharex=True)
    ax1.plot(t, [r.max_temperature for r in history], lw=1.2)
    ax1.set_ylabel("max T (K)")
    ax1.grid(alpha=0.3)
    front = [(r.time, r.front_x) for r in history if math.isfinite(r.front_x)]
    if front:
        ax2.plot([p[0] for p in front], [p[1] for p in front], lw=1.2)
    ax2.set_ylabel("front x1 (m)")
    ax2.set_xlabel("t (s)")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


@dataclass
class OutputPlan:
    directory: str
    csv_name: str = "timeseries.csv"
    vtk_interval: float = 500.0
    figures: bool = True
    fields: tuple[str, ...] = ("T", "y", "S", "p", "rho", "u", "rate")


class RunWriter:
    """Observer streaming CSV rows and emitting periodic snapshots."""

    def __init__(self, setup: SimulationSetup, plan: OutputPlan):
        self.setup = setup
        self.plan = plan
        os.makedirs(plan.directory, exist_ok=True)
        self.csv_path = os.path.join(plan.directory, plan.csv_name)
        self._csv = open(self.csv_path, "w", encoding="ascii")
        self._csv.write(CSV_HEADER + "\n")
        self._next_snapshot = 0.0
        self.history: list[DiagnosticsRow] = []

    def __call__(self, state: SimulationState, row: DiagnosticsRow):
        self.history.append(row)
        self._csv.write(format_csv_row(row) + "\n")
        self._csv.flush()
        if self.plan.vtk_interval > 0 and state.time + 1e-9 >= self._next_snapshot:
            self.snapshot(state)
            while self._next_snapshot <= state.time + 1e-9:
                self._next_snapshot += self.plan.vtk_interval

    def snapshot(self, state: SimulationState):
        fields = state_fields(self.setup, state)
        keep = {k: v for k, v in fields.items() if k in self.plan.fields}
        stamp = f"{state.time:012.3f}".replace(".", "_")
        write_vtk(self.setup.mesh, keep,
                  os.path.join(self.plan.directory, f"state_{stamp}.vtk"),
                  title=f"t = {state.time:.3f} s")
        if self.plan.figures:
            for name in ("T", "y"):
                if name in keep:
                    render_field_figure(
                        self.setup.mesh, keep[name],
                        f"{name} at t = {state.time:.1f} s",
                        os.path.join(self.plan.directory, f"{name}_{stamp}.png"),
                        cmap="inferno" if name == "T" else "viridis")

    def finalize(self, state: SimulationState):
        self.snapshot(state)
        if self.plan.figures and self.history:
            render_summary_figure(
                self.history, os.path.join(self.plan.directory, "summary.png"))
        self._csv.close()
