"""Cell-centered finite-volume transport of heat and reactant mass fraction.

One value per element for the temperature T and the reactant fraction y.
Convective edge fluxes are upwinded on the sign of the element's outward
mass flux; diffusive fluxes divide the jump by the two-sided resistance
d_{K,e}/D_K + d_{Nb,e}/D_Nb built from circumcenter-to-edge distances, which
is why the mesh must be acute.  Boundary edges use the Dirichlet, Neumann or
mixed (Robin) closures with vertex-averaged edge data.  The two equations
are coupled through one-step Arrhenius kinetics and solved together by a
damped Newton method.

The gas density entering storage and kinetics is frozen at the value implied
by the current flow iterate; the outer coupling iteration of the time loop
restores consistency between density and temperature.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .meshing import TAG_NAMES, Mesh
from .physics import (ReactionModel, TemperatureCoefficient,
                      UNIVERSAL_GAS_CONSTANT)

BKIND_DIRICHLET = 1
BKIND_NEUMANN = 2
BKIND_MIXED = 3


class TransportSolverError(Exception):
    """Newton failure in the transport solve."""


@dataclass
class TransportState:
    """Per-element temperature (K) and reactant mass fraction (-)."""

    temperature: np.ndarray
    mass_fraction: np.ndarray

    def copy(self):
        return TransportState(self.temperature.copy(), self.mass_fraction.copy())


@dataclass
class FieldBoundary:
    """Resolved boundary data of one transported field.

    kind 0 marks interior edges; `value` holds the Dirichlet edge mean, the
    Neumann normal-gradient edge mean, or the mixed-condition target g_e;
    `sigma` is the mixed-condition exchange coefficient (>= 0).
    """

    kind: np.ndarray    # (E,)
    value: np.ndarray   # (E,)
    sigma: np.ndarray   # (E,)


def field_boundary(mesh: Mesh, dirichlet=None, neumann=None, mixed=None) -> FieldBoundary:
    """Build per-edge data from tag->callable maps.

    `dirichlet[tag]` and `neumann[tag]` map x to boundary value / normal
    gradient; `mixed[tag]` maps x to (sigma, g).  Edge means use the vertex
    average.
    """
    dirichlet = dirichlet or {}
    neumann = neumann or {}
    mixed = mixed or {}
    kind = np.zeros(mesh.n_edges, dtype=np.int64)
    value = np.zeros(mesh.n_edges)
    sigma = np.zeros(mesh.n_edges)
    for e in mesh.boundary_edges():
        name = TAG_NAMES[mesh.edge_tags[e]]
        a, b = mesh.edge_nodes[e]
        xa, xb = mesh.nodes[a], mesh.nodes[b]
        if name in dirichlet:
            kind[e] = BKIND_DIRICHLET
            fn = dirichlet[name]
            value[e] = 0.5 * (fn(xa) + fn(xb))
        elif name in mixed:
            kind[e] = BKIND_MIXED
            fn = mixed[name]
            sa, ga = fn(xa)
            sb, gb = fn(xb)
            sigma[e] = 0.5 * (sa + sb)
            value[e] = 0.5 * (ga + gb)
            if sigma[e] < 0:
                raise ValueError(f"mixed-condition coefficient negative on edge {e}")
        elif name in neumann:
            kind[e] = BKIND_NEUMANN
            fn = neumann[name]
            value[e] = 0.5 * (fn(xa) + fn(xb))
        else:
            raise ValueError(f"boundary tag {name!r} has no transport condition")
    return FieldBoundary(kind, value, sigma)


def convective_flux(m_ke, c_up, c_dn, z_up, z_dn):
    """Upwind convective edge flux m+ c|K z_K + m- c|Nb z_Nb (outward from K)."""
    return np.maximum(m_ke, 0.0) * c_up * z_up + np.minimum(m_ke, 0.0) * c_dn * z_dn


def diffusive_flux(edge_len, z_k, z_nb, diff_k, diff_nb, d_k, d_nb):
    """Two-sided diffusive edge flux |e| (z_Nb - z_K) / d_e.

    d_e = d_K/D_K + d_Nb/D_Nb combines the circumcenter distances and the
    per-element diffusion coefficients into one resistance.  The caller
    subtracts this from the convective part.  Raises on d_e <= 0, which
    indicates a mesh-quality violation upstream.
    """
    d_e = d_k / diff_k + d_nb / diff_nb
    if np.any(np.asarray(d_e) <= 0.0):
        raise ValueError("nonpositive transmissibility distance: mesh is not acute")
    return edge_len * (z_nb - z_k) / d_e


def boundary_flux(kind, z_k, m_ke, c_k, diff_k, d_k, edge_len, value, sigma=0.0):
    """Total (convective - diffusive) boundary edge flux, outward from K.

    Dirichlet: c(z_K) m z_be - |e| D (z_be - z_K)/d_K; Neumann with normal
    gradient q: c(z_K) m z_K - |e| D q_be; mixed D grad z . n = sigma(g - z):
    c(z_K) m z_K - |e| sigma_e (g_e - z_K).
    """
    if kind == BKIND_DIRICHLET:
        return c_k * m_ke * value - edge_len * diff_k * (value - z_k) / d_k
    if kind == BKIND_NEUMANN:
        return c_k * m_ke * z_k - edge_len * diff_k * value
    if kind == BKIND_MIXED:
        return c_k * m_ke * z_k - edge_len * sigma * (value - z_k)
    raise ValueError(f"unknown boundary kind {kind}")


@dataclass
class TransportProblem:
    """Everything one transport solve needs on a fixed mesh level."""

    mesh: Mesh
    porosity: np.ndarray               # (M,)
    heat_diffusion: np.ndarray         # (M,) effective conductivity
    species_diffusion: np.ndarray      # (M,) phi * D
    heat_capacity: TemperatureCoefficient
    solid_heat_capacity: TemperatureCoefficient
    solid_density: TemperatureCoefficient
    reaction: ReactionModel | None
    density: np.ndarray                # (M,) frozen gas density
    density_prev: np.ndarray           # (M,)
    temperature_prev: np.ndarray       # (M,)
    fraction_prev: np.ndarray          # (M,)
    edge_flux: np.ndarray              # (M, 3) outward integrated mass flux
    heat_bc: FieldBoundary
    species_bc: FieldBoundary
    dt: float | None = None            # None -> steady (no storage terms)
    heat_source: np.ndarray | None = None     # (M,) W/m^3, includes (1-phi)
    heat_mms: np.ndarray | None = None         # manufactured volumetric sources
    species_mms: np.ndarray | None = None

    def reaction_rate(self, temperature, fraction):
        if self.reaction is None:
            zero = np.zeros_like(temperature)
            return zero, zero, zero.copy()
        r = self.reaction
        expo = np.exp(-r.activation_energy / (UNIVERSAL_GAS_CONSTANT * temperature))
        rate = r.frequency_factor * self.density * fraction * expo
        d_dt = rate * r.activation_energy / (UNIVERSAL_GAS_CONSTANT * temperature ** 2)
        d_dy = r.frequency_factor * self.density * expo
        return rate, d_dt, d_dy


def _storage_heat(problem: TransportProblem, t):
    """Heat storage term and its temperature derivative, both (M,)."""
    if problem.dt is None:
        z = np.zeros_like(t)
        return z, z.copy()
    mesh = problem.mesh
    phi = problem.porosity
    cp = problem.heat_capacity
    cs = problem.solid_heat_capacity
    rs = problem.solid_density
    gas = mesh.areas * phi / problem.dt
    sol = mesh.areas * (1.0 - phi) / problem.dt
    t_prev = problem.temperature_prev
    gas_term = cp(t) * (problem.density * t - problem.density_prev * t_prev)
    sol_term = cs(t) * (rs(t) * t - rs(t_prev) * t_prev)
    val = gas * gas_term + sol * sol_term
    dval = (gas * (cp.derivative(t) * (problem.density * t - problem.density_prev * t_prev)
                   + cp(t) * problem.density)
            + sol * (cs.derivative(t) * (rs(t) * t - rs(t_prev) * t_prev)
                     + cs(t) * (rs.derivative(t) * t + rs(t))))
    return val, dval


def _storage_species(problem: TransportProblem, y):
    if problem.dt is None:
        z = np.zeros_like(y)
        return z, z.copy()
    coef = problem.mesh.areas * problem.porosity / problem.dt
    val = coef * (problem.density * y - problem.density_prev * problem.fraction_prev)
    return val, coef * problem.density


def assemble_transport(problem: TransportProblem, temperature, fraction,
                       want_jacobian=True, want_balance=False):
    """Residual (and Jacobian) of the coupled (T, y) system.

    The unknown vector stacks temperatures then fractions.  With
    want_balance=True a third return value carries the absolute sums of
    storage, boundary-flux and source contributions per equation, used for
    conservation reporting.
    """
    mesh = problem.mesh
    n = mesh.n_elements
    t = np.asarray(temperature, dtype=float)
    y = np.asarray(fraction, dtype=float)
    cp = problem.heat_capacity

    res_t, dstor_t = _storage_heat(problem, t)
    res_y, dstor_y = _storage_species(problem, y)
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(np.asarray(r))
        cols.append(np.asarray(c))
        vals.append(np.asarray(v))

    if want_jacobian:
        put(np.arange(n), np.arange(n), dstor_t)
        put(n + np.arange(n), n + np.arange(n), dstor_y)

    # reaction source/sink and ignition/manufactured sources
    rate, d_dt, d_dy = problem.reaction_rate(t, y)
    if problem.reaction is not None:
        q = problem.reaction.heat_of_reaction
        heat_w = mesh.areas * problem.porosity * q
        spec_w = mesh.areas * problem.porosity
        res_t -= heat_w * rate
        res_y += spec_w * rate
        if want_jacobian:
            put(np.arange(n), np.arange(n), -heat_w * d_dt)
            put(np.arange(n), n + np.arange(n), -heat_w * d_dy)
            put(n + np.arange(n), np.arange(n), spec_w * d_dt)
            put(n + np.arange(n), n + np.arange(n), spec_w * d_dy)
    source_abs_t = np.zeros(n)
    source_abs_y = np.zeros(n)
    if problem.reaction is not None:
        source_abs_t += np.abs(mesh.areas * problem.porosity
                               * problem.reaction.heat_of_reaction * rate)
        source_abs_y += np.abs(mesh.areas * problem.porosity * rate)
    if problem.heat_source is not None:
        res_t -= mesh.areas * problem.heat_source
        source_abs_t += np.abs(mesh.areas * problem.heat_source)
    if problem.heat_mms is not None:
        res_t -= mesh.areas * problem.heat_mms
        source_abs_t += np.abs(mesh.areas * problem.heat_mms)
    if problem.species_mms is not None:
        res_y -= mesh.areas * problem.species_mms
        source_abs_y += np.abs(mesh.areas * problem.species_mms)

    # interior edge fluxes, both sides
    interior = np.flatnonzero(mesh.edge_elems[:, 1] >= 0)
    bflux_abs_t = 0.0
    bflux_abs_y = 0.0
    for side in (0, 1):
        k = mesh.edge_elems[interior, side]
        nb = mesh.edge_elems[interior, 1 - side]
        lk = mesh.edge_local[interior, side]
        lnb = mesh.edge_local[interior, 1 - side]
        m = problem.edge_flux[k, lk]
        elen = mesh.edge_lengths[interior]
        d_k = mesh.circumdist[k, lk]
        d_nb = mesh.circumdist[nb, lnb]

        pos = m > 0.0
        # heat: upwinded gas enthalpy plus conduction
        cp_k = cp(t[k])
        cp_nb = cp(t[nb])
        conv_t = convective_flux(m, cp_k, cp_nb, t[k], t[nb])
        diff_t = diffusive_flux(elen, t[k], t[nb], problem.heat_diffusion[k],
                                problem.heat_diffusion[nb], d_k, d_nb)
        np.add.at(res_t, k, conv_t - diff_t)
        # species: unit capacity, diffusion phi*D
        conv_y = convective_flux(m, 1.0, 1.0, y[k], y[nb])
        diff_y = diffusive_flux(elen, y[k], y[nb], problem.species_diffusion[k],
                                problem.species_diffusion[nb], d_k, d_nb)
        np.add.at(res_y, k, conv_y - diff_y)

        if want_jacobian:
            de_t = d_k / problem.heat_diffusion[k] + d_nb / problem.heat_diffusion[nb]
            de_y = d_k / problem.species_diffusion[k] + d_nb / problem.species_diffusion[nb]
            dcp_k = cp.derivative(t[k])
            dcp_nb = cp.derivative(t[nb])
            d_own = np.where(pos, m * (dcp_k * t[k] + cp_k), 0.0) + elen / de_t
            d_oth = np.where(pos, 0.0, m * (dcp_nb * t[nb] + cp_nb)) - elen / de_t
            put(k, k, d_own)
            put(k, nb, d_oth)
            put(n + k, n + k, np.where(pos, m, 0.0) + elen / de_y)
            put(n + k, n + nb, np.where(pos, 0.0, m) - elen / de_y)

    # boundary edges per field
    for which, bc, res, diff_elem, unit_cap in (
            ("heat", problem.heat_bc, res_t, problem.heat_diffusion, False),
            ("spec", problem.species_bc, res_y, problem.species_diffusion, True)):
        offset = 0 if which == "heat" else n
        z = t if which == "heat" else y
        for bkind in (BKIND_DIRICHLET, BKIND_NEUMANN, BKIND_MIXED):
            edges = np.flatnonzero(bc.kind == bkind)
            if len(edges) == 0:
                continue
            k = mesh.edge_elems[edges, 0]
            lk = mesh.edge_local[edges, 0]
            m = problem.edge_flux[k, lk]
            elen = mesh.edge_lengths[edges]
            d_k = mesh.circumdist[k, lk]
            val = bc.value[edges]
            sig = bc.sigma[edges]
            c_k = cp(z[k]) if not unit_cap else np.ones(len(edges))
            dc_k = cp.derivative(z[k]) if not unit_cap else np.zeros(len(edges))
            flux = boundary_flux(bkind, z[k], m, c_k, diff_elem[k], d_k, elen,
                                 val, sig)
            np.add.at(res, k, flux)
            if which == "heat":
                bflux_abs_t += np.abs(flux).sum()
            else:
                bflux_abs_y += np.abs(flux).sum()
            if want_jacobian:
                if bkind == BKIND_DIRICHLET:
                    dflux = dc_k * m * val + elen * diff_elem[k] / d_k
                elif bkind == BKIND_NEUMANN:
                    dflux = (dc_k * z[k] + c_k) * m
                else:
                    dflux = (dc_k * z[k] + c_k) * m + elen * sig
                put(offset + k, offset + k, dflux)

    residual = np.concatenate([res_t, res_y])
    jac = None
    if want_jacobian:
        jac = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * n, 2 * n)).tocsr()
    if not want_balance:
        return residual, jac
    stor_t, _ = _storage_heat(problem, t)
    stor_y, _ = _storage_species(problem, y)
    balance = {
        "heat_net": float(res_t.sum()),
        "species_net": float(res_y.sum()),
        "heat_gross": float(np.abs(stor_t).sum() + bflux_abs_t + source_abs_t.sum()),
        "species_gross": float(np.abs(stor_y).sum() + bflux_abs_y + source_abs_y.sum()),
    }
    return residual, jac, balance


class TransportHierarchy:
    """Injection-transfer multigrid context on a fixed mesh stack.

    Transfer operators (parent copies to children, summation transpose) are
    built once; the coarse-level TransportProblem objects change every time
    step and are attached through `problems` before a solve.  Coarse
    matrices come from re-assembling those problems at the area-averaged
    restriction of the current iterate.
    """

    def __init__(self, meshes: list[Mesh], omega=0.8):
        self.meshes = meshes
        self.omega = omega
        self.problems: list[TransportProblem] = []
        self.prolongations = []
        for lvl in range(1, len(meshes)):
            p_cell = linsolve.cell_injection_matrix(meshes[lvl])
            self.prolongations.append(sp.block_diag((p_cell, p_cell)).tocsr())

    def restrict_states(self, temperature, fraction):
        """Area-weighted restriction of the iterate down the stack."""
        states = [(temperature, fraction)]
        for lvl in range(len(self.meshes) - 1, 0, -1):
            fine_mesh = self.meshes[lvl]
            coarse_mesh = self.meshes[lvl - 1]
            t_c = np.zeros(coarse_mesh.n_elements)
            y_c = np.zeros(coarse_mesh.n_elements)
            np.add.at(t_c, fine_mesh.parent.elem_parent, states[0][0] * fine_mesh.areas)
            np.add.at(y_c, fine_mesh.parent.elem_parent, states[0][1] * fine_mesh.areas)
            t_c /= coarse_mesh.areas
            y_c /= coarse_mesh.areas
            states.insert(0, (t_c, y_c))
        return states

    def solve(self, fine_matrix, rhs, temperature, fraction, x0=None, tol=1e-10):
        if len(self.problems) != len(self.meshes) - 1:
            raise ValueError("coarse problems not attached to the hierarchy")
        states = self.restrict_states(temperature, fraction)
        levels = []
        for lvl in range(len(self.meshes) - 1):
            _, mat = assemble_transport(self.problems[lvl], *states[lvl])
            prol = self.prolongations[lvl - 1] if lvl > 0 else None
            levels.append(linsolve.Level(mat, prol))
        levels.append(linsolve.Level(fine_matrix, self.prolongations[-1]))
        solver = linsolve.MultigridSolver(levels, omega=self.omega)
        return solver.solve(rhs, x0=x0, tol=tol)


def edge_flux_restriction_indices(fine_mesh: Mesh):
    """Index arrays mapping each coarse (element, edge) slot to its two fine
    half-edge flux slots; precomputed once per level pair."""
    links = fine_mesh.parent
    coarse = links.coarse
    fe = np.empty((coarse.n_elements, 3, 2), dtype=np.int64)
    fl = np.empty((coarse.n_elements, 3, 2), dtype=np.int64)
    for kc in range(coarse.n_elements):
        for i in range(3):
            ec = coarse.elem_edges[kc, i]
            slot = 0
            for f in links.edge_children[ec]:
                for side in (0, 1):
                    kf = fine_mesh.edge_elems[f, side]
                    if kf >= 0 and links.elem_parent[kf] == kc:
                        fe[kc, i, slot] = kf
                        fl[kc, i, slot] = fine_mesh.edge_local[f, side]
                        slot += 1
            if slot != 2:
                raise ValueError("broken parent links in edge restriction")
    return fe, fl


def restrict_edge_flux(fine_mesh: Mesh, edge_flux, indices=None):
    """Sum the two fine half-edge fluxes into each coarse element edge."""
    if indices is None:
        indices = edge_flux_restriction_indices(fine_mesh)
    fe, fl = indices
    return edge_flux[fe, fl].sum(axis=2)


def solve_transport(problem: TransportProblem, temperature0, fraction0,
                    hierarchy: TransportHierarchy | None = None,
                    tol_rel=1e-9, max_iter=25, max_halvings=8):
    """Damped Newton for the coupled transport system.

    Residual rows are scaled per equation family so temperature (large
    numbers) and mass fraction (tiny numbers) converge to comparable
    relative accuracy; one polishing step past the tolerance keeps the
    per-step conservation sums near machine precision.
    """
    n = problem.mesh.n_elements
    t = np.asarray(temperature0, dtype=float).copy()
    y = np.asarray(fraction0, dtype=float).copy()

    resid, jac, bal0 = assemble_transport(problem, t, y, want_balance=True)

    def scales(r):
        r_t = np.abs(r[:n]).max()
        r_y = np.abs(r[n:]).max()
        return r_t, r_y

    r0_t, r0_y = scales(resid)
    # absolute floors at the rounding level of the gross turnover, so a
    # field that starts on its exact solution counts as converged
    atol_t = 1e-13 * bal0["heat_gross"]
    atol_y = 1e-13 * bal0["species_gross"]
    tol_t = max(tol_rel * r0_t, atol_t)
    tol_y = max(tol_rel * r0_y, atol_y)

    def norm_ok(r, strict):
        f = 1e-4 if strict else 1.0
        r_t, r_y = scales(r)
        return (r_t <= max(f * tol_rel * r0_t, atol_t)
                and r_y <= max(f * tol_rel * r0_y, atol_y))

    polished = norm_ok(resid, strict=False)
    for it in range(max_iter):
        if norm_ok(resid, strict=True) or (norm_ok(resid, strict=False) and polished):
            break
        polished = norm_ok(resid, strict=False)
        if hierarchy is not None:
            delta, _ = hierarchy.solve(jac, -resid, t, y)
        else:
            delta, _ = linsolve.solve_sparse(jac, -resid)
        merit0 = float(resid @ resid)
        step = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            t_try = t + step * delta[:n]
            y_try = y + step * delta[n:]
            if np.any(t_try <= 0.0):
                step *= 0.5
                continue
            resid_t, jac_t = assemble_transport(problem, t_try, y_try)
            if merit0 == 0.0 or float(resid_t @ resid_t) <= (1.0 - 1e-4 * step) * merit0:
                t, y, resid, jac = t_try, y_try, resid_t, jac_t
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if norm_ok(resid, strict=False):
                break
            raise TransportSolverError(
                f"transport Newton stalled after {it} iterations "
                f"(residuals {scales(resid)}); reduce the time step")
    else:
        if not norm_ok(resid, strict=False):
            raise TransportSolverError(
                f"transport Newton did not converge (residuals {scales(resid)}, "
                f"tolerances {(tol_t, tol_y)}); reduce the time step")

    if np.any(y < -1e-8):
        raise TransportSolverError(
            f"reactant fraction undershoot {y.min():.3e}; time step too large")
    return TransportState(temperature=t, mass_fraction=y)
