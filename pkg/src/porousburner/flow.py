"""Nonlinear porous-flow solver on lowest-order divergence-conforming elements.

The per-time-step flow system couples a drag law (alpha + beta*|m|) m = -grad S
with gas-mass accumulation.  Each triangle carries three edge-flux unknowns
and one element value of the signed squared pressure S; continuity of the
normal flux across edges is enforced through one pressure-trace unknown per
edge.  Fluxes and element values couple only within their element, so they
are eliminated element by element with a small Newton iteration, leaving a
global system in the edge traces alone.  That condensed system is solved by
a damped Newton method whose Jacobian rows come from the implicit-function
sensitivities of the local solves.

Boundary handling: Dirichlet edges pin the trace to the edge mean of the
boundary pressure-squared data and leave the unknown set; flux edges keep
their trace as an unknown whose equation is the momentum residual that the
strong flux constraint displaced (so prescribed fluxes hold exactly and the
trace recovers the boundary pressure).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .meshing import TAG_NAMES, Mesh

KIND_INTERIOR = 0
KIND_DIRICHLET = 1
KIND_FLUX = 2

FLUX_NORM_EPS = 1e-12  # kg/(m^2 s), regularization of |m| inside Newton


class FlowSolverError(Exception):
    """Newton failure in the flow solve; carries offending element ids."""

    def __init__(self, message, elements=()):
        super().__init__(message)
        self.elements = list(elements)


@dataclass
class FlowState:
    """Converged flow unknowns of one time level."""

    edge_flux: np.ndarray   # (M, 3) outward mass flux integrated over each edge, kg/(m s)
    psq: np.ndarray         # (M,) signed squared pressure, Pa^2
    trace: np.ndarray       # (E,) edge pressure traces, Pa^2
    density: np.ndarray     # (M,) gas density consistent with psq, kg/m^3

    def copy(self):
        return FlowState(self.edge_flux.copy(), self.psq.copy(),
                         self.trace.copy(), self.density.copy())


class RT0Discretization:
    """Static per-mesh data of the lowest-order flux elements.

    Basis function j of an element is w_j(x) = (x - p_j)/(2|K|) with p_j the
    vertex opposite edge j; its integrated normal flux is 1 through edge j,
    0 through the others, and its divergence integrates to 1.  All element
    integrals use the three-point edge-midpoint rule, which is exact for
    quadratics and hence for every term of the linear drag law.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        pts = mesh.element_points()                      # (M, 3, 2)
        qp = np.empty((mesh.n_elements, 3, 2))
        for i in range(3):
            qp[:, i, :] = 0.5 * (pts[:, (i + 1) % 3, :] + pts[:, (i + 2) % 3, :])
        self.qpoints = qp
        # basis[k, q, j, :] = w_j at quadrature point q of element k
        self.basis = ((qp[:, :, None, :] - pts[:, None, :, :])
                      / (2.0 * mesh.areas)[:, None, None, None])
        self.basis_centroid = ((mesh.centroids[:, None, :] - pts)
                               / (2.0 * mesh.areas)[:, None, None])
        wq = mesh.areas / 3.0
        self.mass = np.einsum("kqia,kqja->kij", self.basis, self.basis) * wq[:, None, None]

    def flux_at_quadrature(self, edge_flux):
        """Vector flux values at the quadrature points, (M, 3, 2)."""
        return np.einsum("kj,kqja->kqa", edge_flux, self.basis)


def rt0_local_matrices(points):
    """Mass matrix, basis evaluator and divergence factors of one triangle."""
    points = np.asarray(points, dtype=float)
    d1 = points[1] - points[0]
    d2 = points[2] - points[0]
    area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
    if area <= 0:
        raise ValueError("triangle must be counterclockwise and non-degenerate")

    def basis(x):
        return (np.asarray(x) - points) / (2.0 * area)

    qp = np.array([0.5 * (points[(i + 1) % 3] + points[(i + 2) % 3]) for i in range(3)])
    w = np.stack([basis(x) for x in qp])                 # (q, j, 2)
    mass = np.einsum("qia,qja->ij", w, w) * (area / 3.0)
    return mass, basis, np.ones(3)


@dataclass
class FlowBoundary:
    """Per-edge resolved flow boundary data at one time level."""

    kind: np.ndarray        # (E,) KIND_* value, KIND_INTERIOR off the boundary
    trace_pin: np.ndarray   # (E,) Pa^2, valid on Dirichlet edges
    flux_pin: np.ndarray    # (E,) kg/(m s), integrated flux on flux edges

    @classmethod
    def from_tags(cls, mesh: Mesh, dirichlet: dict, neumann: dict) -> "FlowBoundary":
        """Resolve tag->function maps into edge arrays.

        `dirichlet[tag]` gives pressure-squared data S_b(x), `neumann[tag]`
        the flux density m_b(x) per unit edge length; both are evaluated at
        the edge endpoints and averaged (exact edge means for linear data).
        """
        kind = np.full(mesh.n_edges, KIND_INTERIOR, dtype=np.int64)
        trace_pin = np.zeros(mesh.n_edges)
        flux_pin = np.zeros(mesh.n_edges)
        for e in mesh.boundary_edges():
            name = TAG_NAMES[mesh.edge_tags[e]]
            a, b = mesh.edge_nodes[e]
            if name in dirichlet:
                kind[e] = KIND_DIRICHLET
                fn = dirichlet[name]
                trace_pin[e] = 0.5 * (fn(mesh.nodes[a]) + fn(mesh.nodes[b]))
            elif name in neumann:
                kind[e] = KIND_FLUX
                fn = neumann[name]
                flux_pin[e] = (0.5 * (fn(mesh.nodes[a]) + fn(mesh.nodes[b]))
                               * mesh.edge_lengths[e])
            else:
                raise ValueError(f"boundary tag {name!r} has no flow condition")
        return cls(kind, trace_pin, flux_pin)


@dataclass
class FlowCoefficients:
    """Per-element coefficients of one flow solve.

    `accumulation` is |K|*phi*gas_factor/dt (zero in steady verification
    mode); `rhs` is |K|*phi*rho_prev/dt plus any manufactured source.
    """

    linear_drag: np.ndarray     # (M,)
    quadratic_drag: np.ndarray  # (M,)
    accumulation: np.ndarray    # (M,)
    rhs: np.ndarray             # (M,)


def _psq_hat(psq):
    """S / sqrt(|S|) with the unit floor that keeps Newton finite at S = 0."""
    return psq / np.sqrt(np.maximum(np.abs(psq), 1.0))


def _psq_hat_derivative(psq):
    a = np.abs(psq)
    return np.where(a > 1.0, 0.5 / np.sqrt(np.maximum(a, 1.0)), 1.0)


class LocalSolution:
    """Eliminated per-element unknowns plus their trace sensitivities."""

    __slots__ = ("m", "s", "theta", "theta_jac", "dm_dmu", "ds_dmu")

    def __init__(self, m, s, theta, theta_jac, dm_dmu, ds_dmu):
        self.m = m                  # (M, 3)
        self.s = s                  # (M,)
        self.theta = theta          # (M, 3) momentum integrals
        self.theta_jac = theta_jac  # (M, 3, 3)
        self.dm_dmu = dm_dmu        # (M, 3, 3)
        self.ds_dmu = ds_dmu        # (M, 3)


def _momentum_terms(disc, coeff, m):
    """Momentum integrals theta_i = int (alpha+beta|m|) m.w_i and their
    derivative with respect to the element fluxes."""
    mvec = disc.flux_at_quadrature(m)                     # (M, q, 2)
    norm = np.sqrt((mvec * mvec).sum(axis=2) + FLUX_NORM_EPS ** 2)
    drag = coeff.linear_drag[:, None] + coeff.quadratic_drag[:, None] * norm
    wq = (disc.mesh.areas / 3.0)[:, None]
    mw = np.einsum("kqa,kqja->kqj", mvec, disc.basis)     # m(x_q) . w_j(x_q)
    theta = np.einsum("kq,kqi->ki", wq * drag, mw)
    ww = np.einsum("kqia,kqja->kqij", disc.basis, disc.basis)
    jac = np.einsum("kq,kqij->kij", wq * drag, ww)
    jac += np.einsum("kq,kqi,kqj->kij",
                     wq * coeff.quadratic_drag[:, None] / norm, mw, mw)
    return theta, jac


def _residual_from_theta(coeff, kind_loc, theta, m, s, mu_loc, flux_loc):
    res = np.empty((len(s), 4))
    res[:, :3] = np.where(kind_loc == KIND_FLUX, m - flux_loc,
                          theta - s[:, None] + mu_loc)
    res[:, 3] = coeff.accumulation * _psq_hat(s) + m.sum(axis=1) - coeff.rhs
    return res


def local_residual(disc, coeff, bc: FlowBoundary, m, s, mu_full):
    """Residual of the per-element (flux, pressure-squared) systems, (M, 4).

    Rows 0..2: momentum theta_i - S + mu_i, replaced by the strong flux
    constraint m_i - flux_pin_i on flux-boundary edges.  Row 3: gas mass.
    """
    mesh = disc.mesh
    kind_loc = bc.kind[mesh.elem_edges]
    theta, _ = _momentum_terms(disc, coeff, m)
    return _residual_from_theta(coeff, kind_loc, theta, m, s,
                                mu_full[mesh.elem_edges], bc.flux_pin[mesh.elem_edges])


def _local_jacobian(coeff, kind_loc, theta_jac, s):
    n = len(s)
    jac = np.zeros((n, 4, 4))
    flux_rows = kind_loc == KIND_FLUX
    jac[:, :3, :3] = np.where(flux_rows[:, :, None], np.eye(3)[None], theta_jac)
    jac[:, :3, 3] = np.where(flux_rows, 0.0, -1.0)
    jac[:, 3, :3] = 1.0
    jac[:, 3, 3] = coeff.accumulation * _psq_hat_derivative(s)
    return jac


def local_solve(disc, coeff, bc: FlowBoundary, mu_full, warm_m=None, warm_s=None,
                tol=1e-12, max_iter=30) -> LocalSolution:
    """Eliminate (m, S) of every element for the given trace vector.

    Newton runs on all elements at once; each element must reach a scaled
    residual below `tol`.  Trace sensitivities follow from the implicit
    function theorem using the converged local Jacobians.
    """
    mesh = disc.mesh
    kind_loc = bc.kind[mesh.elem_edges]
    mu_loc = mu_full[mesh.elem_edges]
    flux_loc = bc.flux_pin[mesh.elem_edges]

    if warm_m is None:
        m = np.zeros((mesh.n_elements, 3))
        active = kind_loc != KIND_FLUX
        denom = np.maximum(active.sum(axis=1), 1)
        s = np.where(active.any(axis=1), (mu_loc * active).sum(axis=1) / denom, 1.0)
    else:
        m = warm_m.copy()
        s = warm_s.copy()

    scale_mom = np.maximum(1.0, np.maximum(np.abs(s), np.abs(mu_loc).max(axis=1)))
    scale_mass = np.maximum(1.0, np.abs(coeff.rhs))

    theta = theta_jac = None
    converged = False
    for _ in range(max_iter):
        theta, theta_jac = _momentum_terms(disc, coeff, m)
        res = _residual_from_theta(coeff, kind_loc, theta, m, s, mu_loc, flux_loc)
        err = np.maximum(np.abs(res[:, :3]).max(axis=1) / scale_mom,
                         np.abs(res[:, 3]) / scale_mass)
        if np.all(err <= tol):
            converged = True
            break
        jac = _local_jacobian(coeff, kind_loc, theta_jac, s)
        try:
            delta = np.linalg.solve(jac, -res[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise FlowSolverError(f"singular local flow system: {exc}") from exc
        m = m + delta[:, :3]
        s = s + delta[:, 3]
    if not converged:
        theta, theta_jac = _momentum_terms(disc, coeff, m)
        res = _residual_from_theta(coeff, kind_loc, theta, m, s, mu_loc, flux_loc)
        err = np.maximum(np.abs(res[:, :3]).max(axis=1) / scale_mom,
                         np.abs(res[:, 3]) / scale_mass)
        bad = np.flatnonzero(err > tol)
        if len(bad):
            raise FlowSolverError(
                f"local flow elimination failed on {len(bad)} elements "
                f"(worst #{bad[np.argmax(err[bad])]}, err {err.max():.2e}); "
                "consider a smaller time step", bad)

    jac = _local_jacobian(coeff, kind_loc, theta_jac, s)
    rhs = np.zeros((mesh.n_elements, 4, 3))
    idx = np.arange(3)
    rhs[:, idx, idx] = np.where(kind_loc == KIND_FLUX, 0.0, -1.0)
    sens = np.linalg.solve(jac, rhs)
    return LocalSolution(m, s, theta, theta_jac, sens[:, :3, :], sens[:, 3, :])


def _unknown_index(mesh, bc):
    unk_edges = np.flatnonzero(bc.kind != KIND_DIRICHLET)
    index_of = np.full(mesh.n_edges, -1, dtype=np.int64)
    index_of[unk_edges] = np.arange(len(unk_edges))
    return unk_edges, index_of


def _scatter_condensed(mesh, bc, loc: LocalSolution, index_of, n_unk):
    """Condensed Jacobian from local sensitivities (shared by the nonlinear
    assembly and the frozen-coefficient coarse operators)."""
    edge_idx = index_of[mesh.elem_edges]
    kind_loc = bc.kind[mesh.elem_edges]
    rows, cols, vals = [], [], []

    row_ids = np.repeat(edge_idx[:, :, None], 3, axis=2)
    col_ids = np.repeat(edge_idx[:, None, :], 3, axis=1)
    row_is_int = np.repeat((kind_loc == KIND_INTERIOR)[:, :, None], 3, axis=2)
    mask = row_is_int & (col_ids >= 0)
    rows.append(row_ids[mask])
    cols.append(col_ids[mask])
    vals.append(loc.dm_dmu[mask])

    flux_edges = np.flatnonzero(bc.kind == KIND_FLUX)
    if len(flux_edges):
        f_elems = mesh.edge_elems[flux_edges, 0]
        f_local = mesh.edge_local[flux_edges, 0]
        h = (np.einsum("kij,kjl->kil", loc.theta_jac, loc.dm_dmu)
             - loc.ds_dmu[:, None, :])
        r = index_of[flux_edges]
        hrow = h[f_elems, f_local, :]
        crow = edge_idx[f_elems]
        ok = crow >= 0
        rows.append(np.repeat(r[:, None], 3, axis=1)[ok])
        cols.append(crow[ok])
        vals.append(hrow[ok])
        rows.append(r)
        cols.append(r)
        vals.append(np.ones(len(r)))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_unk, n_unk)).tocsr()


def assemble_condensed(disc, coeff, bc: FlowBoundary, mu_full,
                       warm_m=None, warm_s=None, want_jacobian=True,
                       local_tol=1e-12):
    """Residual and Jacobian of the condensed trace system.

    Unknowns are the traces on interior and flux-boundary edges.  Interior
    rows are the flux-continuity sums m_{K,e} + m_{K',e}; flux-boundary rows
    are the momentum residuals displaced by the strong constraint.  Returns
    (residual, jacobian_or_None, local_solution, unknown_edges).
    """
    mesh = disc.mesh
    loc = local_solve(disc, coeff, bc, mu_full, warm_m, warm_s, tol=local_tol)
    unk_edges, index_of = _unknown_index(mesh, bc)

    resid = np.zeros(len(unk_edges))
    interior = bc.kind == KIND_INTERIOR
    for side in range(2):
        elems = mesh.edge_elems[:, side]
        ok = interior & (elems >= 0)
        np.add.at(resid, index_of[ok], loc.m[elems[ok], mesh.edge_local[ok, side]])
    flux_edges = np.flatnonzero(bc.kind == KIND_FLUX)
    if len(flux_edges):
        f_elems = mesh.edge_elems[flux_edges, 0]
        f_local = mesh.edge_local[flux_edges, 0]
        resid[index_of[flux_edges]] = (loc.theta[f_elems, f_local]
                                       - loc.s[f_elems] + mu_full[flux_edges])

    jac = None
    if want_jacobian:
        jac = _scatter_condensed(mesh, bc, loc, index_of, len(unk_edges))
    return resid, jac, loc, unk_edges


def condensed_linear_matrix(disc, bc: FlowBoundary, drag_elem, compress_elem):
    """Condensed matrix of the flow operator linearized at frozen scalar
    per-element drag and compressibility (coarse multigrid levels)."""
    mesh = disc.mesh
    n = mesh.n_elements
    kind_loc = bc.kind[mesh.elem_edges]
    theta_jac = drag_elem[:, None, None] * disc.mass
    jac = np.zeros((n, 4, 4))
    flux_rows = kind_loc == KIND_FLUX
    jac[:, :3, :3] = np.where(flux_rows[:, :, None], np.eye(3)[None], theta_jac)
    jac[:, :3, 3] = np.where(flux_rows, 0.0, -1.0)
    jac[:, 3, :3] = 1.0
    jac[:, 3, 3] = compress_elem
    rhs = np.zeros((n, 4, 3))
    idx = np.arange(3)
    rhs[:, idx, idx] = np.where(flux_rows, 0.0, -1.0)
    sens = np.linalg.solve(jac, rhs)
    loc = LocalSolution(np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)),
                        theta_jac, sens[:, :3, :], sens[:, 3, :])
    unk_edges, index_of = _unknown_index(mesh, bc)
    return _scatter_condensed(mesh, bc, loc, index_of, len(unk_edges)), unk_edges


class FlowHierarchy:
    """Multigrid context for the condensed flow systems of one mesh stack.

    Holds per-level discretizations and boundary kinds plus edge-midpoint
    transfer operators restricted to the unknown edges.  Coarse operators
    are re-assembled per solve from the fine linearization's frozen drag and
    compressibility fields, restricted by area averaging / child summation.
    """

    def __init__(self, discs: list[RT0Discretization], bcs: list[FlowBoundary],
                 omega=1.0):
        self.discs = discs
        self.bcs = bcs
        self.omega = omega
        self.unknowns = [_unknown_index(d.mesh, b)[0] for d, b in zip(discs, bcs)]
        self.prolongations = []
        for lvl in range(1, len(discs)):
            p_full = linsolve.cr_prolongation_matrix(discs[lvl].mesh)
            self.prolongations.append(
                p_full[self.unknowns[lvl]][:, self.unknowns[lvl - 1]].tocsr())

    def restrict_cellfield(self, values, weighted=True):
        """Per-element field restricted down the stack; coarse first."""
        out = [values]
        for lvl in range(len(self.discs) - 1, 0, -1):
            fine_mesh = self.discs[lvl].mesh
            coarse_mesh = self.discs[lvl - 1].mesh
            acc = np.zeros(coarse_mesh.n_elements)
            np.add.at(acc, fine_mesh.parent.elem_parent,
                      out[0] * (fine_mesh.areas if weighted else 1.0))
            if weighted:
                acc /= coarse_mesh.areas
            out.insert(0, acc)
        return out

    def solve(self, fine_matrix, rhs, drag_fine, compress_fine, x0=None, tol=1e-10):
        drags = self.restrict_cellfield(drag_fine, weighted=True)
        comps = self.restrict_cellfield(compress_fine, weighted=False)
        levels = []
        for lvl in range(len(self.discs) - 1):
            mat, _ = condensed_linear_matrix(self.discs[lvl], self.bcs[lvl],
                                             drags[lvl], comps[lvl])
            prol = self.prolongations[lvl - 1] if lvl > 0 else None
            levels.append(linsolve.Level(-mat, prol))
        levels.append(linsolve.Level(fine_matrix, self.prolongations[-1]))
        solver = linsolve.MultigridSolver(levels, omega=self.omega)
        return solver.solve(rhs, x0=x0, tol=tol)


def solve_flow(disc, coeff, bc: FlowBoundary, trace0=None, warm_m=None, warm_s=None,
               hierarchy: FlowHierarchy | None = None, tol_rel=1e-9, max_iter=25,
               max_halvings=8, gas_factor=1.0):
    """Damped Newton on the condensed trace system.

    Starts from `trace0` (previous step or previous coupling sweep) and
    returns a FlowState whose interior normal fluxes cancel to the Newton
    tolerance.  Iterations polish one step past the tolerance so that
    discrete conservation closes near machine precision.  Raises
    FlowSolverError when the line search is exhausted; the time loop
    answers that with a time-step reduction.
    """
    mesh = disc.mesh
    dirichlet = bc.kind == KIND_DIRICHLET
    if trace0 is None:
        fill = float(bc.trace_pin[dirichlet].mean()) if dirichlet.any() else 0.0
        mu = np.full(mesh.n_edges, fill)
    else:
        mu = np.asarray(trace0, dtype=float).copy()
    mu[dirichlet] = bc.trace_pin[dirichlet]

    resid, jac, loc, unk_edges = assemble_condensed(disc, coeff, bc, mu, warm_m, warm_s)
    flux_rows = bc.kind[unk_edges] == KIND_FLUX
    trace_scale = max(1.0, float(np.abs(mu).max()))

    def weighted_norm(r):
        out = float(np.abs(r[~flux_rows]).max()) if (~flux_rows).any() else 0.0
        if flux_rows.any():
            out = max(out, float(np.abs(r[flux_rows]).max()) / trace_scale)
        return out

    norm = weighted_norm(resid)
    tol = tol_rel * max(1.0, norm)
    tol_strict = tol * 1e-4
    polished = norm <= tol

    for it in range(max_iter):
        if norm <= tol_strict or (norm <= tol and polished):
            break
        polished = norm <= tol
        if hierarchy is not None:
            mean_speed = np.sqrt((disc.flux_at_quadrature(loc.m) ** 2).sum(axis=2)
                                 ).mean(axis=1)
            drag_fine = coeff.linear_drag + coeff.quadratic_drag * mean_speed
            compress_fine = coeff.accumulation * _psq_hat_derivative(loc.s)
            delta, _ = hierarchy.solve(-jac, resid, drag_fine, compress_fine)
        else:
            delta, _ = linsolve.solve_sparse(-jac, resid)

        merit0 = float(resid @ resid)
        step = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            mu_try = mu.copy()
            mu_try[unk_edges] += step * delta
            try:
                resid_t, jac_t, loc_t, _ = assemble_condensed(
                    disc, coeff, bc, mu_try, loc.m, loc.s)
            except FlowSolverError:
                step *= 0.5
                continue
            if merit0 == 0.0 or float(resid_t @ resid_t) <= (1.0 - 1e-4 * step) * merit0:
                mu, resid, jac, loc = mu_try, resid_t, jac_t, loc_t
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if norm <= tol:
                break
            raise FlowSolverError(
                f"flow Newton stalled at |F| = {norm:.3e} (tol {tol:.3e}) after "
                f"{it} iterations; reduce the time step")
        norm = weighted_norm(resid)
    else:
        if norm > tol:
            raise FlowSolverError(
                f"flow Newton did not converge: |F| = {norm:.3e} > {tol:.3e}; "
                "reduce the time step")

    return FlowState(edge_flux=loc.m, psq=loc.s, trace=mu,
                     density=gas_factor * _psq_hat(loc.s))


def flux_continuity_error(mesh: Mesh, state: FlowState) -> float:
    """Largest interior-edge mismatch |m_{K,e} + m_{K',e}|."""
    interior = np.flatnonzero(mesh.edge_elems[:, 1] >= 0)
    if len(interior) == 0:
        return 0.0
    k1, k2 = mesh.edge_elems[interior, 0], mesh.edge_elems[interior, 1]
    l1, l2 = mesh.edge_local[interior, 0], mesh.edge_local[interior, 1]
    return float(np.abs(state.edge_flux[k1, l1] + state.edge_flux[k2, l2]).max())


def postprocess(disc: RT0Discretization, state: FlowState):
    """Pressure (Pa) and cell-centered velocity (m/s) from the transformed
    unknowns: p = sign(S) sqrt(|S|), u = m_h(centroid)/rho."""
    pressure = np.sign(state.psq) * np.sqrt(np.abs(state.psq))
    mvec = np.einsum("kj,kja->ka", state.edge_flux, disc.basis_centroid)
    velocity = mvec / state.density[:, None]
    return pressure, velocity
