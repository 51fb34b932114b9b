"""Verification suites: manufactured solutions, oracle equivalence, solver
benchmarks.

Everything here is deliberately written against the plain formulas rather
than the production assembly paths: the dense mixed-system oracle builds
its own basis evaluations and quadrature, so agreement with the condensed
solver is a genuine cross-check and not a tautology.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import flow as fl
from . import linsolve
from . import meshing
from . import transport as tr
from .physics import TemperatureCoefficient

UNIT_TAGS = "IOWS"


# ---------------------------------------------------------------------------
# dense conforming mixed oracle (single flux unknown per edge)

def _oracle_basis(points, vertex, x):
    """Flux basis of the edge opposite `vertex`, evaluated at x."""
    d1 = points[1] - points[0]
    d2 = points[2] - points[0]
    area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
    return (np.asarray(x) - points[vertex]) / (2.0 * area)


def _oracle_momentum(mesh, elem, m_loc, alpha, beta, test_local):
    """int_K (alpha + beta |m_h|) m_h . w_test dx by edge-midpoint quadrature."""
    pts = mesh.nodes[mesh.tris[elem]]
    area = mesh.areas[elem]
    total = 0.0
    for q in range(3):
        xq = 0.5 * (pts[(q + 1) % 3] + pts[(q + 2) % 3])
        mvec = sum(m_loc[j] * _oracle_basis(pts, j, xq) for j in range(3))
        speed = math.sqrt(mvec @ mvec + fl.FLUX_NORM_EPS ** 2)
        wtest = _oracle_basis(pts, test_local, xq)
        total += (area / 3.0) * (alpha + beta * speed) * (mvec @ wtest)
    return total


@dataclass
class MixedOracleProblem:
    """Data of a small conforming mixed solve used as the equivalence oracle."""

    mesh: meshing.Mesh
    alpha: np.ndarray
    beta: np.ndarray
    accumulation: np.ndarray     # per element, multiplies S/sqrt|S|
    rhs: np.ndarray              # per element
    dirichlet_tag: str
    dirichlet_value: float
    flux_values: dict            # tag -> prescribed flux density


def solve_mixed_oracle(problem: MixedOracleProblem, tol=1e-13, max_iter=60):
    """Newton on the one-flux-per-edge mixed system, dense linear algebra.

    Unknowns: one signed flux per non-prescribed edge (orientation: outward
    normal of the first incident element) plus one S value per element.
    Returns (edge_flux_per_element, psq) in the per-element layout of the
    condensed solver for direct comparison.
    """
    mesh = problem.mesh
    neumann_tags = set(problem.flux_values)
    is_neumann = np.zeros(mesh.n_edges, dtype=bool)
    flux_fixed = np.zeros(mesh.n_edges)
    for e in mesh.boundary_edges():
        tag = meshing.TAG_NAMES[mesh.edge_tags[e]]
        if tag in neumann_tags:
            is_neumann[e] = True
            flux_fixed[e] = problem.flux_values[tag] * mesh.edge_lengths[e]
    free_edges = np.flatnonzero(~is_neumann)
    col_of = {int(e): i for i, e in enumerate(free_edges)}
    n_m = len(free_edges)
    n = n_m + mesh.n_elements

    def sign_of(elem, e):
        return 1.0 if mesh.edge_elems[e, 0] == elem else -1.0

    def local_fluxes(elem, x):
        out = np.zeros(3)
        for i in range(3):
            e = mesh.elem_edges[elem, i]
            if is_neumann[e]:
                out[i] = flux_fixed[e]
            else:
                out[i] = sign_of(elem, e) * x[col_of[int(e)]]
        return out

    def residual(x):
        res = np.zeros(n)
        s = x[n_m:]
        for row, e in enumerate(free_edges):
            for side in (0, 1):
                elem = mesh.edge_elems[e, side]
                if elem < 0:
                    continue
                m_loc = local_fluxes(elem, x)
                test = mesh.edge_local[e, side]
                res[row] += sign_of(elem, e) * _oracle_momentum(
                    mesh, elem, m_loc, problem.alpha[elem], problem.beta[elem], test)
                res[row] -= sign_of(elem, e) * s[elem]
            if mesh.edge_elems[e, 1] < 0:
                tag = meshing.TAG_NAMES[mesh.edge_tags[e]]
                if tag != problem.dirichlet_tag:
                    raise ValueError("oracle mesh has an unhandled boundary edge")
                res[row] += problem.dirichlet_value
        for elem in range(mesh.n_elements):
            m_loc = local_fluxes(elem, x)
            s_k = s[elem]
            res[n_m + elem] = (problem.accumulation[elem]
                               * s_k / math.sqrt(max(abs(s_k), 1.0))
                               + m_loc.sum() - problem.rhs[elem])
        return res

    x = np.zeros(n)
    x[n_m:] = problem.dirichlet_value
    for _ in range(max_iter):
        res = residual(x)
        if np.abs(res).max() <= tol * max(1.0, abs(problem.dirichlet_value)):
            break
        jac = np.empty((n, n))
        h = 1e-7 * max(1.0, np.abs(x).max())
        for j in range(n):
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            jac[:, j] = (residual(xp) - residual(xm)) / (2.0 * h)
        x = x + np.linalg.solve(jac, -res)
    else:
        raise RuntimeError("mixed oracle Newton did not converge")

    edge_flux = np.array([local_fluxes(k, x) for k in range(mesh.n_elements)])
    return edge_flux, x[n_m:]


def rhombus_mesh(refinements=0):
    """Two glued equilateral triangles (all angles 60 deg), optionally
    red-refined; boundary tags I (left), O (right), W (top), S (bottom)."""
    h = math.sqrt(3.0) / 2.0
    nodes = [(0.0, 0.0), (1.0, 0.0), (1.5, h), (0.5, h)]
    tris = [(0, 1, 3), (1, 2, 3)]
    tags = {(0, 1): "S", (1, 2): "O", (2, 3): "W", (0, 3): "I"}
    mesh = meshing.mesh_from_arrays(np.asarray(nodes), np.asarray(tris),
                                    boundary_tags=tags)
    for _ in range(refinements):
        mesh = meshing.refine_uniform(mesh)
    return mesh


def hybrid_equivalence(refinements=1):
    """Condensed solver versus the dense mixed oracle on a tiny mesh.

    Nonlinear transient setup with O(1) data so the comparison tolerance is
    meaningful in absolute terms.  Returns max |dm| and |dS| differences.
    """
    mesh = rhombus_mesh(refinements)
    disc = fl.RT0Discretization(mesh)
    n = mesh.n_elements
    alpha = np.full(n, 1.2)
    beta = np.full(n, 0.8)
    s_ref = 2.0
    acc = mesh.areas * 0.6 / 0.7
    rhs = acc * s_ref / math.sqrt(s_ref)
    coeff = fl.FlowCoefficients(alpha, beta, acc, rhs)
    bc = fl.FlowBoundary.from_tags(
        mesh, dirichlet={"O": lambda x: s_ref},
        neumann={"I": lambda x: -0.4, "W": lambda x: 0.0, "S": lambda x: 0.0})
    state = fl.solve_flow(disc, coeff, bc, tol_rel=1e-12)

    oracle = MixedOracleProblem(
        mesh=mesh, alpha=alpha, beta=beta, accumulation=acc, rhs=rhs,
        dirichlet_tag="O", dirichlet_value=s_ref,
        flux_values={"I": -0.4, "W": 0.0, "S": 0.0})
    m_oracle, s_oracle = solve_mixed_oracle(oracle)
    return {
        "elements": n,
        "max_dm": float(np.abs(state.edge_flux - m_oracle).max()),
        "max_ds": float(np.abs(state.psq - s_oracle).max()),
    }


# ---------------------------------------------------------------------------
# manufactured steady solutions

def _unit_square_hierarchy(base=6, levels=3):
    return meshing.build_hierarchy(1.0, 1.0, base, base, levels)


def darcy_manufactured(levels=3, base=6, alpha0=2.0):
    """Smooth steady linear-drag problem with exact solution
    S* = 3 + 0.5 cos(pi x) cos(pi y); returns per-level L2 errors."""
    meshes = _unit_square_hierarchy(base, levels)

    def s_exact(x):
        return 3.0 + 0.5 * math.cos(math.pi * x[0]) * math.cos(math.pi * x[1])

    def source(x):
        return (math.pi ** 2 / alpha0) * math.cos(math.pi * x[0]) * math.cos(math.pi * x[1])

    def m_exact(x):
        gx = -0.5 * math.pi * math.sin(math.pi * x[0]) * math.cos(math.pi * x[1])
        gy = -0.5 * math.pi * math.cos(math.pi * x[0]) * math.sin(math.pi * x[1])
        return np.array([-gx / alpha0, -gy / alpha0])

    errors = []
    for mesh in meshes:
        disc = fl.RT0Discretization(mesh)
        n = mesh.n_elements
        src = mesh.areas * np.array([source(c) for c in mesh.centroids])
        coeff = fl.FlowCoefficients(np.full(n, alpha0), np.zeros(n),
                                    np.zeros(n), src)
        bc = fl.FlowBoundary.from_tags(
            mesh, dirichlet={t: s_exact for t in UNIT_TAGS}, neumann={})
        state = fl.solve_flow(disc, coeff, bc, tol_rel=1e-12)
        err_s = math.sqrt(float(
            (mesh.areas * (state.psq
                           - np.array([s_exact(c) for c in mesh.centroids])) ** 2).sum()))
        mq = disc.flux_at_quadrature(state.edge_flux)
        dq = mq - np.array([[m_exact(x) for x in qrow] for qrow in disc.qpoints])
        err_m = math.sqrt(float(
            ((mesh.areas / 3.0)[:, None] * (dq ** 2).sum(axis=2)).sum()))
        errors.append({"h_elems": n, "err_s": err_s, "err_m": err_m})
    for i in range(1, len(errors)):
        errors[i]["ratio_s"] = errors[i - 1]["err_s"] / errors[i]["err_s"]
        errors[i]["ratio_m"] = errors[i - 1]["err_m"] / errors[i]["err_m"]
    return errors


def forchheimer_1d(base=8, alpha0=3.0, beta0=2.0, s_left=5.0, s_right=2.0):
    """Steady through-flow with quadratic drag; |m| against the closed-form
    root of (alpha + beta M) M = |dS/dx|."""
    mesh = meshing.build_rect_mesh(1.0, 1.0, base, base)
    disc = fl.RT0Discretization(mesh)
    n = mesh.n_elements
    coeff = fl.FlowCoefficients(np.full(n, alpha0), np.full(n, beta0),
                                np.zeros(n), np.zeros(n))
    bc = fl.FlowBoundary.from_tags(
        mesh,
        dirichlet={"I": lambda x: s_left, "O": lambda x: s_right},
        neumann={"W": lambda x: 0.0, "S": lambda x: 0.0})
    state = fl.solve_flow(disc, coeff, bc, tol_rel=1e-12)
    grad = (s_left - s_right) / 1.0
    m_ref = (-alpha0 + math.sqrt(alpha0 ** 2 + 4.0 * beta0 * grad)) / (2.0 * beta0)
    mvec = np.einsum("kj,kja->ka", state.edge_flux, disc.basis_centroid)
    speeds = np.linalg.norm(mvec, axis=1)
    return {
        "m_reference": m_ref,
        "rel_error": float(np.abs(speeds - m_ref).max() / m_ref),
    }


def _inert_heat_bc(mesh):
    return tr.field_boundary(mesh, dirichlet={t: (lambda x: 1.0) for t in UNIT_TAGS})


def _mms_transport_problem(mesh, velocity, source_fn, z_exact):
    n = mesh.n_elements
    porosity = np.full(n, 0.5)
    edge_flux = np.zeros((n, 3))
    for i in range(3):
        edge_flux[:, i] = ((mesh.edge_normals[:, i, :] @ velocity)
                           * mesh.edge_lengths[mesh.elem_edges[:, i]])
    species_bc = tr.field_boundary(mesh, dirichlet={t: z_exact for t in UNIT_TAGS})
    return tr.TransportProblem(
        mesh=mesh, porosity=porosity,
        heat_diffusion=np.ones(n), species_diffusion=np.ones(n),
        heat_capacity=TemperatureCoefficient(1.0),
        solid_heat_capacity=TemperatureCoefficient(1.0),
        solid_density=TemperatureCoefficient(1.0),
        reaction=None, density=np.ones(n), density_prev=np.ones(n),
        temperature_prev=np.ones(n), fraction_prev=np.zeros(n),
        edge_flux=edge_flux, heat_bc=_inert_heat_bc(mesh), species_bc=species_bc,
        dt=None,
        species_mms=np.array([source_fn(c) for c in mesh.centroids]))


def advection_diffusion_manufactured(levels=3, base=6, velocity=(0.4, 0.2)):
    """Steady upwind/two-point scheme on z* = 0.75 + 0.5 sin(pi x) sin(pi y)
    with unit diffusion and constant velocity; returns per-level L2 errors."""
    meshes = _unit_square_hierarchy(base, levels)
    vel = np.asarray(velocity)

    def z_exact(x):
        return 0.75 + 0.5 * math.sin(math.pi * x[0]) * math.sin(math.pi * x[1])

    def source(x):
        sx, sy = math.sin(math.pi * x[0]), math.sin(math.pi * x[1])
        cx, cy = math.cos(math.pi * x[0]), math.cos(math.pi * x[1])
        grad = 0.5 * math.pi * np.array([cx * sy, sx * cy])
        return float(vel @ grad) + math.pi ** 2 * sx * sy

    errors = []
    for mesh in meshes:
        problem = _mms_transport_problem(mesh, vel, source, z_exact)
        state = tr.solve_transport(problem, np.ones(mesh.n_elements),
                                   np.full(mesh.n_elements, 0.75), tol_rel=1e-11)
        zc = np.array([z_exact(c) for c in mesh.circumcenters])
        err = math.sqrt(float((mesh.areas * (state.mass_fraction - zc) ** 2).sum()))
        errors.append({"h_elems": mesh.n_elements, "err_z": err})
    for i in range(1, len(errors)):
        errors[i]["ratio_z"] = errors[i - 1]["err_z"] / errors[i]["err_z"]
    return errors


# ---------------------------------------------------------------------------
# Jacobian fidelity

def flow_jacobian_check(n_states=10, base=6, seed=2024):
    """Condensed Jacobian against central differences on random trace
    states; returns the worst relative directional error."""
    rng = np.random.default_rng(seed)
    mesh = meshing.build_rect_mesh(1.0, 1.0, base, base)
    disc = fl.RT0Discretization(mesh)
    n = mesh.n_elements
    coeff = fl.FlowCoefficients(np.full(n, 1.5), np.full(n, 0.7),
                                mesh.areas * 0.8 / 0.5,
                                mesh.areas * 0.8 * 1.1 / 0.5)
    bc = fl.FlowBoundary.from_tags(
        mesh, dirichlet={"O": lambda x: 2.0},
        neumann={"I": lambda x: -0.3, "W": lambda x: 0.0, "S": lambda x: 0.0})
    unk = np.flatnonzero(bc.kind != fl.KIND_DIRICHLET)
    worst = 0.0
    for _ in range(n_states):
        mu = np.where(bc.kind == fl.KIND_DIRICHLET, bc.trace_pin,
                      2.0 + 0.4 * rng.standard_normal(mesh.n_edges))
        resid, jac, _, _ = fl.assemble_condensed(disc, coeff, bc, mu,
                                                 local_tol=1e-14)
        v = rng.standard_normal(len(unk))
        v /= np.linalg.norm(v)
        h = 1e-5
        mu_p = mu.copy()
        mu_p[unk] += h * v
        mu_m = mu.copy()
        mu_m[unk] -= h * v
        rp, _, _, _ = fl.assemble_condensed(disc, coeff, bc, mu_p,
                                            want_jacobian=False, local_tol=1e-14)
        rm, _, _, _ = fl.assemble_condensed(disc, coeff, bc, mu_m,
                                            want_jacobian=False, local_tol=1e-14)
        fd = (rp - rm) / (2.0 * h)
        jv = jac @ v
        worst = max(worst, float(np.linalg.norm(jv - fd) / np.linalg.norm(fd)))
    return {"worst_rel_error": worst, "states": n_states}


def transport_jacobian_check(n_states=10, base=6, seed=7):
    """Coupled transport Jacobian against central differences on random
    reacting states; families (T rows, y rows) are checked separately."""
    from .physics import ReactionModel
    rng = np.random.default_rng(seed)
    mesh = meshing.build_rect_mesh(1.0, 1.0, base, base)
    n = mesh.n_elements
    velocity = np.array([0.3, -0.15])
    edge_flux = np.zeros((n, 3))
    for i in range(3):
        edge_flux[:, i] = ((mesh.edge_normals[:, i, :] @ velocity)
                           * mesh.edge_lengths[mesh.elem_edges[:, i]])
    problem = tr.TransportProblem(
        mesh=mesh, porosity=np.full(n, 0.6),
        heat_diffusion=np.full(n, 8.0), species_diffusion=np.full(n, 0.04),
        heat_capacity=TemperatureCoefficient((900.0, 0.15)),
        solid_heat_capacity=TemperatureCoefficient(765.0),
        solid_density=TemperatureCoefficient((3970.0, -0.05)),
        reaction=ReactionModel(1.8e8, 125600.0, 5.0e7),
        density=np.full(n, 0.4), density_prev=np.full(n, 0.42),
        temperature_prev=np.full(n, 900.0), fraction_prev=np.full(n, 0.03),
        edge_flux=edge_flux,
        heat_bc=tr.field_boundary(
            mesh, mixed={"I": lambda x: (250.0, 298.0), "W": lambda x: (90.0, 298.0)},
            neumann={"O": lambda x: 0.0, "S": lambda x: 0.0}),
        species_bc=tr.field_boundary(
            mesh, dirichlet={"I": lambda x: 0.05},
            neumann={t: (lambda x: 0.0) for t in "OWS"}),
        dt=0.5)
    worst = 0.0
    for _ in range(n_states):
        t = 900.0 + 150.0 * rng.standard_normal(n)
        y = np.abs(0.03 + 0.01 * rng.standard_normal(n))
        _, jac = tr.assemble_transport(problem, t, y)
        v = np.concatenate([rng.standard_normal(n),
                            1e-3 * rng.standard_normal(n)])
        h = 1e-6
        rp, _ = tr.assemble_transport(problem, t + h * v[:n], y + h * v[n:],
                                      want_jacobian=False)
        rm, _ = tr.assemble_transport(problem, t - h * v[:n], y - h * v[n:],
                                      want_jacobian=False)
        fd = (rp - rm) / (2.0 * h)
        jv = jac @ v
        for rows in (slice(0, n), slice(n, 2 * n)):
            denom = np.linalg.norm(fd[rows])
            worst = max(worst, float(np.linalg.norm(jv[rows] - fd[rows]) / denom))
    return {"worst_rel_error": worst, "states": n_states}


# ---------------------------------------------------------------------------
# multigrid behavior

def flow_mg_iterations(max_level=5, base=4, tol_drop=1e-8):
    """V-cycle counts to reduce the linear-Darcy condensed residual by
    1e8 at increasing refinement depth."""
    meshes = _unit_square_hierarchy(base, max_level)
    discs = [fl.RT0Discretization(m) for m in meshes]
    bcs = [fl.FlowBoundary.from_tags(
        m, dirichlet={"O": lambda x: 2.0},
        neumann={"I": lambda x: -0.3, "W": lambda x: 0.0, "S": lambda x: 0.0})
        for m in meshes]
    counts = {}
    for top in range(2, max_level + 1):
        hier = fl.FlowHierarchy(discs[:top + 1], bcs[:top + 1])
        n = meshes[top].n_elements
        coeff = fl.FlowCoefficients(np.full(n, 2.0), np.zeros(n),
                                    np.zeros(n), np.zeros(n))
        mu0 = np.where(bcs[top].kind == fl.KIND_DIRICHLET, 2.0, 2.0)
        _, jac, _, unk = fl.assemble_condensed(discs[top], coeff, bcs[top], mu0)
        rng = np.random.default_rng(99)
        b = rng.standard_normal(len(unk))
        drag = np.full(n, 2.0)
        comp = np.zeros(n)
        drags = hier.restrict_cellfield(drag)
        comps = hier.restrict_cellfield(comp, weighted=False)
        levels = []
        for lvl in range(top):
            mat, _ = fl.condensed_linear_matrix(discs[lvl], bcs[lvl],
                                                drags[lvl], comps[lvl])
            prol = hier.prolongations[lvl - 1] if lvl > 0 else None
            levels.append(linsolve.Level(-mat, prol))
        levels.append(linsolve.Level(-jac, hier.prolongations[top - 1]))
        solver = linsolve.MultigridSolver(levels, omega=1.0, stagnation=2.0,
                                          max_cycles=200)
        _, info = solver.solve(b, tol=tol_drop)
        counts[top] = info.iterations
    return counts


def transport_mg_iterations(max_level=5, base=4, tol_drop=1e-8):
    """V-cycle counts for the steady diffusion transport system with
    injection transfers at increasing refinement depth."""
    meshes = _unit_square_hierarchy(base, max_level)

    def z_dirichlet(x):
        return 1.0

    def make_problem(mesh):
        n = mesh.n_elements
        return tr.TransportProblem(
            mesh=mesh, porosity=np.full(n, 0.5),
            heat_diffusion=np.ones(n), species_diffusion=np.ones(n),
            heat_capacity=TemperatureCoefficient(1.0),
            solid_heat_capacity=TemperatureCoefficient(1.0),
            solid_density=TemperatureCoefficient(1.0),
            reaction=None, density=np.ones(n), density_prev=np.ones(n),
            temperature_prev=np.ones(n), fraction_prev=np.zeros(n),
            edge_flux=np.zeros((n, 3)),
            heat_bc=tr.field_boundary(mesh, dirichlet={t: z_dirichlet for t in UNIT_TAGS}),
            species_bc=tr.field_boundary(mesh, dirichlet={t: z_dirichlet for t in UNIT_TAGS}),
            dt=None)

    counts = {}
    for top in range(2, max_level + 1):
        hier = tr.TransportHierarchy(meshes[:top + 1], omega=0.8)
        hier.problems = [make_problem(m) for m in meshes[:top]]
        fine_problem = make_problem(meshes[top])
        n = meshes[top].n_elements
        _, fine_mat = tr.assemble_transport(fine_problem, np.ones(n), np.ones(n))
        rng = np.random.default_rng(21)
        b = rng.standard_normal(2 * n)
        levels = []
        for lvl in range(top):
            nc = meshes[lvl].n_elements
            _, mat = tr.assemble_transport(hier.problems[lvl], np.ones(nc), np.ones(nc))
            prol = hier.prolongations[lvl - 1] if lvl > 0 else None
            levels.append(linsolve.Level(mat, prol))
        levels.append(linsolve.Level(fine_mat, hier.prolongations[top - 1]))
        solver = linsolve.MultigridSolver(levels, omega=0.8, stagnation=2.0,
                                          max_cycles=300)
        _, info = solver.solve(b, tol=tol_drop)
        counts[top] = info.iterations
    return counts


def vcycle_contraction(levels=3, base=6, cycles=10):
    """Asymptotic V-cycle contraction on the SPD diffusion system."""
    meshes = _unit_square_hierarchy(base, levels)
    mats = []
    for mesh in meshes:
        n = mesh.n_elements
        problem = tr.TransportProblem(
            mesh=mesh, porosity=np.full(n, 0.5),
            heat_diffusion=np.ones(n), species_diffusion=np.ones(n),
            heat_capacity=TemperatureCoefficient(1.0),
            solid_heat_capacity=TemperatureCoefficient(1.0),
            solid_density=TemperatureCoefficient(1.0),
            reaction=None, density=np.ones(n), density_prev=np.ones(n),
            temperature_prev=np.ones(n), fraction_prev=np.zeros(n),
            edge_flux=np.zeros((n, 3)),
            heat_bc=tr.field_boundary(mesh, dirichlet={t: (lambda x: 0.0) for t in UNIT_TAGS}),
            species_bc=tr.field_boundary(mesh, dirichlet={t: (lambda x: 0.0) for t in UNIT_TAGS}),
            dt=None)
        _, mat = tr.assemble_transport(problem, np.zeros(n) + 1.0, np.zeros(n))
        mats.append(mat)
    lvls = []
    for i, mesh in enumerate(meshes):
        prol = None
        if i > 0:
            p = linsolve.cell_injection_matrix(mesh)
            import scipy.sparse as sp
            prol = sp.block_diag((p, p)).tocsr()
        lvls.append(linsolve.Level(mats[i], prol))
    rng = np.random.default_rng(5)
    n_f = mats[-1].shape[0]
    b = np.zeros(n_f)
    x = rng.standard_normal(n_f)
    rates = []
    res = np.linalg.norm(mats[-1] @ x)
    for _ in range(cycles):
        x = linsolve.vcycle(lvls, b, x, omega=0.8)
        new = np.linalg.norm(mats[-1] @ x)
        rates.append(new / res if res > 0 else 0.0)
        res = new
    return {"rates": rates, "max_rate": float(max(rates[2:]))}


# ---------------------------------------------------------------------------
# suite runners

def run_flow_suite(report=print):
    results = {}
    eq = hybrid_equivalence(1)
    ok_eq = eq["max_dm"] <= 1e-10 and eq["max_ds"] <= 1e-10
    report(f"{'PASS' if ok_eq else 'FAIL'} flow.hybrid-equivalence "
           f"max_dm={eq['max_dm']:.3e} max_ds={eq['max_ds']:.3e}")
    results["hybrid_equivalence"] = ok_eq

    errs = darcy_manufactured()
    ratios = [(e["ratio_s"], e["ratio_m"]) for e in errs[1:]]
    ok_conv = all(rs >= 1.8 and rm >= 1.8 for rs, rm in ratios)
    report(f"{'PASS' if ok_conv else 'FAIL'} flow.darcy-convergence "
           + " ".join(f"(S x{rs:.2f}, m x{rm:.2f})" for rs, rm in ratios))
    results["darcy_convergence"] = ok_conv

    fo = forchheimer_1d()
    ok_fo = fo["rel_error"] <= 1e-8
    report(f"{'PASS' if ok_fo else 'FAIL'} flow.forchheimer-1d "
           f"rel_error={fo['rel_error']:.3e}")
    results["forchheimer"] = ok_fo

    jc = flow_jacobian_check()
    ok_jc = jc["worst_rel_error"] <= 1e-5
    report(f"{'PASS' if ok_jc else 'FAIL'} flow.jacobian-fd "
           f"worst={jc['worst_rel_error']:.3e}")
    results["jacobian"] = ok_jc
    return results


def run_transport_suite(report=print):
    results = {}
    errs = advection_diffusion_manufactured()
    ratios = [e["ratio_z"] for e in errs[1:]]
    ok_conv = all(r >= 1.7 for r in ratios)
    report(f"{'PASS' if ok_conv else 'FAIL'} transport.advection-diffusion "
           + " ".join(f"x{r:.2f}" for r in ratios))
    results["convergence"] = ok_conv

    jc = transport_jacobian_check()
    ok_jc = jc["worst_rel_error"] <= 1e-5
    report(f"{'PASS' if ok_jc else 'FAIL'} transport.jacobian-fd "
           f"worst={jc['worst_rel_error']:.3e}")
    results["jacobian"] = ok_jc
    return results


def run_multigrid_suite(report=print, max_level=5):
    results = {}
    fc = flow_mg_iterations(max_level)
    growth_f = fc[max_level] / max(fc[3], 1)
    ok_f = growth_f <= 1.5
    report(f"{'PASS' if ok_f else 'FAIL'} multigrid.flow iterations="
           f"{fc} growth(3->{max_level})={growth_f:.2f}")
    results["flow"] = ok_f

    tc = transport_mg_iterations(max_level)
    growth_t = tc[max_level] / max(tc[3], 1)
    ok_t = growth_t <= 1.5
    report(f"{'PASS' if ok_t else 'FAIL'} multigrid.transport iterations="
           f"{tc} growth(3->{max_level})={growth_t:.2f}")
    results["transport"] = ok_t

    vc = vcycle_contraction()
    ok_v = vc["max_rate"] <= 0.5
    report(f"{'PASS' if ok_v else 'FAIL'} multigrid.contraction "
           f"max_rate={vc['max_rate']:.3f}")
    results["contraction"] = ok_v
    return results
