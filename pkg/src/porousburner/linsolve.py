"""Sparse linear solvers: geometric multigrid and a Krylov fallback.

Two transfer families are provided.  Edge-based unknowns (the condensed
pressure-trace system of the flow solver) use nonconforming interpolation:
each coarse element carries the linear function matching its three edge
midpoint values, and a fine edge value is the average of that interpolant
over the coarse elements touching it.  Cell-based unknowns (the transport
system) use trivial injection, children copy their parent, with summation
as the transpose.

The V-cycle smooths with damped Gauss-Seidel (forward pre, backward post)
and solves the coarsest level directly.  When a cycle stagnates the driver
switches to BiCGStab with an incomplete-LU preconditioner, and as a last
resort to a sparse direct solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .meshing import Mesh

log = logging.getLogger(__name__)


class LinearSolveError(Exception):
    """Linear solver breakdown (singular system or stagnation everywhere)."""


def cr_prolongation_matrix(fine: Mesh) -> sp.csr_matrix:
    """Edge-midpoint (nonconforming) prolongation from coarse to fine edges.

    Requires `fine.parent`.  Rows are fine edges, columns coarse edges.  A
    fine edge interior to a coarse element takes that element's interpolant
    at the fine midpoint; a fine edge on a coarse edge averages over the one
    or two coarse elements incident to it.  Exact for globally linear data.
    """
    links = fine.parent
    if links is None:
        raise ValueError("fine mesh has no parent links")
    coarse = links.coarse
    rows, cols, vals = [], [], []
    for f in range(fine.n_edges):
        x_f = fine.edge_midpoints[f]
        pe = links.edge_parent_edge[f]
        if pe >= 0:
            elems = [k for k in coarse.edge_elems[pe] if k >= 0]
        else:
            elems = [links.edge_parent_elem[f]]
        w = 1.0 / len(elems)
        for k in elems:
            lam = _barycentric(coarse, k, x_f)
            for i in range(3):
                rows.append(f)
                cols.append(coarse.elem_edges[k, i])
                vals.append(w * (1.0 - 2.0 * lam[i]))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(fine.n_edges, coarse.n_edges))
    return mat.tocsr()


def _barycentric(mesh: Mesh, elem: int, point: np.ndarray) -> np.ndarray:
    p = mesh.nodes[mesh.tris[elem]]
    t = np.array([[p[0, 0] - p[2, 0], p[1, 0] - p[2, 0]],
                  [p[0, 1] - p[2, 1], p[1, 1] - p[2, 1]]])
    l12 = np.linalg.solve(t, point - p[2])
    return np.array([l12[0], l12[1], 1.0 - l12[0] - l12[1]])


def cell_injection_matrix(fine: Mesh) -> sp.csr_matrix:
    """Trivial injection from coarse cells to fine cells (children copy
    their parent); the transpose sums children into the parent."""
    links = fine.parent
    if links is None:
        raise ValueError("fine mesh has no parent links")
    n_f = fine.n_elements
    data = np.ones(n_f)
    return sp.csr_matrix((data, (np.arange(n_f), links.elem_parent)),
                         shape=(n_f, links.coarse.n_elements))


@dataclass
class Level:
    """Matrix plus cached smoother factors for one grid level."""

    matrix: sp.csr_matrix
    prolongation: sp.csr_matrix | None = None   # from next coarser level
    _lower: sp.csr_matrix | None = field(default=None, repr=False)
    _upper: sp.csr_matrix | None = field(default=None, repr=False)
    _lu: object = field(default=None, repr=False)

    def lower(self):
        if self._lower is None:
            self._lower = sp.tril(self.matrix, format="csr")
        return self._lower

    def upper(self):
        if self._upper is None:
            self._upper = sp.triu(self.matrix, format="csr")
        return self._upper

    def lu(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.matrix.tocsc())
            except RuntimeError as exc:
                raise LinearSolveError(f"coarse-level factorization failed: {exc}") from exc
        return self._lu


def gauss_seidel(level: Level, x, b, omega=1.0, sweeps=1, backward=False):
    """Damped Gauss-Seidel sweeps in residual-correction form."""
    a = level.matrix
    tri = level.upper() if backward else level.lower()
    for _ in range(sweeps):
        r = b - a @ x
        x = x + omega * spla.spsolve_triangular(tri, r, lower=not backward,
                                                unit_diagonal=False)
    return x


def vcycle(levels: list[Level], b, x, nu1=2, nu2=2, omega=1.0, _top=None):
    """One V-cycle on `levels` ordered coarse to fine; returns the update of
    the finest-level iterate.  A single level degenerates to a direct solve."""
    if _top is None:
        _top = len(levels) - 1
    if _top == 0:
        return levels[0].lu().solve(b)
    lvl = levels[_top]
    x = gauss_seidel(lvl, x, b, omega=omega, sweeps=nu1, backward=False)
    resid = b - lvl.matrix @ x
    coarse_b = lvl.prolongation.T @ resid
    coarse_x = vcycle(levels, coarse_b, np.zeros(levels[_top - 1].matrix.shape[0]),
                      nu1=nu1, nu2=nu2, omega=omega, _top=_top - 1)
    x = x + lvl.prolongation @ coarse_x
    x = gauss_seidel(lvl, x, b, omega=omega, sweeps=nu2, backward=True)
    return x


@dataclass
class SolveInfo:
    method: str
    iterations: int
    residual: float
    contraction: float


def krylov_fallback(matrix, b, x0=None, tol=1e-10, max_iter=400):
    """BiCGStab with ILU preconditioning; raises on breakdown."""
    n = matrix.shape[0]
    x0 = np.zeros(n) if x0 is None else x0
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n)
    try:
        ilu = spla.spilu(matrix.tocsc(), drop_tol=1e-6, fill_factor=12)
        precond = spla.LinearOperator((n, n), matvec=ilu.solve)
    except RuntimeError as exc:
        raise LinearSolveError(f"ILU breakdown: {exc}") from exc
    x, info = spla.bicgstab(matrix, b, x0=x0, rtol=tol, atol=0.0,
                            maxiter=max_iter, M=precond)
    if info != 0 or not np.all(np.isfinite(x)):
        raise LinearSolveError(f"BiCGStab failed to converge (info={info})")
    return x


class MultigridSolver:
    """Repeated V-cycles with automatic Krylov / direct fallback.

    `levels` are Level objects ordered coarse to fine; every level above
    the first needs its prolongation.  A cycle reducing the residual by
    less than `stagnation` triggers the fallback chain.
    """

    def __init__(self, levels: list[Level], omega=1.0, nu1=2, nu2=2,
                 stagnation=0.9, max_cycles=60):
        self.levels = levels
        self.omega = omega
        self.nu1 = nu1
        self.nu2 = nu2
        self.stagnation = stagnation
        self.max_cycles = max_cycles

    def solve(self, b, x0=None, tol=1e-10) -> tuple[np.ndarray, SolveInfo]:
        fine = self.levels[-1]
        n = fine.matrix.shape[0]
        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
        b = np.asarray(b, dtype=float)
        b_norm = np.linalg.norm(b)
        if b_norm == 0.0:
            return np.zeros(n), SolveInfo("vcycle", 0, 0.0, 0.0)
        if len(self.levels) == 1:
            x = fine.lu().solve(b)
            return x, SolveInfo("direct", 1, _relres(fine.matrix, x, b, b_norm), 0.0)

        res = np.linalg.norm(b - fine.matrix @ x) / b_norm
        worst = 0.0
        for it in range(1, self.max_cycles + 1):
            x = vcycle(self.levels, b, x, nu1=self.nu1, nu2=self.nu2, omega=self.omega)
            new_res = np.linalg.norm(b - fine.matrix @ x) / b_norm
            rate = new_res / res if res > 0 else 0.0
            worst = max(worst, rate)
            if new_res <= tol:
                return x, SolveInfo("vcycle", it, new_res, worst)
            if rate > self.stagnation or not np.isfinite(new_res):
                log.debug("V-cycle stagnated (rate %.3f) after %d cycles; "
                          "switching to Krylov", rate, it)
                break
            res = new_res
        try:
            x = krylov_fallback(fine.matrix, b, x0=x if np.all(np.isfinite(x)) else None,
                                tol=tol)
            return x, SolveInfo("krylov", self.max_cycles,
                                _relres(fine.matrix, x, b, b_norm), worst)
        except LinearSolveError:
            x = spla.splu(fine.matrix.tocsc()).solve(b)
            if not np.all(np.isfinite(x)):
                raise
            return x, SolveInfo("direct", 1, _relres(fine.matrix, x, b, b_norm), worst)


def _relres(a, x, b, b_norm):
    return float(np.linalg.norm(b - a @ x) / b_norm)


def solve_sparse(matrix, b, hierarchy_levels=None, x0=None, tol=1e-10,
                 omega=1.0) -> tuple[np.ndarray, SolveInfo]:
    """Entry point used by the Newton drivers.

    With `hierarchy_levels` (coarse-to-fine Level list whose finest matrix
    is `matrix`) a multigrid solve runs with fallback; otherwise a direct
    sparse solve.
    """
    if hierarchy_levels is not None and len(hierarchy_levels) > 1:
        return MultigridSolver(hierarchy_levels, omega=omega).solve(b, x0=x0, tol=tol)
    lvl = Level(matrix.tocsr())
    x = lvl.lu().solve(np.asarray(b, dtype=float))
    nb = np.linalg.norm(b)
    return x, SolveInfo("direct", 1, 0.0 if nb == 0 else _relres(lvl.matrix, x, b, nb), 0.0)
