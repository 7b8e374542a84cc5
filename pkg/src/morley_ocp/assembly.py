"""Global assembly: bilinear form, load functional, constraint rows.

The bilinear form is ``beta * (broken Hessian Gram) + mass``; the load is
``int y_d w - beta * int f (Delta_h w)``.  Boundary-pinned vertex DOFs are
eliminated (they never receive a global index).

Hessian and mass element matrices are integrated exactly: every integrand
is a polynomial of degree at most two (Hessian products) or six (mass), so
closed-form barycentric integration reproduces what the degree-4 and
degree-6 rules would give, without the quadrature loop.  The load term
uses the degree-6 triangle rule.

Constraint rows are exact as well: ``int_T w = |T| * Q_T(w)`` touches only
the element-average DOF, and ``int_T Delta w = sum_e sign * h_e * (edge
mean of dw/dn)`` by the divergence theorem touches only edge DOFs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .element import DofMap, N_LOCAL, prim_values, triangle_rule, integrate

_CHUNK = 8192


class AssemblyError(Exception):
    pass


@dataclass
class SystemMatrix:
    """Sparse symmetric system matrix with a coordinate-format dump."""

    matrix: sp.csr_matrix
    dimension: int
    symmetric: bool = True

    def dump_coo(self, path):
        """Write "row col value" lines (sorted by row, then column)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r} {c} {float(v)!r}\n")


@dataclass
class ConstraintSet:
    """Linear constraint functionals of the discrete problem.

    ``case`` is "integral" (scalar state and control rows) or "box"
    (scalar state row plus per-element control boxes).  All rows are exact
    integrals of the basis functions.
    """

    case: str
    state_row: np.ndarray            # w -> int_Omega w
    state_bound: float               # delta2 (integral) or delta3 (box)
    control_row: np.ndarray | None   # w -> int_Omega(-Delta_h w), case integral
    control_bound: float | None      # delta1 + int_Omega f
    element_rows: sp.csr_matrix | None   # rows w -> int_T(-Delta w), case box
    lower: np.ndarray | None         # int_T u_a
    upper: np.ndarray | None         # int_T u_b
    areas: np.ndarray | None = None  # element areas, Q_T scaling of the boxes


def _element_matrices(dofmap: DofMap, beta, sl):
    """beta * Hessian Gram + mass for the element slice ``sl``."""
    mesh = dofmap.mesh
    C = dofmap.C[sl]
    G = mesh.grad_lambda[sl]
    area = mesh.areas[sl]

    # Gram of barycentric gradients and the symmetrized outer products
    # S_ij = G_i (x) G_j + G_j (x) G_i; then S_ij : S_kl =
    # 2 (M_ik M_jl + M_il M_jk), which covers every primitive Hessian.
    M = np.einsum("tix,tjx->tij", G, G)
    pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)]
    SS = np.empty((len(C), 6, 6))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            SS[:, a, b] = 2.0 * (M[:, i, k] * M[:, j, l] + M[:, i, l] * M[:, j, k])

    PG = np.empty((len(C), N_LOCAL, N_LOCAL))
    PG[:, :6, :6] = SS
    # bubble Hessian = l2*S01 + l0*S12 + l1*S02; element averages of the
    # barycentric weights are 1/3, of their products 1/6 (diag), 1/12 (off)
    bub_pairs = (3, 4, 5)            # S01, S12, S02 in the `pairs` ordering
    PG[:, :6, 6] = SS[:, :, bub_pairs].sum(axis=2) / 3.0
    PG[:, 6, :6] = PG[:, :6, 6]
    w2 = np.full((3, 3), 1.0 / 12.0)
    np.fill_diagonal(w2, 1.0 / 6.0)
    PG[:, 6, 6] = sum(w2[a, b] * SS[:, bub_pairs[a], bub_pairs[b]]
                      for a in range(3) for b in range(3))

    from .element import _PRIM_MASS
    local = beta * PG + _PRIM_MASS[None, :, :]
    K = np.einsum("tai,tab,tbj->tij", C, local, C)
    K *= area[:, None, None]
    return 0.5 * (K + np.swapaxes(K, 1, 2))


def assemble_system(dofmap: DofMap, problem):
    """Assemble (SystemMatrix, load vector) for a ProblemSpec."""
    mesh = dofmap.mesh
    n = dofmap.n_dofs
    beta = problem.beta
    rule = triangle_rule(6)
    P = prim_values(rule.points)              # (q, 7)

    rows, cols, vals = [], [], []
    b = np.zeros(n)
    for start in range(0, mesh.n_elements, _CHUNK):
        sl = slice(start, min(start + _CHUNK, mesh.n_elements))
        K = _element_matrices(dofmap, beta, sl)
        cd = dofmap.cell_dofs[sl]

        ii = np.repeat(cd[:, :, None], N_LOCAL, axis=2)
        jj = np.repeat(cd[:, None, :], N_LOCAL, axis=1)
        keep = (ii >= 0) & (jj >= 0)
        rows.append(ii[keep])
        cols.append(jj[keep])
        vals.append(K[keep])

        # load: int y_d phi - beta int f Delta(phi)
        C = dofmap.C[sl]
        G = mesh.grad_lambda[sl]
        area = mesh.areas[sl]
        X = np.einsum("qk,tkx->tqx", rule.points, mesh.vertices[mesh.elements[sl]])
        yd = np.asarray(problem.y_d(X[..., 0], X[..., 1]), dtype=float)
        phi = np.einsum("tai,qa->tqi", C, P)
        bT = np.einsum("tq,tqi,q->ti", yd, phi, rule.weights)
        if problem.f is not None:
            fv = np.asarray(problem.f(X[..., 0], X[..., 1]), dtype=float)
            if np.any(fv):
                lap = _basis_laplacians(C, G, rule.points)
                bT -= beta * np.einsum("tq,tqi,q->ti", fv, lap, rule.weights)
        bT *= area[:, None]
        keep1 = cd >= 0
        np.add.at(b, cd[keep1], bT[keep1])

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    A.sum_duplicates()
    return SystemMatrix(A, n), b


def _basis_laplacians(C, G, bary):
    """Laplacians of the nodal basis at barycentric points: (t, q, 7)."""
    M = np.einsum("tix,tjx->tij", G, G)
    lap_prim = np.empty((len(C), len(bary), N_LOCAL))
    # trace of the primitive Hessians: 2 M_ii for squares, 2 M_ij for mixed
    const = np.stack([2 * M[:, 0, 0], 2 * M[:, 1, 1], 2 * M[:, 2, 2],
                      2 * M[:, 0, 1], 2 * M[:, 1, 2], 2 * M[:, 0, 2]], axis=1)
    lap_prim[:, :, :6] = const[:, None, :]
    lam = np.asarray(bary)
    lap_prim[:, :, 6] = 2.0 * (np.multiply.outer(M[:, 0, 1], lam[:, 2])
                               + np.multiply.outer(M[:, 1, 2], lam[:, 0])
                               + np.multiply.outer(M[:, 0, 2], lam[:, 1]))
    return np.einsum("tai,tqa->tqi", C, lap_prim)


def element_laplacian_rows(dofmap: DofMap):
    """csr matrix of the exact functionals w -> int_T (-Delta w).

    By the divergence theorem the row for T carries -sign * h_e on each of
    its edge DOFs, where sign is +1 when the global edge normal is outward
    for T.
    """
    mesh = dofmap.mesh
    nt = mesh.n_elements
    gids = mesh.elem_edges                       # (nt, 3)
    sign = np.where(mesh.edge_elements[gids, 0] == np.arange(nt)[:, None], 1.0, -1.0)
    data = -(sign * mesh.edge_lengths[gids]).ravel()
    rows = np.repeat(np.arange(nt), 3)
    cols = dofmap.edge_dof[gids].ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(nt, dofmap.n_dofs))


def assemble_constraints(dofmap: DofMap, problem):
    """Assemble the ConstraintSet for a ProblemSpec."""
    mesh = dofmap.mesh
    state_row = np.zeros(dofmap.n_dofs)
    state_row[dofmap.bubble_dof] = mesh.areas

    if problem.case == "integral":
        rows = element_laplacian_rows(dofmap)
        control_row = np.asarray(rows.sum(axis=0)).ravel()
        f_int = 0.0
        if problem.f is not None:
            f_int = integrate(mesh, problem.f, degree=10)
        return ConstraintSet("integral", state_row, problem.delta2,
                             control_row, problem.delta1 + f_int,
                             None, None, None)
    if problem.case == "box":
        rows = element_laplacian_rows(dofmap)
        rule = triangle_rule(6)
        X = mesh.physical_points(rule.points)
        ua = np.asarray(problem.u_a(X[..., 0], X[..., 1]), dtype=float)
        ub = np.asarray(problem.u_b(X[..., 0], X[..., 1]), dtype=float)
        ua = np.broadcast_to(ua, X.shape[:2])
        ub = np.broadcast_to(ub, X.shape[:2])
        lower = mesh.areas * (ua @ rule.weights)
        upper = mesh.areas * (ub @ rule.weights)
        if np.any(lower >= upper):
            raise AssemblyError("element with Q_T(u_a) >= Q_T(u_b)")
        return ConstraintSet("box", state_row, problem.delta3,
                             None, None, rows, lower, upper,
                             areas=np.array(mesh.areas))
    raise AssemblyError(f"problem case must be 'integral' or 'box', got "
                        f"{problem.case!r}")
