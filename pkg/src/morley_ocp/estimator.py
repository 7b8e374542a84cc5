"""Residual a posteriori error estimator and true-error evaluation.

Five contributions: two element terms (interior residual, multiplier term)
and three interior-edge jump terms (normal derivative, second normal
derivative, normal derivative of the Laplacian).  The total satisfies
``eta^2 = eta1^2 + ... + eta5^2``; for marking, each interior-edge term is
split half/half between its two elements.

With a nonzero source the interior residual is
``y_d + mu - y_h - beta * Delta f`` (the piecewise bi-Laplacian of the
discrete space vanishes identically).  Data oscillation is computed and
reported but never added to the total.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .element import DofMap, edge_rule, triangle_rule, prim_values

EDGE_RULE_DEGREE = 5          # Gauss-3: exact for every jump integrand
INTERIOR_RULE_DEGREE = 6
ERROR_RULE_DEGREE = 8


@dataclass
class EstimatorBreakdown:
    """Per-entity estimator contributions (all squared) and totals."""

    eta1_sq_elem: np.ndarray
    eta5_sq_elem: np.ndarray
    eta2_sq_edge: np.ndarray
    eta3_sq_edge: np.ndarray
    eta4_sq_edge: np.ndarray
    element_indicators: np.ndarray   # eta_T^2 with half-edge shares
    osc_elem: np.ndarray             # h_T^2 ||y_d - mean(y_d)||_T, reported only

    @property
    def eta_sq_totals(self):
        return np.array([self.eta1_sq_elem.sum(), self.eta2_sq_edge.sum(),
                         self.eta3_sq_edge.sum(), self.eta4_sq_edge.sum(),
                         self.eta5_sq_elem.sum()])

    @property
    def etas(self):
        return np.sqrt(self.eta_sq_totals)

    @property
    def eta_h(self):
        return float(np.sqrt(self.eta_sq_totals.sum()))


@dataclass
class ErrorReport:
    """Errors against a closed-form reference in the mesh-dependent norm."""

    energy_error: float
    l2_error: float
    h2_broken_seminorm_error: float
    efficiency_index: Optional[float] = None


def _lambda_per_element(solution, nt):
    lam = np.asarray(solution.lam, dtype=float)
    if lam.ndim == 0:
        return np.full(nt, float(lam))
    return lam


def eta_interior(dofmap: DofMap, y, mu, lam_elem, problem):
    """Element terms: interior residual eta1 and multiplier term eta5."""
    mesh = dofmap.mesh
    beta = problem.beta
    rule = triangle_rule(INTERIOR_RULE_DEGREE)
    X = mesh.physical_points(rule.points)
    P = prim_values(rule.points)
    a = dofmap.prim_coefficients(y)
    yh = np.einsum("ti,qi->tq", a, P)
    resid = problem.y_d(X[..., 0], X[..., 1]) + mu - yh
    if problem.f_laplacian is not None:
        resid = resid - beta * problem.f_laplacian(X[..., 0], X[..., 1])
    h = mesh.h_elements
    norm_sq = mesh.areas * ((resid**2) @ rule.weights)
    eta1_sq = h**4 / beta * norm_sq
    # multiplier term with ||lambda_h||_{L2(T)}^2 = lambda_T^2 |T| (the
    # quantity the local lower bound controls); a plain |lambda_T|^2 would
    # freeze the total once a positive-measure control set is active
    eta5_sq = h**2 / beta * np.asarray(lam_elem)**2 * mesh.areas
    return eta1_sq, eta5_sq


def _edge_side_eval(dofmap, y, edge_ids, side, pts_phys):
    mesh = dofmap.mesh
    elems = mesh.edge_elements[edge_ids, side]
    bary = mesh.barycentric(elems, pts_phys)
    _, grad, hess = dofmap.eval_function(y, bary, elems)
    grad_lap = dofmap.grad_laplacian(y, elems)
    return grad, hess, grad_lap


def eta_edges(dofmap: DofMap, y, beta):
    """Interior-edge jump terms eta2 (dw/dn), eta3 (d2w/dn2), eta4
    (d(Delta w)/dn); boundary edges contribute nothing."""
    mesh = dofmap.mesh
    ne = mesh.n_edges
    eta2 = np.zeros(ne)
    eta3 = np.zeros(ne)
    eta4 = np.zeros(ne)
    ids = np.flatnonzero(mesh.interior_edges)
    if len(ids) == 0:
        return eta2, eta3, eta4

    rule = edge_rule(EDGE_RULE_DEGREE)
    a = mesh.vertices[mesh.edges[ids, 0]]
    b = mesh.vertices[mesh.edges[ids, 1]]
    pts = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
    n = mesh.edge_normals[ids]
    h = mesh.edge_lengths[ids]

    grad_p, hess_p, gl_p = _edge_side_eval(dofmap, y, ids, 0, pts)
    grad_m, hess_m, gl_m = _edge_side_eval(dofmap, y, ids, 1, pts)

    # ||jump||^2_{L2(e)} = h_e * sum(w * jump^2); the h_e weights of the
    # three terms are h_e^{-1}, h_e and h_e^3
    jn = np.einsum("eqx,ex->eq", grad_p - grad_m, n)
    eta2[ids] = beta * ((jn**2) @ rule.weights)
    jnn = np.einsum("ex,eqxy,ey->eq", n, hess_p - hess_m, n)
    eta3[ids] = beta * h**2 * ((jnn**2) @ rule.weights)
    jlap = np.einsum("ex,ex->e", gl_p - gl_m, n)
    eta4[ids] = beta * h**4 * jlap**2
    return eta2, eta3, eta4


def data_oscillation(dofmap: DofMap, problem):
    """Osc(y_d; T) = h_T^2 || y_d - mean_T(y_d) ||_{L2(T)} per element."""
    mesh = dofmap.mesh
    rule = triangle_rule(INTERIOR_RULE_DEGREE)
    X = mesh.physical_points(rule.points)
    yd = np.asarray(problem.y_d(X[..., 0], X[..., 1]), dtype=float)
    mean = yd @ rule.weights
    fluct_sq = mesh.areas * (((yd - mean[:, None])**2) @ rule.weights)
    return mesh.h_elements**2 * np.sqrt(fluct_sq)


def estimate(dofmap: DofMap, solution, problem):
    """Assemble the full EstimatorBreakdown for a certified solution."""
    mesh = dofmap.mesh
    lam_elem = _lambda_per_element(solution, mesh.n_elements)
    eta1_sq, eta5_sq = eta_interior(dofmap, solution.coefficients,
                                    solution.mu, lam_elem, problem)
    eta2_sq, eta3_sq, eta4_sq = eta_edges(dofmap, solution.coefficients,
                                          problem.beta)

    indicators = eta1_sq + eta5_sq
    edge_sum = eta2_sq + eta3_sq + eta4_sq
    ids = np.flatnonzero(mesh.interior_edges)
    for side in (0, 1):
        np.add.at(indicators, mesh.edge_elements[ids, side], 0.5 * edge_sum[ids])

    return EstimatorBreakdown(eta1_sq, eta5_sq, eta2_sq, eta3_sq, eta4_sq,
                              indicators, data_oscillation(dofmap, problem))


def broken_norms(dofmap: DofMap, y, exact, beta):
    """(L2, broken-H2 seminorm) of (exact - y) by degree-8 quadrature."""
    mesh = dofmap.mesh
    rule = triangle_rule(ERROR_RULE_DEGREE)
    X = mesh.physical_points(rule.points)
    val, _, hess = dofmap.eval_function(y, rule.points)
    dv = exact.value(X[..., 0], X[..., 1]) - val
    dh = exact.hessian(X[..., 0], X[..., 1]) - hess
    l2_sq = float(mesh.areas @ ((dv**2) @ rule.weights))
    h2_sq = float(mesh.areas @ (np.einsum("tqxy,tqxy->tq", dh, dh) @ rule.weights))
    return float(np.sqrt(l2_sq)), float(np.sqrt(h2_sq))


def true_error(dofmap: DofMap, y, exact, beta, eta_h=None):
    """ErrorReport in the discrete norm; the efficiency index requires the
    estimator total."""
    l2, h2 = broken_norms(dofmap, y, exact, beta)
    energy = float(np.sqrt(beta * h2**2 + l2**2))
    eff = None if eta_h is None or energy == 0.0 else float(eta_h / energy)
    return ErrorReport(energy, l2, h2, eff)
