"""SOLVE -> ESTIMATE -> MARK -> REFINE loop with run bookkeeping.

Marking uses the bulk (Doerfler) criterion on squared element indicators:
the minimal prefix of elements, ordered by decreasing indicator (ties by
ascending id), whose sum reaches ``theta`` times the total.  Refinement is
newest-vertex bisection.  Every iteration records DOF count, estimator
parts, errors against the reference solution when available, multiplier
summaries, KKT certificates, and wall time.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .assembly import assemble_constraints, assemble_system
from .element import DofMap, FeFunction
from .estimator import estimate, true_error
from .mesh import bisect, initial_mesh
from .vi_solver import SolverConfig, SolverError, kkt_residual, solve_vi

logger = logging.getLogger("morley_ocp.adaptive")


class AdaptiveError(Exception):
    """Solver failure with the adaptive iteration attached."""

    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class AdaptConfig:
    theta: float = 0.3
    max_dofs: int = 30000
    max_iterations: int = 80
    uniform: bool = False
    initial_subdivisions: int = 4

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if self.initial_subdivisions < 1:
            raise ValueError("initial_subdivisions must be >= 1")


@dataclass
class RunRecord:
    """One adaptive iteration; plain data, serializable via ``asdict``."""

    iteration: int
    dofs: int
    elements: int
    eta_h: float
    eta1: float
    eta2: float
    eta3: float
    eta4: float
    eta5: float
    energy_error: Optional[float] = None
    l2_error: Optional[float] = None
    h2_error: Optional[float] = None
    eff_index: Optional[float] = None
    mu_h: float = 0.0
    lambda_summary: str = ""
    lambda_min: float = 0.0
    lambda_max: float = 0.0
    n_active_lower: int = 0
    n_active_upper: int = 0
    state_active: bool = False
    kkt_stationarity: float = 0.0
    kkt_feasibility: float = 0.0
    kkt_complementarity: float = 0.0
    solver_iterations: int = 0
    osc: float = 0.0
    wall_ms: float = 0.0

    def to_dict(self):
        return asdict(self)


@dataclass
class AdaptiveRun:
    """Record list plus the final mesh/solution for post-processing."""

    records: list
    mesh: object = None
    dofmap: object = None
    solution: object = None
    breakdown: object = None
    problem: object = None

    def __iter__(self):
        return iter(self.records)

    @property
    def solution_function(self):
        return FeFunction(self.solution.coefficients, self.dofmap)


def doerfler_mark(indicators, theta):
    """Minimal bulk-criterion element set: sorted by indicator descending
    (ties by ascending id), the shortest prefix with sum >= theta * total."""
    indicators = np.asarray(indicators, dtype=float)
    if np.any(indicators < 0):
        raise ValueError("indicators must be nonnegative")
    total = indicators.sum()
    if total <= 0.0:
        raise ValueError("all-zero indicators: nothing to mark")
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    order = np.lexsort((np.arange(len(indicators)), -indicators))
    csum = np.cumsum(indicators[order])
    k = int(np.searchsorted(csum, theta * total, side="left"))
    k = min(k, len(indicators) - 1)
    return np.sort(order[:k + 1])


def fit_slope(records, window, field_name="eta_h", x_field="dofs"):
    """Least-squares slope of log(field) vs log(dofs) over the last
    ``window`` records."""
    if window < 2:
        raise ValueError("window must be >= 2")
    if len(records) < window:
        raise ValueError(f"need at least {window} records, got {len(records)}")
    tail = records[-window:]

    def get(r, name):
        return r[name] if isinstance(r, dict) else getattr(r, name)

    x = np.log([get(r, x_field) for r in tail])
    y = np.log([get(r, field_name) for r in tail])
    return float(np.polyfit(x, y, 1)[0])


def _lambda_summary(solution):
    if solution.case == "integral":
        lam = float(solution.lam)
        return repr(lam), lam, lam, int(solution.active_control), 0
    lam = np.asarray(solution.lam)
    act = np.asarray(solution.active_control)
    nlo = int(np.sum(act == -1))
    nup = int(np.sum(act == 1))
    lmin, lmax = float(lam.min()), float(lam.max())
    return f"min={lmin!r};max={lmax!r};nlo={nlo};nup={nup}", lmin, lmax, nlo, nup


def solve_on_mesh(problem, mesh, solver_config=None):
    """One SOLVE+ESTIMATE pass; returns (dofmap, solution, breakdown,
    error_report, kkt)."""
    dofmap = DofMap(mesh)
    A, b = assemble_system(dofmap, problem)
    cons = assemble_constraints(dofmap, problem)
    solution = solve_vi(A, b, cons, solver_config)
    kkt = kkt_residual(A, b, cons, solution)
    breakdown = estimate(dofmap, solution, problem)
    report = None
    if problem.exact is not None:
        report = true_error(dofmap, solution.coefficients, problem.exact,
                            problem.beta, eta_h=breakdown.eta_h)
    return dofmap, solution, breakdown, report, kkt


def adaptive_solve(problem, adapt=None, solver=None):
    """Run the adaptive loop until the DOF budget or iteration cap.

    Returns an AdaptiveRun; solver failures raise AdaptiveError naming the
    iteration.
    """
    adapt = adapt or AdaptConfig()
    solver = solver or SolverConfig()
    lo, hi = problem.square
    mesh = initial_mesh(lo, hi, adapt.initial_subdivisions)
    records = []
    run = AdaptiveRun(records, problem=problem)

    for it in range(adapt.max_iterations):
        t0 = time.perf_counter()
        try:
            dofmap, solution, breakdown, report, kkt = solve_on_mesh(
                problem, mesh, solver)
        except SolverError as exc:
            raise AdaptiveError(str(exc), it) from exc
        wall_ms = 1000.0 * (time.perf_counter() - t0)

        etas = breakdown.etas
        summary, lmin, lmax, nlo, nup = _lambda_summary(solution)
        rec = RunRecord(
            iteration=it, dofs=dofmap.n_dofs, elements=mesh.n_elements,
            eta_h=breakdown.eta_h, eta1=float(etas[0]), eta2=float(etas[1]),
            eta3=float(etas[2]), eta4=float(etas[3]), eta5=float(etas[4]),
            energy_error=None if report is None else report.energy_error,
            l2_error=None if report is None else report.l2_error,
            h2_error=None if report is None else report.h2_broken_seminorm_error,
            eff_index=None if report is None else report.efficiency_index,
            mu_h=float(solution.mu), lambda_summary=summary,
            lambda_min=lmin, lambda_max=lmax,
            n_active_lower=nlo, n_active_upper=nup,
            state_active=bool(solution.active_state),
            kkt_stationarity=kkt[0], kkt_feasibility=kkt[1],
            kkt_complementarity=kkt[2],
            solver_iterations=int(solution.iterations),
            osc=float(np.sqrt(np.sum(breakdown.osc_elem**2))),
            wall_ms=wall_ms,
        )
        records.append(rec)
        run.mesh, run.dofmap, run.breakdown = mesh, dofmap, breakdown
        run.solution = solution
        logger.info("it=%d dofs=%d eta=%.4e err=%s wall=%.0fms",
                    it, rec.dofs, rec.eta_h,
                    "-" if rec.energy_error is None else f"{rec.energy_error:.4e}",
                    wall_ms)

        if dofmap.n_dofs > adapt.max_dofs or it + 1 >= adapt.max_iterations:
            break
        if adapt.uniform:
            marked = np.arange(mesh.n_elements)
        else:
            marked = doerfler_mark(breakdown.element_indicators, adapt.theta)
        mesh = bisect(mesh, marked)

    return run
