"""Solvers for the discrete variational inequality (constrained QP).

The discrete problem minimizes ``1/2 x'Ax - b'x`` over linear inequality
constraints.  Two structures occur:

* integral case: two scalar rows (state mean, control mean), solved by
  exact enumeration of the four active-set candidates;
* box case: the scalar state row plus per-element control boxes, solved by
  a primal-dual active set iteration with an outer enumeration over the
  state row.

Equality-constrained subproblems use a Schur complement on a cached
factorization of A when few rows are pinned, and a sparse saddle-point
(bordered KKT) factorization when many are.  Multipliers follow the sign
convention ``A x - b - mu * state_row - sum(lambda_T * row_T) = 0`` with
``mu >= 0`` and ``lambda`` nonnegative on lower-active, nonpositive on
upper-active rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import ConstraintSet, SystemMatrix

logger = logging.getLogger("morley_ocp.vi_solver")

# pinned-row count above which equality solves switch to the bordered
# saddle factorization instead of the dense Schur complement
SCHUR_ROW_LIMIT = 64


class SolverError(Exception):
    pass


@dataclass
class SolverConfig:
    linear_tolerance: float = 1e-12
    pdas_max_iterations: int = 50
    pdas_c: float = 1.0
    complementarity_tolerance: float = 1e-9

    def __post_init__(self):
        if min(self.linear_tolerance, self.pdas_max_iterations,
               self.pdas_c, self.complementarity_tolerance) <= 0:
            raise SolverError("solver configuration values must be positive")


@dataclass
class ViSolution:
    """Certified solution of the discrete variational inequality."""

    coefficients: np.ndarray
    mu: float
    lam: float | np.ndarray          # scalar (integral) or per-element (box)
    active_state: bool
    active_control: bool | np.ndarray  # flag, or per-element -1/0/+1 (lower/in/upper)
    iterations: int
    case: str
    schur_condition: float = np.nan
    diagnostics: dict = field(default_factory=dict)

    @property
    def lambda_field(self):
        """Per-element multiplier values (broadcast scalar in the integral
        case)."""
        if np.ndim(self.lam) == 0:
            return None
        return self.lam


def _as_csr(A):
    return A.matrix if isinstance(A, SystemMatrix) else sp.csr_matrix(A)


class SpdSolver:
    """Sparse symmetric factorization with CG + Jacobi fallback.

    ``solve`` refines iteratively until the relative residual meets the
    configured tolerance.
    """

    def __init__(self, A, config: SolverConfig | None = None):
        self.A = _as_csr(A)
        self.config = config or SolverConfig()
        self.n = self.A.shape[0]
        try:
            self._lu = spla.splu(self.A.tocsc())
        except RuntimeError as exc:
            logger.warning("factorization failed (%s); falling back to CG", exc)
            self._lu = None
            d = self.A.diagonal()
            if np.any(d <= 0):
                raise SolverError("factorization breakdown: matrix is not "
                                  "positive definite") from exc
            self._diag = d

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        single = rhs.ndim == 1
        B = rhs[:, None] if single else rhs
        if self._lu is not None:
            # iterative refinement down to the tolerance, or to the float64
            # floor eps * cond(A) for ill-conditioned right-hand sides
            X = self._lu.solve(B)
            best, best_res = X, self._rel_residual(B - self.A @ X, B)
            for _ in range(8):
                if best_res <= self.config.linear_tolerance:
                    break
                X = best + self._lu.solve(B - self.A @ best)
                res = self._rel_residual(B - self.A @ X, B)
                if res >= best_res:
                    break
                best, best_res = X, res
            X = best
        else:
            X = np.empty_like(B)
            M = spla.LinearOperator((self.n, self.n),
                                    matvec=lambda v: v / self._diag)
            for j in range(B.shape[1]):
                x, info = spla.cg(self.A, B[:, j], rtol=self.config.linear_tolerance,
                                  atol=0.0, maxiter=10 * self.n, M=M)
                if info != 0:
                    raise SolverError(f"CG did not converge (info={info})")
                X[:, j] = x
        final = self._rel_residual(B - self.A @ X, B)
        if final > 1e-6:
            raise SolverError(f"linear solve failed (relative residual "
                              f"{final:.2e})")
        if final > 1e2 * self.config.linear_tolerance:
            logger.debug("linear solve stalled at relative residual %.2e "
                         "(conditioning floor)", final)
        return X[:, 0] if single else X

    @staticmethod
    def _rel_residual(R, B):
        denom = np.linalg.norm(B, axis=0)
        num = np.linalg.norm(R, axis=0)
        return float(np.max(num / np.where(denom == 0, 1.0, denom)))


def solve_spd(A, rhs, config=None):
    """Direct SPD solve with certified relative residual."""
    return SpdSolver(A, config).solve(rhs)


def solve_equality_qp(A, b, rows, targets, config=None, solver=None):
    """Minimize 1/2 x'Ax - b'x subject to rows @ x = targets.

    ``rows`` is a (k, n) array or sparse matrix of linearly independent
    functionals.  Returns (x, multipliers, schur_condition) with the
    stationarity convention ``A x - b - rows' @ multipliers = 0``.
    """
    config = config or SolverConfig()
    solver = solver or SpdSolver(A, config)
    Acsr = _as_csr(A)
    targets = np.asarray(targets, dtype=float)
    k = 0 if rows is None else (rows.shape[0] if sp.issparse(rows)
                                else len(rows))
    if k == 0:
        return solver.solve(b), np.zeros(0), np.nan

    R = rows if sp.issparse(rows) else sp.csr_matrix(np.atleast_2d(rows))
    if k <= SCHUR_ROW_LIMIT:
        x0 = solver.solve(b)
        Y = solver.solve(np.asarray(R.todense()).T)       # (n, k)
        S = R @ Y                                         # (k, k)
        S = np.asarray(S)
        cond = float(np.linalg.cond(S))
        try:
            nu = np.linalg.solve(S, targets - R @ x0)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular Schur complement: dependent active "
                              "rows") from exc
        if not np.all(np.isfinite(nu)):
            raise SolverError("singular Schur complement: dependent active rows")
        x = x0 + Y @ nu
        return x, nu, cond

    K = sp.bmat([[Acsr, R.T], [R, None]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SolverError("saddle factorization failed (dependent active "
                          "rows?)") from exc
    n = Acsr.shape[0]
    rhs = np.concatenate([b, targets])
    sol = lu.solve(rhs)
    for _ in range(2):
        res = rhs - K @ sol
        if np.linalg.norm(res) <= config.linear_tolerance * max(1.0, np.linalg.norm(rhs)):
            break
        sol = sol + lu.solve(res)
    x, w = sol[:n], sol[n:]
    return x, -w, np.nan


def _feas_tol(config, bound):
    return config.complementarity_tolerance * max(1.0, abs(bound))


def solve_case_i(A, b, constraints: ConstraintSet, config=None):
    """Exact active-set enumeration for the two-scalar-row case.

    Tries the candidates {}, {state}, {control}, {state, control} in order
    and accepts the first that is primal feasible with correctly signed
    multipliers.
    """
    config = config or SolverConfig()
    if constraints.case != "integral":
        raise SolverError("solve_case_i needs an integral-case ConstraintSet")
    solver = SpdSolver(A, config)
    s, c = constraints.state_row, constraints.control_row
    ds, dc = constraints.state_bound, constraints.control_bound
    bscale = max(1.0, float(np.max(np.abs(b))) if len(b) else 1.0)
    sign_tol = config.complementarity_tolerance * bscale

    candidates = [(), ("state",), ("control",), ("state", "control")]
    for tried, active in enumerate(candidates, start=1):
        rows = []
        targets = []
        if "state" in active:
            rows.append(s)
            targets.append(ds)
        if "control" in active:
            rows.append(c)
            targets.append(dc)
        x, nu, cond = solve_equality_qp(A, b, np.array(rows) if rows else None,
                                        targets, config, solver)
        mu = lam = 0.0
        j = 0
        if "state" in active:
            mu, j = nu[0], 1
        if "control" in active:
            lam = nu[j]
        if mu < -sign_tol or lam < -sign_tol:
            continue
        if "state" not in active and s @ x < ds - _feas_tol(config, ds):
            continue
        if "control" not in active and c @ x < dc - _feas_tol(config, dc):
            continue
        logger.debug("case-i accepted active set %s after %d candidates",
                     active, tried)
        return ViSolution(
            coefficients=x, mu=max(mu, 0.0), lam=max(lam, 0.0),
            active_state="state" in active, active_control="control" in active,
            iterations=tried, case="integral", schur_condition=cond)
    raise SolverError("no active-set candidate is feasible with correctly "
                      "signed multipliers (Slater violation or bad data)")


def solve_case_ii(A, b, constraints: ConstraintSet, config=None):
    """Primal-dual active set iteration for per-element control boxes.

    The scalar state row is handled by an outer enumeration (inactive
    branch first); inside, the standard PDAS switching rule on the
    element-average residuals updates the sets until they repeat.
    """
    config = config or SolverConfig()
    if constraints.case != "box":
        raise SolverError("solve_case_ii needs a box-case ConstraintSet")
    solver = SpdSolver(A, config)
    s, ds = constraints.state_row, constraints.state_bound
    areas = constraints.areas
    if areas is None:
        raise SolverError("box-case ConstraintSet is missing element areas")
    bscale = max(1.0, float(np.max(np.abs(b))) if len(b) else 1.0)
    sign_tol = config.complementarity_tolerance * bscale

    last_error = None
    for state_active in (False, True):
        try:
            result = _pdas(A, b, constraints, config, solver, state_active, areas)
        except SolverError as exc:
            last_error = exc
            continue
        x, mu, lam, act, iters, cond = result
        if state_active and mu < -sign_tol:
            last_error = SolverError("state-active branch produced mu < 0")
            continue
        if not state_active and s @ x < ds - _feas_tol(config, ds):
            last_error = SolverError("state-inactive branch is infeasible")
            continue
        return ViSolution(
            coefficients=x, mu=max(mu, 0.0), lam=lam,
            active_state=state_active, active_control=act,
            iterations=iters, case="box", schur_condition=cond)
    raise SolverError(f"primal-dual active set failed on both state branches: "
                      f"{last_error}")


def _pdas(A, b, constraints, config, solver, state_active, areas):
    Acsr = _as_csr(A)
    s, ds = constraints.state_row, constraints.state_bound
    rows, lower, upper = (constraints.element_rows, constraints.lower,
                          constraints.upper)
    nt = rows.shape[0]
    q_lo = lower / areas
    q_up = upper / areas
    c = config.pdas_c

    lam = np.zeros(nt)
    act_lo = np.zeros(nt, dtype=bool)
    act_up = np.zeros(nt, dtype=bool)
    seen = set()
    cond = np.nan
    for it in range(1, config.pdas_max_iterations + 1):
        ids_lo = np.flatnonzero(act_lo)
        ids_up = np.flatnonzero(act_up)
        pinned = sp.vstack([rows[ids_lo], rows[ids_up]], format="csr") \
            if (len(ids_lo) + len(ids_up)) else None
        blocks = []
        targets = []
        if state_active:
            blocks.append(sp.csr_matrix(s))
            targets.append(ds)
        if pinned is not None:
            blocks.append(pinned)
            targets.extend(lower[ids_lo])
            targets.extend(upper[ids_up])
        R = sp.vstack(blocks, format="csr") if blocks else None
        x, nu, cond = solve_equality_qp(A, b, R, targets, config, solver)

        mu = 0.0
        off = 0
        if state_active:
            mu, off = float(nu[0]), 1
        lam = np.zeros(nt)
        lam[ids_lo] = nu[off:off + len(ids_lo)]
        lam[ids_up] = nu[off + len(ids_lo):]

        r = np.asarray(rows @ x)
        q_r = r / areas
        new_lo = lam + c * (q_lo - q_r) > 0
        new_up = lam + c * (q_up - q_r) < 0
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("pdas it=%d state=%s |A_a|=%d |A_b|=%d stat=%.3e",
                         it, state_active, int(new_lo.sum()),
                         int(new_up.sum()),
                         np.linalg.norm(Acsr @ x - b, np.inf))
        if np.array_equal(new_lo, act_lo) and np.array_equal(new_up, act_up):
            act = np.zeros(nt, dtype=np.int64)
            act[act_lo] = -1
            act[act_up] = 1
            return x, mu, lam, act, it, cond
        sig = (new_lo.tobytes(), new_up.tobytes())
        if sig in seen:
            raise SolverError("primal-dual active set is cycling "
                              "(ill-scaled switching constant?)")
        seen.add((act_lo.tobytes(), act_up.tobytes()))
        act_lo, act_up = new_lo, new_up
    raise SolverError(f"primal-dual active set did not converge in "
                      f"{config.pdas_max_iterations} iterations")


def solve_vi(A, b, constraints, config=None):
    """Dispatch on the constraint case."""
    if constraints.case == "integral":
        return solve_case_i(A, b, constraints, config)
    return solve_case_ii(A, b, constraints, config)


def kkt_residual(A, b, constraints, solution):
    """(stationarity, feasibility, complementarity), all normalized.

    Stationarity is the max-norm residual of the multiplier identity
    divided by the max-norm of the load; feasibility and complementarity
    are normalized by the constraint scales.
    """
    Acsr = _as_csr(A)
    x = solution.coefficients
    b = np.asarray(b, dtype=float)
    s, ds = constraints.state_row, constraints.state_bound
    r = Acsr @ x - b - solution.mu * s
    sval = float(s @ x)
    scale_s = max(1.0, abs(ds))
    feas = max(0.0, (ds - sval) / scale_s)
    comp = abs(solution.mu * (ds - sval)) / scale_s

    if constraints.case == "integral":
        c, dc = constraints.control_row, constraints.control_bound
        r = r - solution.lam * c
        cval = float(c @ x)
        scale_c = max(1.0, abs(dc))
        feas = max(feas, (dc - cval) / scale_c)
        comp = max(comp, abs(solution.lam * (dc - cval)) / scale_c)
    else:
        rows, lower, upper = (constraints.element_rows, constraints.lower,
                              constraints.upper)
        lam = np.asarray(solution.lam)
        r = r - rows.T @ lam
        vals = np.asarray(rows @ x)
        scale = np.maximum(1.0, np.maximum(np.abs(lower), np.abs(upper)))
        feas = max(feas,
                   float(np.max(np.maximum(lower - vals, vals - upper) / scale,
                                initial=0.0)))
        comp_el = np.where(lam > 0, lam * (vals - lower),
                           np.where(lam < 0, lam * (vals - upper), 0.0))
        comp = max(comp, float(np.max(np.abs(comp_el) / scale, initial=0.0)))

    bscale = max(1.0, float(np.max(np.abs(b))) if len(b) else 1.0)
    stationarity = float(np.max(np.abs(r))) / bscale
    return stationarity, max(0.0, feas), comp
