"""Benchmark problem definitions and a manufactured-problem builder.

Each problem provides closed-form data closures (vectorized over numpy
arrays): the target state ``y_d``, the source ``f`` with its analytic
Laplacian, the constraint data, and optionally the exact solution with
derivatives.  Four named problems (ex1..ex4) plus seeded manufactured
problems for solver tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

PI = np.pi

Field2 = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ProblemError(Exception):
    pass


@dataclass
class ExactSolution:
    """Closed-form reference solution with derivatives."""

    value: Field2
    gradient: Field2                 # returns (..., 2)
    hessian: Field2                  # returns (..., 2, 2)
    control: Optional[Field2] = None
    adjoint: Optional[Field2] = None


@dataclass
class ProblemSpec:
    """Data of one distributed control problem in reduced form.

    ``case`` selects the constraint structure: "integral" couples the
    scalar state bound ``delta2`` with the scalar control bound ``delta1``;
    "box" couples the scalar state bound ``delta3`` with per-element
    control boxes ``u_a <= -Delta y <= u_b``.
    """

    name: str
    domain: tuple                    # (x0, y0, x1, y1)
    beta: float
    y_d: Field2
    f: Optional[Field2]
    f_laplacian: Optional[Field2]
    case: str
    delta1: Optional[float] = None
    delta2: Optional[float] = None
    delta3: Optional[float] = None
    u_a: Optional[Field2] = None
    u_b: Optional[Field2] = None
    exact: Optional[ExactSolution] = None
    multipliers: dict = field(default_factory=dict)
    notes: str = ""

    def __post_init__(self):
        if self.beta <= 0:
            raise ProblemError("beta must be positive")
        if self.case == "integral":
            if self.delta1 is None or self.delta2 is None:
                raise ProblemError("integral case needs delta1 and delta2")
            if self.delta3 is not None or self.u_a is not None or self.u_b is not None:
                raise ProblemError("integral case must not carry box data")
        elif self.case == "box":
            if self.delta3 is None or self.u_a is None or self.u_b is None:
                raise ProblemError("box case needs delta3, u_a, u_b")
            if self.delta1 is not None or self.delta2 is not None:
                raise ProblemError("box case must not carry integral bounds")
        else:
            raise ProblemError(f"unknown case {self.case!r}")

    @property
    def square(self):
        x0, y0, x1, y1 = self.domain
        return (x0, y0), (x1, y1)


def example(k):
    """The four benchmark problems, selectable as 1..4 (or "ex1".."ex4")."""
    if isinstance(k, str):
        k = int(k.removeprefix("ex"))
    builders = {1: _example1, 2: _example2, 3: _example3, 4: _example4}
    if k not in builders:
        raise ProblemError(f"unknown example id {k!r}")
    return builders[k]()


def _example1():
    # adjoint p = sin(2 pi x) sin(2 pi y) + (3/8) sin(2 pi x) sin(4 pi y);
    # state y = p, control u = -p, beta = 1 on the unit square
    c = 3.0 / 8.0

    def s1(x, y):
        return np.sin(2 * PI * x) * np.sin(2 * PI * y)

    def s2(x, y):
        return np.sin(2 * PI * x) * np.sin(4 * PI * y)

    def p(x, y):
        return s1(x, y) + c * s2(x, y)

    def lap_p(x, y):
        return -8 * PI**2 * s1(x, y) - c * 20 * PI**2 * s2(x, y)

    def bilap_p(x, y):
        return 64 * PI**4 * s1(x, y) + c * 400 * PI**4 * s2(x, y)

    def grad_p(x, y):
        gx = 2 * PI * np.cos(2 * PI * x) * (np.sin(2 * PI * y)
                                            + c * np.sin(4 * PI * y))
        gy = (2 * PI * np.sin(2 * PI * x) * np.cos(2 * PI * y)
              + c * 4 * PI * np.sin(2 * PI * x) * np.cos(4 * PI * y))
        return np.stack([gx, gy], axis=-1)

    def hess_p(x, y):
        hxx = -4 * PI**2 * (s1(x, y) + c * s2(x, y))
        hxy = (4 * PI**2 * np.cos(2 * PI * x) * np.cos(2 * PI * y)
               + c * 8 * PI**2 * np.cos(2 * PI * x) * np.cos(4 * PI * y))
        hyy = -4 * PI**2 * s1(x, y) - c * 16 * PI**2 * s2(x, y)
        return _sym2(hxx, hxy, hyy)

    return ProblemSpec(
        name="ex1",
        domain=(0.0, 0.0, 1.0, 1.0),
        beta=1.0,
        y_d=lambda x, y: p(x, y) + lap_p(x, y) - 0.4,
        f=lambda x, y: -lap_p(x, y) + p(x, y),
        f_laplacian=lambda x, y: -bilap_p(x, y) + lap_p(x, y),
        case="integral",
        delta1=0.0,
        delta2=-0.4,
        exact=ExactSolution(p, grad_p, hess_p,
                            control=lambda x, y: -p(x, y), adjoint=p),
        notes="integral state and control constraints; the reference "
              "formulas satisfy the stationarity identity with mu = 0.4 at "
              "a state bound of 0, so with the bound -0.4 the reference is "
              "a near-solution rather than the exact optimum",
    )


def _example2():
    # p = sin(pi x) sin(pi y), y = 2 pi^2 p, y_d = 0, beta = 1; the control
    # constraint is active with multiplier 4/pi^2, the state constraint is
    # slack (control-only problem).
    def s(x, y):
        return np.sin(PI * x) * np.sin(PI * y)

    def yv(x, y):
        return 2 * PI**2 * s(x, y)

    def grad_y(x, y):
        return np.stack([2 * PI**3 * np.cos(PI * x) * np.sin(PI * y),
                         2 * PI**3 * np.sin(PI * x) * np.cos(PI * y)], axis=-1)

    def hess_y(x, y):
        hxx = -2 * PI**4 * s(x, y)
        hxy = 2 * PI**4 * np.cos(PI * x) * np.cos(PI * y)
        return _sym2(hxx, hxy, hxx)

    return ProblemSpec(
        name="ex2",
        domain=(0.0, 0.0, 1.0, 1.0),
        beta=1.0,
        y_d=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        f=lambda x, y: (4 * PI**4 + 1) * s(x, y) - 4 / PI**2,
        f_laplacian=lambda x, y: -(4 * PI**4 + 1) * 2 * PI**2 * s(x, y),
        case="integral",
        delta1=0.0,
        delta2=-100.0,
        exact=ExactSolution(yv, grad_y, hess_y,
                            control=lambda x, y: 4 / PI**2 - s(x, y),
                            adjoint=s),
        multipliers={"mu": 0.0, "lambda": 4 / PI**2},
        notes="purely integral control constraint: the state bound is set "
              "slack (-100, the reference state has mean 8) so the printed "
              "closed form is the exact optimum",
    )


def _example3():
    # y = -sin(pi x) sin(pi y) / (2 pi^2) on (-1,1)^2; both constraints
    # active, mu = 0.6, lambda = 0.
    def s(x, y):
        return np.sin(PI * x) * np.sin(PI * y)

    def yv(x, y):
        return -s(x, y) / (2 * PI**2)

    def grad_y(x, y):
        return np.stack([-np.cos(PI * x) * np.sin(PI * y) / (2 * PI),
                         -np.sin(PI * x) * np.cos(PI * y) / (2 * PI)], axis=-1)

    def hess_y(x, y):
        hxx = 0.5 * s(x, y)
        hxy = -0.5 * np.cos(PI * x) * np.cos(PI * y)
        return _sym2(hxx, hxy, hxx)

    return ProblemSpec(
        name="ex3",
        domain=(-1.0, -1.0, 1.0, 1.0),
        beta=1.0,
        y_d=lambda x, y: -(2 * PI**2 + 1 / (2 * PI**2)) * s(x, y) - 0.6,
        f=None,
        f_laplacian=None,
        case="integral",
        delta1=0.0,
        delta2=0.0,
        exact=ExactSolution(yv, grad_y, hess_y,
                            control=lambda x, y: -s(x, y), adjoint=s),
        multipliers={"mu": 0.6, "lambda": 0.0},
        notes="integral state and control constraints, both active",
    )


def _example4():
    # pointwise control box 0 <= u <= 30 with a small beta; no closed-form
    # solution.
    return ProblemSpec(
        name="ex4",
        domain=(0.0, 0.0, 1.0, 1.0),
        beta=0.01,
        y_d=lambda x, y: 10.0 * (np.sin(PI * x) + np.sin(PI * y)),
        f=None,
        f_laplacian=None,
        case="box",
        delta3=0.0,
        u_a=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        u_b=lambda x, y: np.full_like(np.asarray(x, dtype=float), 30.0),
        exact=None,
        notes="integral state constraint with pointwise control bounds",
    )


def _sym2(hxx, hxy, hyy):
    h = np.empty(np.shape(hxx) + (2, 2))
    h[..., 0, 0] = hxx
    h[..., 0, 1] = h[..., 1, 0] = hxy
    h[..., 1, 1] = hyy
    return h


def _sine_series(modes, coeffs):
    """Closures for sum_k a_k sin(i pi x) sin(j pi y) on the unit square."""
    modes = [(int(i), int(j)) for i, j in modes]
    coeffs = [float(a) for a in coeffs]

    def value(x, y):
        return sum(a * np.sin(i * PI * x) * np.sin(j * PI * y)
                   for (i, j), a in zip(modes, coeffs))

    def gradient(x, y):
        gx = sum(a * i * PI * np.cos(i * PI * x) * np.sin(j * PI * y)
                 for (i, j), a in zip(modes, coeffs))
        gy = sum(a * j * PI * np.sin(i * PI * x) * np.cos(j * PI * y)
                 for (i, j), a in zip(modes, coeffs))
        return np.stack([gx, gy], axis=-1)

    def hessian(x, y):
        hxx = sum(-a * (i * PI) ** 2 * np.sin(i * PI * x) * np.sin(j * PI * y)
                  for (i, j), a in zip(modes, coeffs))
        hxy = sum(a * i * j * PI**2 * np.cos(i * PI * x) * np.cos(j * PI * y)
                  for (i, j), a in zip(modes, coeffs))
        hyy = sum(-a * (j * PI) ** 2 * np.sin(i * PI * x) * np.sin(j * PI * y)
                  for (i, j), a in zip(modes, coeffs))
        return _sym2(hxx, hxy, hyy)

    def laplacian(x, y):
        return sum(-a * (i * i + j * j) * PI**2
                   * np.sin(i * PI * x) * np.sin(j * PI * y)
                   for (i, j), a in zip(modes, coeffs))

    def bilaplacian(x, y):
        return sum(a * ((i * i + j * j) * PI**2) ** 2
                   * np.sin(i * PI * x) * np.sin(j * PI * y)
                   for (i, j), a in zip(modes, coeffs))

    return value, gradient, hessian, laplacian, bilaplacian


def _sine_integral(i):
    """int_0^1 sin(i pi t) dt."""
    return (1.0 - np.cos(i * PI)) / (i * PI)


def manufactured(seed, active_state=False):
    """Seeded random smooth problem on the unit square, built backwards.

    The data are chosen so the reference state is the exact optimum: with
    ``active_state=False`` both constraints are slack (all multipliers
    zero); otherwise the state constraint is exactly active with a known
    positive multiplier, stored in ``multipliers["mu"]``.
    """
    rng = np.random.default_rng(seed)
    # low modes keep the backward-built data (containing the bilaplacian)
    # at a scale coarse meshes can resolve
    pool = [(1, 1), (1, 2), (2, 1), (2, 2)]
    idx = rng.choice(len(pool), size=2, replace=False)
    modes = [pool[i] for i in idx]
    coeffs = rng.uniform(0.2, 0.8, size=2) * rng.choice([-1.0, 1.0], size=2)
    value, gradient, hessian, laplacian, bilaplacian = _sine_series(modes, coeffs)

    beta = 1.0
    # active variant: the unconstrained minimizer undershoots the mean
    # bound by mu times an O(1) factor, so a mu of order one keeps the
    # constraint active on coarse meshes already
    mu = float(rng.uniform(1.0, 3.0)) if active_state else 0.0
    mean_y = sum(a * _sine_integral(i) * _sine_integral(j)
                 for (i, j), a in zip(modes, coeffs))
    mean_neg_lap = sum(a * (i * i + j * j) * PI**2
                       * _sine_integral(i) * _sine_integral(j)
                       for (i, j), a in zip(modes, coeffs))

    def y_d(x, y):
        return beta * bilaplacian(x, y) + value(x, y) - mu

    return ProblemSpec(
        name=f"manufactured-{seed}" + ("-active" if active_state else ""),
        domain=(0.0, 0.0, 1.0, 1.0),
        beta=beta,
        y_d=y_d,
        f=None,
        f_laplacian=None,
        case="integral",
        delta1=float(mean_neg_lap) - 1.0e3,
        delta2=float(mean_y) if active_state else float(mean_y) - 10.0,
        exact=ExactSolution(value, gradient, hessian,
                            control=lambda x, y: -laplacian(x, y)),
        multipliers={"mu": mu, "lambda": 0.0},
    )


def slater_margins(problem, n=64):
    """Margins of the strict/weak feasibility of a smooth candidate.

    Returns (state margin, control margin) for the first candidate among
    {exact state, exact state + positive bump} with a positive state
    margin; used to check that the integral-case data admit a Slater point.
    """
    if problem.case != "integral":
        raise ProblemError("Slater check is defined for the integral case")
    if problem.exact is None:
        raise ProblemError("no candidate available")
    x0, y0, x1, y1 = problem.domain
    gx, gw = np.polynomial.legendre.leggauss(n)
    xs = 0.5 * (x1 - x0) * (gx + 1) + x0
    ys = 0.5 * (y1 - y0) * (gx + 1) + y0
    W = 0.25 * (x1 - x0) * (y1 - y0) * np.outer(gw, gw)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    def bump_value(x, y):
        return (np.sin(PI * (x - x0) / (x1 - x0))
                * np.sin(PI * (y - y0) / (y1 - y0)))

    def bump_neg_lap(x, y):
        return (PI**2 / (x1 - x0) ** 2 + PI**2 / (y1 - y0) ** 2) * bump_value(x, y)

    f_int = 0.0
    if problem.f is not None:
        f_int = float((W * problem.f(X, Y)).sum())

    def neg_lap_exact(x, y):
        h = problem.exact.hessian(x, y)
        return -(h[..., 0, 0] + h[..., 1, 1])

    for scale in (0.0, 1.0, 4.0):
        sm = float((W * (problem.exact.value(X, Y) + scale * bump_value(X, Y))).sum())
        cm = float((W * (neg_lap_exact(X, Y) + scale * bump_neg_lap(X, Y))).sum())
        state_margin = sm - problem.delta2
        control_margin = cm - (problem.delta1 + f_int)
        if state_margin > 0 and control_margin >= -1e-10:
            return state_margin, control_margin
    return state_margin, control_margin
