import numpy as np
import pytest

from morley_ocp.adaptive import (AdaptConfig, RunRecord, adaptive_solve,
                                 doerfler_mark, fit_slope)
from morley_ocp.problems import example, manufactured


def _rec(i, dofs, eta):
    return RunRecord(iteration=i, dofs=dofs, elements=dofs, eta_h=eta,
                     eta1=0, eta2=0, eta3=0, eta4=0, eta5=0)


# -- marking ---------------------------------------------------------------

def test_doerfler_example():
    marked = doerfler_mark([9.0, 4.0, 1.0, 1.0], 0.3)
    assert list(marked) == [0]


def test_doerfler_near_one_marks_all_nonzero():
    ind = np.array([5.0, 0.0, 3.0, 2.0])
    marked = doerfler_mark(ind, 0.999)
    assert set(marked) == {0, 2, 3}


def test_doerfler_relabeling_equivariance():
    rng = np.random.default_rng(0)
    ind = rng.uniform(0, 1, size=37)
    ind[rng.choice(37, size=5, replace=False)] = 0.5  # force ties
    marked = doerfler_mark(ind, 0.41)
    perm = rng.permutation(37)
    ind2 = np.empty_like(ind)
    ind2[perm] = ind                    # new index of old element i
    marked2 = doerfler_mark(ind2, 0.41)
    # same mass is selected either way
    assert ind[marked].sum() == pytest.approx(ind2[marked2].sum(), rel=1e-13)
    assert len(marked) == len(marked2)


def test_doerfler_minimality():
    rng = np.random.default_rng(1)
    ind = rng.uniform(0.1, 1.0, size=50)
    theta = 0.3
    marked = doerfler_mark(ind, theta)
    total = ind.sum()
    assert ind[marked].sum() >= theta * total
    smallest = marked[np.argmin(ind[marked])]
    rest = [t for t in marked if t != smallest]
    assert ind[rest].sum() < theta * total


def test_doerfler_rejects_bad_input():
    with pytest.raises(ValueError):
        doerfler_mark([0.0, 0.0], 0.3)
    with pytest.raises(ValueError):
        doerfler_mark([1.0], 1.5)
    with pytest.raises(ValueError):
        doerfler_mark([-1.0, 2.0], 0.3)


# -- slope fitting -----------------------------------------------------------

def test_fit_slope_exact_half():
    recs = [_rec(i, d, d**-0.5) for i, d in enumerate([10, 20, 40, 80, 160])]
    assert fit_slope(recs, 5) == pytest.approx(-0.5, abs=1e-12)


def test_fit_slope_constant_and_linear():
    recs = [_rec(i, d, 7.0) for i, d in enumerate([10, 100, 1000])]
    assert fit_slope(recs, 3) == pytest.approx(0.0, abs=1e-12)
    recs = [_rec(i, d, 5.0 / d) for i, d in enumerate([10, 100, 1000])]
    assert fit_slope(recs, 3) == pytest.approx(-1.0, abs=1e-12)


def test_fit_slope_window_validation():
    recs = [_rec(0, 10, 1.0)]
    with pytest.raises(ValueError):
        fit_slope(recs, 2)
    with pytest.raises(ValueError):
        fit_slope(recs * 3, 1)


# -- adaptive loop -----------------------------------------------------------

def test_single_iteration_run():
    run = adaptive_solve(manufactured(0),
                         AdaptConfig(max_iterations=1, initial_subdivisions=2))
    assert len(run.records) == 1
    assert run.mesh.n_elements == 16   # initial criss-cross, never refined


def test_dofs_increase_and_meshes_conform():
    run = adaptive_solve(manufactured(1, active_state=True),
                         AdaptConfig(max_dofs=800, initial_subdivisions=1))
    dofs = [r.dofs for r in run.records]
    assert all(b > a for a, b in zip(dofs, dofs[1:]))
    assert dofs[-1] > 800
    run.mesh.audit()
    assert all(r.kkt_stationarity <= 1e-8 for r in run.records)


def test_deterministic_records():
    cfg = AdaptConfig(max_dofs=600, initial_subdivisions=1)
    r1 = adaptive_solve(manufactured(2), cfg).records
    r2 = adaptive_solve(manufactured(2), cfg).records
    assert len(r1) == len(r2)
    for a, b in zip(r1, r2):
        da, db = a.to_dict(), b.to_dict()
        da.pop("wall_ms")
        db.pop("wall_ms")
        assert da == db


def test_uniform_mode_matches_slope():
    # smooth data on a convex domain: uniform refinement is optimal too;
    # the error slope is clean (-0.50 measured), the estimator still
    # carries the decaying data-term transient and may only be steeper
    run = adaptive_solve(example(1),
                         AdaptConfig(uniform=True, max_dofs=10000,
                                     initial_subdivisions=2))
    dofs = [r.dofs for r in run.records]
    assert dofs[-1] > 10000
    s_err = fit_slope(run.records, 3, "energy_error")
    assert -0.65 <= s_err <= -0.35
    assert fit_slope(run.records, 3) <= -0.35
