import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morley_ocp.mesh import Mesh, MeshError, bisect, initial_mesh, uniform_refine


def test_unit_cross_counts(unit_cross):
    assert unit_cross.n_elements == 4
    assert unit_cross.n_vertices == 5
    assert unit_cross.n_edges == 8


def test_area_conservation_initial():
    m = initial_mesh((-1.0, -1.0), (1.0, 1.0), 2)
    assert m.areas.sum() == pytest.approx(4.0, rel=1e-14)


def test_min_angle_criss_cross():
    m = initial_mesh(0.0, 1.0, 4)
    assert m.min_angle() == pytest.approx(45.0, abs=1e-9)


def test_degenerate_domain_rejected():
    with pytest.raises(MeshError):
        initial_mesh(1.0, 1.0, 2)
    with pytest.raises(MeshError):
        initial_mesh(0.0, 1.0, 0)


def test_bisect_empty_is_identity(unit_cross):
    assert bisect(unit_cross, []) is unit_cross


def test_bisect_one_element_conforming(unit_cross):
    # the marked element's refinement edge is a boundary cell side, so a
    # single compatible split suffices: 4 -> 5 elements, still conforming
    out = bisect(unit_cross, [0])
    report = out.audit()
    assert out.n_elements > unit_cross.n_elements
    assert report["area"] == pytest.approx(1.0, rel=1e-14)
    # the refined region is covered by strictly newer elements
    assert out.generation.max() == 1
    assert np.count_nonzero(out.generation == 1) == 2


def test_uniform_refinement_preserves_min_angle(unit_cross):
    # right isoceles triangles bisected at the hypotenuse stay similar
    m = unit_cross
    base = m.min_angle()
    for _ in range(5):
        m = bisect(m, range(m.n_elements))
        m.audit()
        assert m.min_angle() >= base - 1e-9
        assert m.areas.sum() == pytest.approx(1.0, rel=1e-12)
    assert m.n_elements == 4 * 2**5


def test_marked_generation_increases(unit_cross):
    m = uniform_refine(unit_cross, 1)
    marked = [0, 3]
    out = bisect(m, marked)
    # marked parents disappear; their area is covered by higher generations
    assert out.n_elements > m.n_elements
    assert out.generation.max() >= m.generation[marked].max() + 1


def test_refinement_edge_is_longest_edge():
    m = initial_mesh(0.0, 1.0, 2)
    for t in range(m.n_elements):
        geo = m.element_geometry(t)
        k = m.refinement_edge[t]
        assert geo["edge_lengths"][k] == pytest.approx(geo["h"], rel=1e-12)


def test_element_geometry_reference(reference_triangle_mesh):
    geo = reference_triangle_mesh.element_geometry(0)
    assert geo["area"] == pytest.approx(0.5, rel=1e-14)
    assert geo["h"] == pytest.approx(np.sqrt(2.0), rel=1e-14)
    # gradient of the first barycentric coordinate of (0,0),(1,0),(0,1)
    assert np.allclose(geo["grad_lambda"][0], [-1.0, -1.0])
    assert np.allclose(geo["grad_lambda"].sum(axis=0), 0.0, atol=1e-14)


def test_grad_lambda_partition_of_unity():
    m = initial_mesh((-1.0, -1.0), (1.0, 1.0), 3)
    assert np.abs(m.grad_lambda.sum(axis=1)).max() < 1e-12


def test_jump_frame_boundary_and_interior(unit_cross):
    m = unit_cross
    for e in range(m.n_edges):
        plus, minus, n = m.edge_jump_frame(e)
        assert np.hypot(*n) == pytest.approx(1.0, rel=1e-14)
        mid = 0.5 * m.vertices[m.edges[e]].sum(axis=0)
        cp = m.vertices[m.elements[plus]].mean(axis=0)
        if minus is None:
            # outward on the boundary
            assert n @ (cp - mid) < 0
        else:
            cm = m.vertices[m.elements[minus]].mean(axis=0)
            assert n @ (cp - mid) < 0 < n @ (cm - mid)
    # determinism: repeated calls give identical frames
    f1 = [m.edge_jump_frame(e) for e in range(m.n_edges)]
    f2 = [m.edge_jump_frame(e) for e in range(m.n_edges)]
    for (p1, m1, n1), (p2, m2, n2) in zip(f1, f2):
        assert p1 == p2 and m1 == m2 and np.array_equal(n1, n2)


def test_normal_flips_with_endpoint_order():
    # relabeling the vertices reverses the canonical edge orientation and
    # with it the stored normal
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    m1 = Mesh.from_arrays(verts, tris)
    perm = np.array([3, 2, 1, 0])  # new id of old vertex i
    inv = np.argsort(perm)
    m2 = Mesh.from_arrays(verts[inv], perm[tris])
    # the shared diagonal is 0-2 in both meshes but with swapped endpoints
    def diag_normal(m):
        for e in range(m.n_edges):
            if not m.boundary_edges[e]:
                return m.edge_normals[e]
        raise AssertionError
    assert np.allclose(diag_normal(m1), -diag_normal(m2))


def test_closure_produces_conforming_mesh(unit_cross):
    m = uniform_refine(unit_cross, 2)
    out = bisect(m, [0])
    out.audit()
    for e in range(out.n_edges):
        plus, minus = out.edge_elements[e]
        assert (minus < 0) == out.boundary_edges[e]


def test_export_text(tmp_path, unit_cross):
    path = tmp_path / "mesh.txt"
    unit_cross.export_text(path)
    lines = path.read_text().strip().splitlines()
    nv, nt = map(int, lines[0].split())
    assert nv == 5 and nt == 4
    assert len(lines) == 1 + nv + nt
    x, y = map(float, lines[1].split())
    assert (x, y) == (0.0, 0.0)


def test_marked_out_of_range(unit_cross):
    with pytest.raises(MeshError):
        bisect(unit_cross, [99])


def test_closure_depth_cap(monkeypatch, unit_cross):
    # with the cap at zero, any recursive closure step must be reported as
    # an incompatible assignment
    import morley_ocp.mesh as mm
    # a non-uniform refinement leaves children whose refinement edges
    # disagree with their unsplit neighbors
    m = bisect(unit_cross, [0])
    needs_closure = None
    for t in range(m.n_elements):
        k = m.refinement_edge[t]
        gid = m.elem_edges[t, k]
        plus, minus = m.edge_elements[gid]
        if minus < 0:
            continue
        nb = minus if plus == t else plus
        knb = m.refinement_edge[nb]
        if m.elem_edges[nb, knb] != gid:
            needs_closure = t
            break
    assert needs_closure is not None
    monkeypatch.setattr(mm, "CLOSURE_DEPTH_CAP", 0)
    with pytest.raises(MeshError):
        mm.bisect(m, [needs_closure])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=10**6),
                min_size=1, max_size=8))
def test_random_refinement_stays_conforming(marks):
    m = initial_mesh(0.0, 1.0, 1)
    for mark in marks:
        m = bisect(m, [mark % m.n_elements])
    report = m.audit()
    assert report["area"] == pytest.approx(1.0, rel=1e-12)
    assert report["min_angle_deg"] >= 45.0 - 1e-9
