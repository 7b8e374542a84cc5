"""Conforming 2D triangulations with newest-vertex-bisection refinement.

A :class:`Mesh` is immutable once built: refinement returns a new mesh.
Every element carries a refinement edge (the edge opposite its newest
vertex); :func:`bisect` performs recursive compatible bisection so the
result is always conforming.

Conventions
-----------
* Element vertices are ordered counter-clockwise; local edge ``k`` is the
  edge opposite local vertex ``k``.
* Global edges store their endpoints with the lower vertex id first.  The
  edge normal is the unit tangent (first endpoint -> second) rotated by
  +90 degrees, except on the boundary where the normal is flipped to point
  outward if necessary.
* For interior edges the "plus" element is the one the normal points away
  from, i.e. the normal points from plus to minus.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

CLOSURE_DEPTH_CAP = 64


class MeshError(Exception):
    """Raised for invalid mesh input or a failed refinement closure."""


class Mesh:
    """Conforming triangulation with NVB bookkeeping.

    Parameters are taken as given (no reordering); use :func:`initial_mesh`
    or :meth:`Mesh.from_arrays` to construct one.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (nt, 3) int array, counter-clockwise vertex ids
    refinement_edge : (nt,) int array, local edge index 0..2
    generation : (nt,) int array
    edges : (ne, 2) int array, endpoint ids with the lower id first
    edge_elements : (ne, 2) int array, [plus, minus]; minus is -1 on the
        boundary
    edge_normals : (ne, 2) float array, unit normals (outward on boundary)
    elem_edges : (nt, 3) int array, global edge id of local edge k
    vertex_on_boundary : (nv,) bool array
    """

    def __init__(self, vertices, elements, refinement_edge, generation):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.refinement_edge = np.ascontiguousarray(refinement_edge, dtype=np.int64)
        self.generation = np.ascontiguousarray(generation, dtype=np.int64)
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must be (nt, 3)")
        self._build_topology()
        for a in (self.vertices, self.elements, self.refinement_edge,
                  self.generation, self.edges, self.edge_elements,
                  self.edge_normals, self.elem_edges, self.vertex_on_boundary):
            a.flags.writeable = False

    # -- construction ------------------------------------------------

    @classmethod
    def from_arrays(cls, vertices, elements):
        """Build a mesh from raw arrays.

        Elements with negative signed area are flipped to counter-clockwise.
        Refinement edges are assigned to the longest edge of each element
        (ties broken by the larger opposite-vertex id); generations start
        at zero.
        """
        vertices = np.asarray(vertices, dtype=float)
        elements = np.array(elements, dtype=np.int64)
        p = vertices[elements]
        sgn = _signed_area(p)
        flip = sgn < 0
        elements[flip] = elements[flip][:, [0, 2, 1]]
        p = vertices[elements]
        if np.any(_signed_area(p) <= 0):
            raise MeshError("degenerate element (zero area)")
        ref = _longest_edge_assignment(vertices, elements)
        gen = np.zeros(len(elements), dtype=np.int64)
        return cls(vertices, elements, ref, gen)

    def _build_topology(self):
        nt = len(self.elements)
        p = self.vertices[self.elements]
        area2 = _signed_area(p)
        if np.any(area2 <= 0):
            raise MeshError("element with non-positive signed area")
        e0 = self.elements[:, [1, 2]]
        e1 = self.elements[:, [2, 0]]
        e2 = self.elements[:, [0, 1]]
        all_edges = np.concatenate([e0, e1, e2])
        keys = np.sort(all_edges, axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        self.edges = uniq
        self.elem_edges = inverse.reshape(3, nt).T.copy()

        ne = len(uniq)
        counts = np.bincount(inverse, minlength=ne)
        if counts.max() > 2:
            raise MeshError("edge shared by more than two elements")

        tang = self.vertices[uniq[:, 1]] - self.vertices[uniq[:, 0]]
        lengths = np.hypot(tang[:, 0], tang[:, 1])
        if np.any(lengths == 0):
            raise MeshError("zero-length edge")
        tang = tang / lengths[:, None]
        normals = np.stack([-tang[:, 1], tang[:, 0]], axis=1)

        adj = np.full((ne, 2), -1, dtype=np.int64)
        slot = np.zeros(ne, dtype=np.int64)
        owner = np.tile(np.arange(nt), 3)
        for gid, t in zip(inverse, owner):
            adj[gid, slot[gid]] = t
            slot[gid] += 1

        centroids = p.mean(axis=1)
        mids = 0.5 * (self.vertices[uniq[:, 0]] + self.vertices[uniq[:, 1]])
        boundary = counts == 1
        # boundary: flip the normal outward if needed; interior: order the
        # pair (plus, minus) so the normal points from plus toward minus.
        s0 = np.einsum("ij,ij->i", normals, centroids[adj[:, 0]] - mids)
        flip_b = boundary & (s0 > 0)
        normals[flip_b] *= -1.0
        swap = (~boundary) & (s0 > 0)
        adj[swap] = adj[swap][:, ::-1]

        self.edge_elements = adj
        self.edge_normals = normals
        self.edge_lengths = lengths
        self._boundary_edges = boundary

        vb = np.zeros(len(self.vertices), dtype=bool)
        vb[uniq[boundary].ravel()] = True
        self.vertex_on_boundary = vb

    # -- sizes and flags ----------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def boundary_edges(self):
        return self._boundary_edges

    @property
    def interior_edges(self):
        return ~self._boundary_edges

    # -- geometry -----------------------------------------------------

    @cached_property
    def areas(self):
        """Element areas (positive)."""
        return 0.5 * _signed_area(self.vertices[self.elements])

    @cached_property
    def h_elements(self):
        """Element diameters h_T (longest edge)."""
        return self.edge_lengths[self.elem_edges].max(axis=1)

    @cached_property
    def grad_lambda(self):
        """(nt, 3, 2) constant gradients of the barycentric coordinates."""
        p = self.vertices[self.elements]
        g = np.empty((self.n_elements, 3, 2))
        twoA = _signed_area(p)[:, None]
        for i in range(3):
            d = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            g[:, i, 0] = -d[:, 1]
            g[:, i, 1] = d[:, 0]
        return g / twoA[:, None]

    @cached_property
    def _bary_matrix(self):
        """(nt, 2, 2) inverse Jacobians used to map x -> (lambda_1, lambda_2)."""
        p = self.vertices[self.elements]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        return np.linalg.inv(J)

    def barycentric(self, elems, points):
        """Barycentric coordinates of physical ``points`` inside ``elems``.

        ``elems`` is (m,) and ``points`` is (m, 2) or (m, q, 2); the result
        appends a coordinate axis of size 3.
        """
        elems = np.asarray(elems, dtype=np.int64)
        points = np.asarray(points, dtype=float)
        v0 = self.vertices[self.elements[elems, 0]]
        M = self._bary_matrix[elems]
        if points.ndim == 3:
            v0 = v0[:, None, :]
            M = M[:, None, :, :]
        lam12 = np.einsum("...xy,...y->...x", M, points - v0)
        lam0 = 1.0 - lam12.sum(axis=-1, keepdims=True)
        return np.concatenate([lam0, lam12], axis=-1)

    def physical_points(self, bary):
        """Physical coordinates of shared barycentric points on all elements.

        ``bary`` is (nq, 3); the result is (nt, nq, 2).
        """
        p = self.vertices[self.elements]
        return np.einsum("qk,tkx->tqx", np.asarray(bary, dtype=float), p)

    def element_geometry(self, t):
        """Geometry queries for one element: area, h_T, barycentric
        gradients, and per-local-edge (length, normal, midpoint)."""
        edges = self.elem_edges[t]
        mids = 0.5 * (self.vertices[self.edges[edges, 0]]
                      + self.vertices[self.edges[edges, 1]])
        return {
            "area": float(self.areas[t]),
            "h": float(self.h_elements[t]),
            "grad_lambda": np.array(self.grad_lambda[t]),
            "edge_lengths": np.array(self.edge_lengths[edges]),
            "edge_normals": np.array(self.edge_normals[edges]),
            "edge_midpoints": mids,
        }

    def edge_jump_frame(self, e):
        """(plus element, minus element or None, unit normal plus->minus)."""
        plus, minus = self.edge_elements[e]
        return int(plus), (None if minus < 0 else int(minus)), np.array(self.edge_normals[e])

    def min_angle(self):
        """Smallest interior angle over all elements, in degrees."""
        p = self.vertices[self.elements]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            na = np.hypot(a[:, 0], a[:, 1])
            nb = np.hypot(b[:, 0], b[:, 1])
            c = np.einsum("ij,ij->i", a, b) / (na * nb)
            angles.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
        return float(np.min(angles))

    def audit(self):
        """Conformity audit; raises MeshError on violation.

        Checks: positive orientation, interior edges shared by exactly two
        elements whose vertex sets contain the edge, boundary consistency.
        Returns a small report dict.
        """
        if np.any(_signed_area(self.vertices[self.elements]) <= 0):
            raise MeshError("audit: non-positive element")
        for e in range(self.n_edges):
            plus, minus = self.edge_elements[e]
            members = [plus] if minus < 0 else [plus, minus]
            if self._boundary_edges[e] != (minus < 0):
                raise MeshError("audit: boundary flag mismatch")
            for t in members:
                if not set(self.edges[e]) <= set(self.elements[t]):
                    raise MeshError("audit: edge endpoints not in adjacent element")
        return {
            "elements": self.n_elements,
            "edges": self.n_edges,
            "area": float(self.areas.sum()),
            "min_angle_deg": self.min_angle(),
        }

    def export_text(self, path):
        """Write the plain-text node/element format.

        First line: vertex and element counts; then one vertex per line
        ("x y") and one element per line ("v0 v1 v2").
        """
        lines = [f"{self.n_vertices} {self.n_elements}"]
        lines += [f"{float(x)!r} {float(y)!r}" for x, y in self.vertices]
        lines += [f"{a} {b} {c}" for a, b, c in self.elements]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def _signed_area(p):
    """Twice the signed area of triangles given as (..., 3, 2) vertices."""
    d1 = p[..., 1, :] - p[..., 0, :]
    d2 = p[..., 2, :] - p[..., 0, :]
    return d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]


def _longest_edge_assignment(vertices, elements):
    """Refinement edge = longest local edge, ties to the larger opposite
    vertex id."""
    nt = len(elements)
    ref = np.zeros(nt, dtype=np.int64)
    lens = np.empty((nt, 3))
    for k in range(3):
        a = elements[:, (k + 1) % 3]
        b = elements[:, (k + 2) % 3]
        d = vertices[a] - vertices[b]
        lens[:, k] = np.hypot(d[:, 0], d[:, 1])
    for t in range(nt):
        m = lens[t].max()
        cand = [k for k in range(3) if lens[t, k] >= m * (1 - 1e-12)]
        ref[t] = max(cand, key=lambda k: elements[t, k])
    return ref


def initial_mesh(lower, upper, subdivisions):
    """Criss-cross triangulation of the axis-aligned square [lower, upper]^2.

    Each of the ``subdivisions**2`` cells is split into four triangles by
    its center.  Every refinement edge is the cell side (the unique longest
    edge), which makes the assignment NVB-compatible.
    """
    n = int(subdivisions)
    if n < 1:
        raise MeshError("subdivisions must be >= 1")
    x0, y0 = (float(lower), float(lower)) if np.isscalar(lower) else map(float, lower)
    x1, y1 = (float(upper), float(upper)) if np.isscalar(upper) else map(float, upper)
    if x1 <= x0 or y1 <= y0:
        raise MeshError("degenerate domain")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    mx, my = np.meshgrid(cx, cy, indexing="xy")
    centers = np.stack([mx.ravel(), my.ravel()], axis=1)
    vertices = np.concatenate([grid, centers])

    def gid(ix, iy):
        return iy * (n + 1) + ix

    nslab = (n + 1) ** 2
    elements = []
    for j in range(n):
        for i in range(n):
            c00, c10 = gid(i, j), gid(i + 1, j)
            c01, c11 = gid(i, j + 1), gid(i + 1, j + 1)
            m = nslab + j * n + i
            elements += [(c00, c10, m), (c10, c11, m), (c11, c01, m), (c01, c00, m)]
    elements = np.array(elements, dtype=np.int64)
    ref = np.full(len(elements), 2, dtype=np.int64)  # cell side opposite the center
    gen = np.zeros(len(elements), dtype=np.int64)
    return Mesh(vertices, elements, ref, gen)


def bisect(mesh, marked):
    """Bisect all ``marked`` elements, closing recursively for conformity.

    Every marked element is bisected at least once; neighbors are bisected
    first whenever the refinement edges disagree.  Returns a new mesh.
    """
    marked = sorted(set(int(t) for t in marked))
    if not marked:
        return mesh
    if marked and (marked[0] < 0 or marked[-1] >= mesh.n_elements):
        raise MeshError("marked ids out of range")

    verts = [tuple(v) for v in mesh.vertices]
    tris = [list(t) for t in mesh.elements]
    ref = list(mesh.refinement_edge)
    gen = list(mesh.generation)
    alive = [True] * len(tris)
    edge2elems = {}
    for t, tri in enumerate(tris):
        for k in range(3):
            key = _ekey(tri[(k + 1) % 3], tri[(k + 2) % 3])
            edge2elems.setdefault(key, set()).add(t)
    midpoints = {}

    def ref_key(t):
        k = ref[t]
        return _ekey(tris[t][(k + 1) % 3], tris[t][(k + 2) % 3])

    def neighbor_across(t, key):
        others = edge2elems.get(key, set()) - {t}
        return next(iter(others)) if others else None

    def midpoint(key):
        m = midpoints.get(key)
        if m is None:
            a, b = key
            verts.append(((verts[a][0] + verts[b][0]) / 2.0,
                          (verts[a][1] + verts[b][1]) / 2.0))
            m = len(verts) - 1
            midpoints[key] = m
        return m

    def split(t, m):
        # refinement edge (a, b), peak p; children keep CCW orientation and
        # get the edges opposite the new vertex as refinement edges.
        k = ref[t]
        a = tris[t][(k + 1) % 3]
        b = tris[t][(k + 2) % 3]
        p = tris[t][k]
        alive[t] = False
        for kk in range(3):
            key = _ekey(tris[t][(kk + 1) % 3], tris[t][(kk + 2) % 3])
            edge2elems[key].discard(t)
        for child, rloc in (([a, m, p], 1), ([m, b, p], 0)):
            tris.append(child)
            ref.append(rloc)
            gen.append(gen[t] + 1)
            alive.append(True)
            tid = len(tris) - 1
            for kk in range(3):
                key = _ekey(child[(kk + 1) % 3], child[(kk + 2) % 3])
                edge2elems.setdefault(key, set()).add(tid)

    def refine(t, depth):
        if depth > CLOSURE_DEPTH_CAP:
            raise MeshError("closure recursion exceeded depth cap "
                            f"{CLOSURE_DEPTH_CAP}; incompatible refinement edges")
        if not alive[t]:
            return
        while True:
            if not alive[t]:
                return  # bisected as a side effect of the recursion
            key = ref_key(t)
            nb = neighbor_across(t, key)
            if nb is None or ref_key(nb) == key:
                break
            refine(nb, depth + 1)
        m = midpoint(key)
        if nb is not None:
            split(nb, m)
        split(t, m)

    for t in marked:
        if alive[t]:
            refine(t, 0)

    keep = [t for t in range(len(tris)) if alive[t]]
    new_elements = np.array([tris[t] for t in keep], dtype=np.int64)
    new_ref = np.array([ref[t] for t in keep], dtype=np.int64)
    new_gen = np.array([gen[t] for t in keep], dtype=np.int64)
    return Mesh(np.array(verts, dtype=float), new_elements, new_ref, new_gen)


def _ekey(a, b):
    return (a, b) if a < b else (b, a)


def uniform_refine(mesh, times=1):
    """Bisect every element ``times`` times (marking all each round)."""
    for _ in range(times):
        mesh = bisect(mesh, range(mesh.n_elements))
    return mesh
