"""Independent brute-force oracles for cross-checking the package.

Everything here is built from scratch on purpose: physical-coordinate
tensor Gauss quadrature, monomial shape-function construction by solving
the local dual systems, dense assembly, estimator terms by direct
quadrature, and two independent optimizers (accelerated projected
gradient, exhaustive active-set enumeration).  Only mesh/DOF bookkeeping
conventions are taken from the package, since those conventions are what
is being verified.
"""

import numpy as np


# ---------------------------------------------------------------------
# quadrature in physical coordinates
# ---------------------------------------------------------------------

def gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def tri_quad(p0, p1, p2, n=6):
    """Tensor Gauss rule on a physical triangle (exact to degree 2n-2
    total); returns (points (m, 2), weights summing to the area)."""
    u, wu = gauss01(n)
    v, wv = gauss01(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    # x(u, v) = (1-u) p0 + u [(1-v) p1 + v p2]; |J| = 2 A u
    pts = ((1 - U)[..., None] * p0 + (U * (1 - V))[..., None] * p1
           + (U * V)[..., None] * p2).reshape(-1, 2)
    area2 = abs((p1[0] - p0[0]) * (p2[1] - p0[1])
                - (p1[1] - p0[1]) * (p2[0] - p0[0]))
    w = (WU * WV * U * area2).reshape(-1)
    return pts, w


def edge_quad(a, b, n=6):
    """Gauss rule on the segment [a, b]; weights sum to its length."""
    t, w = gauss01(n)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    return pts, w * np.hypot(*(b - a))


# ---------------------------------------------------------------------
# local shape functions in monomials
# ---------------------------------------------------------------------

def _barycentric_affine(p):
    """Coefficient rows (a, b, c) with lambda_i(x, y) = a + b x + c y."""
    M = np.column_stack([np.ones(3), p[:, 0], p[:, 1]])
    return np.linalg.inv(M).T


class OracleElement:
    """Shape functions of one element, built independently in monomials.

    Generators: [1, x, y, x^2, xy, y^2, l0*l1*l2].  The seven DOFs (three
    vertex values, three global-normal edge means, element average) are
    applied with the oracle's own quadrature; the dual basis solves the
    7x7 system.
    """

    def __init__(self, mesh, t, nquad=8):
        self.mesh = mesh
        self.t = t
        self.p = mesh.vertices[mesh.elements[t]]
        self.lam_rows = _barycentric_affine(self.p)   # (3, 3): a + b x + c y
        self.nquad = nquad
        D = np.zeros((7, 7))
        for j in range(7):
            D[:3, j] = [self._gen_value(j, self.p[i]) for i in range(3)]
            for k in range(3):
                gid = mesh.elem_edges[t, k]
                a, b = mesh.vertices[mesh.edges[gid]]
                n = mesh.edge_normals[gid]
                pts, w = edge_quad(a, b, nquad)
                grads = np.array([self._gen_grad(j, q) for q in pts])
                D[3 + k, j] = (grads @ n) @ w / w.sum()
            pts, w = tri_quad(*self.p, nquad)
            vals = np.array([self._gen_value(j, q) for q in pts])
            D[6, j] = vals @ w / w.sum()
        self.dual = np.linalg.inv(D)   # columns: shape functions

    # generator evaluation -------------------------------------------------
    def _lam(self, q):
        return self.lam_rows @ np.array([1.0, q[0], q[1]])

    def _lam_grad(self):
        return self.lam_rows[:, 1:]

    def _gen_value(self, j, q):
        x, y = q
        if j < 6:
            return [1.0, x, y, x * x, x * y, y * y][j]
        return float(np.prod(self._lam(q)))

    def _gen_grad(self, j, q):
        x, y = q
        if j < 6:
            return np.array([[0, 0], [1, 0], [0, 1], [2 * x, 0],
                             [y, x], [0, 2 * y]][j], dtype=float)
        l = self._lam(q)
        G = self._lam_grad()
        return l[1] * l[2] * G[0] + l[0] * l[2] * G[1] + l[0] * l[1] * G[2]

    def _gen_hess(self, j, q):
        if j < 6:
            H = np.zeros((2, 2))
            if j == 3:
                H[0, 0] = 2.0
            elif j == 4:
                H[0, 1] = H[1, 0] = 1.0
            elif j == 5:
                H[1, 1] = 2.0
            return H
        l = self._lam(q)
        G = self._lam_grad()
        H = np.zeros((2, 2))
        for (i, jj, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            H += l[k] * (np.outer(G[i], G[jj]) + np.outer(G[jj], G[i]))
        return H

    # shape-function evaluation --------------------------------------------
    def shape_value(self, i, q):
        return sum(self.dual[j, i] * self._gen_value(j, q) for j in range(7))

    def shape_grad(self, i, q):
        return sum(self.dual[j, i] * self._gen_grad(j, q) for j in range(7))

    def shape_hess(self, i, q):
        return sum(self.dual[j, i] * self._gen_hess(j, q) for j in range(7))

    def function_value(self, coeffs_local, q):
        return sum(c * self.shape_value(i, q)
                   for i, c in enumerate(coeffs_local))

    def function_grad(self, coeffs_local, q):
        return sum(c * self.shape_grad(i, q)
                   for i, c in enumerate(coeffs_local))

    def function_hess(self, coeffs_local, q):
        return sum(c * self.shape_hess(i, q)
                   for i, c in enumerate(coeffs_local))


def local_coeffs(dofmap, u, t):
    cd = dofmap.cell_dofs[t]
    return np.array([0.0 if d < 0 else u[d] for d in cd])


def assemble_dense(mesh, dofmap, beta, nquad=8):
    """Dense stiffness-plus-mass matrix by direct quadrature."""
    n = dofmap.n_dofs
    A = np.zeros((n, n))
    for t in range(mesh.n_elements):
        el = OracleElement(mesh, t, nquad)
        pts, w = tri_quad(*el.p, nquad)
        K = np.zeros((7, 7))
        for q, wq in zip(pts, w):
            H = [el.shape_hess(i, q) for i in range(7)]
            V = [el.shape_value(i, q) for i in range(7)]
            for i in range(7):
                for j in range(7):
                    K[i, j] += wq * (beta * np.tensordot(H[i], H[j]) + V[i] * V[j])
        cd = dofmap.cell_dofs[t]
        for i in range(7):
            for j in range(7):
                if cd[i] >= 0 and cd[j] >= 0:
                    A[cd[i], cd[j]] += K[i, j]
    return A


def estimator_terms(mesh, dofmap, u, mu, lam_elem, problem, nquad=8):
    """All five squared estimator totals by direct quadrature."""
    beta = problem.beta
    eta1 = eta5 = 0.0
    els = [OracleElement(mesh, t, nquad) for t in range(mesh.n_elements)]
    for t, el in enumerate(els):
        pts, w = tri_quad(*el.p, nquad)
        cl = local_coeffs(dofmap, u, t)
        acc = 0.0
        for q, wq in zip(pts, w):
            r = problem.y_d(q[0], q[1]) + mu - el.function_value(cl, q)
            if problem.f_laplacian is not None:
                r -= beta * problem.f_laplacian(q[0], q[1])
            acc += wq * r * r
        h = mesh.h_elements[t]
        eta1 += h**4 / beta * acc
        eta5 += h**2 / beta * lam_elem[t]**2 * mesh.areas[t]
    eta2 = eta3 = eta4 = 0.0
    for e in range(mesh.n_edges):
        plus, minus = mesh.edge_elements[e]
        if minus < 0:
            continue
        a, b = mesh.vertices[mesh.edges[e]]
        nrm = mesh.edge_normals[e]
        h = mesh.edge_lengths[e]
        pts, w = edge_quad(a, b, nquad)
        cp = local_coeffs(dofmap, u, plus)
        cm = local_coeffs(dofmap, u, minus)
        j2 = j3 = 0.0
        for q, wq in zip(pts, w):
            gj = els[plus].function_grad(cp, q) - els[minus].function_grad(cm, q)
            hj = els[plus].function_hess(cp, q) - els[minus].function_hess(cm, q)
            j2 += wq * (gj @ nrm) ** 2
            j3 += wq * (nrm @ hj @ nrm) ** 2
        eta2 += beta / h * j2
        eta3 += beta * h * j3
        # d(Delta w)/dn is constant per element: the local Laplacian is
        # affine, so fitting it at the three vertices is exact
        gl_p = _affine_gradient(els[plus], cp)
        gl_m = _affine_gradient(els[minus], cm)
        eta4 += beta * h**3 * h * ((gl_p - gl_m) @ nrm) ** 2
    return eta1, eta2, eta3, eta4, eta5


def _affine_gradient(el, coeffs_local):
    """Gradient of the (affine) element-wise Laplacian."""
    vals = [np.trace(el.function_hess(coeffs_local, q)) for q in el.p]
    M = np.column_stack([np.ones(3), el.p[:, 0], el.p[:, 1]])
    abc = np.linalg.solve(M, vals)
    return abc[1:]


# ---------------------------------------------------------------------
# optimization oracles
# ---------------------------------------------------------------------

def _project_two_halfspaces(x, rows, bounds):
    """Euclidean projection onto {r_k . x >= b_k, k in rows}."""
    for _ in range(64):
        viol = [k for k in range(len(rows)) if rows[k] @ x < bounds[k] - 1e-13]
        if not viol:
            return x
        if len(viol) == 1:
            r, bd = rows[viol[0]], bounds[viol[0]]
            x = x + (bd - r @ x) / (r @ r) * r
        else:
            R = np.array([rows[k] for k in viol])
            bb = np.array([bounds[k] for k in viol])
            lam = np.linalg.solve(R @ R.T, bb - R @ x)
            x = x + R.T @ lam
    return x


def projected_gradient(A, b, rows, bounds, tol=1e-11, max_iter=200000):
    """Accelerated projected gradient (with function-value restarts) for
    min 1/2 x'Ax - b'x over {rows @ x >= bounds}.

    The iteration identifies the active face; a terminal equality solve on
    that face (dense numpy) polishes the arithmetic.  The polished point
    is verified to be a fixed point of the projected-gradient map.
    """
    A = np.asarray(A)
    n = A.shape[0]
    L = np.linalg.eigvalsh(A).max()

    def f(v):
        return 0.5 * v @ (A @ v) - b @ v

    x = _project_two_halfspaces(np.zeros(n), rows, bounds)
    z, tk, fx = x.copy(), 1.0, f(x)
    for it in range(max_iter):
        y = _project_two_halfspaces(z - (A @ z - b) / L, rows, bounds)
        fy = f(y)
        if fy > fx + 1e-14 * (1 + abs(fx)):
            z, tk = x, 1.0
            y = _project_two_halfspaces(x - (A @ x - b) / L, rows, bounds)
            fy = f(y)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        z = y + (tk - 1) / t_new * (y - x)
        dx = np.linalg.norm(y - x, np.inf)
        x, fx, tk = y, fy, t_new
        if dx < 1e-10 * (1 + np.linalg.norm(x, np.inf)) and it > 50:
            break

    # terminal polish on the face the iteration settled on
    scale = 1 + np.linalg.norm(x, np.inf)
    act = [k for k in range(len(rows))
           if rows[k] @ x - bounds[k] < 1e-6 * scale]
    if act:
        R = np.array([rows[k] for k in act])
        k = len(act)
        K = np.block([[A, R.T], [R, np.zeros((k, k))]])
        sol = np.linalg.solve(K, np.concatenate([b, [bounds[kk] for kk in act]]))
        cand = sol[:n]
    else:
        cand = np.linalg.solve(A, b)
    fixed = _project_two_halfspaces(cand - (A @ cand - b) / L, rows, bounds)
    if np.linalg.norm(fixed - cand, np.inf) <= tol * scale:
        return cand
    return x


def exhaustive_box_solve(A, b, state_row, state_bound, rows, lower, upper,
                         tol=1e-9):
    """Try every per-element {lower, inactive, upper} pattern times the
    state-row status; return the unique candidate whose KKT checks pass."""
    import itertools

    A = np.asarray(A)
    nt = rows.shape[0]
    R = np.asarray(rows.todense()) if hasattr(rows, "todense") else np.asarray(rows)
    best = None
    for state_active in (False, True):
        for pattern in itertools.product((-1, 0, 1), repeat=nt):
            sel = []
            targets = []
            if state_active:
                sel.append(state_row)
                targets.append(state_bound)
            for t, p in enumerate(pattern):
                if p == -1:
                    sel.append(R[t])
                    targets.append(lower[t])
                elif p == 1:
                    sel.append(R[t])
                    targets.append(upper[t])
            k = len(sel)
            n = A.shape[0]
            K = np.zeros((n + k, n + k))
            K[:n, :n] = A
            rhs = np.concatenate([b, targets]) if k else b.copy()
            if k:
                S = np.array(sel)
                K[:n, n:] = S.T
                K[n:, :n] = S
                try:
                    sol = np.linalg.solve(K, rhs)
                except np.linalg.LinAlgError:
                    continue
                x, wmult = sol[:n], -sol[n:]
            else:
                x, wmult = np.linalg.solve(A, b), np.zeros(0)
            mu = 0.0
            off = 0
            if state_active:
                mu, off = wmult[0], 1
            lam = np.zeros(nt)
            j = off
            for t, p in enumerate(pattern):
                if p != 0:
                    lam[t] = wmult[j]
                    j += 1
            # KKT checks
            if mu < -tol:
                continue
            if any(p == -1 and lam[t] < -tol for t, p in enumerate(pattern)):
                continue
            if any(p == 1 and lam[t] > tol for t, p in enumerate(pattern)):
                continue
            vals = R @ x
            if not state_active and state_row @ x < state_bound - tol * max(1, abs(state_bound)):
                continue
            ok = True
            for t, p in enumerate(pattern):
                scale = tol * max(1.0, abs(lower[t]), abs(upper[t]))
                if p == 0 and not (lower[t] - scale <= vals[t] <= upper[t] + scale):
                    ok = False
                    break
            if not ok:
                continue
            cand = (x, mu, lam)
            if best is None:
                best = cand
            else:
                # strict convexity: any two certified candidates coincide
                if np.linalg.norm(best[0] - x, np.inf) > 1e-7:
                    raise AssertionError("two distinct certified candidates")
        if best is not None:
            break
    if best is None:
        raise AssertionError("no certified candidate in the enumeration")
    return best
