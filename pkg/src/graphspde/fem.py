"""Piecewise-linear finite elements on a bounded metric graph.

Degrees of freedom are the vertices (shared by all incident edges, so
continuity is built in) followed by the interior nodes of each edge.  The
Kirchhoff flux condition is natural in the weak form and needs no extra rows.

Conventions for the assembled operators, with hat functions ``phi_i``:

* ``M_delta[i, j] = int beta^delta gamma phi_i phi_j`` (time-stepping mass),
* ``M[i, j]       = int beta gamma phi_i phi_j`` (error norms, unregularized),
* ``A[i, j]       = -1/2 int alpha^{R,delta} phi_j' (phi_i gamma)'`` (so ``A`` is the
  discrete generator: negative semidefinite when ``gamma`` is constant),
* ``S = M_delta + int alpha^{R,delta} gamma phi_i' phi_j'`` (energy inner product).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .graph import MetricGraph, VertexKind


class FemError(ValueError):
    pass


class MeshTooCoarse(FemError):
    pass


class SingularMass(FemError):
    pass


class SingularSystem(FemError):
    pass


class NonCoerciveShift(FemError):
    pass


class DiscontinuousFunction(FemError):
    pass


@dataclass(frozen=True)
class FemSpace:
    graph: MetricGraph
    n: dict  # edge id -> number of elements
    vertex_dof: dict  # vertex id -> dof
    edge_dofs: dict  # edge id -> dofs of nodes 0..n_k (tail vertex, interior..., head vertex)
    nodes: dict  # edge id -> node coordinates z_0..z_{n_k}
    dim: int
    base_n: dict = field(default_factory=dict)
    level: int = 0

    @property
    def h(self):
        return {k: (self.nodes[k][-1] - self.nodes[k][0]) / self.n[k] for k in self.n}

    @property
    def hmin(self):
        return min(self.h.values())

    @property
    def hmax(self):
        return max(self.h.values())

    def refine(self, p=1) -> "FemSpace":
        """Nested refinement: every element split into ``2**p`` equal parts."""
        base = self.base_n or self.n
        return _make_space(self.graph, {k: v * 2 ** (self.level + p) for k, v in base.items()},
                           base, self.level + p)

    def dof_coordinates(self):
        """Per dof: ``(edge id, z)`` of one owner (vertices report their first incident edge)."""
        edge = np.empty(self.dim, int)
        z = np.empty(self.dim)
        for k in sorted(self.edge_dofs, reverse=True):
            edge[self.edge_dofs[k]] = k
            z[self.edge_dofs[k]] = self.nodes[k]
        return edge, z

    def ones(self):
        return np.ones(self.dim)


def _make_space(g: MetricGraph, n: dict, base_n=None, level=0) -> FemSpace:
    vertex_dof = {v.id: i for i, v in enumerate(sorted(g.vertices, key=lambda v: v.id))}
    nxt = len(vertex_dof)
    edge_dofs, nodes = {}, {}
    for e in sorted(g.edges, key=lambda e: e.id):
        nk = n[e.id]
        interior = np.arange(nxt, nxt + nk - 1)
        nxt += nk - 1
        edge_dofs[e.id] = np.concatenate([[vertex_dof[e.tail]], interior, [vertex_dof[e.head]]]).astype(int)
        nodes[e.id] = np.linspace(e.a, e.b, nk + 1)
    return FemSpace(g, dict(n), vertex_dof, edge_dofs, nodes, nxt, dict(base_n or n), level)


def build_space(g: MetricGraph, target_h=None, n_per_edge=None) -> FemSpace:
    """Uniform mesh on each edge with ``n_k = ceil(|J_k| / target_h)`` elements.

    ``n_per_edge`` (an int or a dict) fixes the counts directly instead.
    """
    for e in g.edges:
        if not e.bounded:
            raise FemError("finite elements need a bounded graph; truncate it first")
    if n_per_edge is not None:
        n = {e.id: int(n_per_edge if np.isscalar(n_per_edge) else n_per_edge[e.id]) for e in g.edges}
        if min(n.values()) < 1:
            raise MeshTooCoarse("need at least one element per edge")
        return _make_space(g, n)
    shortest = min(e.length for e in g.edges)
    if not 0 < target_h < shortest:
        raise MeshTooCoarse(f"target_h={target_h} must be below the shortest edge length {shortest}")
    n = {e.id: max(1, math.ceil(e.length / target_h - 1e-9)) for e in g.edges}
    return _make_space(g, n)


# ---------------------------------------------------------------------------
# quadrature helpers

def _gauss(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _element_points(z, order):
    """Quadrature points ``(n_el, q)``, weights (scaled by ``h``) and hat values."""
    t, w = _gauss(order)
    za, zb = z[:-1, None], z[1:, None]
    h = zb - za
    pts = za + h * t
    wts = h * w
    return pts, wts, h, t


@dataclass
class AssembledOperators:
    space: FemSpace
    M_delta: sp.csc_matrix
    M: sp.csc_matrix
    A: sp.csc_matrix
    S: sp.csc_matrix
    kappa1: float
    coeffs: object = field(repr=False, default=None)
    weight: object = field(repr=False, default=None)
    _lu: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return self.space.dim


def _local_blocks(z, order, alpha, dalpha_unused, beta, gamma, dgamma, derivative_terms=True):
    pts, wts, h, t = _element_points(z, order)
    phi = np.stack([1.0 - t, t])  # (2, q)
    dphi = np.stack([-np.ones_like(h), np.ones_like(h)], axis=0) / h[None]  # (2, n_el, 1)
    bg = beta(pts) * gamma(pts) * wts
    mass = np.einsum("eq,aq,bq->eab", bg, phi, phi)
    if not derivative_terms:
        return mass, None, None, None
    al = alpha(pts) * wts
    ga = gamma(pts)
    dga = dgamma(pts)
    # A[i, j] = -1/2 int alpha phi_j' (phi_i' gamma + phi_i gamma')
    d = dphi[:, :, 0]  # (2, n_el)
    term1 = np.einsum("eq,ie,je->eij", al * ga, d, d)
    term2 = np.einsum("eq,je,iq->eij", al * dga, d, phi)
    A = -0.5 * (term1 + term2)
    stiff = term1
    kap = np.zeros(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = alpha(pts) * dga * dga / (beta(pts) * ga * ga)
    r = r[np.isfinite(r)]
    if r.size:
        kap = r
    return mass, A, stiff, float(np.max(kap)) if kap.size else 0.0


def _scatter(space, blocks_by_edge):
    rows, cols, vals = [], [], []
    for k, blk in blocks_by_edge.items():
        dofs = space.edge_dofs[k]
        ii = np.stack([dofs[:-1], dofs[1:]], axis=1)  # (n_el, 2)
        rows.append(np.repeat(ii, 2, axis=1).ravel())
        cols.append(np.tile(ii, (1, 2)).ravel())
        vals.append(blk.reshape(len(ii), 4).ravel())
    n = space.dim
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def assemble(space: FemSpace, coeffs, weight, beta_plain=None, order=8, order_singular=32,
             guard=1e-14) -> AssembledOperators:
    """Assemble ``M_delta``, ``M``, ``A`` and ``S`` by Gauss-Legendre quadrature per element.

    ``coeffs`` provides ``alpha(k, z)``, ``beta(k, z)`` (regularized values for
    time stepping); ``beta_plain(k, z)`` is the unregularized period used in the
    error-norm mass ``M`` (defaults to ``coeffs.beta_base`` when available).
    Elements touching an interior vertex use ``order_singular`` points for
    ``M``; Gauss points never reach the endpoints, and ``guard`` clips them
    away in any case.
    """
    if beta_plain is None:
        beta_plain = getattr(coeffs, "beta_base", coeffs.beta)
    g = space.graph
    Md, M, A, K = {}, {}, {}, {}
    kappa1 = 0.0
    for e in g.edges:
        k = e.id
        z = space.nodes[k]

        def alpha(x, k=k):
            return coeffs.alpha(k, x)

        def beta(x, k=k):
            return coeffs.beta(k, x)

        def gam(x, k=k):
            return weight(k, x)

        def dgam(x, k=k):
            return weight.deriv(k, x)

        md, a, st, kap = _local_blocks(z, order, alpha, None, beta, gam, dgam)
        kappa1 = max(kappa1, kap)
        Md[k], A[k], K[k] = md, a, st

        def bplain(x, k=k, e=e):
            x = np.clip(x, e.a + guard * max(1.0, abs(e.a)), e.b - guard * max(1.0, abs(e.b)))
            return beta_plain(k, x)

        m, _, _, _ = _local_blocks(z, order, None, None, bplain, gam, dgam, derivative_terms=False)
        sing = [end for end, v in ((0, e.tail), (-1, e.head)) if g.vertex(v).kind is VertexKind.INTERIOR]
        if sing:
            for end in sing:
                zz = z[:2] if end == 0 else z[-2:]
                ms, _, _, _ = _local_blocks(zz, order_singular, None, None, bplain, gam, dgam,
                                            derivative_terms=False)
                m[end] = ms[0]
        M[k] = m
    Md_m = _scatter(space, Md)
    M_m = _scatter(space, M)
    A_m = _scatter(space, A)
    S_m = (Md_m + _scatter(space, K)).tocsc()
    for name, mat in (("M_delta", Md_m), ("M", M_m)):
        d = mat.diagonal()
        if np.any(~np.isfinite(d)) or np.any(d <= 0):
            raise SingularMass(f"{name} has a non-positive or non-finite diagonal entry")
    return AssembledOperators(space, Md_m, M_m, A_m, S_m, kappa1, coeffs, weight)


# ---------------------------------------------------------------------------
# functions on the mesh

def interpolate(space: FemSpace, f, tol=1e-10) -> np.ndarray:
    """Nodal interpolant of ``f(k, z)``; vertex values must agree across incident edges."""
    u = np.empty(space.dim)
    seen = {}
    for k in sorted(space.edge_dofs):
        dofs = space.edge_dofs[k]
        vals = np.asarray(f(k, space.nodes[k]), float) * np.ones(len(dofs))
        u[dofs[1:-1]] = vals[1:-1]
        for d, v in ((dofs[0], vals[0]), (dofs[-1], vals[-1])):
            if d in seen and abs(seen[d] - v) > tol * max(1.0, abs(v)):
                raise DiscontinuousFunction(f"values {seen[d]} and {v} disagree at vertex dof {d}")
            seen.setdefault(d, v)
            u[d] = seen[d]
    return u


def evaluate(space: FemSpace, u, k, z):
    """Value of the P1 function ``u`` on edge ``k`` at ``z`` (clamped to the edge)."""
    return np.interp(z, space.nodes[k], u[space.edge_dofs[k]])


def prolong(coarse: FemSpace, fine: FemSpace, u, fill=None):
    """Evaluate a coarse P1 function at the nodes of ``fine``.

    Fine nodes beyond the coarse edge extent (a longer truncated edge) take
    ``fill(k, z)`` when given.
    """
    out = np.empty(fine.dim)
    for k, dofs in fine.edge_dofs.items():
        z = fine.nodes[k]
        vals = evaluate(coarse, u, k, z)
        if fill is not None:
            zc = coarse.nodes[k]
            beyond = z > zc[-1] + 1e-12 * max(1.0, abs(zc[-1]))
            if beyond.any():
                vals = np.where(beyond, fill(k, z), vals)
        out[dofs] = vals
    return out


def load_vector(ops: AssembledOperators, f, order=8):
    """``<f, phi_i>`` in the ``beta^delta gamma`` inner product."""
    space = ops.space
    out = np.zeros(space.dim)
    for k, dofs in space.edge_dofs.items():
        pts, wts, h, t = _element_points(space.nodes[k], order)
        wgt = ops.coeffs.beta(k, pts) * ops.weight(k, pts) * wts * f(k, pts)
        np.add.at(out, dofs[:-1], np.sum(wgt * (1 - t), axis=1))
        np.add.at(out, dofs[1:], np.sum(wgt * t, axis=1))
    return out


def form_vector(ops: AssembledOperators, df, order=8):
    """``a0(f, phi_i) = 1/2 int alpha f' (phi_i gamma)'`` from the derivative ``df(k, z)``."""
    space = ops.space
    out = np.zeros(space.dim)
    for k, dofs in space.edge_dofs.items():
        pts, wts, h, t = _element_points(space.nodes[k], order)
        al = ops.coeffs.alpha(k, pts) * df(k, pts) * wts
        ga, dga = ops.weight(k, pts), ops.weight.deriv(k, pts)
        left = (-1.0 / h) * ga + (1 - t) * dga
        right = (1.0 / h) * ga + t * dga
        np.add.at(out, dofs[:-1], 0.5 * np.sum(al * left, axis=1))
        np.add.at(out, dofs[1:], 0.5 * np.sum(al * right, axis=1))
    return out


def _factor(mat):
    try:
        return splu(mat.tocsc())
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from None


def _solve_refined(lu, mat, rhs, rtol=1e-12, max_refine=3):
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("non-finite solution")
    nb = np.linalg.norm(rhs) or 1.0
    for _ in range(max_refine):
        r = rhs - mat @ x
        if np.linalg.norm(r) <= rtol * nb:
            break
        x = x + lu.solve(r)
    return x


def mass_solve(ops: AssembledOperators, rhs):
    key = ("mass",)
    if key not in ops._lu:
        ops._lu[key] = _factor(ops.M_delta)
    return _solve_refined(ops._lu[key], ops.M_delta, rhs)


def l2_project(ops: AssembledOperators, rhs):
    """``P_h f`` from the moments ``rhs[i] = <f, phi_i>`` (``beta^delta gamma`` weight)."""
    return mass_solve(ops, rhs)


def solve_shifted(ops: AssembledOperators, y, rhs):
    """Solve ``(y M_delta - A) x = rhs``; the factorization is cached per shift ``y``."""
    y = float(y)
    key = ("shift", y)
    if key not in ops._lu:
        mat = (y * ops.M_delta - ops.A).tocsc()
        ops._lu[key] = (_factor(mat), mat)
    lu, mat = ops._lu[key]
    return _solve_refined(lu, mat, rhs)


def ritz_project(ops: AssembledOperators, f, df, shift, safety=1.5):
    """Ritz projection for the shifted form ``shift <u, v> + a0(u, v)``.

    Solves ``(shift M_delta - A) x = shift <f, phi> + a0(f, phi)``.  The shift
    must be positive and exceed ``safety * kappa1 / 8`` so the form is coercive.
    """
    if not shift > 0 or shift <= safety * ops.kappa1 / 8.0:
        raise NonCoerciveShift(f"shift {shift} needs to be > 0 and > {safety} * kappa1/8 = "
                               f"{safety * ops.kappa1 / 8.0}")
    rhs = shift * load_vector(ops, f) + form_vector(ops, df)
    return solve_shifted(ops, shift, rhs)


# ---------------------------------------------------------------------------
# norms and output

def norm(mat, u):
    return math.sqrt(max(float(u @ (mat @ u)), 0.0))


def dump_matrix_market(mat, path):
    """Coordinate Matrix Market file: header, dims line, 1-based ``row col value`` triplets."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.row, coo.col))
    lines = ["%%MatrixMarket matrix coordinate real general",
             f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    for i in order:
        lines.append(f"{coo.row[i] + 1} {coo.col[i] + 1} {coo.data[i]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("%")]
    nr, nc, nnz = (int(v) for v in lines[0].split())
    data = np.array([ln.split() for ln in lines[1:1 + nnz]], float).reshape(-1, 3)
    return sp.csc_matrix((data[:, 2], (data[:, 0].astype(int) - 1, data[:, 1].astype(int) - 1)),
                         shape=(nr, nc))
