"""Reduce a planar Hamiltonian to a metric graph with contour-integral coefficients.

Pipeline: critical points from grid seeds and Newton polishing, a sweep over
critical values that tracks level-set components (the Reeb graph), and
predictor-corrector tracing of individual components to evaluate

    alpha(z) = loop integral of |grad H| dl,   beta(z) = loop integral of dl / |grad H|.

Functions on the plane are projected onto the graph by averaging against the
normalized measure ``dl / (|grad H| beta)`` on each component.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import root, minimize_scalar

from .coefficients import AC, CoefficientField, tabulated_edge
from .expr import compile_expression
from .graph import Edge, MetricGraph, Vertex, VertexKind


class ReductionError(RuntimeError):
    pass


class DegenerateHessian(ReductionError):
    def __init__(self, x):
        super().__init__(f"degenerate Hessian at {np.asarray(x).tolist()}")
        self.x = x


class DuplicateCriticalValue(ReductionError):
    pass


class ComponentTrackingAmbiguity(ReductionError):
    pass


class TraceDiverged(ReductionError):
    pass


class WrongComponent(ReductionError):
    pass


class NearZeroGradient(ReductionError):
    pass


class SpecError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Hamiltonian description

def _complex_step_grad(H, x, h=1e-20):
    x = np.asarray(x, float)
    out = np.empty(x.shape)
    for i in range(2):
        xc = x.astype(complex)
        xc[..., i] += 1j * h
        out[..., i] = np.imag(H(xc)) / h
    return out


@dataclass(frozen=True)
class HamiltonianSpec:
    """Planar Hamiltonian with derivatives and a search box.

    Missing gradients come from complex-step differentiation (the evaluator must
    accept complex input); missing Hessians from central differences of the
    gradient.
    """

    H: Callable
    grad: Callable | None = None
    hess: Callable | None = None
    box: tuple = (-3.0, 3.0)
    seed_resolution: int = 121
    name: str = "custom"

    def value(self, x):
        return np.asarray(self.H(np.asarray(x, float)), float)

    def gradient(self, x):
        if self.grad is not None:
            return self.grad(np.asarray(x, float))
        return _complex_step_grad(self.H, x)

    def hessian(self, x):
        x = np.asarray(x, float)
        if self.hess is not None:
            return np.asarray(self.hess(x), float)
        h = 1e-5 * (1.0 + np.max(np.abs(x)))
        cols = []
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            cols.append((self.gradient(x + e) - self.gradient(x - e)) / (2 * h))
        Hm = np.stack(cols, axis=-1)
        return 0.5 * (Hm + np.swapaxes(Hm, -1, -2))

    def seed_grid(self, n=None):
        n = n or self.seed_resolution
        lo, hi = self.box
        t = np.linspace(lo, hi, n)
        X1, X2 = np.meshgrid(t, t, indexing="ij")
        return np.stack([X1, X2], axis=-1)


def _pair(a, b):
    if np.ndim(a) == 0:
        return np.array((a, b), float)
    return np.stack([a, b], axis=-1)


def _harmonic():
    return HamiltonianSpec(
        H=lambda x: 0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2),
        grad=lambda x: np.array(x, float),
        hess=lambda x: np.eye(2),
        box=(-3.0, 3.0), name="harmonic")


def _double_well():
    def H(x):
        return (x[..., 0] ** 2 - 1.0) ** 2 + x[..., 1] ** 2

    def grad(x):
        x1, x2 = x[..., 0], x[..., 1]
        return _pair(4 * x1 * (x1 ** 2 - 1), 2 * x2)

    def hess(x):
        x1 = np.asarray(x)[..., 0]
        return np.array([[12 * x1 ** 2 - 4, 0.0], [0.0, 2.0]])

    return HamiltonianSpec(H, grad, hess, box=(-2.0, 2.0), name="double-well")


def _triple_well(tilt=0.05):
    """Tilted sextic well in ``x1`` plus ``x2^2``: three minima, two saddles."""

    def V(s):
        return s * s * (s * s - 4.0) ** 2 / 16.0 + tilt * s

    def dV(s):
        return s * (s * s - 4.0) * (3 * s * s - 4.0) / 8.0 + tilt

    def d2V(s):
        return (15 * s ** 4 - 48 * s * s + 16) / 8.0

    shift = min(minimize_scalar(V, bracket=(c - 0.3, c, c + 0.3)).fun for c in (-2.0, 0.0, 2.0))

    def H(x):
        return V(x[..., 0]) + x[..., 1] ** 2 - shift

    def grad(x):
        return _pair(dV(x[..., 0]), 2 * x[..., 1])

    def hess(x):
        return np.array([[d2V(np.asarray(x)[..., 0]), 0.0], [0.0, 2.0]])

    return HamiltonianSpec(H, grad, hess, box=(-2.8, 2.8), seed_resolution=141, name="triple-well")


REGISTRY = {"harmonic": _harmonic, "double-well": _double_well, "triple-well": _triple_well}


def get_hamiltonian(name: str, **kwargs) -> HamiltonianSpec:
    try:
        return REGISTRY[name](**kwargs)
    except KeyError:
        raise SpecError(f"unknown Hamiltonian {name!r}; known: {sorted(REGISTRY)}") from None


def hamiltonian_from_expression(text: str, box=(-3.0, 3.0), seed_resolution=121) -> HamiltonianSpec:
    return HamiltonianSpec(compile_expression(text), box=tuple(box), seed_resolution=seed_resolution,
                           name=f"expr:{text}")


def check_spec(spec: HamiltonianSpec, n_samples=32, rng=None, min_tol=1e-6):
    """Heuristic hypothesis checks: ``min H ~ 0`` in the box; gradients agree with differences."""
    rng = np.random.default_rng(0 if rng is None else rng)
    grid = spec.seed_grid()
    vals = spec.value(grid)
    cps = find_critical_points(spec, check_duplicates=False)
    mins = [c.value for c in cps if c.kind == "minimum"]
    if not mins or abs(min(mins)) > min_tol * max(1.0, float(np.ptp(vals))) or vals.min() < -min_tol:
        raise SpecError(f"minimum of H over the box should be 0, got {min(mins) if mins else vals.min()}")
    lo, hi = spec.box
    for x in rng.uniform(lo, hi, size=(n_samples, 2)):
        g = spec.gradient(x)
        h = 1e-6 * (1 + np.abs(x))
        fd = np.array([(spec.value(x + h[i] * np.eye(2)[i]) - spec.value(x - h[i] * np.eye(2)[i]))
                       / (2 * h[i]) for i in range(2)])
        if np.linalg.norm(g - fd) > 1e-5 * max(1.0, np.linalg.norm(g)):
            raise SpecError(f"gradient mismatch at {x.tolist()}: {g} vs {fd}")
    return True


# ---------------------------------------------------------------------------
# critical points

@dataclass(frozen=True)
class CriticalPoint:
    x: tuple
    value: float
    kind: str  # minimum | maximum | saddle
    eigvals: tuple
    eigvecs: tuple

    @property
    def is_extremum(self):
        return self.kind != "saddle"


def find_critical_points(spec: HamiltonianSpec, check_duplicates=True, strict=False):
    """Newton-polished zeros of ``grad H`` seeded from local minima of ``|grad H|^2`` on a grid.

    Critical values that coincide raise :class:`DuplicateCriticalValue` when a
    saddle is involved (``strict=True`` rejects any coincidence).
    """
    grid = spec.seed_grid()
    g = spec.gradient(grid)
    g2 = np.sum(g * g, axis=-1)
    scale = 1.0 + float(np.max(np.sqrt(g2)))
    n = g2.shape[0]
    inner = g2[1:-1, 1:-1]
    is_min = np.ones_like(inner, bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_min &= inner <= g2[1 + di:n - 1 + di, 1 + dj:n - 1 + dj]
    seeds = grid[1:-1, 1:-1][is_min]
    lo, hi = spec.box
    width = hi - lo
    found = []
    for s in seeds:
        sol = root(lambda x: spec.gradient(x), s, jac=lambda x: spec.hessian(x), method="hybr",
                   options={"xtol": 1e-14})
        x = sol.x
        for _ in range(3):
            try:
                x = x - np.linalg.solve(spec.hessian(x), spec.gradient(x))
            except np.linalg.LinAlgError:
                break
        if np.linalg.norm(spec.gradient(x)) > 1e-10 * scale:
            continue
        if np.any(x < lo - 0.05 * width) or np.any(x > hi + 0.05 * width):
            continue
        if any(np.linalg.norm(x - np.array(f)) < 1e-6 * width for f in found):
            continue
        found.append(tuple(x))
    out = []
    for x in found:
        Hm = spec.hessian(np.array(x))
        w, V = np.linalg.eigh(Hm)
        if abs(w[0] * w[1]) < 1e-8 * max(1.0, float(np.max(np.abs(w)))) ** 2:
            raise DegenerateHessian(x)
        kind = "minimum" if w[0] > 0 else "maximum" if w[1] < 0 else "saddle"
        out.append(CriticalPoint(x, float(spec.value(np.array(x))) + 0.0, kind, tuple(w),
                                 (tuple(V[:, 0]), tuple(V[:, 1]))))
    out.sort(key=lambda c: (c.value, c.x))
    if check_duplicates:
        vscale = max(1.0, max(abs(c.value) for c in out))
        for c1, c2 in zip(out, out[1:]):
            if abs(c1.value - c2.value) <= 1e-9 * vscale and (strict or "saddle" in (c1.kind, c2.kind)):
                raise DuplicateCriticalValue(f"critical values coincide: {c1.value} at {c1.x} and {c2.x}")
    return out


# ---------------------------------------------------------------------------
# level-set tracing

@dataclass
class LevelComponent:
    z: float
    points: np.ndarray  # closed polyline without the repeated start point
    edge: int | None = None
    steps: int = 0

    @property
    def closed_points(self):
        return np.vstack([self.points, self.points[:1]])

    def perimeter(self):
        return _richardson(self, lambda x: np.ones(len(x)))[0]


def _correct(spec, x, z, tol, maxit=30):
    for _ in range(maxit):
        g = spec.gradient(x)
        gg = float(g[0] * g[0] + g[1] * g[1])
        if gg == 0.0:
            raise NearZeroGradient(f"zero gradient at {x.tolist()}")
        r = float(spec.value(x)) - z
        x = x - r * g / gg
        if abs(r) <= tol:
            return x
    raise TraceDiverged(f"Newton correction onto level {z} did not converge")


def _tangent(spec, x):
    g = spec.gradient(x)
    ng = math.hypot(float(g[0]), float(g[1]))
    return np.array([-g[1], g[0]]) / ng, g, ng


def _step_size(spec, x, T, ng, s_max, c_curv):
    # |Hess T| / |grad H| bounds both the curvature and the relative change
    # of |grad H| along the curve (long straight arms near a saddle)
    Hm = spec.hessian(x)
    kappa = float(np.linalg.norm(Hm @ T)) / ng
    return min(s_max, c_curv / kappa) if kappa > 0 else s_max


def _walk(spec, x0, z, step_scale, s_max, c_curv, tol, max_steps, reach):
    start = x0
    T0, _, ng0 = _tangent(spec, start)
    pts = [start]
    x, T = start, T0
    s_here = step_scale * _step_size(spec, x, T, ng0, s_max, c_curv)
    for n in range(1, max_steps + 1):
        s = s_here
        for _ in range(60):
            # reject steps that land where the step bound is much smaller or
            # where the corrector has to move far (likely a jump across a gap)
            Tm, _, _ = _tangent(spec, x + 0.5 * s * T)
            xp = x + s * Tm
            xn = _correct(spec, xp, z, tol)
            Tn, _, ngn = _tangent(spec, xn)
            s_new = step_scale * _step_size(spec, xn, Tn, ngn, s_max, c_curv)
            if s <= 1.5 * s_new and np.linalg.norm(xn - xp) <= 0.1 * s:
                break
            s = 0.5 * s
        else:
            raise TraceDiverged(f"step control failed on level {z}")
        if not np.all(np.abs(xn) < reach):
            raise TraceDiverged(f"trace at level {z} left the region |x| < {reach}")
        if n >= 4:
            d_prev = float((x - start) @ T0)
            d_new = float((xn - start) @ T0)
            if d_prev < 0 <= d_new and np.linalg.norm(xn - start) < 3 * s:
                frac = -d_prev / (d_new - d_prev)
                return np.array(pts), (n - 1) + frac, frac
        pts.append(xn)
        x, T, s_here = xn, Tn, s_new
    raise TraceDiverged(f"level {z} did not close after {max_steps} steps")


def trace_from(spec: HamiltonianSpec, x0, z, c_curv=0.02, s_max=None, tol=None, max_steps=200000,
               edge=None) -> LevelComponent:
    """Trace the closed component of ``{H = z}`` through (the projection of) ``x0``.

    Steps follow the tangent ``grad-perp H`` with length ``min(s_max, c_curv / k)``, where
    ``k = |Hess H T| / |grad H|`` bounds the curvature and the relative variation of ``|grad H|``,
    and are pulled back onto the level by Newton iterations along the gradient.
    A first pass measures the loop in step units; the second rescales the
    steps so that the loop closes after an even number of near-uniform steps.
    """
    lo, hi = spec.box
    width = hi - lo
    s_max = s_max or 0.05 * width
    tol = tol if tol is not None else 1e-13 * max(1.0, abs(z))
    reach = 1e3 * max(abs(lo), abs(hi))
    x0 = _correct(spec, np.asarray(x0, float), z, tol)
    _, U, _ = _walk(spec, x0, z, 1.0, s_max, c_curv, tol, max_steps, reach)
    M = max(16, 2 * math.ceil(U / 2))
    scale = U / M
    for _ in range(6):
        pts, U2, frac = _walk(spec, x0, z, scale, s_max, c_curv, tol, max_steps, reach)
        if len(pts) % 2 and frac < 0.5:
            # a sliver step before closing: fold it into the closing segment
            pts = pts[:-1]
        if len(pts) % 2 == 0:
            break
        # closed half a step off an even count: stretch the steps and retry
        scale *= U2 / (2 * math.ceil(U2 / 2))
    return LevelComponent(float(z), pts, edge, len(pts))


def _midpoint_sum(points, f):
    closed = np.vstack([points, points[:1]])
    seg = np.diff(closed, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    mids = 0.5 * (closed[1:] + closed[:-1])
    return np.sum(f(mids) * lengths.reshape((-1,) + (1,) * (np.ndim(f(mids[:1])) - 1)), axis=0)


def _richardson(comp: LevelComponent, f):
    fine = _midpoint_sum(comp.points, f)
    coarse = _midpoint_sum(comp.points[::2], f)
    extrap = (4 * fine - coarse) / 3
    return extrap, np.abs(fine - coarse) / 3


@dataclass(frozen=True)
class ContourIntegrals:
    alpha: float
    beta: float
    osc_alpha: float
    osc_beta: float
    min_grad: float


def contour_integrals(spec: HamiltonianSpec, comp: LevelComponent, grad_tol=1e-8) -> ContourIntegrals:
    """Composite midpoint rule on the polyline, Richardson-extrapolated against every other point.

    ``osc_*`` is the step-halving error estimate of the unextrapolated sum.
    """
    gn = np.linalg.norm(spec.gradient(comp.points), axis=-1)
    if gn.min() < grad_tol:
        raise NearZeroGradient(f"|grad H| = {gn.min():.3g} on level {comp.z}")

    def f(x):
        n = np.linalg.norm(spec.gradient(x), axis=-1)
        return np.stack([n, 1.0 / n], axis=-1)

    val, osc = _richardson(comp, f)
    return ContourIntegrals(float(val[0]), float(val[1]), float(osc[0]), float(osc[1]), float(gn.min()))


def laplacian_integral(spec: HamiltonianSpec, comp: LevelComponent):
    """Loop integral of ``Laplacian(H) / |grad H|``, which equals ``d alpha / dz``."""

    def f(x):
        Hm = np.array([spec.hessian(p) for p in x])
        return (Hm[:, 0, 0] + Hm[:, 1, 1]) / np.linalg.norm(spec.gradient(x), axis=-1)

    return float(_richardson(comp, f)[0])


def enclosed_area(comp: LevelComponent):
    p = comp.points
    q = np.roll(p, -1, axis=0)
    return 0.5 * abs(float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1])))


def point_on_polyline(p, poly, tol, rel=0.05):
    """True if ``p`` is within ``tol + rel * segment length`` of some polyline segment.

    The relative slack covers the gap between a chord and the curve it samples.
    """
    closed = np.vstack([poly, poly[:1]])
    a, b = closed[:-1], closed[1:]
    ab = b - a
    ll = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.maximum(ll, 1e-300), 0, 1)
    d = np.linalg.norm(a + t[:, None] * ab - p, axis=1)
    return bool(np.min(d - rel * np.sqrt(ll)) <= tol)


# ---------------------------------------------------------------------------
# seeds and gradient flow

def advance_seed(spec: HamiltonianSpec, x, z_from, z_to, grad_tol=1e-10):
    """Move a point from level ``z_from`` to ``z_to`` along ``dx/dz = grad H / |grad H|^2``."""
    if z_from == z_to:
        return np.asarray(x, float)

    def rhs(_, y):
        g = spec.gradient(y)
        gg = float(g @ g)
        if gg < grad_tol ** 2:
            raise WrongComponent(f"gradient flow met a critical point near {y.tolist()}")
        return g / gg

    sol = solve_ivp(rhs, (z_from, z_to), np.asarray(x, float), method="DOP853", rtol=1e-10, atol=1e-12)
    if not sol.success:
        raise WrongComponent(f"gradient flow from {z_from} to {z_to} failed: {sol.message}")
    tol = 1e-13 * max(1.0, abs(z_to))
    return _correct(spec, sol.y[:, -1], z_to, tol)


_GENERIC_DIR = np.array([math.cos(0.7), math.sin(0.7)])


def _germ(cp: CriticalPoint, direction, eps):
    x = np.array(cp.x)
    Hm = np.array(cp.eigvecs).T @ np.diag(cp.eigvals) @ np.array(cp.eigvecs)
    q = float(direction @ Hm @ direction)
    t = math.sqrt(2 * eps / abs(q))
    return x + t * direction


def _saddle_germs(cp: CriticalPoint, eps):
    """Points at levels ``value -/+ eps`` on both sides of the saddle, along the eigenvectors."""
    w = cp.eigvals
    vneg, vpos = np.array(cp.eigvecs[0]), np.array(cp.eigvecs[1])
    tn = math.sqrt(2 * eps / abs(w[0]))
    tp = math.sqrt(2 * eps / abs(w[1]))
    x = np.array(cp.x)
    return (x + tn * vneg, x - tn * vneg), (x + tp * vpos, x - tp * vpos)


@dataclass
class ReebGraph:
    """Metric graph plus the data needed to find the component of each edge."""

    graph: MetricGraph
    critical_points: list
    seeds: dict  # edge id -> (z, x) with z strictly inside the edge
    spec: HamiltonianSpec = field(repr=False)
    eps: float = 1e-3

    def vertex_of_cp(self, i):
        return i


def build_reeb_graph(spec: HamiltonianSpec, cps: Sequence[CriticalPoint] | None = None,
                     eps=None, c_curv=0.05) -> ReebGraph:
    """Sweep critical values upward, tracking level components by tracing.

    Vertex ids follow the critical points in ascending value order and the
    point at infinity gets the next id.  Edges are numbered in order of
    (lower value, upper value).
    """
    cps = list(cps if cps is not None else find_critical_points(spec))
    if not cps:
        raise ReductionError("no critical points")
    vals = [c.value for c in cps]
    gaps = [d for d in np.diff(vals) if d > 0] or [1.0]
    vscale = max(1.0, max(abs(v) for v in vals))
    eps = eps or min(1e-3 * vscale, 0.1 * float(min(gaps)))
    lo, hi = spec.box
    ptol = 1e-6 * (hi - lo)

    def comp_at(x, z):
        return trace_from(spec, x, z, c_curv=c_curv)

    open_edges = []  # dicts: lower vertex, seed z, seed x
    closed = []  # (lower vid, upper vid, seed z, seed x)

    def match_open(z, germ_comp):
        hits = []
        for i, oe in enumerate(open_edges):
            y = advance_seed(spec, oe["x"], oe["z"], z)
            oe["x"], oe["z"] = y, z
            if point_on_polyline(y, germ_comp.points, tol=ptol):
                hits.append(i)
        if len(hits) != 1:
            raise ComponentTrackingAmbiguity(
                f"level {z}: germ component matches {len(hits)} open edges")
        return hits[0]

    for vid, cp in enumerate(cps):
        c = cp.value
        if cp.kind == "minimum":
            x = _germ(cp, _GENERIC_DIR, eps)
            open_edges.append({"lower": vid, "z": float(spec.value(x)), "x": x})
        elif cp.kind == "maximum":
            x = _germ(cp, _GENERIC_DIR, eps)
            zb = float(spec.value(x))
            i = match_open(zb, comp_at(x, zb))
            oe = open_edges.pop(i)
            closed.append((oe["lower"], vid, oe["z"], oe["x"]))
        else:
            below, above = _saddle_germs(cp, eps)
            zb, za = c - eps, c + eps
            cb = [comp_at(p, zb) for p in below]
            ca = [comp_at(p, za) for p in above]
            tol_b = tol_a = ptol
            same_below = point_on_polyline(cb[1].points[0], cb[0].points, tol_b)
            same_above = point_on_polyline(ca[1].points[0], ca[0].points, tol_a)
            if same_below == same_above:
                raise ComponentTrackingAmbiguity(
                    f"saddle at {cp.x}: components below same={same_below}, above same={same_above}")
            if not same_below:
                ends = sorted({match_open(zb, cb[0]), match_open(zb, cb[1])}, reverse=True)
                if len(ends) != 2:
                    raise ComponentTrackingAmbiguity(f"saddle at {cp.x}: both germs on one open edge")
                starts = [ca[0].points[0]]
            else:
                ends = [match_open(zb, cb[0])]
                starts = [ca[0].points[0], ca[1].points[0]]
            for i in ends:
                oe = open_edges.pop(i)
                closed.append((oe["lower"], vid, oe["z"], oe["x"]))
            for x in starts:
                open_edges.append({"lower": vid, "z": za, "x": np.asarray(x, float)})
    if len(open_edges) != 1:
        raise ComponentTrackingAmbiguity(f"{len(open_edges)} components remain above the top critical value")
    inf_id = len(cps)
    oe = open_edges[0]
    closed.append((oe["lower"], inf_id, oe["z"], oe["x"]))

    def cval(v):
        return math.inf if v == inf_id else cps[v].value

    closed.sort(key=lambda t: (cval(t[0]), cval(t[1]), t[0], t[1]))
    vertices = [Vertex(i, VertexKind.INTERIOR if cp.kind == "saddle" else VertexKind.EXTERIOR, cp.value)
                for i, cp in enumerate(cps)]
    vertices.append(Vertex(inf_id, VertexKind.INFINITY, math.inf))
    edges, seeds = [], {}
    for k, (lo_v, hi_v, zs, xs) in enumerate(closed):
        edges.append(Edge(k, cval(lo_v), cval(hi_v), lo_v, hi_v))
        seeds[k] = (float(zs), np.asarray(xs, float))
    g = MetricGraph(tuple(vertices), tuple(edges), relax_degree=True)
    return ReebGraph(g, cps, seeds, spec, eps)


def _mean_step(comp):
    closed = comp.closed_points
    return float(np.mean(np.linalg.norm(np.diff(closed, axis=0), axis=1)))


def trace_level(reeb: ReebGraph, edge_id, z, c_curv=0.02, seed_cache=None) -> LevelComponent:
    """Trace the component of ``{H = z}`` that belongs to edge ``edge_id``.

    ``seed_cache`` (a dict) lets consecutive calls continue from the last
    traced level instead of the stored seed.
    """
    e = reeb.graph.edge(edge_id)
    if not (e.a < z < e.b):
        raise ValueError(f"z={z} is not strictly inside edge {edge_id} = [{e.a}, {e.b}]")
    zs, xs = reeb.seeds[edge_id]
    if seed_cache is not None and edge_id in seed_cache:
        zs, xs = seed_cache[edge_id]
    x = advance_seed(reeb.spec, xs, zs, z)
    comp = trace_from(reeb.spec, x, z, c_curv=c_curv, edge=edge_id)
    if seed_cache is not None:
        seed_cache[edge_id] = (float(z), comp.points[0])
    return comp


# ---------------------------------------------------------------------------
# tabulation

def chebyshev_lobatto(a, b, n):
    j = np.arange(n)
    return 0.5 * (a + b) - 0.5 * (b - a) * np.cos(np.pi * j / (n - 1))


def endpoint_classes(reeb: ReebGraph, edge_id):
    e = reeb.graph.edge(edge_id)
    ac, bc = [], []
    for vid in (e.tail, e.head):
        kind = reeb.graph.vertex(vid).kind
        if kind is VertexKind.INTERIOR:
            ac.append(AC.CONSTANT)
            bc.append(AC.LOG_BLOWUP)
        elif kind is VertexKind.INFINITY:
            ac.append(AC.LINEAR_GROWTH)
            bc.append(AC.CONSTANT)
        else:
            ac.append(AC.LINEAR_VANISHING)
            bc.append(AC.CONSTANT)
    return tuple(ac), tuple(bc)


@dataclass
class ContourTable:
    """Traced components at Chebyshev-Lobatto levels of every edge."""

    reeb: ReebGraph
    levels: dict  # edge id -> array of z
    components: dict  # edge id -> list of LevelComponent
    top: float


def sample_contours(reeb: ReebGraph, samples=24, guard=1e-4, span=None, c_curv=0.02) -> ContourTable:
    """Trace ``samples`` components per edge, ``guard`` (relative) away from critical values.

    The unbounded edge is sampled on ``[H0, H0 + span]``.
    """
    if samples < 16:
        raise ValueError("need at least 16 samples per edge")
    g = reeb.graph
    finite = [v.z for v in g.vertices if math.isfinite(v.z)]
    vscale = max(1.0, max(abs(v) for v in finite))
    gap = guard * vscale
    span = span if span is not None else max(1.0, 2.0 * (max(finite) - min(finite)))
    levels, comps = {}, {}
    top = 0.0
    for e in g.edges:
        b = e.b if e.bounded else e.a + span
        top = max(top, b)
        zs = chebyshev_lobatto(e.a + gap, (b - gap) if e.bounded else b, samples)
        cache = {}
        levels[e.id] = zs
        comps[e.id] = [trace_level(reeb, e.id, z, c_curv=c_curv, seed_cache=cache) for z in zs]
    return ContourTable(reeb, levels, comps, top)


def tabulate_coefficients(spec: HamiltonianSpec, reeb: ReebGraph, samples=24, table=None,
                          **kw) -> CoefficientField:
    """Coefficient field from traced contour integrals, with endpoint classes from vertex kinds."""
    table = table or sample_contours(reeb, samples, **kw)
    edges = {}
    for e in reeb.graph.edges:
        ints = [contour_integrals(spec, c) for c in table.components[e.id]]
        alpha = np.array([i.alpha for i in ints])
        beta = np.array([i.beta for i in ints])
        acls, bcls = endpoint_classes(reeb, e.id)
        edges[e.id] = tabulated_edge(e.a, e.b, table.levels[e.id], alpha, beta, acls, bcls)
    return CoefficientField(edges, note=f"tabulated:{spec.name}")


@dataclass(frozen=True)
class GraphFunction:
    """Piecewise function on the edges (PCHIP through samples, constant beyond)."""

    levels: dict
    values: dict

    def __call__(self, k, z):
        zs, vs = self.levels[k], self.values[k]
        zz = np.clip(np.asarray(z, float), zs[0], zs[-1])
        return PchipInterpolator(zs, vs)(zz)


def project_to_graph(spec: HamiltonianSpec, table: ContourTable, phis):
    """Average plane functions over each traced component against ``dl / (|grad H| beta)``.

    ``phis`` is a callable or a list of callables mapping points ``(n, 2)`` to
    values ``(n,)``.  Returns a :class:`GraphFunction` or a list of them.
    """
    single = callable(phis)
    funcs = [phis] if single else list(phis)
    levels = {k: np.asarray(v) for k, v in table.levels.items()}
    vals = [dict() for _ in funcs]
    for k, comps in table.components.items():
        rows = []
        for c in comps:
            def f(x):
                inv = 1.0 / np.linalg.norm(spec.gradient(x), axis=-1)
                return np.stack([inv] + [phi(x) * inv for phi in funcs], axis=-1)

            s = _richardson(c, f)[0]
            rows.append(s[1:] / s[0])
        rows = np.array(rows)
        for i in range(len(funcs)):
            vals[i][k] = rows[:, i]
    out = [GraphFunction(levels, v) for v in vals]
    return out[0] if single else out
