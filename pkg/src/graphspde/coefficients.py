"""Coefficient fields on graph edges: diffusion ``alpha``, period ``beta``, weight ``gamma``.

Also the cut-off used to truncate the unbounded edge and the local
regularization that lifts ``alpha`` off zero near exterior vertices and caps
the logarithmic growth of ``beta`` near interior vertices.

All evaluators are vectorized ``f(k, z)`` callables over numpy arrays.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator

from .graph import MetricGraph, TruncatedGraph, VertexKind


class CoefficientError(ValueError):
    pass


class InconsistentClass(CoefficientError):
    pass


class DeltaTooLarge(CoefficientError):
    pass


class AsymptoticClass(str, Enum):
    LINEAR_VANISHING = "linear-vanishing"
    CONSTANT = "constant"
    LOG_BLOWUP = "log-blowup"
    LINEAR_GROWTH = "linear-growth"


AC = AsymptoticClass

# allowed (alpha, beta) classes at an endpoint, per vertex kind
_ALLOWED = {
    VertexKind.EXTERIOR: ({AC.LINEAR_VANISHING, AC.CONSTANT}, {AC.CONSTANT}),
    VertexKind.BOUNDARY: ({AC.LINEAR_VANISHING, AC.CONSTANT}, {AC.CONSTANT}),
    VertexKind.INTERIOR: ({AC.CONSTANT}, {AC.LOG_BLOWUP, AC.CONSTANT}),
    VertexKind.INFINITY: ({AC.LINEAR_GROWTH, AC.CONSTANT}, {AC.CONSTANT}),
}


def _as_array(z):
    return np.asarray(z, dtype=float)


@dataclass(frozen=True)
class EdgeCoefficients:
    a: float
    b: float
    alpha: Callable
    dalpha: Callable
    beta: Callable
    alpha_class: tuple = (AC.CONSTANT, AC.CONSTANT)
    beta_class: tuple = (AC.CONSTANT, AC.CONSTANT)
    constants: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class CoefficientField:
    edges: Mapping[int, EdgeCoefficients]
    note: str = ""

    def alpha(self, k, z):
        return self.edges[k].alpha(_as_array(z))

    def dalpha(self, k, z):
        return self.edges[k].dalpha(_as_array(z))

    def beta(self, k, z):
        return self.edges[k].beta(_as_array(z))

    def interval(self, k):
        e = self.edges[k]
        return e.a, e.b


# analytic profiles -----------------------------------------------------------

@dataclass(frozen=True)
class EdgeProfile:
    """Asymptotic classes and constants at the two ends of one edge."""

    alpha_class: tuple
    beta_class: tuple
    alpha_const: tuple = (1.0, 1.0)
    beta_const: tuple = (1.0, 1.0)


def _endpoint_model(cls, c, length):
    """Return ``(m(d, z), dm/dd, dm/dz)`` for distance ``d`` from the endpoint."""
    if cls is AC.LINEAR_VANISHING:
        return (lambda d, z: c * d), (lambda d, z: np.full_like(d, c)), None
    if cls is AC.CONSTANT:
        return (lambda d, z: np.full_like(d, c)), (lambda d, z: np.zeros_like(d)), None
    if cls is AC.LOG_BLOWUP:
        L = length

        def val(d, z):
            with np.errstate(divide="ignore"):
                return c * (1.0 + np.log(L / d))

        def der(d, z):
            with np.errstate(divide="ignore"):
                return -c / d

        return val, der, None
    if cls is AC.LINEAR_GROWTH:
        return (lambda d, z: c * z), None, (lambda d, z: np.full_like(z, c))
    raise ValueError(cls)


def _blend(a, b, width):
    """Smooth partition of unity ``(w_a, w_b, dw_b/dz)`` across ``[a, a+width]``."""

    def weights(z):
        s = np.clip((z - a) / width, 0.0, 1.0)
        wb = 0.5 * (1.0 - np.cos(np.pi * s))
        inside = (z > a) & (z < a + width)
        dwb = np.where(inside, 0.5 * np.pi * np.sin(np.pi * s) / width, 0.0)
        return 1.0 - wb, wb, dwb

    return weights


def _blended(a, b, cls, consts, transition):
    length = (b - a) if math.isfinite(b) else transition
    width = (b - a) if math.isfinite(b) else transition
    weights = _blend(a, b, width)
    ma, dma_d, dma_z = _endpoint_model(cls[0], consts[0], length)
    mb, dmb_d, dmb_z = _endpoint_model(cls[1], consts[1], length)

    def dist(z):
        return z - a, (b - z) if math.isfinite(b) else z - a

    def value(z):
        z = _as_array(z)
        wa, wb, _ = weights(z)
        da, db = dist(z)
        with np.errstate(invalid="ignore"):
            return np.where(wa > 0, wa * ma(da, z), 0.0) + np.where(wb > 0, wb * mb(db, z), 0.0)

    def deriv(z):
        z = _as_array(z)
        wa, wb, dwb = weights(z)
        da, db = dist(z)
        ga = dma_z(da, z) if dma_z is not None else dma_d(da, z)
        gb = dmb_z(db, z) if dmb_z is not None else -dmb_d(db, z)
        with np.errstate(invalid="ignore"):
            out = -dwb * ma(da, z) + dwb * mb(db, z)
            out = out + np.where(wa > 0, wa * ga, 0.0) + np.where(wb > 0, wb * gb, 0.0)
        return out

    return value, deriv


def check_profile_classes(graph: MetricGraph, profiles: Mapping[int, EdgeProfile]):
    for e in graph.edges:
        p = profiles[e.id]
        for end, vid in enumerate((e.tail, e.head)):
            kind = graph.vertex(vid).kind
            ok_alpha, ok_beta = _ALLOWED[kind]
            ca, cb = AC(p.alpha_class[end]), AC(p.beta_class[end])
            if ca not in ok_alpha:
                raise InconsistentClass(
                    f"edge {e.id}: alpha class {ca.value} not allowed at {kind.value} vertex {vid}")
            if cb not in ok_beta:
                raise InconsistentClass(
                    f"edge {e.id}: beta class {cb.value} not allowed at {kind.value} vertex {vid}")


def analytic_coefficients(graph: MetricGraph, profiles: Mapping[int, EdgeProfile],
                          transition=1.0) -> CoefficientField:
    """Closed-form coefficients that match the declared endpoint classes exactly.

    Between the endpoints the two asymptotic models are joined by a cosine
    partition of unity spanning the whole edge (or ``transition`` on the
    unbounded edge).  Log models use ``c * (1 + log(L/d))`` with ``L`` the
    edge length, which is positive on the whole edge and ~ ``c |log d|``.
    """
    check_profile_classes(graph, profiles)
    edges = {}
    for e in graph.edges:
        p = profiles[e.id]
        acls = tuple(AC(c) for c in p.alpha_class)
        bcls = tuple(AC(c) for c in p.beta_class)
        alpha, dalpha = _blended(e.a, e.b, acls, p.alpha_const, transition)
        beta, _ = _blended(e.a, e.b, bcls, p.beta_const, transition)
        edges[e.id] = EdgeCoefficients(
            e.a, e.b, alpha, dalpha, beta, acls, bcls,
            {"alpha": tuple(p.alpha_const), "beta": tuple(p.beta_const)})
    return CoefficientField(edges, note="analytic")


def default_profile(graph: MetricGraph, alpha_const=1.0, beta_const=1.0) -> dict:
    """Profile with classes read off the vertex kinds (extremum/saddle/infinity)."""
    alpha_for = {VertexKind.EXTERIOR: AC.LINEAR_VANISHING, VertexKind.BOUNDARY: AC.LINEAR_VANISHING,
                 VertexKind.INTERIOR: AC.CONSTANT, VertexKind.INFINITY: AC.LINEAR_GROWTH}
    beta_for = {VertexKind.EXTERIOR: AC.CONSTANT, VertexKind.BOUNDARY: AC.CONSTANT,
                VertexKind.INTERIOR: AC.LOG_BLOWUP, VertexKind.INFINITY: AC.CONSTANT}
    out = {}
    for e in graph.edges:
        kinds = [graph.vertex(v).kind for v in (e.tail, e.head)]
        out[e.id] = EdgeProfile(tuple(alpha_for[k] for k in kinds), tuple(beta_for[k] for k in kinds),
                                (alpha_const, alpha_const), (beta_const, beta_const))
    return out


def harmonic_profile(graph: MetricGraph) -> dict:
    """``H = |x|^2/2``: alpha = 4 pi z and beta = 2 pi on the single edge."""
    (e,) = graph.edges
    return {e.id: EdgeProfile((AC.LINEAR_VANISHING, AC.LINEAR_GROWTH), (AC.CONSTANT, AC.CONSTANT),
                              (4 * np.pi, 4 * np.pi), (2 * np.pi, 2 * np.pi))}


def constant_coefficients(graph: MetricGraph, alpha=1.0, beta=1.0) -> CoefficientField:
    edges = {}
    for e in graph.edges:
        edges[e.id] = EdgeCoefficients(
            e.a, e.b,
            lambda z, c=alpha: np.full_like(_as_array(z), c),
            lambda z: np.zeros_like(_as_array(z)),
            lambda z, c=beta: np.full_like(_as_array(z), c),
            constants={"alpha": (alpha, alpha), "beta": (beta, beta)})
    return CoefficientField(edges, note="constant")


# tabulated fields ------------------------------------------------------------

def tabulated_edge(a, b, z, alpha, beta, alpha_class, beta_class) -> EdgeCoefficients:
    """Monotone-cubic interpolation inside the samples, asymptotic classes outside.

    The endpoint extensions pass through the nearest sample so the field is
    continuous; log-blowup constants come from the two samples nearest the vertex.
    """
    z = np.asarray(z, float)
    alpha = np.asarray(alpha, float)
    beta = np.asarray(beta, float)
    order = np.argsort(z)
    z, alpha, beta = z[order], alpha[order], beta[order]
    ia, ib = PchipInterpolator(z, alpha), PchipInterpolator(z, beta)
    dia = ia.derivative()
    acls = tuple(AC(c) for c in alpha_class)
    bcls = tuple(AC(c) for c in beta_class)
    z0, zN = z[0], z[-1]
    consts = {}

    def ext_alpha(cls, zs, vs, dist0, end):
        if cls is AC.LINEAR_VANISHING:
            c = vs / dist0
            consts[f"alpha_{end}"] = c
            return (lambda d, zz: c * d), (lambda d, zz: np.full_like(d, c) * (1 if end == "a" else -1))
        if cls is AC.LINEAR_GROWTH:
            c = vs / zs
            consts[f"alpha_{end}"] = c
            return (lambda d, zz: c * zz), (lambda d, zz: np.full_like(zz, c))
        consts[f"alpha_{end}"] = vs
        return (lambda d, zz: np.full_like(d, vs)), (lambda d, zz: np.zeros_like(d))

    def ext_beta(cls, idx, end):
        vs = beta[idx[0]]
        if cls is AC.LOG_BLOWUP:
            vertex = a if end == "a" else b
            d0, d1 = abs(z[idx[0]] - vertex), abs(z[idx[1]] - vertex)
            c1 = (beta[idx[1]] - vs) / (np.log(1 / d1) - np.log(1 / d0))
            if c1 > 0:
                c0 = vs - c1 * np.log(1 / d0)
                consts[f"beta_{end}"] = (c0, c1)
                with np.errstate(divide="ignore"):
                    return lambda d: c0 + c1 * np.log(1 / d)
        consts[f"beta_{end}"] = vs
        return lambda d: np.full_like(d, vs)

    la, dla = ext_alpha(acls[0], z0, alpha[0], z0 - a, "a")
    if math.isfinite(b):
        lb, dlb = ext_alpha(acls[1], zN, alpha[-1], b - zN, "b")
    else:
        lb, dlb = ext_alpha(acls[1], zN, alpha[-1], 1.0, "b")
    ba = ext_beta(bcls[0], (0, 1), "a")
    bb = ext_beta(bcls[1], (-1, -2), "b")

    def dist_b(zz):
        return (b - zz) if math.isfinite(b) else zz

    def alpha_fn(zz):
        zz = _as_array(zz)
        out = ia(np.clip(zz, z0, zN))
        lo, hi = zz < z0, zz > zN
        if lo.any():
            out = np.where(lo, la(zz - a, zz), out)
        if hi.any():
            out = np.where(hi, lb(dist_b(zz), zz), out)
        return out

    def dalpha_fn(zz):
        zz = _as_array(zz)
        out = dia(np.clip(zz, z0, zN))
        lo, hi = zz < z0, zz > zN
        if lo.any():
            out = np.where(lo, dla(zz - a, zz), out)
        if hi.any():
            out = np.where(hi, dlb(dist_b(zz), zz), out)
        return out

    def beta_fn(zz):
        zz = _as_array(zz)
        out = ib(np.clip(zz, z0, zN))
        lo, hi = zz < z0, zz > zN
        with np.errstate(divide="ignore", invalid="ignore"):
            if lo.any():
                out = np.where(lo, ba(zz - a), out)
            if hi.any():
                out = np.where(hi, bb(np.abs(dist_b(zz)) if math.isfinite(b) else zz), out)
        return out

    return EdgeCoefficients(a, b, alpha_fn, dalpha_fn, beta_fn, acls, bcls, consts)


def load_table_csv(path):
    """Read a ``z, alpha, beta`` CSV table (header row required)."""
    data = np.genfromtxt(Path(path), delimiter=",", names=True)
    missing = {"z", "alpha", "beta"} - set(data.dtype.names)
    if missing:
        raise CoefficientError(f"{path}: missing columns {sorted(missing)}")
    return data["z"], data["alpha"], data["beta"]


# cut-off ---------------------------------------------------------------------

@dataclass(frozen=True)
class CutOff:
    """Cut-off equal to 1 below ``R``, 0 above ``R+1``, nonzero left slope ``K0`` at ``R+1``."""

    R: float
    kind: str = "linear"

    def __call__(self, z):
        s = np.clip(_as_array(z) - self.R, 0.0, 1.0)
        if self.kind == "linear":
            return 1.0 - s
        return 1.0 - s * s

    def deriv(self, z):
        z = _as_array(z)
        s = z - self.R
        inside = (s > 0) & (s <= 1)
        if self.kind == "linear":
            return np.where(inside, -1.0, 0.0)
        return np.where(inside, -2.0 * s, 0.0)

    @property
    def K0(self):
        return -1.0 if self.kind == "linear" else -2.0


def make_cutoff(R, kind="linear") -> CutOff:
    """``linear``: ``R+1-z`` on ``[R, R+1]``; ``smoothed-linear``: ``1-(z-R)^2``, C^1 at ``R``."""
    if kind not in ("linear", "smoothed-linear"):
        raise ValueError(f"unknown cut-off kind {kind!r}")
    return CutOff(float(R), kind)


def truncate_alpha(fld: CoefficientField, eta: CutOff) -> CoefficientField:
    """``alpha^R = alpha * eta`` on every edge; the unbounded edge is clipped at ``R+1``."""
    edges = {}
    for k, e in fld.edges.items():
        def alpha(z, e=e):
            return e.alpha(z) * eta(z)

        def dalpha(z, e=e):
            return e.dalpha(z) * eta(z) + e.alpha(z) * eta.deriv(z)

        b = e.b
        acls = e.alpha_class
        if not math.isfinite(b) or b > eta.R + 1:
            b = eta.R + 1.0
            acls = (acls[0], AC.LINEAR_VANISHING)
        edges[k] = replace(e, b=b, alpha=alpha, dalpha=dalpha, alpha_class=acls,
                           beta_class=(e.beta_class[0], AC.CONSTANT) if b != e.b else e.beta_class)
    return CoefficientField(edges, note=fld.note + "+truncated")


# regularization --------------------------------------------------------------

def cosine_bump(s):
    """1 on [0,1], cosine roll-off on (1,2), 0 beyond."""
    s = _as_array(s)
    mid = 0.5 * (np.cos((s - 1.0) * np.pi) + 1.0)
    return np.where(s <= 1.0, 1.0, np.where(s >= 2.0, 0.0, mid))


def cosine_bump_deriv(s):
    s = _as_array(s)
    return np.where((s > 1.0) & (s < 2.0), -0.5 * np.pi * np.sin((s - 1.0) * np.pi), 0.0)


def delta_min(g: MetricGraph):
    return 0.25 * min(e.length for e in g.edges)


@dataclass(frozen=True)
class RegularizedPair:
    base: CoefficientField
    delta: float
    delta_min: float
    splits: Mapping[int, float]
    _alpha: Mapping = field(repr=False)
    _dalpha: Mapping = field(repr=False)
    _beta: Mapping = field(repr=False)

    def alpha(self, k, z):
        return self._alpha[k](_as_array(z))

    def dalpha(self, k, z):
        return self._dalpha[k](_as_array(z))

    def beta(self, k, z):
        return self._beta[k](_as_array(z))

    def alpha_R(self, k, z):
        return self.base.alpha(k, z)

    def beta_base(self, k, z):
        return self.base.beta(k, z)


def regularize(fld: CoefficientField, g: TruncatedGraph, delta, bump=cosine_bump,
               bump_deriv=cosine_bump_deriv) -> RegularizedPair:
    """Lift ``alpha^R`` near degenerate exterior ends and freeze ``beta`` near log-singular ends.

    Each edge is split into two halves (the clipped unbounded edge at ``H0+1``)
    so that every half touches one vertex.  Only ends whose declared class is
    degenerate are modified; non-degenerate fields pass through unchanged.
    """
    dmin = delta_min(g)
    if not 0 < delta < dmin:
        raise DeltaTooLarge(f"delta={delta} must lie in (0, {dmin})")
    clipped = g.base.unbounded_edge.id if isinstance(g, TruncatedGraph) and g.base else None
    splits, A, dA, B = {}, {}, {}, {}
    for e in g.edges:
        ce = fld.edges[e.id]
        split = e.a + 1.0 if e.id == clipped else 0.5 * (e.a + e.b)
        splits[e.id] = split
        ends = []
        for end, zv, sgn in ((0, e.a, +1.0), (1, e.b, -1.0)):
            ends.append((end, zv, sgn, AC(ce.alpha_class[end]) is AC.LINEAR_VANISHING,
                         AC(ce.beta_class[end]) is AC.LOG_BLOWUP))

        def side(z, split=split):
            return z <= split

        def alpha(z, ce=ce, ends=ends, side=side):
            out = ce.alpha(z)
            lower = side(z)
            for end, zv, sgn, lift, _ in ends:
                if lift:
                    mask = lower if end == 0 else ~lower
                    out = out + np.where(mask, delta * bump(np.abs(z - zv) / delta), 0.0)
            return out

        def dalpha(z, ce=ce, ends=ends, side=side):
            out = ce.dalpha(z)
            lower = side(z)
            for end, zv, sgn, lift, _ in ends:
                if lift:
                    mask = lower if end == 0 else ~lower
                    out = out + np.where(mask, bump_deriv(np.abs(z - zv) / delta) * np.sign(z - zv), 0.0)
            return out

        def beta(z, ce=ce, ends=ends, side=side):
            out = ce.beta(z)
            lower = side(z)
            for end, zv, sgn, _, cap in ends:
                if cap:
                    mask = lower if end == 0 else ~lower
                    w = bump(np.abs(z - zv) / delta)
                    frozen = ce.beta(np.array(zv + sgn * delta))
                    with np.errstate(invalid="ignore"):
                        capped = w * frozen + (1.0 - w) * np.where(w < 1.0, out, 0.0)
                    out = np.where(mask, capped, out)
            return out

        A[e.id], dA[e.id], B[e.id] = alpha, dalpha, beta
    return RegularizedPair(fld, float(delta), dmin, splits, A, dA, B)


@dataclass
class RegularizationReport:
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    violations: dict
    passed: bool
    warnings: list


def check_regularization(pair: RegularizedPair, g: MetricGraph, n=1000, c5_warn=2.0):
    """Sample the two-sided bounds on the regularized pair on an ``n``-point grid per edge.

    Uses ``c0 = c2 = 1``; ``c3`` is the infimum of the unregularized ``beta``
    (a convex blend of ``beta`` values can never fall below it); ``c1``, ``c4``
    and ``c5`` are reported as sampled values.
    """
    mins_ad, max_ratio_a, min_bd, max_bd, max_ratio_b, inf_beta = [], [], [], [], [], []
    violations = {"alpha_lower": 0, "alpha_upper": 0, "beta_lower": 0, "beta_upper": 0, "nonfinite": 0}
    for e in g.edges:
        z = np.linspace(e.a, e.b, n + 2)[1:-1]
        ad = pair.alpha(e.id, z)
        aR = pair.alpha_R(e.id, z)
        a_full = pair.base.alpha(e.id, z)
        bd = pair.beta(e.id, z)
        b = pair.beta_base(e.id, z)
        if not (np.all(np.isfinite(ad)) and np.all(np.isfinite(bd))):
            violations["nonfinite"] += int(np.sum(~np.isfinite(ad)) + np.sum(~np.isfinite(bd)))
        violations["alpha_lower"] += int(np.sum(ad < aR - 1e-12 * (1 + np.abs(aR))))
        violations["alpha_lower"] += int(np.sum(ad <= 0))
        violations["alpha_upper"] += int(np.sum(ad > (a_full + 1.0) * (1 + 1e-12)))
        mins_ad.append(ad.min())
        max_ratio_a.append(np.max(ad / (a_full + 1.0)))
        min_bd.append(bd.min())
        max_bd.append(bd.max())
        max_ratio_b.append(np.max(bd / b))
        inf_beta.append(b.min())
    c3 = float(min(inf_beta))
    for e in g.edges:
        z = np.linspace(e.a, e.b, n + 2)[1:-1]
        bd = pair.beta(e.id, z)
        violations["beta_lower"] += int(np.sum(bd < c3 * (1 - 1e-12)))
    c4, c5 = float(max(max_bd)), float(max(max_ratio_b))
    if not (math.isfinite(c4) and math.isfinite(c5)):
        violations["beta_upper"] += 1
    notes = []
    if c5 > c5_warn:
        notes.append(f"beta^delta/beta reaches {c5:.3g}: log constants make c5 large")
        warnings.warn(notes[-1])
    passed = bool(all(v == 0 for v in violations.values()) and min(min_bd) > 0)
    return RegularizationReport(1.0, float(min(mins_ad)), float(max(max_ratio_a)), c3, c4, c5,
                                violations, passed, notes)


# weights ---------------------------------------------------------------------

@dataclass(frozen=True)
class Weight:
    """Graph weight ``gamma``: 1 on the compact core, a decaying family on the unbounded edge."""

    family: str
    params: Mapping
    _value: Mapping = field(repr=False)
    _deriv: Mapping = field(repr=False)

    def __call__(self, k, z):
        return self._value[k](_as_array(z))

    def deriv(self, k, z):
        return self._deriv[k](_as_array(z))

    @property
    def is_unit(self):
        return self.family == "unit"


def _ones(z):
    return np.ones_like(_as_array(z))


def _zeros(z):
    return np.zeros_like(_as_array(z))


def make_weight(family, graph: MetricGraph, last_edge=None, **params) -> Weight:
    """Built-in weight families.

    ``exp_decay(rho1, rho2)``: ``exp(-rho1 ((z-H0+1)^rho2 - 1))``, requires
    ``rho1 > 0`` and ``0 < rho2 < 1/2``.  ``poly_decay(rho3)``:
    ``(z-H0+1)^-rho3`` with ``rho3 > 1``.  Both equal 1 at ``H0`` so the weight
    is continuous across the top interior vertex.
    """
    if isinstance(graph, TruncatedGraph) and graph.base is not None:
        last = graph.base.unbounded_edge.id
        H0 = graph.base.H0
    else:
        ue = graph.unbounded_edge
        last = last_edge if last_edge is not None else (ue.id if ue is not None else None)
        H0 = graph.H0 if ue is not None else graph.edge(last).a if last is not None else 0.0
    value = {e.id: _ones for e in graph.edges}
    deriv = {e.id: _zeros for e in graph.edges}
    if family == "unit":
        return Weight("unit", {}, value, deriv)
    if last is None:
        raise CoefficientError(f"weight family {family!r} needs an unbounded (or designated) edge")
    if family == "exp_decay":
        r1, r2 = float(params["rho1"]), float(params["rho2"])
        if not (r1 > 0 and 0 < r2 < 0.5):
            raise CoefficientError("exp_decay needs rho1 > 0 and 0 < rho2 < 1/2")
        value[last] = lambda z: np.exp(-r1 * ((np.maximum(z - H0, 0) + 1.0) ** r2 - 1.0))
        deriv[last] = lambda z: (-r1 * r2 * (np.maximum(z - H0, 0) + 1.0) ** (r2 - 1.0)
                                 * value[last](z))
    elif family == "poly_decay":
        r3 = float(params["rho3"])
        if not r3 > 1:
            raise CoefficientError("poly_decay needs rho3 > 1")
        value[last] = lambda z: (np.maximum(z - H0, 0) + 1.0) ** (-r3)
        deriv[last] = lambda z: -r3 * (np.maximum(z - H0, 0) + 1.0) ** (-r3 - 1.0)
    elif family == "custom":
        value[last] = params["value"]
        deriv[last] = params["deriv"]
    elif family == "custom-table":
        z, gam = np.asarray(params["z"], float), np.asarray(params["gamma"], float)
        interp = PchipInterpolator(z, gam, extrapolate=True)
        d = interp.derivative()
        value[last] = lambda zz: interp(zz)
        deriv[last] = lambda zz: d(zz)
    else:
        raise CoefficientError(f"unknown weight family {family!r}")
    return Weight(family, dict(params), value, deriv)


def gammader_constant(weight: Weight, graph: MetricGraph, n=2000, z_max=1e4):
    """Sampled constant in ``|gamma_k'| <= C`` (core) and ``sqrt(z)|gamma_m'| <= C gamma_m``."""
    worst = 0.0
    for e in graph.edges:
        if e.bounded and not (isinstance(graph, TruncatedGraph) and graph.base is not None
                              and e.id == graph.base.unbounded_edge.id):
            z = np.linspace(e.a, e.b, n + 2)[1:-1]
            worst = max(worst, float(np.max(np.abs(weight.deriv(e.id, z)))))
        else:
            z = e.a + np.geomspace(1e-6, z_max, n)
            r = np.sqrt(np.abs(z)) * np.abs(weight.deriv(e.id, z)) / weight(e.id, z)
            worst = max(worst, float(np.max(r)))
    return worst


@dataclass
class WeightReport:
    kappa: float
    kappa_refined: float
    kappa1: float | None
    stable: bool
    passed: bool
    note: str


def _sample_points(edge_a, edge_b, n, z_table_max=None):
    """Chebyshev-clustered samples; on an unbounded edge the reach grows with ``n``."""
    t = 0.5 * (1 - np.cos(np.pi * (np.arange(n) + 0.5) / n))
    if math.isfinite(edge_b):
        return edge_a + (edge_b - edge_a) * t
    z = edge_a + t / (1 - t)
    if z_table_max is not None:
        z = z[z <= z_table_max]
    return z


def kappa_estimate(fld, weight: Weight, graph: MetricGraph, n, alpha=None, beta=None, z_table_max=None):
    worst = 0.0
    for e in graph.edges:
        z = _sample_points(e.a, e.b, n, z_table_max)
        a = (alpha or fld.alpha)(e.id, z)
        b = (beta or fld.beta)(e.id, z)
        gp = weight.deriv(e.id, z)
        g = weight(e.id, z)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lg = gp / g
            r = np.where(np.isfinite(lg), a * lg * lg / b, np.inf)
        r = np.where(a == 0, 0.0, r)
        worst = max(worst, float(np.max(r)))
    return worst


def validate_weight_compatibility(fld: CoefficientField, weight: Weight, graph: MetricGraph,
                                  pair: RegularizedPair | None = None, n=512,
                                  z_table_max=None) -> WeightReport:
    """Estimate ``sup alpha |gamma'|^2 / (beta gamma^2)`` at ``n`` and ``2n`` samples.

    Passes iff the estimate is finite and the refined one is within a factor
    1.1.  On an unbounded edge the sample reach grows with ``n``, so growth at
    infinity shows up as instability.  ``z_table_max`` caps the reach for
    table-backed coefficients (the check then only covers ``[0, z_table_max]``).
    """
    k1 = kappa_estimate(fld, weight, graph, n, z_table_max=z_table_max)
    k2 = kappa_estimate(fld, weight, graph, 2 * n, z_table_max=z_table_max)
    kd = None
    if pair is not None:
        kd = kappa_estimate(pair, weight, pair_graph(pair, graph), 2 * n,
                            alpha=pair.alpha, beta=pair.beta)
    finite = math.isfinite(k1) and math.isfinite(k2)
    if k1 == 0.0:
        stable = k2 == 0.0
    else:
        stable = finite and k2 / k1 < 1.1
    note = "" if z_table_max is None else f"unbounded edge only checked up to z={z_table_max}"
    return WeightReport(k1, k2, kd, stable, bool(finite and stable and (kd is None or math.isfinite(kd))),
                        note)


def pair_graph(pair, graph):
    return graph


def bound_proxy(fld: CoefficientField, weight: Weight, edge_id, R, z_far=1e6, n=4000):
    """``sup_{z >= R-1} alpha(z) sqrt(gamma(z))`` on the unbounded edge (sampled, geometric grid)."""
    z = np.geomspace(max(R - 1.0, 1e-12), z_far, n)
    v = fld.alpha(edge_id, z) * np.sqrt(weight(edge_id, z))
    return float(np.max(v))


def bound_proxy_decays(fld, weight, edge_id, z_far=1e6):
    """True iff ``alpha sqrt(gamma)`` keeps decreasing far out on the unbounded edge."""
    z = z_far * np.array([1.0, 10.0, 100.0])
    v = fld.alpha(edge_id, z) * np.sqrt(weight(edge_id, z))
    return bool(v[1] < 0.9 * v[0] and v[2] < 0.9 * v[1])
