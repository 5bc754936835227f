"""Q-Wiener noise on the graph: finite Karhunen-Loeve bases and reproducible increments.

Two ways to get a basis ``e_1..e_J``: direct graph functions with a user
bound on ``sum_j e_j^2``, or a finite symmetric atomic spectral measure in the
plane whose cosine/sine modes are averaged onto the graph components.

Increments come from a counter-based generator keyed by ``(seed, j, level)``.
Level 0 lives on the user's time grid; level ``l+1`` splits every step in two
with a Brownian bridge.  Increments are rounded to multiples of ``2**-40`` so
that the two halves of a split add up to the parent exactly and cumulative
sums at shared times agree bit for bit across levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .fem import AssembledOperators, _element_points, _scatter, mass_solve


class NoiseError(ValueError):
    pass


class BoundViolated(NoiseError):
    def __init__(self, point, value, bound):
        super().__init__(f"sum of squared basis functions {value:.6g} exceeds {bound:.6g} at {point}")
        self.point = point


class AsymmetricAtoms(NoiseError):
    pass


QUANTUM = 2.0 ** -40


@dataclass(frozen=True)
class NoiseModel:
    basis: tuple  # callables e_j(k, z)
    mode: str
    bound: float
    atoms: tuple = ()
    max_sum_sq: float = float("nan")

    @property
    def J(self):
        return len(self.basis)


def _check_bound(graph, basis, bound, n=400, z_max=None, tol=1e-10):
    worst = 0.0
    for e in graph.edges:
        b = e.b if e.bounded else (z_max if z_max is not None else e.a + 10.0)
        z = np.linspace(e.a, b, n)
        s = sum(np.asarray(f(e.id, z), float) ** 2 * np.ones_like(z) for f in basis)
        i = int(np.argmax(s))
        worst = max(worst, float(s[i]))
        if s[i] > bound + tol * max(1.0, bound):
            raise BoundViolated((e.id, float(z[i])), float(s[i]), bound)
    return worst


def constant_function(c=1.0):
    def f(k, z):
        return np.full_like(np.asarray(z, float), c)

    return f


def level_cosine(m, z_lo, z_hi, scale=1.0):
    """``scale * cos(m pi (z - z_lo) / (z_hi - z_lo))``: depends on the level only, so continuous."""
    L = z_hi - z_lo

    def f(k, z):
        return scale * np.cos(m * np.pi * (np.asarray(z, float) - z_lo) / L)

    return f


def build_direct_noise(graph, basis: Sequence[Callable], bound, n_check=400) -> NoiseModel:
    """Noise from user graph functions ``e_j(k, z)``; ``bound`` caps ``sum_j e_j^2``."""
    basis = tuple(basis)
    if not basis:
        raise NoiseError("need at least one basis function")
    _check_vertex_continuity(graph, basis)
    worst = _check_bound(graph, basis, float(bound), n_check)
    return NoiseModel(basis, "direct", float(bound), (), worst)


def _check_vertex_continuity(graph, basis, tol=1e-10):
    for v in graph.vertices:
        if not math.isfinite(v.z):
            continue
        for j, f in enumerate(basis):
            vals = [float(np.asarray(f(k, np.array([v.z])), float).ravel()[0])
                    for k in graph.incident_edges(v.id)]
            if vals and max(vals) - min(vals) > tol * max(1.0, max(abs(x) for x in vals)):
                raise NoiseError(f"basis function {j} is discontinuous at vertex {v.id}")


def symmetric_modes(atoms, tol=1e-12):
    """Pair ``xi`` with ``-xi`` and return ``(xi, weight, kind)`` real modes.

    A pair with weight ``w`` at each of ``+-xi`` gives ``sqrt(2w) cos(x.xi)`` and
    ``sqrt(2w) sin(x.xi)``; an atom at the origin with weight ``w`` gives ``sqrt(w)``.
    """
    atoms = [(np.asarray(xi, float), float(w)) for xi, w in atoms]
    if any(w <= 0 for _, w in atoms):
        raise NoiseError("atom weights must be positive")
    used = [False] * len(atoms)
    modes = []
    for i, (xi, w) in enumerate(atoms):
        if used[i]:
            continue
        used[i] = True
        if np.all(np.abs(xi) <= tol):
            modes.append((xi, w, "const"))
            continue
        for j in range(i + 1, len(atoms)):
            if not used[j] and np.allclose(atoms[j][0], -xi, atol=tol, rtol=0):
                if abs(atoms[j][1] - w) > tol * max(1.0, w):
                    raise AsymmetricAtoms(f"weights differ at +-{xi.tolist()}: {w} vs {atoms[j][1]}")
                used[j] = True
                break
        else:
            raise AsymmetricAtoms(f"atom {xi.tolist()} has no mirror at {(-xi).tolist()}")
        modes.append((xi, w, "cos"))
        modes.append((xi, w, "sin"))
    total = sum(w for _, w in atoms)
    return modes, total


def spectral_plane_functions(atoms):
    modes, total = symmetric_modes(atoms)
    funcs = []
    for xi, w, kind in modes:
        if kind == "const":
            funcs.append(lambda x, c=math.sqrt(w): np.full(len(x), c))
        elif kind == "cos":
            funcs.append(lambda x, xi=xi, c=math.sqrt(2 * w): c * np.cos(x @ xi))
        else:
            funcs.append(lambda x, xi=xi, c=math.sqrt(2 * w): c * np.sin(x @ xi))
    return funcs, total


def build_spectral_noise(spec, table, atoms, graph=None, tol=1e-9) -> NoiseModel:
    """Project the real modes of a symmetric atomic measure onto the graph.

    ``table`` is a :class:`~graphspde.hamiltonian.ContourTable`; each mode is
    averaged over every traced component.  The result satisfies
    ``sum_j e_j^2 <= mu(R^2)`` on the tabulation grid.
    """
    from .hamiltonian import project_to_graph

    funcs, total = spectral_plane_functions(atoms)
    projected = project_to_graph(spec, table, funcs)
    basis = tuple(_graph_fn(p) for p in projected)
    worst = 0.0
    for k, zs in table.levels.items():
        s = sum(np.asarray(p.values[k]) ** 2 for p in projected)
        i = int(np.argmax(s))
        worst = max(worst, float(s[i]))
        if s[i] > total * (1 + tol):
            raise BoundViolated((k, float(zs[i])), float(s[i]), total)
    return NoiseModel(basis, "spectral-atoms", total, tuple((tuple(x), w) for x, w in atoms), worst)


def _graph_fn(gf):
    def f(k, z):
        return gf(k, z)

    f.table = gf
    return f


def dump_basis_csv(model: NoiseModel, graph, path, n=101):
    """CSV with columns ``z, k, e_1..e_J`` sampled on each (bounded) edge."""
    rows = []
    for e in graph.edges:
        b = e.b if e.bounded else e.a + 10.0
        z = np.linspace(e.a, b, n)
        vals = [np.asarray(f(e.id, z), float) * np.ones_like(z) for f in model.basis]
        rows.extend([z[i], e.id] + [v[i] for v in vals] for i in range(n))
    header = "z,k," + ",".join(f"e_{j + 1}" for j in range(model.J))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(f"{r[0]:.17g},{int(r[1])}," + ",".join(f"{v:.17g}" for v in r[2:]) + "\n")


# ---------------------------------------------------------------------------
# increments

def _normals(seed, j, level, n):
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, (int(j) << 16) | int(level)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(n)


def _quantize(x):
    return np.round(np.asarray(x) / QUANTUM) * QUANTUM


@dataclass(frozen=True)
class NoiseIncrementStream:
    seed: int
    J: int
    t: np.ndarray  # time grid at this level
    dW: np.ndarray  # (steps, J)
    level: int = 0
    base_t: np.ndarray = field(default=None, repr=False)

    @property
    def dt(self):
        return np.diff(self.t)

    def refine(self) -> "NoiseIncrementStream":
        """Split every step in two with a Brownian bridge (halves sum to the parent exactly)."""
        lvl = self.level + 1
        dt = np.diff(self.t)
        n = len(dt)
        out = np.empty((2 * n, self.J))
        for j in range(self.J):
            z = _normals(self.seed, j, lvl, n)
            first = _quantize(0.5 * self.dW[:, j] + 0.5 * np.sqrt(dt) * z)
            out[0::2, j] = first
            out[1::2, j] = self.dW[:, j] - first
        t = np.empty(2 * n + 1)
        t[0::2] = self.t
        t[1::2] = 0.5 * (self.t[:-1] + self.t[1:])
        return NoiseIncrementStream(self.seed, self.J, t, out, lvl, self.base_t)

    def at_level(self, level) -> "NoiseIncrementStream":
        if level < self.level:
            raise ValueError("cannot coarsen by refinement; use coarsen()")
        s = self
        while s.level < level:
            s = s.refine()
        return s

    def coarsen(self, factor) -> np.ndarray:
        """Sum consecutive groups of ``factor`` increments (exact for quantized values)."""
        return self.dW.reshape(-1, factor, self.J).sum(axis=1)

    def path(self):
        """Brownian path values at the grid times (cumulative sums, starting at 0)."""
        return np.vstack([np.zeros((1, self.J)), np.cumsum(self.dW, axis=0)])


def sample_increments(model_or_J, seed, t_grid, level=0) -> NoiseIncrementStream:
    """Reproducible increments ``sqrt(dt) N(0, 1)`` for each of the ``J`` Brownian motions."""
    J = model_or_J.J if isinstance(model_or_J, NoiseModel) else int(model_or_J)
    t = np.asarray(t_grid, float)
    dt = np.diff(t)
    if t.ndim != 1 or len(t) < 2 or np.any(dt <= 0):
        raise ValueError("time grid must be strictly increasing with at least two points")
    dW = np.empty((len(dt), J))
    for j in range(J):
        dW[:, j] = _quantize(np.sqrt(dt) * _normals(seed, j, 0, len(dt)))
    return NoiseIncrementStream(int(seed), J, t, dW, 0, t).at_level(level)


# ---------------------------------------------------------------------------
# nonlinearities and diffusion

def make_nonlinearity(kind="linear", c=1.0, shift=0.0):
    """Lipschitz scalar maps: ``zero``, ``constant`` (c), ``linear`` (c*u + shift), ``bounded-smooth`` (c*sin u)."""
    if kind == "zero":
        return lambda u: np.zeros_like(u)
    if kind == "constant":
        return lambda u: np.full_like(u, c)
    if kind == "linear":
        return lambda u: c * u + shift
    if kind == "bounded-smooth":
        return lambda u: c * np.sin(u)
    raise NoiseError(f"unknown nonlinearity {kind!r}")


def noise_matrices(ops: AssembledOperators, model: NoiseModel, order=8):
    """``M_j[i, l] = int beta^delta gamma e_j phi_l phi_i`` (cached on ``ops``)."""
    key = ("noise", id(model))
    if key in ops._lu:
        return ops._lu[key]
    space = ops.space
    mats = []
    for f in model.basis:
        blocks = {}
        for k in space.edge_dofs:
            pts, wts, h, t = _element_points(space.nodes[k], order)
            phi = np.stack([1.0 - t, t])
            wgt = ops.coeffs.beta(k, pts) * ops.weight(k, pts) * wts * f(k, pts)
            blocks[k] = np.einsum("eq,aq,bq->eab", wgt, phi, phi)
        mats.append(_scatter(space, blocks))
    ops._lu[key] = mats
    return mats


def nodal_values(space, fn):
    """Nodal vector of a graph function ``fn(k, z)`` (vertex values from the first incident edge)."""
    edge, z = space.dof_coordinates()
    out = np.empty(space.dim)
    for k in np.unique(edge):
        m = edge == k
        out[m] = fn(int(k), z[m])
    return out


def diffusion_moments(ops, model, u, g, dW, eta_nodal=None):
    """``sum_j dW_j <g(u) eta e_j, phi_i>`` with ``g(u) eta`` taken nodally."""
    v = g(u)
    if eta_nodal is not None:
        v = v * eta_nodal
    rhs = np.zeros(ops.dim)
    for Mj, w in zip(noise_matrices(ops, model), np.atleast_1d(dW)):
        if w != 0.0:
            rhs += w * (Mj @ v)
    return rhs


def apply_diffusion(ops, model, u, g, dW, eta_nodal=None):
    """``P_h[sum_j g(u) eta_R e_j dW_j]`` as a dof vector."""
    return mass_solve(ops, diffusion_moments(ops, model, u, g, dW, eta_nodal))
