"""Time stepping, Monte Carlo ensembles and weighted errors between nested meshes.

One step of the drift-implicit, noise-explicit Euler-Maruyama scheme solves

    (M_delta - dt A) u_{n+1} = M_delta u_n + dt M_delta (b(u_n) eta)
                               + sum_j dW_j M_j (g(u_n) eta),

with nodal evaluation of the nonlinearities and ``M_j`` the mass matrix
weighted by the noise mode ``e_j``.  The factorization of the left-hand side
is computed once per step size.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .fem import (AssembledOperators, FemSpace, SingularSystem, _factor, _solve_refined, norm,
                  prolong)
from .noise import NoiseIncrementStream, NoiseModel, diffusion_moments


class SolverError(RuntimeError):
    pass


class NonFinite(SolverError):
    def __init__(self, step, norms):
        super().__init__(f"non-finite state at step {step}; recent norms {norms[-5:]}")
        self.step = step
        self.norms = norms


class NonNestedMeshes(ValueError):
    pass


@dataclass
class ProblemInstance:
    ops: AssembledOperators
    u0: np.ndarray
    T: float
    dt: float
    noise: NoiseModel | None = None
    drift: Callable | None = None
    diffusion: Callable | None = None
    eta_nodal: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0 or (self.T > 0 and self.dt > self.T * (1 + 1e-12)):
            raise ValueError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        self.u0 = np.asarray(self.u0, float)
        if self.u0.shape != (self.ops.dim,):
            raise ValueError("initial vector does not match the space dimension")

    @property
    def space(self) -> FemSpace:
        return self.ops.space

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def time_grid(self):
        return np.linspace(0.0, self.n_steps * self.dt, self.n_steps + 1)


def _step_factor(ops: AssembledOperators, dt):
    key = ("step", float(dt))
    if key not in ops._lu:
        mat = (ops.M_delta - dt * ops.A).tocsc()
        ops._lu[key] = (_factor(mat), mat)
    return ops._lu[key]


def step_semi_implicit(inst: ProblemInstance, u, dW=None, dt=None):
    """One drift-implicit Euler-Maruyama step."""
    dt = inst.dt if dt is None else dt
    ops = inst.ops
    rhs = ops.M_delta @ u
    if inst.drift is not None:
        b = inst.drift(u)
        if inst.eta_nodal is not None:
            b = b * inst.eta_nodal
        rhs = rhs + dt * (ops.M_delta @ b)
    if inst.noise is not None and inst.diffusion is not None and dW is not None:
        rhs = rhs + diffusion_moments(ops, inst.noise, u, inst.diffusion, dW, inst.eta_nodal)
    if not np.all(np.isfinite(rhs)):
        raise NonFinite(None, [])
    lu, mat = _step_factor(ops, dt)
    return _solve_refined(lu, mat, rhs)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_saved, dim)
    meta: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.states[-1]


def integrate(inst: ProblemInstance, stream: NoiseIncrementStream | None = None, save_every=None):
    """Run to ``T``; keeps every ``save_every``-th state (default: only start and end)."""
    n = inst.n_steps
    stochastic = inst.noise is not None and inst.diffusion is not None
    if stochastic:
        if stream is None:
            raise ValueError("a noise stream is required for a stochastic instance")
        if len(stream.dW) != n or not np.allclose(np.diff(stream.t), inst.dt, rtol=1e-9, atol=0):
            raise ValueError(f"stream has {len(stream.dW)} steps, instance needs {n} of size {inst.dt}")
    u = inst.u0.copy()
    times, states = [0.0], [u.copy()]
    norms = []
    for i in range(n):
        try:
            u = step_semi_implicit(inst, u, stream.dW[i] if stochastic else None)
        except NonFinite:
            raise NonFinite(i + 1, norms) from None
        if not np.all(np.isfinite(u)):
            raise NonFinite(i + 1, norms)
        norms.append(float(np.linalg.norm(u)))
        if (save_every and (i + 1) % save_every == 0) or i == n - 1:
            times.append((i + 1) * inst.dt)
            states.append(u.copy())
    meta = dict(inst.meta)
    if stream is not None:
        meta.setdefault("seed", stream.seed)
    return Trajectory(np.array(times), np.array(states), meta)


def dump_trajectory(traj: Trajectory, path, fmt="csv"):
    """CSV with header ``t,dof_0..dof_{N-1}``, or raw little-endian float64 rows ``[t, u...]``."""
    path = Path(path)
    data = np.column_stack([traj.times, traj.states])
    if fmt == "csv":
        header = "t," + ",".join(f"dof_{i}" for i in range(traj.states.shape[1]))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    elif fmt == "bin":
        path.write_bytes(data.astype("<f8").tobytes())
    else:
        raise ValueError(f"unknown trajectory format {fmt!r}")


def load_trajectory_bin(path, dim):
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f8").reshape(-1, dim + 1)
    return Trajectory(data[:, 0].copy(), data[:, 1:].copy())


# ---------------------------------------------------------------------------
# errors

def check_nested(coarse: FemSpace, fine: FemSpace, tol=1e-9):
    for k, zc in coarse.nodes.items():
        if k not in fine.nodes:
            raise NonNestedMeshes(f"edge {k} missing from the fine mesh")
        zf = fine.nodes[k]
        idx = np.searchsorted(zf, zc)
        idx = np.clip(idx, 0, len(zf) - 1)
        near = np.minimum(np.abs(zf[idx] - zc), np.abs(zf[np.maximum(idx - 1, 0)] - zc))
        if np.any(near > tol * max(1.0, float(np.max(np.abs(zf))))):
            raise NonNestedMeshes(f"coarse nodes on edge {k} are not fine nodes")


def weighted_error(fine_ops: AssembledOperators, u_fine, coarse: FemSpace, u_coarse, weight="beta",
                   fill=None):
    """``|u_fine - lift(u_coarse)|`` in the fine mesh's ``beta gamma`` (or ``beta^delta gamma``) norm.

    ``lift`` is P1 injection; ``fill(k, z)`` supplies values where the fine
    edge extends beyond the coarse one.
    """
    fine = fine_ops.space
    check_nested(coarse, fine)
    lifted = prolong(coarse, fine, u_coarse, fill)
    mat = fine_ops.M if weight == "beta" else fine_ops.M_delta
    return norm(mat, np.asarray(u_fine) - lifted)


def error_vs_function(ops: AssembledOperators, u, f, order=8, weight="beta"):
    """``|u - f|`` in the ``beta gamma`` norm by Gauss quadrature against a graph function ``f(k, z)``."""
    from .fem import _element_points

    space = ops.space
    beta = ops.coeffs.beta_base if (weight == "beta" and hasattr(ops.coeffs, "beta_base")) else ops.coeffs.beta
    total = 0.0
    for k, dofs in space.edge_dofs.items():
        pts, wts, h, t = _element_points(space.nodes[k], order)
        uh = u[dofs[:-1], None] * (1 - t) + u[dofs[1:], None] * t
        d = uh - f(k, pts)
        total += float(np.sum(beta(k, pts) * ops.weight(k, pts) * wts * d * d))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleStats:
    values: np.ndarray
    mean: float
    stderr: float
    rms: float
    ci95: tuple
    failures: dict

    @property
    def n(self):
        return len(self.values)


def summarize(values, failures=None):
    v = np.asarray(values, float)
    n = len(v)
    mean = float(np.mean(v)) if n else float("nan")
    se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    rms = float(np.sqrt(np.mean(v * v))) if n else float("nan")
    return EnsembleStats(v, mean, se, rms, (mean - 1.96 * se, mean + 1.96 * se), dict(failures or {}))


def mc_ensemble(run: Callable[[int], float], seeds: Sequence[int], threads=1) -> EnsembleStats:
    """Evaluate ``run(seed)`` per seed; failures are recorded and the ensemble continues.

    Results are ordered by seed position regardless of ``threads``.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("an ensemble needs at least two seeds")

    def one(s):
        try:
            return s, float(run(s)), None
        except Exception as exc:  # reported, not raised
            return s, None, f"{type(exc).__name__}: {exc}"

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    vals = [v for _, v, err in results if err is None]
    fails = {s: err for s, _, err in results if err is not None}
    return summarize(vals, fails)


def ou_stationary_variance(theta, sigma, dt):
    """Stationary variance of ``u+ = (1 - theta dt) u + sigma dW``.

    This is the scheme on constant states, where the form vanishes and only the
    explicit drift ``-theta u`` acts.  Needs ``0 < theta dt < 2``.
    """
    return sigma * sigma / (theta * (2.0 - theta * dt))
