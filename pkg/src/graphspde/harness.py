"""Experiment orchestration: mesh-rate, regularization and truncation sweeps, invariant checks.

Every experiment is deterministic given the configuration and seed list.
Noise is shared across levels: refinements in time use Brownian-bridge
splitting of one base stream, and sweeps over ``delta`` or ``R`` reuse the
same stream.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coefficients as co
from .config import ConfigError, ExperimentConfig
from .fem import assemble, build_space, interpolate, norm
from .graph import (MetricGraph, three_well_graph, half_line_graph, interval_graph, load_graph, star_graph,
                    truncate)
from .noise import (build_direct_noise, build_spectral_noise, constant_function, level_cosine,
                    make_nonlinearity, nodal_values, sample_increments)
from .solver import ProblemInstance, error_vs_function, integrate, weighted_error


class InsufficientLevels(ValueError):
    pass


class InsufficientSeeds(ValueError):
    pass


class GammaTooFat(ValueError):
    pass


# ---------------------------------------------------------------------------
# name registries

BUILTIN_GRAPHS = {
    "interval": interval_graph,
    "half-line": half_line_graph,
    "star": star_graph,
    "three-well": three_well_graph,
}


def u0_function(spec: dict):
    kind = spec.get("kind", "constant")
    if kind == "constant":
        c = float(spec.get("value", 1.0))
        return lambda k, z: np.full_like(np.asarray(z, float), c)
    if kind == "cos":
        m = float(spec.get("m", 1.0))
        z0 = float(spec.get("z0", 0.0))
        L = float(spec.get("L", 1.0))
        return lambda k, z: np.cos(m * np.pi * (np.asarray(z, float) - z0) / L)
    if kind == "power":
        p = float(spec.get("p", 0.75))
        s = float(spec.get("shift", 1.0))
        c = float(spec.get("scale", 1.0))
        return lambda k, z: c * (np.asarray(z, float) + s) ** p
    if kind == "bump":
        c = float(spec.get("center", 0.5))
        w = float(spec.get("width", 0.25))
        return lambda k, z: np.exp(-((np.asarray(z, float) - c) / w) ** 2)
    if kind == "linear":
        a, b = float(spec.get("a", 0.0)), float(spec.get("b", 1.0))
        return lambda k, z: a + b * np.asarray(z, float)
    raise ConfigError(f"unknown initial condition kind {kind!r}")


def u0_derivative(spec: dict):
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return lambda k, z: np.zeros_like(np.asarray(z, float))
    if kind == "cos":
        m, z0, L = float(spec.get("m", 1.0)), float(spec.get("z0", 0.0)), float(spec.get("L", 1.0))
        return lambda k, z: -(m * np.pi / L) * np.sin(m * np.pi * (np.asarray(z, float) - z0) / L)
    raise ConfigError(f"no derivative available for initial condition {kind!r}")


def nonlinearity(spec: dict):
    return make_nonlinearity(spec.get("kind", "zero"), float(spec.get("c", 1.0)), float(spec.get("shift", 0.0)))


def direct_basis(entries):
    out = []
    for b in entries:
        kind = b.get("kind", "constant")
        if kind == "constant":
            out.append(constant_function(float(b.get("value", 1.0))))
        elif kind == "cosine":
            out.append(level_cosine(float(b["m"]), float(b.get("z_lo", 0.0)), float(b["z_hi"]),
                                    float(b.get("scale", 1.0))))
        else:
            raise ConfigError(f"unknown basis kind {kind!r}")
    return out


def check_names(cfg: ExperimentConfig):
    src = cfg.graph.get("source", "builtin")
    if src == "builtin" and cfg.graph.get("name") not in BUILTIN_GRAPHS:
        raise ConfigError(f"unknown builtin graph {cfg.graph.get('name')!r}")
    if src == "hamiltonian" and "name" not in cfg.graph and "expression" not in cfg.graph:
        raise ConfigError("hamiltonian graph source needs 'name' or 'expression'")
    if src not in ("builtin", "file", "hamiltonian"):
        raise ConfigError(f"unknown graph source {src!r}")
    csrc = cfg.coefficients.get("source", "constant")
    if csrc not in ("constant", "analytic", "tabulated"):
        raise ConfigError(f"unknown coefficient source {csrc!r}")
    if csrc == "tabulated" and src != "hamiltonian":
        raise ConfigError("tabulated coefficients need a hamiltonian graph source")
    mode = cfg.noise.get("mode", "none")
    if mode not in ("none", "direct", "spectral"):
        raise ConfigError(f"unknown noise mode {mode!r}")
    if mode == "spectral" and src != "hamiltonian":
        raise ConfigError("spectral noise needs a hamiltonian graph source")
    if mode == "direct":
        direct_basis(cfg.noise.get("basis", [{"kind": "constant"}]))
    u0_function(cfg.u0)
    nonlinearity(cfg.drift)
    nonlinearity(cfg.diffusion)
    if cfg.weight.get("family", "unit") not in ("unit", "exp_decay", "poly_decay"):
        raise ConfigError(f"unknown weight family {cfg.weight.get('family')!r}")


# ---------------------------------------------------------------------------
# context and per-level setups

@dataclass
class Context:
    cfg: ExperimentConfig
    graph: MetricGraph
    field: object
    spec: object = None
    reeb: object = None
    table: object = None
    noise_model: object = None

    @property
    def unbounded(self):
        return self.graph.unbounded_edge is not None


def _max_R(cfg):
    vals = [v for v in [cfg.R, cfg.R_ref] + list(cfg.R_list) if v is not None]
    return max(vals) if vals else None


def build_context(cfg: ExperimentConfig) -> Context:
    from . import hamiltonian as ham

    gsrc = cfg.graph.get("source", "builtin")
    spec = reeb = table = None
    if gsrc == "builtin":
        params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.graph.get("params", {}).items()}
        g = BUILTIN_GRAPHS[cfg.graph["name"]](**params)
    elif gsrc == "file":
        g = load_graph(cfg.resolve(cfg.graph["path"]))
    else:
        if "expression" in cfg.graph:
            spec = ham.hamiltonian_from_expression(cfg.graph["expression"], cfg.graph.get("box", (-3.0, 3.0)))
        else:
            spec = ham.get_hamiltonian(cfg.graph["name"])
        reeb = ham.build_reeb_graph(spec)
        g = reeb.graph
    c = cfg.coefficients
    csrc = c.get("source", "constant")
    if csrc == "constant":
        fld = co.constant_coefficients(g, float(c.get("alpha", 1.0)), float(c.get("beta", 1.0)))
    elif csrc == "analytic":
        if c.get("profile", "default") == "harmonic":
            prof = co.harmonic_profile(g)
        else:
            prof = co.default_profile(g, float(c.get("alpha_const", 1.0)), float(c.get("beta_const", 1.0)))
        fld = co.analytic_coefficients(g, prof, transition=float(c.get("transition", 1.0)))
    else:
        fld = None
    need_table = csrc == "tabulated" or cfg.noise.get("mode") == "spectral"
    if need_table:
        top = _max_R(cfg)
        span = float(c.get("span", (top + 1.0 - g.H0 + 0.5) if top is not None else 4.0))
        table = ham.sample_contours(reeb, int(c.get("samples", 24)), span=span)
        if csrc == "tabulated":
            fld = ham.tabulate_coefficients(spec, reeb, table=table)
    ctx = Context(cfg, g, fld, spec, reeb, table)
    mode = cfg.noise.get("mode", "none")
    if mode == "spectral":
        atoms = []
        for a in cfg.noise["atoms"]:
            atoms.append(((float(a[0]), float(a[1])), float(a[2])))
        ctx.noise_model = build_spectral_noise(spec, table, atoms)
    return ctx


@dataclass
class Setup:
    graph: MetricGraph
    pair: object
    weight: object
    space: object
    ops: object
    noise: object
    eta_nodal: np.ndarray | None
    u0: np.ndarray
    params: dict


def make_setup(ctx: Context, R=None, delta=None, h=None, n_per_edge=None) -> Setup:
    cfg = ctx.cfg
    R = cfg.R if R is None else R
    delta = cfg.delta if delta is None else delta
    h = cfg.h if h is None else h
    if ctx.unbounded:
        if R is None:
            raise ConfigError("an unbounded graph needs a truncation level R")
        tg = truncate(ctx.graph, R)
        eta = co.make_cutoff(R, cfg.cutoff)
        fR = co.truncate_alpha(ctx.field, eta)
    else:
        tg, fR, eta = ctx.graph, ctx.field, None
    if delta:
        dmin = co.delta_min(tg)
        if not delta < dmin:
            raise ConfigError(f"delta={delta} is not below delta_min={dmin}")
        pair = co.regularize(fR, tg, delta)
    else:
        pair = fR
    wparams = {k: v for k, v in cfg.weight.items() if k != "family"}
    weight = co.make_weight(cfg.weight.get("family", "unit"), tg, **wparams)
    space = build_space(tg, h, n_per_edge)
    ops = assemble(space, pair, weight)
    if cfg.noise.get("mode") == "direct":
        noise = build_direct_noise(tg, direct_basis(cfg.noise.get("basis", [{"kind": "constant"}])),
                                   float(cfg.noise.get("bound", 1.0)))
    else:
        noise = ctx.noise_model
    eta_nodal = nodal_values(space, lambda k, z: eta(z)) if eta is not None else None
    u0 = interpolate(space, u0_function(cfg.u0))
    return Setup(tg, pair, weight, space, ops, noise, eta_nodal, u0, {"R": R, "delta": delta, "h": h})


def steps_for(cfg: ExperimentConfig, h, h0):
    """``(n_steps, level)``: the time step follows the rule and halves in lock step with ``h``."""
    if cfg.dt_rule == "fixed":
        dt0 = cfg.dt_scale
        return max(1, math.ceil(cfg.T / dt0 - 1e-9)), 0
    p = int(round(math.log2(h0 / h)))
    dt0 = cfg.dt_scale * (h0 if cfg.dt_rule == "h" else h0 * h0)
    n0 = max(1, math.ceil(cfg.T / dt0 - 1e-9))
    q = p if cfg.dt_rule == "h" else 2 * p
    return n0 * 2 ** q, q


def make_instance(cfg, st: Setup, n_steps):
    return ProblemInstance(
        st.ops, st.u0, cfg.T, cfg.T / n_steps if cfg.T > 0 else 1.0,
        noise=st.noise if cfg.stochastic else None,
        drift=nonlinearity(cfg.drift) if cfg.drift.get("kind", "zero") != "zero" else None,
        diffusion=nonlinearity(cfg.diffusion) if cfg.stochastic else None,
        eta_nodal=st.eta_nodal, meta=dict(st.params))


def run_one(cfg, st: Setup, n_steps, base_stream=None, level=0):
    inst = make_instance(cfg, st, n_steps)
    if cfg.T == 0:
        return inst.u0.copy()
    stream = base_stream.at_level(level) if (base_stream is not None and cfg.stochastic) else None
    return integrate(inst, stream).final


def base_stream(cfg, st: Setup, seed, n0):
    if not cfg.stochastic:
        return None
    return sample_increments(st.noise.J, seed, np.linspace(0.0, cfg.T, n0 + 1))


def map_seeds(fn, seeds, threads=1):
    """``[fn(s) for s in seeds]``, optionally on a thread pool; order follows ``seeds``."""
    if threads and threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


# ---------------------------------------------------------------------------
# reports

@dataclass
class ErrorReport:
    experiment: str
    param: str
    rows: list  # dicts: level, param, error, stderr, seeds, wallclock_s
    slope: float | None = None
    slope_se: float | None = None
    passed: bool = False
    measured: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


CSV_COLUMNS = ("experiment", "level", "param", "error", "stderr", "seeds", "wallclock_s")


def write_report(report: ErrorReport, out_dir, timing=False):
    """``<experiment>.csv`` with the fixed schema plus ``<experiment>_summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [",".join(CSV_COLUMNS)]
    for r in report.rows:
        wall = _fmt(r.get("wallclock_s")) if timing else ""
        lines.append(",".join([report.experiment, _fmt(r["level"]), _fmt(r["param"]), _fmt(r["error"]),
                               _fmt(r["stderr"]), _fmt(r["seeds"]), wall]))
    (out / f"{report.experiment}.csv").write_text("\n".join(lines) + "\n")
    summ = ["key,value", f"param_name,{report.param}", f"slope,{_fmt(report.slope)}",
            f"slope_stderr,{_fmt(report.slope_se)}", f"passed,{_fmt(report.passed)}"]
    for k in sorted(report.measured):
        summ.append(f"{k},{_fmt(report.measured[k])}")
    (out / f"{report.experiment}_summary.csv").write_text("\n".join(summ) + "\n")
    return out / f"{report.experiment}.csv"


def usable_levels(levels):
    """Levels whose standard error is below a third of the gap to every neighbouring level."""
    out = []
    for i, (h, e, se) in enumerate(levels):
        gaps = [abs(e - levels[j][1]) for j in (i - 1, i + 1) if 0 <= j < len(levels)]
        if not gaps or se < min(gaps) / 3.0 or se == 0.0:
            out.append((h, e, se))
    return out


def fit_rate(levels):
    """Weighted least squares of ``log error`` on ``log h``; returns ``(slope, slope_stderr)``.

    Weights come from the Monte Carlo standard errors when all are positive
    (covariance inflated by the reduced chi-square when above one); otherwise
    an unweighted fit with residual-based standard error.
    """
    use = usable_levels(list(levels))
    if len(use) < 3:
        raise InsufficientLevels(f"{len(use)} usable levels, need at least 3")
    h = np.array([u[0] for u in use], float)
    e = np.array([u[1] for u in use], float)
    se = np.array([u[2] for u in use], float)
    if np.any(e <= 0):
        raise ValueError("errors must be positive")
    X = np.column_stack([np.log(h), np.ones_like(h)])
    y = np.log(e)
    n = len(y)
    if np.all(se > 0):
        w = (e / se) ** 2
        XtW = X.T * w
        cov = np.linalg.inv(XtW @ X)
        beta = cov @ (XtW @ y)
        chi2 = float(np.sum(w * (y - X @ beta) ** 2)) / (n - 2)
        cov = cov * max(chi2, 1.0)
    else:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        rss = float(np.sum((y - X @ beta) ** 2))
        cov = rss / (n - 2) * np.linalg.inv(X.T @ X) if n > 2 else np.full((2, 2), np.nan)
    return float(beta[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


def _rms_stats(sq):
    sq = np.asarray(sq, float)
    m2 = float(np.mean(sq))
    rms = math.sqrt(m2)
    if len(sq) > 1 and rms > 0:
        se = float(np.std(sq, ddof=1) / math.sqrt(len(sq))) / (2 * rms)
    else:
        se = 0.0
    return rms, se


# ---------------------------------------------------------------------------
# experiments

def closed_form_solution(cfg: ExperimentConfig, ctx: Context):
    """Separated solution for constant coefficients and a cosine mode with linear drift."""
    if ctx.cfg.coefficients.get("source", "constant") != "constant" or cfg.u0.get("kind") != "cos":
        raise ConfigError("closed-form reference needs constant coefficients and a cosine initial value")
    if cfg.stochastic:
        raise ConfigError("closed-form reference is deterministic only")
    a = float(cfg.coefficients.get("alpha", 1.0))
    b = float(cfg.coefficients.get("beta", 1.0))
    m, L = float(cfg.u0.get("m", 1.0)), float(cfg.u0.get("L", 1.0))
    rate = a / (2 * b) * (m * np.pi / L) ** 2
    if cfg.drift.get("kind", "zero") == "linear":
        rate -= float(cfg.drift.get("c", 1.0))
    elif cfg.drift.get("kind", "zero") != "zero":
        raise ConfigError("closed-form reference supports zero or linear drift")
    f0 = u0_function(cfg.u0)
    decay = math.exp(-rate * cfg.T)
    return lambda k, z: decay * f0(k, z)


def run_fem_rate(cfg: ExperimentConfig, ctx: Context | None = None, threads=None) -> ErrorReport:
    ctx = ctx or build_context(cfg)
    hs = list(cfg.h_list)
    if len(hs) < 3:
        raise InsufficientLevels(f"need at least 3 mesh levels, got {len(hs)}")
    seeds = cfg.seed_list() if cfg.stochastic else [cfg.seed_base]
    if cfg.stochastic and len(seeds) < 2:
        raise InsufficientSeeds("a stochastic rate study needs at least 2 seeds")
    closed = cfg.reference == "closed-form"
    h_ref = cfg.h_ref or hs[-1] / 4
    all_h = hs if closed else hs + [h_ref]
    t0 = time.perf_counter()
    setups = [make_setup(ctx, h=h) for h in all_h]
    plan = [steps_for(cfg, h, hs[0]) for h in all_h]
    n0 = plan[0][0] // 2 ** plan[0][1]
    exact = closed_form_solution(cfg, ctx) if closed else None

    def one(seed):
        stream = base_stream(cfg, setups[0], seed, n0)
        finals, wall = [], np.zeros(len(hs))
        for li, (st, (n, q)) in enumerate(zip(setups, plan)):
            t1 = time.perf_counter()
            finals.append(run_one(cfg, st, n, stream, q))
            if li < len(hs):
                wall[li] = time.perf_counter() - t1
        sq = np.empty(len(hs))
        for li in range(len(hs)):
            if closed:
                err = error_vs_function(setups[li].ops, finals[li], exact)
            else:
                err = weighted_error(setups[-1].ops, finals[-1], setups[li].space, finals[li])
            sq[li] = err * err
        return sq, wall

    res = map_seeds(one, seeds, threads if threads is not None else cfg.threads)
    sq = np.array([r[0] for r in res])
    walls = np.sum([r[1] for r in res], axis=0)
    rows, levels = [], []
    for li, h in enumerate(hs):
        rms, se = _rms_stats(sq[:, li])
        rows.append({"level": li, "param": h, "error": rms, "stderr": se, "seeds": len(seeds),
                     "wallclock_s": walls[li]})
        levels.append((h, rms, se))
    slope, slope_se = fit_rate(levels)
    crit = cfg.criteria
    ok = slope >= crit.get("slope_min", -math.inf) and slope <= crit.get("slope_max", math.inf)
    ok = ok and slope_se <= crit.get("slope_se_max", math.inf)
    ok = ok and levels[-1][1] <= crit.get("final_error_max", math.inf)
    measured = {"h_ref": None if closed else h_ref, "final_error": levels[-1][1],
                "usable_levels": len(usable_levels(levels)), "runtime_s": time.perf_counter() - t0}
    if not cfg.timing:
        measured.pop("runtime_s")
    return ErrorReport("fem-rate", "h", rows, slope, slope_se, bool(ok), measured)


def run_delta_sweep(cfg: ExperimentConfig, ctx: Context | None = None, threads=None) -> ErrorReport:
    ctx = ctx or build_context(cfg)
    deltas = list(cfg.delta_list)
    if len(deltas) < 3:
        raise InsufficientLevels("need at least 3 values of delta")
    seeds = cfg.seed_list() if cfg.stochastic else [cfg.seed_base]
    setups = [make_setup(ctx, delta=d) for d in deltas]
    n, _ = steps_for(cfg, setups[0].space.hmin, setups[0].space.hmin)
    M = setups[0].ops.M

    def one(seed):
        stream = base_stream(cfg, setups[0], seed, n)
        finals, wall = [], np.zeros(len(deltas))
        for di, st in enumerate(setups):
            t1 = time.perf_counter()
            finals.append(run_one(cfg, st, n, stream, 0))
            wall[di] = time.perf_counter() - t1
        return [norm(M, finals[i] - finals[i + 1]) for i in range(len(deltas) - 1)], wall

    res = map_seeds(one, seeds, threads if threads is not None else cfg.threads)
    diffs = np.array([r[0] for r in res])
    walls = np.sum([r[1] for r in res], axis=0)
    rows = []
    means, ses = [], []
    for i in range(len(deltas) - 1):
        v = diffs[:, i]
        m = float(np.mean(v))
        se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        means.append(m)
        ses.append(se)
        rows.append({"level": i, "param": deltas[i + 1], "error": m, "stderr": se, "seeds": len(seeds),
                     "wallclock_s": walls[i + 1]})
    # paired test on consecutive differences: increase must stay inside the 95% band
    monotone = True
    for i in range(len(means) - 1):
        d = diffs[:, i + 1] - diffs[:, i]
        se = float(np.std(d, ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
        tol = 1.96 * se + 1e-12 * max(1.0, means[0])
        if float(np.mean(d)) > tol:
            monotone = False
    ratio = means[-1] / means[0] if means[0] > 0 else 0.0
    ok = monotone and ratio <= cfg.criteria.get("last_over_first_max", 0.25)
    measured = {"last_over_first": ratio, "monotone_within_ci": monotone,
                "delta_min": co.delta_min(setups[0].graph)}
    return ErrorReport("delta-sweep", "delta", rows, None, None, bool(ok), measured)


def run_truncation_sweep(cfg: ExperimentConfig, ctx: Context | None = None, threads=None) -> ErrorReport:
    ctx = ctx or build_context(cfg)
    Rs = list(cfg.R_list)
    if len(Rs) < 2:
        raise InsufficientLevels("need at least 2 truncation levels")
    if not ctx.unbounded:
        raise ConfigError("a truncation sweep needs an unbounded graph")
    R_ref = cfg.R_ref or 2 * Rs[-1]
    wparams = {k: v for k, v in cfg.weight.items() if k != "family"}
    weight = co.make_weight(cfg.weight.get("family", "unit"), ctx.graph, **wparams)
    m = ctx.graph.unbounded_edge.id
    if not co.bound_proxy_decays(ctx.field, weight, m):
        raise GammaTooFat("alpha * sqrt(gamma) does not decay along the unbounded edge")
    seeds = cfg.seed_list() if cfg.stochastic else [cfg.seed_base]
    h = cfg.h
    ref = make_setup(ctx, R=R_ref, h=h)
    setups = [make_setup(ctx, R=R, h=h) for R in Rs]
    n, _ = steps_for(cfg, h, h)
    fill = u0_function(cfg.u0)

    def one(seed):
        stream = base_stream(cfg, ref, seed, n)
        u_ref = run_one(cfg, ref, n, stream, 0)
        out = np.empty(len(Rs))
        for ri, st in enumerate(setups):
            e = weighted_error(ref.ops, u_ref, st.space, run_one(cfg, st, n, stream, 0), fill=fill)
            out[ri] = e * e
        return out

    sq = np.array(map_seeds(one, seeds, threads if threads is not None else cfg.threads))
    rows, errs, Bs = [], [], []
    for ri, R in enumerate(Rs):
        rms, se = _rms_stats(sq[:, ri])
        B = co.bound_proxy(ctx.field, weight, m, R)
        rows.append({"level": ri, "param": R, "error": rms, "stderr": se, "seeds": len(seeds),
                     "wallclock_s": None})
        errs.append(rms)
        Bs.append(B)
    e2 = np.array(errs) ** 2
    ratio = e2 / np.array(Bs)
    band = float(ratio.max() / ratio.min()) if ratio.min() > 0 else math.inf
    decreasing = bool(np.all(np.diff(errs) < 0))
    ok = decreasing and band <= cfg.criteria.get("band_max", 10.0)
    measured = {"R_ref": R_ref, "band": band, "errors_decrease": decreasing}
    for R, B, r in zip(Rs, Bs, ratio):
        measured[f"B(R={R:g})"] = B
        measured[f"error2_over_B(R={R:g})"] = float(r)
    return ErrorReport("trunc-sweep", "R", rows, None, None, bool(ok), measured)


# ---------------------------------------------------------------------------
# invariant suite

@dataclass
class ValidationReport:
    checks: list  # dicts with name, passed and measured values

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks)

    def as_report(self) -> ErrorReport:
        rows = [{"level": i, "param": None, "error": c.get("value"), "stderr": None, "seeds": 0,
                 "wallclock_s": None} for i, c in enumerate(self.checks)]
        measured = {f"{c['name']}.passed": c["passed"] for c in self.checks}
        for c in self.checks:
            for k, v in c.items():
                if k not in ("name", "passed") and isinstance(v, (int, float, np.floating, np.integer)):
                    measured[f"{c['name']}.{k}"] = v
        return ErrorReport("validate", "check", rows, None, None, self.passed, measured)


class _ScaledBeta:
    """Fault injection: a regularized pair whose ``beta^delta`` is scaled down."""

    def __init__(self, pair, factor):
        self._pair = pair
        self._factor = factor

    def __getattr__(self, name):
        return getattr(self._pair, name)

    def beta(self, k, z):
        return self._factor * self._pair.beta(k, z)


def random_smooth_functions(space, rng, n, modes=8):
    """Random level-only cosine series (continuous at vertices) interpolated on the mesh."""
    zs = [z for v in space.nodes.values() for z in (v[0], v[-1])]
    lo, hi = min(zs), max(zs)
    out = []
    for _ in range(n):
        c = rng.standard_normal(modes) / (1.0 + np.arange(modes))
        out.append(interpolate(space, lambda k, z, c=c: sum(
            ci * np.cos(i * np.pi * (np.asarray(z) - lo) / (hi - lo)) for i, ci in enumerate(c))))
    return out


def interpolation_constant(ops, samples):
    """``max |f|_M^2 / (|f|_{M_delta} |f|_S)`` over sample vectors."""
    best = 0.0
    for f in samples:
        num = float(f @ (ops.M @ f))
        den = norm(ops.M_delta, f) * norm(ops.S, f)
        if den > 0:
            best = max(best, num / den)
    return best


def run_validation_suite(cfg: ExperimentConfig, ctx: Context | None = None, inject=None) -> ValidationReport:
    ctx = ctx or build_context(cfg)
    st = make_setup(ctx)
    rng = np.random.default_rng(cfg.seed_base)
    checks = []
    pair = st.pair
    if inject == "bad-regularizer":
        pair = _ScaledBeta(pair, 0.25)
    if isinstance(st.pair, co.RegularizedPair):
        rep = co.check_regularization(pair, st.graph)
        checks.append({"name": "regularization_bounds", "passed": bool(rep.passed), "c1": rep.c1,
                       "c2_sampled": rep.c2, "c3": rep.c3, "c4": rep.c4, "c5": rep.c5,
                       "value": float(sum(rep.violations.values()))})
    wrep = co.validate_weight_compatibility(st.pair, st.weight, st.graph)
    checks.append({"name": "weight_compatibility", "passed": bool(wrep.passed), "kappa": wrep.kappa,
                   "kappa_refined": wrep.kappa_refined, "value": wrep.kappa})
    ops = st.ops
    eps = 1e-3
    lam = max(ops.kappa1, eps) / 8.0 * (1 + eps)
    viol = 0
    worst = math.inf
    for _ in range(1000):
        phi = rng.standard_normal(ops.dim)
        q = lam * float(phi @ (ops.M_delta @ phi)) - float(phi @ (ops.A @ phi))
        scale = lam * float(phi @ (ops.M_delta @ phi)) + abs(float(phi @ (ops.A @ phi)))
        worst = min(worst, q / scale)
        if q < -1e-12 * scale:
            viol += 1
    checks.append({"name": "coercivity", "passed": viol == 0, "violations": viol, "lambda": lam,
                   "kappa1": ops.kappa1, "value": worst})
    if st.noise is not None:
        ok, worst_kl = True, 0.0
        for e in st.graph.edges:
            z = np.linspace(e.a, e.b, 1001)
            s = sum(np.asarray(f(e.id, z), float) ** 2 * np.ones_like(z) for f in st.noise.basis)
            worst_kl = max(worst_kl, float(s.max()))
            ok = ok and bool(np.all(s <= st.noise.bound * (1 + 1e-9)))
        checks.append({"name": "kl_bound", "passed": ok, "max_sum_sq": worst_kl, "bound": st.noise.bound,
                       "value": worst_kl})
    if st.weight.is_unit:
        A = ops.A
        amax = float(abs(A).max())
        asym = float(abs(A - A.T).max())
        checks.append({"name": "symmetry", "passed": asym <= 1e-12 * amax, "value": asym / amax})
        one = np.ones(ops.dim)
        cons = max(float(np.max(np.abs(A @ one))), float(np.max(np.abs(one @ A))))
        checks.append({"name": "constants_in_kernel", "passed": cons <= 1e-12 * amax * ops.dim,
                       "value": cons / amax})
    fine = make_setup(ctx, h=st.params["h"] / 2 if st.params["h"] else None,
                      n_per_edge=None if st.params["h"] else 2 * st.space.n[0])
    c_coarse = interpolation_constant(ops, random_smooth_functions(st.space, rng, 200))
    c_fine = interpolation_constant(fine.ops, random_smooth_functions(fine.space, rng, 200))
    r = max(c_coarse, c_fine) / min(c_coarse, c_fine)
    checks.append({"name": "interpolation_inequality", "passed": r <= 1.5, "C_coarse": c_coarse,
                   "C_fine": c_fine, "value": r})
    return ValidationReport(checks)
