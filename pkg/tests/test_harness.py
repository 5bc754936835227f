import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphspde import harness as hn
from graphspde.config import ConfigError, config_from_dict


def heat_cfg(**kw):
    d = dict(experiment="fem-rate", graph={"source": "builtin", "name": "interval"},
             coefficients={"source": "constant", "alpha": 1.0, "beta": 1.0},
             h_list=[0.25, 0.125, 0.0625], dt_rule="h2", u0={"kind": "cos", "m": 1.0}, T=0.05,
             reference="closed-form")
    d.update(kw)
    return config_from_dict(d)


def trunc_cfg(**kw):
    d = dict(experiment="trunc-sweep", graph={"source": "hamiltonian", "name": "harmonic"},
             coefficients={"source": "analytic", "profile": "harmonic"},
             weight={"family": "poly_decay", "rho3": 3.0}, R_list=[2.0, 4.0], R_ref=8.0, h=0.5,
             dt_rule="fixed", dt_scale=0.1, T=0.2, u0={"kind": "power", "p": 0.75, "shift": 1.0})
    d.update(kw)
    return config_from_dict(d)


def test_fit_rate_exact_power():
    hs = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    slope, se = hn.fit_rate([(h, h, 0.0) for h in hs])
    assert slope == pytest.approx(1.0, abs=1e-12)
    assert se == pytest.approx(0.0, abs=1e-10)


def test_fit_rate_noisy_square():
    rng = np.random.default_rng(0)
    hs = [2.0 ** -k for k in range(3, 8)]
    levels = [(h, h * h * (1 + 0.01 * rng.standard_normal()), 0.01 * h * h) for h in hs]
    slope, se = hn.fit_rate(levels)
    assert abs(slope - 2.0) <= 0.05
    assert se <= 0.05


def test_fit_rate_needs_three_levels():
    with pytest.raises(hn.InsufficientLevels):
        hn.fit_rate([(0.5, 0.25, 0.0), (0.25, 0.0625, 0.0)])


def test_noisy_levels_are_dropped():
    levels = [(0.5, 1.0, 0.01), (0.25, 0.5, 0.01), (0.125, 0.25, 0.2), (0.0625, 0.125, 0.01)]
    use = hn.usable_levels(levels)
    assert [u[0] for u in use] == [0.5, 0.25, 0.0625]
    with pytest.raises(hn.InsufficientLevels):
        hn.fit_rate(levels[:3])


@settings(max_examples=40)
@given(st.floats(0.2, 3.0), st.floats(0.01, 10.0))
def test_fit_rate_recovers_any_power(p, c):
    hs = [2.0 ** -k for k in range(2, 7)]
    slope, _ = hn.fit_rate([(h, c * h ** p, 0.0) for h in hs])
    assert slope == pytest.approx(p, rel=1e-9)


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        heat_cfg(colour="red")
    with pytest.raises(ConfigError):
        heat_cfg(h_list=[0.25, 0.1])
    with pytest.raises(ConfigError):
        heat_cfg(h_list=[0.125, 0.25])
    with pytest.raises(ConfigError):
        heat_cfg(dt_rule="cfl")
    with pytest.raises(ConfigError):
        heat_cfg(experiment="plot")
    with pytest.raises(ConfigError):
        heat_cfg(u0={"kind": "gaussian"})
    with pytest.raises(ConfigError):
        trunc_cfg(R_list=[4.0, 2.0])
    with pytest.raises(ConfigError):
        heat_cfg(delta_list=[0.1, 0.2, 0.05])
    with pytest.raises(ConfigError):
        heat_cfg(h_ref=0.05)


def test_single_level_rejected():
    with pytest.raises(hn.InsufficientLevels):
        hn.run_fem_rate(heat_cfg(h_list=[0.125]))
    with pytest.raises(hn.InsufficientLevels):
        hn.run_truncation_sweep(trunc_cfg(R_list=[4.0]))


def test_heat_rate_small():
    rep = hn.run_fem_rate(heat_cfg(h_list=[0.125, 0.0625, 0.03125], criteria={"slope_min": 1.9}))
    assert rep.passed
    assert rep.slope == pytest.approx(2.0, abs=0.1)
    assert [r["param"] for r in rep.rows] == [0.125, 0.0625, 0.03125]


def test_steps_follow_the_mesh():
    cfg = heat_cfg()
    assert hn.steps_for(cfg, 0.25, 0.25)[1] == 0
    n0, _ = hn.steps_for(cfg, 0.25, 0.25)
    n2, q2 = hn.steps_for(cfg, 0.0625, 0.25)
    assert q2 == 4 and n2 == n0 * 16


def test_gamma_too_fat():
    with pytest.raises(hn.GammaTooFat):
        hn.run_truncation_sweep(trunc_cfg(weight={"family": "poly_decay", "rho3": 1.5}))


def test_truncation_sweep_small():
    cfg = trunc_cfg(noise={"mode": "direct", "bound": 1.0, "basis": [{"kind": "constant", "value": 1.0}]},
                    diffusion={"kind": "linear", "c": 0.5}, seeds=3)
    rep = hn.run_truncation_sweep(cfg)
    assert rep.measured["R_ref"] == 8.0
    # 4 pi z (z+1)^-3/2 peaks at z = 2, inside the tail z >= R - 1 = 1
    assert rep.measured["B(R=2)"] == pytest.approx(8 * math.pi * 3 ** -1.5, rel=1e-6)
    assert rep.measured["B(R=4)"] == pytest.approx(4 * math.pi * 3 * 4 ** -1.5, rel=1e-9)
    assert rep.rows[0]["error"] > rep.rows[1]["error"] > 0


def test_delta_at_or_above_minimum_rejected():
    cfg = config_from_dict(dict(experiment="delta-sweep", graph={"source": "builtin", "name": "interval"},
                                delta_list=[0.3, 0.1, 0.05], h=0.0625, dt_rule="fixed", dt_scale=0.01,
                                T=0.05, u0={"kind": "cos", "m": 1.0}))
    with pytest.raises(ConfigError):
        hn.run_delta_sweep(cfg)


def test_inert_delta_sweep():
    cfg = config_from_dict(dict(experiment="delta-sweep", graph={"source": "builtin", "name": "interval"},
                                coefficients={"source": "constant", "alpha": 1.0, "beta": 2.0},
                                delta_list=[0.2, 0.1, 0.05, 0.025], h=0.0625, dt_rule="fixed",
                                dt_scale=0.01, T=0.1, u0={"kind": "cos", "m": 1.0}))
    rep = hn.run_delta_sweep(cfg)
    assert rep.passed
    assert max(r["error"] for r in rep.rows) <= 1e-12


def test_validation_suite_and_fault_injection():
    cfg = config_from_dict(dict(experiment="validate",
                                graph={"source": "builtin", "name": "three-well",
                                       "params": {"minima": [0.0, 0.4, 0.8], "saddles": [1.6, 2.4]}},
                                coefficients={"source": "analytic", "profile": "default"},
                                R=3.4, delta=0.1, h=0.0625,
                                noise={"mode": "direct", "bound": 1.0,
                                       "basis": [{"kind": "constant", "value": 0.7}]}))
    ctx = hn.build_context(cfg)
    good = hn.run_validation_suite(cfg, ctx)
    names = [c["name"] for c in good.checks]
    assert "symmetry" in names and "kl_bound" in names
    assert good.passed, good.checks
    bad = hn.run_validation_suite(cfg, ctx, inject="bad-regularizer")
    failed = [c["name"] for c in bad.checks if not c["passed"]]
    assert failed == ["regularization_bounds"]


def test_validation_with_decaying_weight_skips_symmetry():
    cfg = config_from_dict(dict(experiment="validate", graph={"source": "hamiltonian", "name": "harmonic"},
                                coefficients={"source": "analytic", "profile": "harmonic"},
                                weight={"family": "poly_decay", "rho3": 3.0}, R=3.0, delta=0.1, h=0.125))
    rep = hn.run_validation_suite(cfg)
    names = [c["name"] for c in rep.checks]
    assert "symmetry" not in names
    coer = next(c for c in rep.checks if c["name"] == "coercivity")
    assert coer["violations"] == 0 and coer["kappa1"] > 0
    assert rep.passed


def test_write_report_schema(tmp_path):
    rep = hn.ErrorReport("fem-rate", "h", [{"level": 0, "param": 0.5, "error": 0.1, "stderr": 0.0,
                                           "seeds": 1, "wallclock_s": 1.25}],
                         slope=2.0, slope_se=0.01, passed=True, measured={"final_error": 0.1})
    hn.write_report(rep, tmp_path)
    lines = (tmp_path / "fem-rate.csv").read_text().splitlines()
    assert lines == ["experiment,level,param,error,stderr,seeds,wallclock_s",
                     "fem-rate,0,0.5,0.10000000000000001,0,1,"]
    hn.write_report(rep, tmp_path, timing=True)
    assert (tmp_path / "fem-rate.csv").read_text().splitlines()[1].endswith(",1.25")
    summary = (tmp_path / "fem-rate_summary.csv").read_text().splitlines()
    assert summary[0] == "key,value" and "passed,true" in summary


def test_rms_stats():
    rms, se = hn._rms_stats([4.0, 4.0, 4.0])
    assert rms == 2.0 and se == 0.0
    rms, se = hn._rms_stats([1.0, 3.0])
    # se of the mean square is 1, mapped to the root scale by the delta method
    assert rms == pytest.approx(math.sqrt(2.0)) and se == pytest.approx(1.0 / (2 * math.sqrt(2.0)))


def test_u0_functions():
    f = hn.u0_function({"kind": "cos", "m": 2.0, "z0": 0.0, "L": 1.0})
    assert f(0, np.array([0.5]))[0] == pytest.approx(-1.0)
    g = hn.u0_function({"kind": "linear", "a": 1.0, "b": 2.0})
    assert g(3, np.array([1.5]))[0] == pytest.approx(4.0)
