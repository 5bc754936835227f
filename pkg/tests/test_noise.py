import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import j0

from graphspde import coefficients as co
from graphspde import fem
from graphspde import hamiltonian as ham
from graphspde import noise as nz
from graphspde.graph import three_well_graph, half_line_graph, interval_graph, truncate


@pytest.fixture(scope="module")
def harmonic_table():
    spec = ham.get_hamiltonian("harmonic")
    reeb = ham.build_reeb_graph(spec)
    return spec, reeb, ham.sample_contours(reeb, 16, span=4.0)


@pytest.fixture(scope="module")
def weighted_ops():
    g = half_line_graph()
    f = co.analytic_coefficients(g, co.harmonic_profile(g))
    tg = truncate(g, 3.0)
    pair = co.regularize(co.truncate_alpha(f, co.make_cutoff(3.0)), tg, 0.1)
    w = co.make_weight("poly_decay", tg, rho3=3.0)
    return tg, fem.assemble(fem.build_space(tg, 0.1), pair, w)


def test_bessel_mode(harmonic_table):
    spec, _, table = harmonic_table
    model = nz.build_spectral_noise(spec, table, [((1.0, 0.0), 0.5), ((-1.0, 0.0), 0.5)])
    assert model.J == 2 and model.bound == 1.0
    z = np.asarray(table.levels[0])
    cos_mode, sin_mode = model.basis
    assert np.allclose(cos_mode(0, z), j0(np.sqrt(2 * z)), atol=1e-6)
    assert np.allclose(sin_mode(0, z), 0.0, atol=1e-10)


def test_atom_at_origin_is_constant(harmonic_table):
    spec, _, table = harmonic_table
    model = nz.build_spectral_noise(spec, table, [((0.0, 0.0), 1.0)])
    z = np.asarray(table.levels[0])
    assert np.allclose(model.basis[0](0, z), 1.0, atol=1e-12)


def test_asymmetric_atoms_rejected():
    with pytest.raises(nz.AsymmetricAtoms):
        nz.symmetric_modes([((1.0, 0.0), 0.5)])
    with pytest.raises(nz.AsymmetricAtoms):
        nz.symmetric_modes([((1.0, 0.0), 0.5), ((-1.0, 0.0), 0.25)])


@settings(max_examples=10, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 1.0)), min_size=1, max_size=3),
       st.floats(0.0, 1.0))
def test_kl_bound_on_tabulation_grid(harmonic_table, pairs, w0):
    spec, _, table = harmonic_table
    atoms = []
    for x1, x2, w in pairs:
        if abs(x1) + abs(x2) < 1e-3:
            continue
        atoms += [((x1, x2), w), ((-x1, -x2), w)]
    if w0 > 0:
        atoms.append(((0.0, 0.0), w0))
    if not atoms:
        return
    model = nz.build_spectral_noise(spec, table, atoms)
    total = sum(w for _, w in atoms)
    for k, zs in table.levels.items():
        s = sum(np.asarray(f(k, np.asarray(zs))) ** 2 for f in model.basis)
        assert np.all(s <= total * (1 + 1e-9))


def test_direct_noise_examples():
    g = truncate(three_well_graph(), 3.0)
    model = nz.build_direct_noise(g, [nz.constant_function(1.0)], 1.0)
    assert model.J == 1 and model.max_sum_sq == 1.0
    with pytest.raises(nz.BoundViolated):
        nz.build_direct_noise(g, [nz.constant_function(2.0)], 1.0)
    basis = [nz.level_cosine(m, 0.0, 4.0, 1.0 / math.sqrt(8)) for m in range(8)]
    model = nz.build_direct_noise(g, basis, 1.0)
    assert model.J == 8 and model.max_sum_sq <= 1.0


def test_direct_noise_must_be_continuous():
    g = truncate(three_well_graph(), 3.0)
    with pytest.raises(nz.NoiseError):
        nz.build_direct_noise(g, [lambda k, z: np.full_like(z, float(k))], 100.0)


def test_dump_basis_csv(tmp_path):
    g = interval_graph()
    model = nz.build_direct_noise(g, [nz.constant_function(0.5), nz.level_cosine(1, 0, 1, 0.5)], 1.0)
    p = tmp_path / "basis.csv"
    nz.dump_basis_csv(model, g, p, n=11)
    rows = p.read_text().splitlines()
    assert rows[0] == "z,k,e_1,e_2"
    assert len(rows) == 12
    assert rows[1].split(",")[2:] == ["0.5", "0.5"]


def test_increments_deterministic():
    t = np.linspace(0, 1, 65)
    a = nz.sample_increments(3, 42, t)
    b = nz.sample_increments(3, 42, t)
    assert np.array_equal(a.dW, b.dW)
    assert not np.array_equal(a.dW, nz.sample_increments(3, 43, t).dW)
    # streams for different modes are independent draws
    assert not np.array_equal(a.dW[:, 0], a.dW[:, 1])


def test_bridge_halves_sum_exactly():
    coarse = nz.sample_increments(2, 7, np.linspace(0, 1, 33))
    fine = coarse.refine()
    assert fine.level == 1 and len(fine.t) == 65
    assert np.array_equal(fine.coarsen(2), coarse.dW)
    assert np.array_equal(fine.path()[::2], coarse.path())
    deep = coarse.at_level(3)
    assert np.array_equal(deep.coarsen(8), coarse.dW)
    assert np.array_equal(deep.path()[::8], coarse.path())


def test_at_level_is_reproducible():
    t = np.linspace(0, 0.5, 9)
    a = nz.sample_increments(1, 5, t, level=2)
    b = nz.sample_increments(1, 5, t).refine().refine()
    assert np.array_equal(a.dW, b.dW)
    with pytest.raises(ValueError):
        a.at_level(1)


def test_bad_time_grid():
    with pytest.raises(ValueError):
        nz.sample_increments(1, 0, np.array([0.0, 0.5, 0.5]))


def test_increment_variance():
    dt = 1e-5
    n = 100_000
    s = nz.sample_increments(1, 2024, np.linspace(0, n * dt, n + 1))
    x = s.dW[:, 0]
    var = float(np.mean(x ** 2))
    se = dt * math.sqrt(2.0 / n)
    assert abs(var - dt) <= 3 * se
    assert abs(float(np.mean(x))) <= 3 * math.sqrt(dt / n)


def test_refined_increment_variance():
    dt = 1e-3
    n = 50_000
    fine = nz.sample_increments(1, 11, np.linspace(0, n * dt, n + 1)).refine()
    x = fine.dW[:, 0]
    var = float(np.mean(x ** 2))
    assert abs(var - dt / 2) <= 3 * (dt / 2) * math.sqrt(2.0 / len(x))
    # the two halves of a bridge are uncorrelated
    c = float(np.mean(x[0::2] * x[1::2]))
    assert abs(c) <= 3 * (dt / 2) / math.sqrt(n)


def test_nonlinearities():
    u = np.array([-1.0, 0.0, 2.0])
    assert np.array_equal(nz.make_nonlinearity("zero")(u), np.zeros(3))
    assert np.array_equal(nz.make_nonlinearity("constant", 0.3)(u), np.full(3, 0.3))
    assert np.array_equal(nz.make_nonlinearity("linear", 2.0, 1.0)(u), 2 * u + 1)
    assert np.allclose(nz.make_nonlinearity("bounded-smooth", 0.5)(u), 0.5 * np.sin(u))
    with pytest.raises(nz.NoiseError):
        nz.make_nonlinearity("cubic")


def test_apply_diffusion_examples(weighted_ops):
    tg, ops = weighted_ops
    model = nz.build_direct_noise(tg, [nz.constant_function(1.0)], 1.0)
    one = np.ones(ops.dim)
    out = nz.apply_diffusion(ops, model, one, nz.make_nonlinearity("zero"), np.array([0.7]))
    assert np.array_equal(out, np.zeros(ops.dim))
    out = nz.apply_diffusion(ops, model, one, nz.make_nonlinearity("constant", 1.0), np.array([0.7]))
    assert np.allclose(out, 0.7, atol=1e-12)
    out = nz.apply_diffusion(ops, model, one, nz.make_nonlinearity("linear", 1.0), np.array([-0.3]))
    assert np.allclose(out, -0.3, atol=1e-12)


def test_apply_diffusion_matches_quadrature(weighted_ops):
    # P_h of g(u) e_1 dW with u nodal: moments against direct element quadrature
    tg, ops = weighted_ops
    e1 = nz.level_cosine(1, 0.0, 4.0, 0.8)
    model = nz.build_direct_noise(tg, [e1], 1.0)
    u = nz.nodal_values(ops.space, lambda k, z: np.sin(z))
    g = nz.make_nonlinearity("linear", 1.0)
    rhs = nz.diffusion_moments(ops, model, u, g, np.array([0.5]))
    space = ops.space
    ref = np.zeros(ops.dim)
    for k, dofs in space.edge_dofs.items():
        pts, wts, h, t = fem._element_points(space.nodes[k], 16)
        gu = u[dofs[:-1], None] * (1 - t) + u[dofs[1:], None] * t
        wgt = 0.5 * gu * e1(k, pts) * ops.coeffs.beta(k, pts) * ops.weight(k, pts) * wts
        np.add.at(ref, dofs[:-1], np.sum(wgt * (1 - t), axis=1))
        np.add.at(ref, dofs[1:], np.sum(wgt * t, axis=1))
    assert np.allclose(rhs, ref, rtol=1e-10, atol=1e-13)


def test_ito_isometry(weighted_ops):
    tg, ops = weighted_ops
    basis = [nz.constant_function(0.6), nz.level_cosine(1, 0.0, 4.0, 0.5), nz.level_cosine(2, 0.0, 4.0, 0.4)]
    model = nz.build_direct_noise(tg, basis, 1.0)
    u = nz.nodal_values(ops.space, lambda k, z: 1.0 + 0.5 * np.cos(z))
    eta = nz.nodal_values(ops.space, lambda k, z: co.make_cutoff(3.0)(z))
    g = nz.make_nonlinearity("bounded-smooth", 1.0)
    cols = []
    for j in range(model.J):
        dW = np.zeros(model.J)
        dW[j] = 1.0
        cols.append(nz.apply_diffusion(ops, model, u, g, dW, eta))
    P = np.stack(cols, axis=1)
    dt = 0.01
    expected = dt * sum(fem.norm(ops.M_delta, P[:, j]) ** 2 for j in range(model.J))
    n = 10_000
    s = nz.sample_increments(model, 99, np.linspace(0, n * dt, n + 1))
    X = s.dW @ P.T
    sq = np.einsum("ni,ij,nj->n", X, ops.M_delta.toarray(), X)
    assert abs(sq.mean() - expected) <= 5 * sq.std(ddof=1) / math.sqrt(n)
    # linearity in the increments: one call equals the column combination
    one = nz.apply_diffusion(ops, model, u, g, s.dW[0], eta)
    assert np.allclose(one, P @ s.dW[0], atol=1e-12)
