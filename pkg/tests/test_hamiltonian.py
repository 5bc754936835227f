import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from graphspde import hamiltonian as ham
from graphspde.coefficients import AC
from graphspde.graph import VertexKind


@pytest.fixture(scope="module")
def harmonic():
    spec = ham.get_hamiltonian("harmonic")
    return spec, ham.build_reeb_graph(spec)


@pytest.fixture(scope="module")
def double_well():
    spec = ham.get_hamiltonian("double-well")
    return spec, ham.build_reeb_graph(spec)


@pytest.fixture(scope="module")
def triple_well():
    spec = ham.get_hamiltonian("triple-well")
    return spec, ham.build_reeb_graph(spec)


def flood_fill_components(spec, z, n=601):
    """Brute-force oracle: connected components of the sublevel set ``{H < z}`` on a grid."""
    grid = spec.seed_grid(n)
    labels, count = ndimage.label(spec.value(grid) < z)
    return grid, labels, count


def edges_at(graph, z):
    return [e for e in graph.edges if e.a < z < e.b]


def test_harmonic_critical_points():
    cps = ham.find_critical_points(ham.get_hamiltonian("harmonic"))
    assert len(cps) == 1
    assert cps[0].kind == "minimum" and cps[0].value == 0.0
    assert np.allclose(cps[0].x, 0.0)


def test_double_well_critical_points():
    cps = ham.find_critical_points(ham.get_hamiltonian("double-well"))
    kinds = sorted((c.kind, round(c.x[0], 9), round(c.x[1], 9)) for c in cps)
    assert kinds == [("minimum", -1.0, 0.0), ("minimum", 1.0, 0.0), ("saddle", 0.0, 0.0)]
    assert [c.value for c in cps if c.kind == "saddle"] == [1.0]


def test_triple_well_critical_points(triple_well):
    spec, reeb = triple_well
    kinds = [c.kind for c in reeb.critical_points]
    assert kinds.count("minimum") == 3 and kinds.count("saddle") == 2
    for c in reeb.critical_points:
        assert np.linalg.norm(spec.gradient(np.array(c.x))) <= 1e-10


def test_duplicate_saddle_value_rejected():
    # symmetric sextic: two saddles at the same height
    spec = ham.hamiltonian_from_expression("x1^2 * (x1^2 - 4)^2 / 16 + x2^2", box=(-2.8, 2.8))
    with pytest.raises(ham.DuplicateCriticalValue):
        ham.find_critical_points(spec)


def test_degenerate_hessian_rejected():
    spec = ham.hamiltonian_from_expression("x1^4 + x2^2", box=(-1.5, 1.5))
    with pytest.raises(ham.DegenerateHessian):
        ham.find_critical_points(spec)


def test_check_spec():
    assert ham.check_spec(ham.get_hamiltonian("double-well"))
    with pytest.raises(ham.SpecError):
        ham.check_spec(ham.hamiltonian_from_expression("x1^2 + x2^2 + 1"))
    with pytest.raises(ham.SpecError):
        ham.get_hamiltonian("quartic")


def test_harmonic_reeb_graph(harmonic):
    _, reeb = harmonic
    g = reeb.graph
    assert len(g.edges) == 1
    e = g.edges[0]
    assert e.a == 0.0 and math.isinf(e.b)
    assert g.vertex(e.tail).kind is VertexKind.EXTERIOR
    assert g.vertex(e.head).kind is VertexKind.INFINITY


def test_double_well_reeb_graph(double_well):
    _, reeb = double_well
    g = reeb.graph
    spans = [(e.a, e.b) for e in g.edges]
    assert spans == [(0.0, 1.0), (0.0, 1.0), (1.0, math.inf)]
    saddle = [v for v in g.vertices if v.kind is VertexKind.INTERIOR]
    assert len(saddle) == 1 and len(g.incident_edges(saddle[0].id)) == 3


@pytest.mark.parametrize("name", ["double-well", "triple-well"])
def test_reeb_topology_matches_flood_fill(name, double_well, triple_well):
    spec, reeb = double_well if name == "double-well" else triple_well
    g = reeb.graph
    finite = sorted({v.z for v in g.vertices if math.isfinite(v.z)})
    probes = [0.5 * (a + b) for a, b in zip(finite, finite[1:])] + [finite[-1] + 0.3]
    for z in probes:
        grid, labels, count = flood_fill_components(spec, z)
        assert count == len(edges_at(g, z)), z
        # minima grouped by the flood fill match those below a common Reeb edge
        mins = [(i, c) for i, c in enumerate(reeb.critical_points) if c.kind == "minimum" and c.value < z]
        lab = {}
        for i, c in mins:
            idx = tuple(np.argmin(np.abs(grid[:, 0, 0] - x)) for x in c.x)
            lab[i] = labels[idx]
        owner = {}
        for i, _ in mins:
            reach = _edge_above(g, i, z)
            owner[i] = reach
        for i, _ in mins:
            for j, _ in mins:
                assert (lab[i] == lab[j]) == (owner[i] == owner[j])


def _edge_above(g, vid, z):
    """Follow the graph upward from vertex ``vid`` to the edge that spans level ``z``."""
    v = vid
    while True:
        up = [g.edge(k) for k in g.incident_edges(v) if g.edge(k).tail == v]
        (e,) = up
        if e.a < z < e.b:
            return e.id
        v = e.head


def test_triple_well_graph_topology(triple_well):
    _, reeb = triple_well
    g = reeb.graph
    assert len(g.edges) == 5 and len(g.vertices) == 6
    assert [v.kind for v in g.vertices].count(VertexKind.INTERIOR) == 2
    assert g.unbounded_edge.a == pytest.approx(g.H0)


@pytest.mark.parametrize("z", [0.1, 1.0, 2.0, 5.0])
def test_harmonic_circle(harmonic, z):
    spec, reeb = harmonic
    comp = ham.trace_level(reeb, 0, z)
    r = math.sqrt(2 * z)
    assert np.allclose(np.linalg.norm(comp.points, axis=1), r, rtol=1e-12)
    assert comp.perimeter() == pytest.approx(2 * math.pi * r, rel=1e-6)
    ci = ham.contour_integrals(spec, comp)
    assert ci.alpha == pytest.approx(4 * math.pi * z, rel=1e-6)
    assert ci.beta == pytest.approx(2 * math.pi, rel=1e-6)


def test_trace_level_rejects_endpoint(harmonic):
    _, reeb = harmonic
    with pytest.raises(ValueError):
        ham.trace_level(reeb, 0, 0.0)


def test_alpha_linear_near_minimum(harmonic):
    spec, reeb = harmonic
    zs = np.array([1e-3, 2e-3, 4e-3])
    alphas = [ham.contour_integrals(spec, ham.trace_level(reeb, 0, z)).alpha for z in zs]
    slope = np.polyfit(zs, alphas, 1)[0]
    assert slope == pytest.approx(4 * math.pi, rel=1e-2)


def test_double_well_near_saddle_area_matches_flood_fill(double_well):
    spec, reeb = double_well
    z = 1.0 - 1e-4
    comp = ham.trace_level(reeb, 1, z)
    grid, labels, _ = flood_fill_components(spec, z, n=1201)
    x0 = comp.points[np.argmax(np.abs(comp.points[:, 0]))]
    inside = x0 * 0.5  # a point between the well centre and the contour
    i = np.argmin(np.abs(grid[:, 0, 0] - inside[0]))
    j = np.argmin(np.abs(grid[0, :, 1] - inside[1]))
    cell = (grid[1, 0, 0] - grid[0, 0, 0]) ** 2
    area_grid = np.sum(labels == labels[i, j]) * cell
    assert ham.enclosed_area(comp) == pytest.approx(area_grid, rel=1e-2)
    ci = ham.contour_integrals(spec, comp)
    assert math.isfinite(ci.beta) and math.isfinite(ci.alpha)


def test_step_halving_consistency(double_well):
    spec, reeb = double_well
    for z in (0.3, 0.9, 1.5):
        comp = ham.trace_level(reeb, 0 if z < 1 else 2, z)
        ci = ham.contour_integrals(spec, comp)
        assert ci.osc_alpha / ci.alpha < 1e-3
        fine = ham.trace_from(spec, comp.points[0], z, c_curv=0.005)
        cf = ham.contour_integrals(spec, fine)
        assert cf.alpha == pytest.approx(ci.alpha, rel=1e-6)
        assert cf.beta == pytest.approx(ci.beta, rel=1e-6)


def test_laplacian_identity(double_well):
    spec, reeb = double_well
    z, h = 1.6, 1e-3
    a = [ham.contour_integrals(spec, ham.trace_level(reeb, 2, zz)).alpha for zz in (z - h, z + h)]
    fd = (a[1] - a[0]) / (2 * h)
    direct = ham.laplacian_integral(spec, ham.trace_level(reeb, 2, z))
    assert fd == pytest.approx(direct, rel=1e-3)


def test_saddle_log_regression(double_well):
    spec, reeb = double_well
    d = np.geomspace(1e-3, 1e-1, 12)
    beta = [ham.contour_integrals(spec, ham.trace_level(reeb, 0, 1.0 - x)).beta for x in d]
    x = np.abs(np.log(d))
    coef = np.polyfit(x, beta, 1)
    resid = beta - np.polyval(coef, x)
    r2 = 1 - np.sum(resid ** 2) / np.sum((beta - np.mean(beta)) ** 2)
    assert r2 >= 0.98
    assert coef[0] > 0


def test_tabulated_harmonic_matches_closed_form(harmonic):
    spec, reeb = harmonic
    table = ham.sample_contours(reeb, 16, span=4.0)
    fld = ham.tabulate_coefficients(spec, reeb, table=table)
    z = np.linspace(0.05, 3.9, 40)
    assert np.allclose(fld.alpha(0, z), 4 * np.pi * z, rtol=1e-4)
    assert np.allclose(fld.beta(0, z), 2 * np.pi, rtol=1e-4)
    assert fld.edges[0].alpha_class[0] is AC.LINEAR_VANISHING


def test_tabulated_classes_at_saddle(double_well):
    _, reeb = double_well
    ac, bc = ham.endpoint_classes(reeb, 0)
    assert ac[0] is AC.LINEAR_VANISHING and bc[1] is AC.LOG_BLOWUP
    ac, bc = ham.endpoint_classes(reeb, 2)
    assert bc[0] is AC.LOG_BLOWUP and ac[1] is AC.LINEAR_GROWTH


def test_projection_examples(harmonic):
    spec, reeb = harmonic
    table = ham.sample_contours(reeb, 16, span=3.0)
    one, odd, sq = ham.project_to_graph(spec, table, [
        lambda x: np.ones(len(x)), lambda x: x[:, 0], lambda x: x[:, 0] ** 2 + x[:, 1] ** 2])
    z = table.levels[0]
    assert np.allclose(one(0, z), 1.0, atol=1e-10)
    assert np.allclose(odd(0, z), 0.0, atol=1e-10)
    assert np.allclose(sq(0, z), 2 * z, rtol=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 4.0))
def test_traced_points_lie_on_level(z):
    spec = ham.get_hamiltonian("double-well")
    comp = ham.trace_from(spec, np.array([1.0, math.sqrt(z)]), z)
    assert np.max(np.abs(spec.value(comp.points) - z)) <= 1e-12 * max(1.0, z)
    assert len(comp.points) % 2 == 0
