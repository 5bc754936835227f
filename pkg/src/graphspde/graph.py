"""Metric graphs with z-coordinate edges, their truncations, and the text format.

Edges are stored directly in the level-value coordinate: edge ``k`` is the
interval ``[a, b]`` of the Hamiltonian, with the vertex at ``a`` called the
tail and the vertex at ``b`` the head.  The point at infinity is a sentinel
vertex; nothing downstream does arithmetic with it, everything numerical runs
on a :class:`TruncatedGraph`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class GraphError(ValueError):
    pass


class DisconnectedGraph(GraphError):
    pass


class BadDegree(GraphError):
    def __init__(self, vertex, degree, expected):
        super().__init__(f"vertex {vertex} has degree {degree}, expected {expected}")
        self.vertex = vertex


class InconsistentInterval(GraphError):
    def __init__(self, edge, reason):
        super().__init__(f"edge {edge}: {reason}")
        self.edge = edge


class RTooSmall(GraphError):
    pass


class NoUnboundedEdge(GraphError):
    pass


class VertexKind(str, Enum):
    INTERIOR = "interior"
    EXTERIOR = "exterior"
    INFINITY = "infinity"
    BOUNDARY = "boundary"

    @property
    def is_exterior_like(self):
        """Degree-one vertices where the diffusion coefficient vanishes."""
        return self is not VertexKind.INTERIOR


@dataclass(frozen=True)
class Vertex:
    id: int
    kind: VertexKind
    z: float


@dataclass(frozen=True)
class Edge:
    id: int
    a: float
    b: float
    tail: int
    head: int

    @property
    def bounded(self):
        return math.isfinite(self.b)

    @property
    def length(self):
        return self.b - self.a

    def sign_at(self, vertex):
        """Incidence sign: +1 if z decreases toward ``vertex``, -1 if it increases."""
        if vertex == self.tail:
            return 1
        if vertex == self.head:
            return -1
        raise KeyError(f"vertex {vertex} is not incident to edge {self.id}")

    def reversed(self):
        """Same edge parameterized by -z (used for orientation checks)."""
        return Edge(self.id, -self.b, -self.a, self.head, self.tail)


_EXPECTED_DEGREE = {
    VertexKind.INTERIOR: 3,
    VertexKind.EXTERIOR: 1,
    VertexKind.INFINITY: 1,
    VertexKind.BOUNDARY: 1,
}


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    relax_degree: bool = False
    _vindex: dict = field(init=False, repr=False, compare=False)
    _incident: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vindex = {v.id: v for v in self.vertices}
        incident = {v.id: [] for v in self.vertices}
        for e in self.edges:
            for vid in (e.tail, e.head):
                if vid in incident:
                    incident[vid].append(e.id)
        object.__setattr__(self, "_vindex", vindex)
        object.__setattr__(self, "_incident", {k: tuple(v) for k, v in incident.items()})
        self._validate()

    def _validate(self):
        if len(self._vindex) != len(self.vertices):
            raise GraphError("duplicate vertex ids")
        if len({e.id for e in self.edges}) != len(self.edges):
            raise GraphError("duplicate edge ids")
        if sum(v.kind is VertexKind.INFINITY for v in self.vertices) > 1:
            raise GraphError("at most one infinity vertex is allowed")
        unbounded = 0
        for e in self.edges:
            if e.tail not in self._vindex or e.head not in self._vindex:
                raise InconsistentInterval(e.id, "endpoint refers to unknown vertex")
            if e.tail == e.head:
                raise InconsistentInterval(e.id, "self-loops are not supported")
            if not e.a < e.b:
                raise InconsistentInterval(e.id, f"need a < b, got [{e.a}, {e.b}]")
            tail, head = self._vindex[e.tail], self._vindex[e.head]
            if tail.kind is VertexKind.INFINITY:
                raise InconsistentInterval(e.id, "infinity vertex must sit at the upper end")
            if not math.isclose(e.a, tail.z, rel_tol=1e-12, abs_tol=1e-12):
                raise InconsistentInterval(e.id, f"a={e.a} but tail vertex has z={tail.z}")
            if math.isfinite(e.b):
                if head.kind is VertexKind.INFINITY:
                    raise InconsistentInterval(e.id, "bounded edge ends at infinity vertex")
                if not math.isclose(e.b, head.z, rel_tol=1e-12, abs_tol=1e-12):
                    raise InconsistentInterval(e.id, f"b={e.b} but head vertex has z={head.z}")
            else:
                unbounded += 1
                if head.kind is not VertexKind.INFINITY:
                    raise InconsistentInterval(e.id, "unbounded edge must end at the infinity vertex")
        if unbounded > 1:
            raise GraphError("at most one unbounded edge is allowed")
        for v in self.vertices:
            deg = len(self._incident[v.id])
            expected = _EXPECTED_DEGREE[v.kind]
            if v.kind is VertexKind.INTERIOR and self.relax_degree:
                if deg < 2:
                    raise BadDegree(v.id, deg, ">= 2")
            elif deg != expected:
                raise BadDegree(v.id, deg, expected)
        if not self._connected():
            raise DisconnectedGraph("graph is not connected")

    def _connected(self):
        if not self.vertices:
            return True
        adj = {v.id: set() for v in self.vertices}
        for e in self.edges:
            adj[e.tail].add(e.head)
            adj[e.head].add(e.tail)
        start = self.vertices[0].id
        seen, stack = {start}, [start]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(self.vertices)

    # lookups ---------------------------------------------------------------
    def vertex(self, vid) -> Vertex:
        return self._vindex[vid]

    def edge(self, kid) -> Edge:
        for e in self.edges:
            if e.id == kid:
                return e
        raise KeyError(kid)

    def incident_edges(self, vid):
        return self._incident[vid]

    @property
    def edge_ids(self):
        return tuple(e.id for e in self.edges)

    @property
    def unbounded_edge(self):
        for e in self.edges:
            if not e.bounded:
                return e
        return None

    @property
    def compact(self):
        return self.unbounded_edge is None

    @property
    def H0(self):
        """Largest finite critical value (top of the compact core)."""
        return max(v.z for v in self.vertices if v.kind is not VertexKind.INFINITY)

    def interior_vertices(self):
        return [v for v in self.vertices if v.kind is VertexKind.INTERIOR]


@dataclass(frozen=True)
class TruncatedGraph(MetricGraph):
    base: MetricGraph | None = None
    R: float = math.inf
    boundary_vertex: int = -1


def build_graph(description, relax_degree=False) -> MetricGraph:
    """Build a validated graph from a ``{"vertices": [...], "edges": [...]}`` mapping."""
    vertices = tuple(
        Vertex(int(v["id"]), VertexKind(v["kind"]), float(v["z"])) for v in description["vertices"]
    )
    edges = tuple(
        Edge(int(e["id"]), float(e["a"]), float(e["b"]), int(e["v_at_a"]), int(e["v_at_b"]))
        for e in description["edges"]
    )
    return MetricGraph(vertices, edges, relax_degree=relax_degree)


def truncate(g: MetricGraph, R: float) -> TruncatedGraph:
    """Clip the unbounded edge to ``[H0, R+1]`` and replace infinity by a boundary vertex."""
    e_inf = g.unbounded_edge
    if e_inf is None:
        raise NoUnboundedEdge("graph has no unbounded edge to truncate")
    H0 = g.H0
    if not R > H0 + 1e-12 * max(1.0, abs(H0)):
        raise RTooSmall(f"R={R} must exceed H0={H0}")
    new_id = max(v.id for v in g.vertices if v.kind is not VertexKind.INFINITY) + 1
    vertices = tuple(v for v in g.vertices if v.kind is not VertexKind.INFINITY)
    vertices += (Vertex(new_id, VertexKind.BOUNDARY, R + 1.0),)
    edges = tuple(
        Edge(e.id, e.a, R + 1.0, e.tail, new_id) if e is e_inf else e for e in g.edges
    )
    return TruncatedGraph(vertices, edges, relax_degree=g.relax_degree, base=g, R=float(R),
                          boundary_vertex=new_id)


def kirchhoff_stencil(g: MetricGraph, vid):
    """Signed incidence list ``[(edge_id, sign), ...]`` for the flux balance at ``vid``.

    Empty at exterior vertices, where the diffusion coefficient vanishes and
    the flux condition is vacuous.
    """
    v = g.vertex(vid)
    if v.kind in (VertexKind.EXTERIOR, VertexKind.INFINITY):
        return []
    return [(kid, g.edge(kid).sign_at(vid)) for kid in g.incident_edges(vid)]


# file format -------------------------------------------------------------------

_VERTEX_KEYS = {"id", "kind", "z"}
_EDGE_KEYS = {"id", "a", "b", "v_at_a", "v_at_b"}
_TOP_KEYS = {"vertices", "edges", "relax_degree"}


def parse_graph_description(text: str) -> dict:
    """Parse the TOML graph format; unknown keys are rejected.

    ``inf`` is a valid TOML float, so the unbounded edge is written ``b = inf``.
    """
    data = tomllib.loads(text)
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise GraphError(f"unknown top-level keys: {sorted(unknown)}")
    for section, allowed in (("vertices", _VERTEX_KEYS), ("edges", _EDGE_KEYS)):
        if section not in data:
            raise GraphError(f"missing [[{section}]] section")
        for row in data[section]:
            extra = set(row) - allowed
            missing = allowed - set(row)
            if extra:
                raise GraphError(f"unknown keys in [[{section}]]: {sorted(extra)}")
            if missing:
                raise GraphError(f"missing keys in [[{section}]]: {sorted(missing)}")
    return data


def load_graph(path) -> MetricGraph:
    data = parse_graph_description(Path(path).read_text())
    return build_graph(data, relax_degree=bool(data.get("relax_degree", False)))


def _fmt(x):
    if math.isinf(x):
        return "inf"
    return repr(float(x))


def dump_graph(g: MetricGraph) -> str:
    lines = []
    if g.relax_degree:
        lines += ["relax_degree = true", ""]
    for v in g.vertices:
        lines += ["[[vertices]]", f"id = {v.id}", f'kind = "{v.kind.value}"', f"z = {_fmt(v.z)}", ""]
    for e in g.edges:
        lines += ["[[edges]]", f"id = {e.id}", f"a = {_fmt(e.a)}", f"b = {_fmt(e.b)}",
                  f"v_at_a = {e.tail}", f"v_at_b = {e.head}", ""]
    return "\n".join(lines)


# built-in shapes -----------------------------------------------------------------

def interval_graph(a=0.0, b=1.0) -> MetricGraph:
    return build_graph({
        "vertices": [{"id": 0, "kind": "exterior", "z": a}, {"id": 1, "kind": "exterior", "z": b}],
        "edges": [{"id": 0, "a": a, "b": b, "v_at_a": 0, "v_at_b": 1}],
    })


def half_line_graph(a=0.0) -> MetricGraph:
    """Single extremum plus infinity: the graph of a confining single-well H."""
    return build_graph({
        "vertices": [{"id": 0, "kind": "exterior", "z": a},
                     {"id": 1, "kind": "infinity", "z": math.inf}],
        "edges": [{"id": 0, "a": a, "b": math.inf, "v_at_a": 0, "v_at_b": 1}],
    })


def star_graph(lengths=(1.0, 1.0, 1.0), center_z=1.0) -> MetricGraph:
    """Star whose leaves lie below the centre (a synthetic interior vertex)."""
    verts = [{"id": 0, "kind": "interior", "z": center_z}]
    edges = []
    for i, L in enumerate(lengths, start=1):
        verts.append({"id": i, "kind": "exterior", "z": center_z - L})
        edges.append({"id": i - 1, "a": center_z - L, "b": center_z, "v_at_a": i, "v_at_b": 0})
    return build_graph({"vertices": verts, "edges": edges}, relax_degree=len(lengths) != 3)


def three_well_graph(minima=(0.0, 0.3, 0.6), saddles=(1.0, 1.5)) -> MetricGraph:
    """Three wells joined by two saddles, then the unbounded edge (vertex 5 is infinity).

    Minima 0 and 1 merge at saddle 3; minimum 2 joins at saddle 4.
    """
    m0, m1, m2 = minima
    s3, s4 = saddles
    return build_graph({
        "vertices": [
            {"id": 0, "kind": "exterior", "z": m0},
            {"id": 1, "kind": "exterior", "z": m1},
            {"id": 2, "kind": "exterior", "z": m2},
            {"id": 3, "kind": "interior", "z": s3},
            {"id": 4, "kind": "interior", "z": s4},
            {"id": 5, "kind": "infinity", "z": math.inf},
        ],
        "edges": [
            {"id": 0, "a": m0, "b": s3, "v_at_a": 0, "v_at_b": 3},
            {"id": 1, "a": m1, "b": s3, "v_at_a": 1, "v_at_b": 3},
            {"id": 2, "a": m2, "b": s4, "v_at_a": 2, "v_at_b": 4},
            {"id": 3, "a": s3, "b": s4, "v_at_a": 3, "v_at_b": 4},
            {"id": 4, "a": s4, "b": math.inf, "v_at_a": 4, "v_at_b": 5},
        ],
    })


def edge_grid(edge: Edge, n, z_max=None):
    """``n`` interior sample points of an edge, clipped at ``z_max`` if unbounded."""
    b = edge.b if edge.bounded else z_max
    return np.linspace(edge.a, b, n + 2)[1:-1]
