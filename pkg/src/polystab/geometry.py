"""Measured polytopes, meshes, quadrature and exact moments.

A polytope is given by inward facet inequalities ``nu_k . x >= c_k`` with
primitive integral normals.  Each facet carries a non-negative multiplier
``sigma_weight`` on the canonical boundary density ``1 / |nu_k|``, which is the
density making ``d sigma ^ d h_k = d mu``.

All combinatorial data (vertices, triangulation, volumes, moments up to
degree two) are computed in exact rational arithmetic.  Meshes and quadrature
rules are exported as float arrays for the numerical layers.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import (
    DegreeUnsupported,
    EmptyInterior,
    MalformedDocument,
    NonPrimitiveNormal,
    ResolutionTooSmall,
    UnboundedPolytope,
)

log = logging.getLogger(__name__)

__all__ = [
    "Facet",
    "Polytope",
    "MeasuredPolytope",
    "Quadrature",
    "ScalarSummary",
    "MomentTable",
    "to_fraction",
    "parse_polytope",
    "load_polytope",
    "canonical_facet_density",
    "canonical_facet_measure",
    "scalar_summary",
    "moments",
    "build_quadrature",
    "simplex_rule",
    "integrate_quadratic",
    "interval",
    "trapezium",
    "clip",
    "clip_volume_float",
]


def to_fraction(value) -> Fraction:
    """Convert a JSON scalar (int, float, ``"p/q"`` string) to a Fraction.

    Floats are read through their shortest decimal representation so that
    ``0.1`` becomes ``1/10`` rather than the nearest binary fraction.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise MalformedDocument(f"boolean is not a number: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise MalformedDocument(f"non-finite number {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise MalformedDocument(f"cannot parse rational {value!r}") from exc
    raise MalformedDocument(f"expected a number, got {type(value).__name__}")


def primitive_normal(normal: Sequence, offset) -> tuple[tuple[int, ...], Fraction]:
    """Scale a rational inequality ``normal . x >= offset`` to a primitive integral normal."""
    fr = [to_fraction(a) for a in normal]
    den = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fr), 1)
    ints = [int(f * den) for f in fr]
    g = reduce(math.gcd, (abs(a) for a in ints), 0)
    if g == 0:
        raise MalformedDocument("zero normal")
    return tuple(a // g for a in ints), to_fraction(offset) * den / g


# ---------------------------------------------------------------------------
# exact linear algebra on small Fraction matrices


def _det(rows: list[list]) -> Fraction:
    m = [list(r) for r in rows]
    n = len(m)
    det = Fraction(1)
    for c in range(n):
        p = next((r for r in range(c, n) if m[r][c] != 0), None)
        if p is None:
            return Fraction(0)
        if p != c:
            m[c], m[p] = m[p], m[c]
            det = -det
        det *= m[c][c]
        inv = 1 / m[c][c]
        for r in range(c + 1, n):
            if m[r][c] != 0:
                f = m[r][c] * inv
                m[r] = [a - f * b for a, b in zip(m[r], m[c])]
    return det


def _solve(a: list[list], b: list) -> list | None:
    """Gauss-Jordan elimination; ``None`` when singular."""
    n = len(a)
    m = [list(r) + [v] for r, v in zip(a, b)]
    for c in range(n):
        p = next((r for r in range(c, n) if m[r][c] != 0), None)
        if p is None:
            return None
        m[c], m[p] = m[p], m[c]
        inv = 1 / m[c][c]
        m[c] = [v * inv for v in m[c]]
        for r in range(n):
            if r != c and m[r][c] != 0:
                f = m[r][c]
                m[r] = [x - f * y for x, y in zip(m[r], m[c])]
    return [m[r][n] for r in range(n)]


def _rank(rows: list[list]) -> int:
    m = [list(r) for r in rows]
    if not m:
        return 0
    rank, ncol = 0, len(m[0])
    for c in range(ncol):
        p = next((r for r in range(rank, len(m)) if m[r][c] != 0), None)
        if p is None:
            continue
        m[rank], m[p] = m[p], m[rank]
        for r in range(rank + 1, len(m)):
            if m[r][c] != 0:
                f = m[r][c] / m[rank][c]
                m[r] = [x - f * y for x, y in zip(m[r], m[rank])]
        rank += 1
    return rank


def _affine_dim(points: list) -> int:
    if not points:
        return -1
    p0 = points[0]
    return _rank([[a - b for a, b in zip(p, p0)] for p in points[1:]])


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class Facet:
    """Inward inequality ``normal . x >= offset`` with a boundary-measure weight.

    ``cut`` marks facets that are not part of the original polytope boundary
    (interior cuts of a decomposition); they must have zero weight and are
    excluded from the canonical normalising measure.
    """

    normal: tuple[int, ...]
    offset: Fraction
    sigma_weight: Fraction = Fraction(1)
    cut: bool = False

    def __post_init__(self):
        object.__setattr__(self, "normal", tuple(int(a) for a in self.normal))
        object.__setattr__(self, "offset", to_fraction(self.offset))
        object.__setattr__(self, "sigma_weight", to_fraction(self.sigma_weight))
        if self.sigma_weight < 0:
            raise MalformedDocument(f"negative sigma_weight {self.sigma_weight}")
        if self.cut and self.sigma_weight != 0:
            raise MalformedDocument("cut facets must carry zero weight")

    @property
    def dim(self) -> int:
        return len(self.normal)

    def slack(self, x) -> Fraction:
        return sum(a * b for a, b in zip(self.normal, x)) - self.offset

    @property
    def norm(self) -> float:
        return math.sqrt(sum(a * a for a in self.normal))

    def to_dict(self) -> dict:
        d = {
            "normal": list(self.normal),
            "offset": str(self.offset),
            "sigma_weight": str(self.sigma_weight),
        }
        if self.cut:
            d["cut"] = True
        return d


def canonical_facet_density(facet: Facet) -> float:
    """Factor turning Euclidean facet measure into canonical ``d sigma``: ``1/|nu|``."""
    return 1.0 / facet.norm


@dataclass(frozen=True)
class ScalarSummary:
    vol_mu: Fraction
    vol_sigma: Fraction
    s_hat: Fraction

    def to_dict(self) -> dict:
        return {
            "vol_mu": str(self.vol_mu),
            "vol_sigma": str(self.vol_sigma),
            "s_hat": str(self.s_hat),
            "s_hat_float": float(self.s_hat),
        }


@dataclass(frozen=True)
class MomentTable:
    """Exact monomial integrals keyed by exponent tuples."""

    degree: int
    interior: dict
    boundary: dict
    facet_boundary: tuple  # per facet, unweighted canonical moments

    def interior_matrix(self, n: int):
        """Return (mass, first, second) exact moments as nested lists."""
        e = _unit_exponents(n)
        mass = self.interior[(0,) * n]
        first = [self.interior[e[i]] for i in range(n)]
        second = [[self.interior[_add(e[i], e[j])] for j in range(n)] for i in range(n)]
        return mass, first, second


def _unit_exponents(n):
    return [tuple(1 if k == i else 0 for k in range(n)) for i in range(n)]


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


class Polytope:
    """Bounded full-dimensional polytope in H-representation with measure weights.

    Construction validates the input and derives the vertex list (sorted
    lexicographically), facet/vertex incidences and a fan triangulation.
    Instances are treated as immutable.
    """

    def __init__(self, facets: Iterable[Facet], *, name: str = ""):
        facets = tuple(facets)
        if not facets:
            raise MalformedDocument("no facets")
        n = facets[0].dim
        if n < 1:
            raise MalformedDocument("dimension must be at least 1")
        for k, f in enumerate(facets):
            if f.dim != n:
                raise MalformedDocument(f"facet {k}: normal has length {f.dim}, expected {n}")
            g = reduce(math.gcd, (abs(a) for a in f.normal), 0)
            if g == 0:
                raise MalformedDocument(f"facet {k}: zero normal")
            if g != 1:
                raise NonPrimitiveNormal(k, f.normal)
        self.dim = n
        self.facets = facets
        self.name = name
        _check_bounded(facets, n)
        verts = _enumerate_vertices(facets, n)
        if not verts or _affine_dim(verts) < n:
            raise EmptyInterior("polytope has empty interior")
        self.vertices: tuple = tuple(verts)
        self.facet_vertices: tuple = tuple(
            frozenset(i for i, v in enumerate(verts) if f.slack(v) == 0) for f in facets
        )
        for k, fv in enumerate(self.facet_vertices):
            if _affine_dim([verts[i] for i in fv]) != n - 1:
                raise MalformedDocument(f"facet {k} is redundant (does not support a face of P)")
        self.simplices: tuple = tuple(self._triangulate(frozenset(range(len(verts))), n))
        self.facet_simplices: tuple = tuple(
            tuple(self._triangulate(fv, n - 1)) for fv in self.facet_vertices
        )

    # -- combinatorics -----------------------------------------------------

    def _subfaces(self, face: frozenset, d: int) -> list[frozenset]:
        out = []
        for fv in self.facet_vertices:
            g = face & fv
            if g != face and g not in out and _affine_dim([self.vertices[i] for i in g]) == d - 1:
                out.append(g)
        return out

    def _triangulate(self, face: frozenset, d: int) -> list[tuple[int, ...]]:
        if d == 0:
            return [tuple(face)]
        v0 = min(face)
        out = []
        for g in sorted(self._subfaces(face, d), key=sorted):
            if v0 in g:
                continue
            out.extend((v0,) + s for s in self._triangulate(g, d - 1))
        return [tuple(sorted(s)) for s in out]

    # -- derived data --------------------------------------------------------

    @property
    def weights(self) -> tuple[Fraction, ...]:
        return tuple(f.sigma_weight for f in self.facets)

    @cached_property
    def vertex_array(self) -> np.ndarray:
        return np.array([[float(a) for a in v] for v in self.vertices])

    def simplex_volume(self, s: tuple[int, ...]) -> Fraction:
        p0 = self.vertices[s[0]]
        rows = [[a - b for a, b in zip(self.vertices[i], p0)] for i in s[1:]]
        return abs(_det(rows)) / math.factorial(self.dim)

    def facet_simplex_measure(self, k: int, s: tuple[int, ...]) -> Fraction:
        """Canonical (unweighted) measure of a facet simplex."""
        return canonical_facet_measure(self.facets[k], [self.vertices[i] for i in s])

    @cached_property
    def volume(self) -> Fraction:
        return sum((self.simplex_volume(s) for s in self.simplices), Fraction(0))

    @cached_property
    def facet_measures(self) -> tuple[Fraction, ...]:
        return tuple(
            sum((self.facet_simplex_measure(k, s) for s in ss), Fraction(0))
            for k, ss in enumerate(self.facet_simplices)
        )

    @cached_property
    def centroid(self) -> tuple[Fraction, ...]:
        acc = [Fraction(0)] * self.dim
        for s in self.simplices:
            vol = self.simplex_volume(s)
            for i in range(self.dim):
                acc[i] += vol * sum(self.vertices[j][i] for j in s) / (self.dim + 1)
        return tuple(a / self.volume for a in acc)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return all(float(np.dot(f.normal, x)) - float(f.offset) >= -tol for f in self.facets)

    def with_weights(self, weights: Sequence) -> "Polytope":
        facets = [
            Facet(f.normal, f.offset, to_fraction(w), f.cut) for f, w in zip(self.facets, weights)
        ]
        return Polytope(facets, name=self.name)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "facets": [f.to_dict() for f in self.facets]}

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Polytope{label} dim={self.dim} facets={len(self.facets)} vertices={len(self.vertices)}>"


MeasuredPolytope = Polytope


def canonical_facet_measure(facet: Facet, points: Sequence) -> Fraction:
    """Canonical measure of the (n-1)-simplex spanned by ``points`` on ``facet``.

    With ``w = nu/|nu|^2`` the canonical measure is
    ``|det[p_1 - p_0, ..., p_{n-1} - p_0, w]| / (n-1)!``, which is rational.
    """
    n = facet.dim
    nn = sum(a * a for a in facet.normal)
    w = [Fraction(a, nn) for a in facet.normal]
    p0 = points[0]
    rows = [[a - b for a, b in zip(p, p0)] for p in points[1:]] + [w]
    return abs(_det(rows)) / math.factorial(n - 1)


def _check_bounded(facets, n):
    a = np.array([f.normal for f in facets], dtype=float)
    if np.linalg.matrix_rank(a) < n:
        raise UnboundedPolytope("facet normals do not span; the polyhedron contains a line")
    # a recession direction d has nu_k . d >= 0 for all k with some strict
    res = linprog(
        np.zeros(n),
        A_ub=-a,
        b_ub=np.zeros(len(facets)),
        A_eq=a.sum(axis=0, keepdims=True),
        b_eq=[1.0],
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == 0:
        raise UnboundedPolytope(f"unbounded in direction {np.round(res.x, 6).tolist()}")


def _enumerate_vertices(facets, n) -> list[tuple[Fraction, ...]]:
    verts = set()
    for combo in itertools.combinations(range(len(facets)), n):
        a = [[Fraction(x) for x in facets[k].normal] for k in combo]
        x = _solve(a, [facets[k].offset for k in combo])
        if x is None:
            continue
        if all(f.slack(x) >= 0 for f in facets):
            verts.add(tuple(x))
    return sorted(verts)


def scalar_summary(mp: Polytope) -> ScalarSummary:
    vol = mp.volume
    vol_sigma = sum((w * m for w, m in zip(mp.weights, mp.facet_measures)), Fraction(0))
    return ScalarSummary(vol, vol_sigma, vol_sigma / vol)


# ---------------------------------------------------------------------------
# exact moments


def _simplex_moments(points, measure, n):
    """Exact degree <= 2 moments of a simplex of any dimension embedded in R^n.

    Returns ``(m0, m1, m2)`` with m1 a list and m2 an n x n nested list.
    """
    k = len(points)  # simplex dimension + 1
    s = [sum(p[i] for p in points) for i in range(n)]
    m1 = [measure * s[i] / k for i in range(n)]
    c = measure / (k * (k + 1))
    m2 = [
        [c * (sum(p[i] * p[j] for p in points) + s[i] * s[j]) for j in range(n)] for i in range(n)
    ]
    return measure, m1, m2


def _table_from(m0, m1, m2, n, degree):
    out = {(0,) * n: m0}
    e = _unit_exponents(n)
    if degree >= 1:
        for i in range(n):
            out[e[i]] = m1[i]
    if degree >= 2:
        for i in range(n):
            for j in range(i, n):
                out[_add(e[i], e[j])] = m2[i][j]
    return out


def _accumulate(acc, m):
    if acc is None:
        return [m[0], list(m[1]), [list(r) for r in m[2]]]
    acc[0] += m[0]
    n = len(acc[1])
    for i in range(n):
        acc[1][i] += m[1][i]
        for j in range(n):
            acc[2][i][j] += m[2][i][j]
    return acc


def _zero_moments(n):
    return [Fraction(0), [Fraction(0)] * n, [[Fraction(0)] * n for _ in range(n)]]


def moments(mp: Polytope, degree: int = 2) -> MomentTable:
    """Exact interior and weighted boundary moments of degree <= 2."""
    if degree > 2 or degree < 0:
        raise DegreeUnsupported(f"moments are available up to degree 2, got {degree}")
    n = mp.dim
    acc = _zero_moments(n)
    for s in mp.simplices:
        pts = [mp.vertices[i] for i in s]
        acc = _accumulate(acc, _simplex_moments(pts, mp.simplex_volume(s), n))
    bacc = _zero_moments(n)
    per_facet = []
    for k, ss in enumerate(mp.facet_simplices):
        facc = _zero_moments(n)
        for s in ss:
            pts = [mp.vertices[i] for i in s]
            facc = _accumulate(facc, _simplex_moments(pts, mp.facet_simplex_measure(k, s), n))
        per_facet.append(_table_from(*facc, n, degree))
        w = mp.facets[k].sigma_weight
        bacc = _accumulate(
            bacc, (w * facc[0], [w * a for a in facc[1]], [[w * a for a in r] for r in facc[2]])
        )
    return MomentTable(
        degree, _table_from(*acc, n, degree), _table_from(*bacc, n, degree), tuple(per_facet)
    )


def integrate_quadratic(points, measure, q, g, c):
    """Integrate ``x^T q x + g.x + c`` exactly over a simplex (works with Fractions or floats)."""
    n = len(g)
    m0, m1, m2 = _simplex_moments(points, measure, n)
    return (
        sum(q[i][j] * m2[i][j] for i in range(n) for j in range(n))
        + sum(g[i] * m1[i] for i in range(n))
        + c * m0
    )


# ---------------------------------------------------------------------------
# quadrature


def simplex_rule(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Degree-2 rule on the reference m-simplex in barycentric coordinates.

    Returns ``(bary, weights)`` with weights summing to one.  For ``m = 1``
    this is two-point Gauss (exact to degree three).
    """
    if m == 0:
        return np.ones((1, 1)), np.ones(1)
    root = math.sqrt(m + 2)
    r = (m + 2 - root) / ((m + 1) * (m + 2))
    s = (m + 2 + m * root) / ((m + 1) * (m + 2))
    bary = np.full((m + 1, m + 1), r)
    np.fill_diagonal(bary, s)
    return bary, np.full(m + 1, 1.0 / (m + 1))


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Mesh plus interior and boundary quadrature, all as float arrays.

    Attributes
    ----------
    mesh_nodes : (N, n) array
        Distinct mesh vertices; every vertex of P is a mesh node.
    cells : (C, n+1) int array
        Mesh simplices as node indices.
    cell_volumes : (C,) array
    boundary_faces : (F, n) int array
        Codimension-one mesh faces lying on facets of P.
    boundary_face_facet : (F,) int array
    boundary_face_measure : (F,) array
        Canonical (unweighted) measure of each boundary face.
    interior_points, interior_weights, interior_basis
        Quadrature nodes, weights (sum to Vol P) and the sparse matrix
        mapping nodal values to values at quadrature points (P1 interpolation).
    boundary_points, boundary_weights, boundary_facet, boundary_basis
        The same for the weighted boundary measure.  Faces with zero weight
        keep their nodes with zero weights.
    boundary_canonical_weights
        Boundary weights for the canonical measure restricted to non-cut facets.
    exactness_degree : int
    """

    mp: Polytope
    resolution: int
    grading: float
    mesh_nodes: np.ndarray
    cells: np.ndarray
    cell_volumes: np.ndarray
    boundary_faces: np.ndarray
    boundary_face_facet: np.ndarray
    boundary_face_measure: np.ndarray
    interior_points: np.ndarray
    interior_weights: np.ndarray
    interior_basis: sp.csr_matrix
    boundary_points: np.ndarray
    boundary_weights: np.ndarray
    boundary_facet: np.ndarray
    boundary_basis: sp.csr_matrix
    boundary_canonical_weights: np.ndarray
    exactness_degree: int = 2
    node_keys: tuple = field(default=(), repr=False)

    @property
    def dim(self) -> int:
        return self.mp.dim

    @property
    def n_nodes(self) -> int:
        return len(self.mesh_nodes)

    @cached_property
    def mass_matrix(self) -> np.ndarray:
        """Consistent P1 mass matrix ``E^T W E`` (dense)."""
        e = self.interior_basis
        return np.asarray((e.T @ sp.diags(self.interior_weights) @ e).todense())

    @cached_property
    def boundary_load(self) -> np.ndarray:
        """Vector ``int_{dP} phi_i d sigma`` for the nodal hat functions."""
        return np.asarray(self.boundary_basis.T @ self.boundary_weights).ravel()

    @cached_property
    def canonical_boundary_load(self) -> np.ndarray:
        return np.asarray(self.boundary_basis.T @ self.boundary_canonical_weights).ravel()

    @cached_property
    def mesh_weights(self) -> np.ndarray:
        """Lumped nodal weights (row sums of the mass matrix)."""
        return np.asarray(self.interior_basis.T @ self.interior_weights).ravel()

    @cached_property
    def mesh_h(self) -> float:
        """Largest cell diameter."""
        pts = self.mesh_nodes[self.cells]
        d = 0.0
        for a, b in itertools.combinations(range(self.dim + 1), 2):
            d = max(d, float(np.max(np.linalg.norm(pts[:, a] - pts[:, b], axis=1))))
        return d

    @cached_property
    def centroid_node(self) -> int:
        c = np.array([float(a) for a in self.mp.centroid])
        return int(np.argmin(np.linalg.norm(self.mesh_nodes - c, axis=1)))

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique mesh edges as an (E, 2) array."""
        pairs = set()
        for cell in self.cells:
            for a, b in itertools.combinations(sorted(cell.tolist()), 2):
                pairs.add((a, b))
        return np.array(sorted(pairs), dtype=int)

    def integrate(self, values) -> float:
        """Integrate nodal values (P1 interpolant) against d mu."""
        return float(self.interior_weights @ (self.interior_basis @ np.asarray(values)))

    def integrate_boundary(self, values) -> float:
        return float(self.boundary_weights @ (self.boundary_basis @ np.asarray(values)))


def _kuhn_cells(n: int, N: int) -> list[tuple[tuple[int, ...], ...]]:
    """Kuhn subdivision of the path simplex ``N >= a_1 >= ... >= a_n >= 0``."""
    out = []
    for base in itertools.product(range(N), repeat=n):
        for perm in itertools.permutations(range(n)):
            pts = [base]
            cur = list(base)
            for p in perm:
                cur[p] += 1
                pts.append(tuple(cur))
            if all(N >= q[0] and q[-1] >= 0 and all(q[i] >= q[i + 1] for i in range(n - 1))
                   for q in pts):
                out.append(tuple(pts))
    return out


def _graded(xi: float, g: float) -> float:
    if g == 1:
        return xi
    a, b = xi**g, (1.0 - xi) ** g
    return a / (a + b)


def build_quadrature(mp: Polytope, resolution: int, grading: float = 1.0) -> Quadrature:
    """Refine the fan triangulation and attach degree-2 simplex rules.

    Each simplex of the triangulation is subdivided into ``resolution**n``
    congruent simplices (edgewise Kuhn subdivision).  Node coordinates are
    deduplicated in exact arithmetic, so the mesh is conforming.  A grading
    ``g > 1`` clusters 1-D nodes toward both endpoints via
    ``xi^g / (xi^g + (1-xi)^g)``.
    """
    N = int(resolution)
    if N < 2:
        raise ResolutionTooSmall(f"resolution must be >= 2, got {resolution}")
    if grading < 1:
        raise ResolutionTooSmall(f"grading must be >= 1, got {grading}")
    n = mp.dim
    if grading != 1 and n != 1:
        raise ResolutionTooSmall("graded meshes are only available in dimension one")

    keys: dict[tuple, int] = {}
    coords: list[tuple] = []

    def node(x):
        idx = keys.get(x)
        if idx is None:
            idx = keys[x] = len(coords)
            coords.append(x)
        return idx

    for v in mp.vertices:
        node(v)
    pattern = _kuhn_cells(n, N)
    cells, volumes = [], []
    for s in mp.simplices:
        vs = [mp.vertices[i] for i in s]
        steps = [[vs[i][d] - vs[i - 1][d] for d in range(n)] for i in range(1, n + 1)]
        vol = mp.simplex_volume(s) / N**n
        for cell in pattern:
            idx = []
            for a in cell:
                x = tuple(
                    vs[0][d] + sum(Fraction(a[i], N) * steps[i][d] for i in range(n))
                    for d in range(n)
                )
                idx.append(node(x))
            cells.append(idx)
            volumes.append(vol)

    nodes_exact = coords
    tight = [
        frozenset(k for k, f in enumerate(mp.facets) if f.slack(x) == 0) for x in nodes_exact
    ]
    bfaces, bfacet, bmeasure = [], [], []
    for cell in cells:
        for drop in range(n + 1):
            face = [cell[i] for i in range(n + 1) if i != drop]
            common = reduce(lambda a, b: a & b, (tight[i] for i in face))
            for k in sorted(common):
                bfaces.append(face)
                bfacet.append(k)
                bmeasure.append(
                    canonical_facet_measure(mp.facets[k], [nodes_exact[i] for i in face])
                )

    nodes = np.array([[float(a) for a in x] for x in nodes_exact])
    cell_volumes = np.array([float(v) for v in volumes])
    if grading != 1:
        lo, hi = float(mp.vertices[0][0]), float(mp.vertices[-1][0])
        xi = (nodes[:, 0] - lo) / (hi - lo)
        nodes = (lo + (hi - lo) * np.array([_graded(t, grading) for t in xi]))[:, None]
        cells_arr = np.array(cells)
        cell_volumes = np.abs(nodes[cells_arr[:, 1], 0] - nodes[cells_arr[:, 0], 0])
    cells_arr = np.array(cells, dtype=int)

    bary, rule_w = simplex_rule(n)
    q_pts, q_w, rows, cols, vals = [], [], [], [], []
    for c, cell in enumerate(cells_arr):
        p = bary @ nodes[cell]
        for j in range(len(rule_w)):
            r = len(q_w)
            q_pts.append(p[j])
            q_w.append(rule_w[j] * cell_volumes[c])
            rows.extend([r] * (n + 1))
            cols.extend(cell.tolist())
            vals.extend(bary[j].tolist())
    e_int = sp.csr_matrix((vals, (rows, cols)), shape=(len(q_w), len(nodes)))

    bbary, brule_w = simplex_rule(n - 1)
    b_pts, b_w, b_cw, b_k, rows, cols, vals = [], [], [], [], [], [], []
    for f, face in enumerate(bfaces):
        k = bfacet[f]
        p = bbary @ nodes[face]
        meas = float(bmeasure[f])
        wk = float(mp.facets[k].sigma_weight)
        ck = 0.0 if mp.facets[k].cut else 1.0
        for j in range(len(brule_w)):
            r = len(b_w)
            b_pts.append(p[j])
            b_w.append(brule_w[j] * meas * wk)
            b_cw.append(brule_w[j] * meas * ck)
            b_k.append(k)
            rows.extend([r] * n)
            cols.extend(face)
            vals.extend(bbary[j].tolist())
    e_bdy = sp.csr_matrix((vals, (rows, cols)), shape=(len(b_w), len(nodes)))

    return Quadrature(
        mp=mp,
        resolution=N,
        grading=float(grading),
        mesh_nodes=nodes,
        cells=cells_arr,
        cell_volumes=cell_volumes,
        boundary_faces=np.array(bfaces, dtype=int).reshape(-1, n),
        boundary_face_facet=np.array(bfacet, dtype=int),
        boundary_face_measure=np.array([float(m) for m in bmeasure]),
        interior_points=np.array(q_pts),
        interior_weights=np.array(q_w),
        interior_basis=e_int,
        boundary_points=np.array(b_pts).reshape(-1, n),
        boundary_weights=np.array(b_w),
        boundary_facet=np.array(b_k, dtype=int),
        boundary_basis=e_bdy,
        boundary_canonical_weights=np.array(b_cw),
        exactness_degree=2,
        node_keys=tuple(nodes_exact),
    )


# ---------------------------------------------------------------------------
# parsing and standard shapes


def parse_polytope(doc) -> Polytope:
    """Build a measured polytope from a JSON string or an already-decoded dict.

    Extra keys (``mesh``, ``problem``, ``name``) are ignored here; see
    :func:`load_polytope` for reading them.
    """
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedDocument("document must be a JSON object")
    if "dim" not in doc or "facets" not in doc:
        raise MalformedDocument("document needs 'dim' and 'facets'")
    n = doc["dim"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise MalformedDocument(f"dim must be a positive integer, got {n!r}")
    facets = []
    for k, f in enumerate(doc["facets"]):
        if not isinstance(f, dict) or "normal" not in f or "offset" not in f:
            raise MalformedDocument(f"facet {k} needs 'normal' and 'offset'")
        normal = f["normal"]
        if not isinstance(normal, list) or len(normal) != n:
            raise MalformedDocument(f"facet {k}: normal must be a list of length {n}")
        if not all(isinstance(a, int) and not isinstance(a, bool) for a in normal):
            raise MalformedDocument(f"facet {k}: normal entries must be integers")
        facets.append(
            Facet(
                tuple(normal),
                to_fraction(f["offset"]),
                to_fraction(f.get("sigma_weight", 1)),
                bool(f.get("cut", False)),
            )
        )
    return Polytope(facets, name=str(doc.get("name", "")))


def load_polytope(path) -> tuple[Polytope, dict]:
    """Read a spec file; returns the polytope and the raw document."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON in {path}: {exc}") from exc
    return parse_polytope(doc), doc


def interval(lo=0, hi=1, weights=(1, 1)) -> Polytope:
    """The interval ``[lo, hi]`` with endpoint weights ``(w_lo, w_hi)``."""
    lo, hi = to_fraction(lo), to_fraction(hi)
    return Polytope(
        [Facet((1,), lo, to_fraction(weights[0])), Facet((-1,), -hi, to_fraction(weights[1]))],
        name="interval",
    )


def trapezium(l) -> Polytope:
    """Trapezium with vertices (0,0), (1,0), (1,l), (0,1), weight on vertical edges only."""
    l = to_fraction(l)
    if l <= 0:
        raise EmptyInterior(f"trapezium needs l > 0, got {l}")
    top, off = primitive_normal((l - 1, -1), -1)
    return Polytope(
        [
            Facet((1, 0), 0, 1),
            Facet((-1, 0), -1, 1),
            Facet((0, 1), 0, 0),
            Facet(top, off, 0),
        ],
        name=f"trapezium(l={l})",
    )


def clip(mp: Polytope, normal, offset) -> Polytope | None:
    """Exact intersection of ``mp`` with ``normal . x >= offset`` (rational data).

    The new facet is a zero-weight cut.  Returns ``None`` when the result
    has empty interior.  Facets made redundant by the cut are dropped.
    """
    nu, c = primitive_normal(normal, offset)
    cut = Facet(nu, c, 0, True)
    cand = list(mp.facets) + [cut]
    n = mp.dim
    verts = _enumerate_vertices(cand, n)
    if not verts or _affine_dim(verts) < n:
        return None
    keep = [
        f
        for f in cand
        if _affine_dim([v for v in verts if f.slack(v) == 0]) == n - 1
    ]
    return Polytope(keep, name=mp.name)


def clip_volume_float(mp: Polytope, normal, offset) -> float:
    """Float volume of ``mp`` intersected with a halfspace (used in searches)."""
    from .functionals import _float_region  # local import to avoid a cycle

    reg = _float_region(mp, np.asarray(normal, float), float(offset))
    return reg.volume if reg is not None else 0.0
