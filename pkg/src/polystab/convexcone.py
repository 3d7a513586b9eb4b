"""Discrete convex functions on a node set.

A nodal vector ``f`` is convex-extendable when there are subgradients
``s_j`` with ``f_i >= f_j + s_j . (x_i - x_j)`` for every ordered pair; the
maximum of the supporting planes is then a convex PL extension that
interpolates ``f``.  This pairwise system characterises the discrete cone
exactly, unlike local second-difference stencils.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .errors import DegenerateNodeSet
from .functionals import AffineFunction, project_affine
from .geometry import Polytope, Quadrature, build_quadrature

log = logging.getLogger(__name__)

__all__ = [
    "ConvexGridFunction",
    "SimpleCrease",
    "is_convex_extendable",
    "supporting_violation",
    "normalize",
    "sample_cone",
    "norm_ratio",
    "default_base_point",
]

FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConvexGridFunction:
    """Node values with supporting-plane subgradients.

    Parameters
    ----------
    values : (N,) array
    subgradients : (N, n) array
    nodes : (N, n) array
    base_point : (n,) array
        Interior point used by :func:`normalize`.
    kind : str
        Free-form provenance tag (``"crease"``, ``"max-affine"``, ...).
    """

    values: np.ndarray
    subgradients: np.ndarray
    nodes: np.ndarray
    base_point: np.ndarray
    kind: str = ""
    meta: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        """Evaluate the PL extension ``max_j f_j + s_j . (x - x_j)``."""
        x = np.atleast_2d(np.asarray(x, float))
        planes = self.values - np.einsum("jd,jd->j", self.subgradients, self.nodes)
        return np.max(x @ self.subgradients.T + planes, axis=1)

    def scaled(self, c: float) -> "ConvexGridFunction":
        return replace(self, values=c * self.values, subgradients=c * self.subgradients)

    def __add__(self, other: "ConvexGridFunction") -> "ConvexGridFunction":
        return replace(
            self,
            values=self.values + other.values,
            subgradients=self.subgradients + other.subgradients,
            kind="combination",
        )

    def violation(self) -> float:
        """Most negative supporting-plane slack (0 when the system holds)."""
        return supporting_violation(self.values, self.subgradients, self.nodes)


@dataclass(frozen=True)
class SimpleCrease:
    """``max(h, 0)`` for an affine ``h``; the crease is ``{h = 0}``."""

    h: AffineFunction

    def __call__(self, x) -> np.ndarray:
        return np.maximum(self.h(x), 0.0)

    def on_nodes(self, nodes: np.ndarray, base_point) -> ConvexGridFunction:
        hv = self.h(nodes)
        g = np.array([float(a) for a in self.h.gradient])
        subs = np.where((hv >= 0)[:, None], g[None, :], 0.0)
        return ConvexGridFunction(
            np.maximum(hv, 0.0), subs, nodes, np.asarray(base_point, float), kind="crease"
        )


def supporting_violation(values, subgradients, nodes, block: int = 512) -> float:
    """``min_{i,j} f_i - f_j - s_j . (x_i - x_j)``, clipped above at 0."""
    f = np.asarray(values, float)
    s = np.asarray(subgradients, float).reshape(len(f), -1)
    x = np.asarray(nodes, float).reshape(len(f), -1)
    planes = f - np.einsum("jd,jd->j", s, x)
    worst = 0.0
    for a in range(0, len(f), block):
        ext = x[a : a + block] @ s.T + planes  # value of plane j at node i
        worst = min(worst, float(np.min(f[a : a + block, None] - ext)))
    return worst


def _check_nodes(nodes: np.ndarray):
    n = nodes.shape[1]
    if len(nodes) < n + 1 or np.linalg.matrix_rank(nodes[1:] - nodes[0]) < n:
        raise DegenerateNodeSet(f"need {n + 1} affinely independent nodes")


def is_convex_extendable(values, nodes, tol: float = FEAS_TOL):
    """Decide membership in the discrete cone.

    For each node ``j`` a small LP minimises the worst supporting-plane
    violation ``t`` over ``s_j``.  Returns ``(True, subgradients)`` when every
    ``t`` is below ``tol`` times the value scale, else ``(False, (i, j))``
    where ``j`` is the node admitting no supporting plane and ``i`` the most
    violated partner.
    """
    f = np.asarray(values, float)
    x = np.asarray(nodes, float)
    if x.ndim == 1:
        x = x[:, None]
    _check_nodes(x)
    n = x.shape[1]
    scale = max(1.0, float(np.max(np.abs(f))))
    subs = np.zeros((len(f), n))
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    for j in range(len(f)):
        others = np.arange(len(f)) != j
        d = x[others] - x[j]
        r = f[others] - f[j]
        a_ub = np.hstack([d, -np.ones((len(d), 1))])
        res = linprog(cost, A_ub=a_ub, b_ub=r, bounds=[(None, None)] * n + [(0, None)],
                      method="highs")
        if res.status != 0:
            raise DegenerateNodeSet(f"supporting-plane LP failed at node {j}: {res.message}")
        if res.x[-1] > tol * scale:
            viol = d @ res.x[:n] - r
            i = int(np.flatnonzero(others)[int(np.argmax(viol))])
            return False, (i, j)
        subs[j] = res.x[:n]
    return True, subs


def default_base_point(mp: Polytope) -> np.ndarray:
    return np.array([float(a) for a in mp.centroid])


def normalize(f: ConvexGridFunction) -> ConvexGridFunction:
    """Subtract the supporting plane of the PL extension at the base point.

    The result is non-negative, vanishes at the base point and keeps the
    supporting-plane system (subgradients shift by the same vector).
    """
    x0 = np.asarray(f.base_point, float)
    vals_at_x0 = f.values + np.einsum("jd,jd->j", f.subgradients, x0[None, :] - f.nodes)
    j = int(np.argmax(vals_at_x0))
    f0, s0 = vals_at_x0[j], f.subgradients[j]
    new_vals = f.values - f0 - (f.nodes - x0) @ s0
    new_vals = np.where(np.abs(new_vals) < 1e-15 * max(1.0, np.max(np.abs(f.values))), 0.0, new_vals)
    return replace(f, values=np.maximum(new_vals, 0.0), subgradients=f.subgradients - s0)


def norm_ratio(f, quad: Quadrature) -> float:
    """``||f|| / ||f - pi f||`` in L2(quad); infinite for affine ``f``."""
    vals = f.values if isinstance(f, ConvexGridFunction) else np.asarray(f, float)
    pa = project_affine(vals, quad)
    m = quad.mass_matrix
    r = vals - pa(quad.mesh_nodes)
    num = float(np.sqrt(max(vals @ m @ vals, 0.0)))
    den = float(np.sqrt(max(r @ m @ r, 0.0)))
    return np.inf if den <= 1e-12 * num else num / den


def _random_interior_point(rng, vertices: np.ndarray) -> np.ndarray:
    lam = rng.dirichlet(np.ones(len(vertices)))
    return lam @ vertices


def _random_direction(rng, n: int) -> np.ndarray:
    d = rng.normal(size=n)
    return d / np.linalg.norm(d)


def sample_cone(
    mp: Polytope,
    count: int,
    seed: int = 0,
    quad: Quadrature | None = None,
    resolution: int = 16,
    base_point=None,
) -> list[ConvexGridFunction]:
    """Deterministic battery of normalised convex functions on the mesh nodes.

    Cycles through three kinds: simple creases through random interior
    points, maxima of 2-5 random affine functions, and random non-negative
    combinations of earlier members.  Each member is normalised at the base
    point and scaled to unit canonical boundary integral when that integral
    is non-zero.
    """
    if quad is None:
        quad = build_quadrature(mp, resolution)
    rng = np.random.default_rng(seed)
    nodes = quad.mesh_nodes
    n = mp.dim
    x0 = default_base_point(mp) if base_point is None else np.asarray(base_point, float)
    verts = mp.vertex_array
    diam = float(np.max(np.linalg.norm(verts[:, None] - verts[None], axis=-1)))
    load = quad.canonical_boundary_load
    out: list[ConvexGridFunction] = []
    raw: list[ConvexGridFunction] = []
    while len(out) < count:
        kind = len(out) % 3
        if kind == 0 or (kind == 2 and len(raw) < 2):
            p = _random_interior_point(rng, verts)
            d = _random_direction(rng, n)
            h = AffineFunction(tuple(d), float(-d @ p))
            g = SimpleCrease(h).on_nodes(nodes, x0)
        elif kind == 1:
            k = int(rng.integers(2, 6))
            grads = rng.normal(size=(k, n)) / diam
            pts = np.array([_random_interior_point(rng, verts) for _ in range(k)])
            consts = -np.einsum("kd,kd->k", grads, pts)
            vals = nodes @ grads.T + consts
            arg = np.argmax(vals, axis=1)
            g = ConvexGridFunction(vals[np.arange(len(nodes)), arg], grads[arg], nodes, x0,
                                   kind="max-affine")
        else:
            k = int(rng.integers(2, 4))
            idx = rng.choice(len(raw), size=min(k, len(raw)), replace=False)
            coef = rng.uniform(0.1, 1.0, size=len(idx))
            g = raw[idx[0]].scaled(coef[0])
            for c, i in zip(coef[1:], idx[1:]):
                g = g + raw[i].scaled(c)
            g = replace(g, kind="combination")
        g = normalize(g)
        total = float(load @ g.values)
        if total > 1e-12:
            g = g.scaled(1.0 / total)
        elif np.max(np.abs(g.values)) == 0:
            continue  # affine on the nodes: carries no information
        raw.append(g)
        out.append(g)
    return out
