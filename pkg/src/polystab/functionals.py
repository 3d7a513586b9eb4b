"""Linear functionals ``L_A``, the extremal affine function and affine projection.

``L_A(f) = int_{dP} f d sigma - int_P A f d mu``.  The extremal affine
function ``A`` is the unique affine density with ``L_A`` vanishing on affine
functions; it is computed from exact degree-two moments.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import NodeEvaluationFailure, SingularMomentMatrix
from .geometry import (
    Polytope,
    Quadrature,
    _solve,
    canonical_facet_measure,
    clip,
    moments,
    scalar_summary,
)

__all__ = [
    "AffineFunction",
    "FunctionalValue",
    "eval_L",
    "extremal_affine",
    "project_affine",
    "l2_inner",
    "l2_norm",
    "crease_functional",
    "pl_functional",
    "mabuchi_F",
    "calabi_energy",
    "density_at",
    "max_affine_functional",
]


@dataclass(frozen=True)
class AffineFunction:
    """``f(x) = gradient . x + constant``.

    Coefficients may be Fractions (exact) or floats; evaluation on arrays is
    always in floating point, :meth:`exact` keeps rationals.
    """

    gradient: tuple
    constant: object

    def __post_init__(self):
        object.__setattr__(self, "gradient", tuple(self.gradient))

    @property
    def dim(self) -> int:
        return len(self.gradient)

    @property
    def is_exact(self) -> bool:
        return all(isinstance(a, (int, Fraction)) for a in self.gradient + (self.constant,))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.array([float(a) for a in self.gradient])
        if x.ndim == 1 and self.dim == 1 and x.shape != (1,):
            x = x[:, None]
        return x @ g + float(self.constant)

    def exact(self, x):
        return sum(a * b for a, b in zip(self.gradient, x)) + self.constant

    def __sub__(self, other):
        if isinstance(other, AffineFunction):
            return AffineFunction(
                tuple(a - b for a, b in zip(self.gradient, other.gradient)),
                self.constant - other.constant,
            )
        return AffineFunction(self.gradient, self.constant - other)

    def __rsub__(self, other):
        return AffineFunction(tuple(-a for a in self.gradient), other - self.constant)

    def __neg__(self):
        return AffineFunction(tuple(-a for a in self.gradient), -self.constant)

    def as_float(self) -> "AffineFunction":
        return AffineFunction(tuple(float(a) for a in self.gradient), float(self.constant))

    def to_dict(self) -> dict:
        d = {
            "gradient": [float(a) for a in self.gradient],
            "constant": float(self.constant),
        }
        if self.is_exact:
            d["gradient_exact"] = [str(a) for a in self.gradient]
            d["constant_exact"] = str(self.constant)
        return d


@dataclass(frozen=True)
class FunctionalValue:
    boundary_term: float
    interior_term: float

    @property
    def value(self) -> float:
        return self.boundary_term - self.interior_term

    def __float__(self) -> float:
        return self.value


# ---------------------------------------------------------------------------
# evaluation helpers


def _values_at(f, points: np.ndarray, basis, n_nodes: int) -> np.ndarray:
    """Evaluate ``f`` at quadrature points.

    Nodal arrays (and objects with a ``values`` attribute) are interpolated
    with the P1 basis; callables are evaluated pointwise.
    """
    if hasattr(f, "values") and not callable(getattr(f, "values")):
        f = f.values
    if isinstance(f, (int, float, Fraction)):
        return np.full(len(points), float(f))
    if isinstance(f, np.ndarray) or isinstance(f, (list, tuple)):
        arr = np.asarray(f, dtype=float)
        if arr.shape != (n_nodes,):
            raise NodeEvaluationFailure(f"nodal array has shape {arr.shape}, expected ({n_nodes},)")
        out = basis @ arr
    elif callable(f):
        try:
            out = np.asarray(f(points), dtype=float).reshape(len(points))
        except Exception as exc:  # noqa: BLE001 - surfaced as a domain error
            raise NodeEvaluationFailure(f"evaluation failed: {exc}") from exc
    else:
        raise NodeEvaluationFailure(f"cannot evaluate object of type {type(f).__name__}")
    if not np.all(np.isfinite(out)):
        raise NodeEvaluationFailure("non-finite value at a quadrature node")
    return out


def density_at(density, quad: Quadrature) -> np.ndarray:
    """Density values at interior quadrature points."""
    return _values_at(density, quad.interior_points, quad.interior_basis, quad.n_nodes)


def eval_L(density, f, quad: Quadrature) -> FunctionalValue:
    """Quadrature value of ``L_A(f)``; exact when ``A`` and ``f`` are P1 on the mesh."""
    fb = _values_at(f, quad.boundary_points, quad.boundary_basis, quad.n_nodes)
    fi = _values_at(f, quad.interior_points, quad.interior_basis, quad.n_nodes)
    a = density_at(density, quad)
    return FunctionalValue(
        float(quad.boundary_weights @ fb), float(quad.interior_weights @ (a * fi))
    )


def l2_inner(f, g, quad: Quadrature) -> float:
    fi = _values_at(f, quad.interior_points, quad.interior_basis, quad.n_nodes)
    gi = _values_at(g, quad.interior_points, quad.interior_basis, quad.n_nodes)
    return float(quad.interior_weights @ (fi * gi))


def l2_norm(f, quad: Quadrature) -> float:
    return math.sqrt(max(l2_inner(f, f, quad), 0.0))


# ---------------------------------------------------------------------------
# extremal affine function and projection


def extremal_affine(mp: Polytope) -> AffineFunction:
    """Exact extremal affine function from the degree <= 1 moment Gram system."""
    n = mp.dim
    mt = moments(mp, 2)
    basis = [(0,) * n] + [tuple(int(k == i) for k in range(n)) for i in range(n)]

    def add(a, b):
        return tuple(x + y for x, y in zip(a, b))

    gram = [[mt.interior[add(a, b)] for b in basis] for a in basis]
    rhs = [mt.boundary[a] for a in basis]
    sol = _solve(gram, rhs)
    if sol is None:
        raise SingularMomentMatrix("degree-one moment matrix is singular")
    return AffineFunction(tuple(sol[1:]), sol[0])


def project_affine(f, quad: Quadrature) -> AffineFunction:
    """L2(quad)-orthogonal projection onto affine functions."""
    pts = quad.interior_points
    w = quad.interior_weights
    fi = _values_at(f, pts, quad.interior_basis, quad.n_nodes)
    basis = np.column_stack([np.ones(len(pts)), pts])
    gram = basis.T @ (w[:, None] * basis)
    rhs = basis.T @ (w * fi)
    coef = np.linalg.solve(gram, rhs)
    return AffineFunction(tuple(float(a) for a in coef[1:]), float(coef[0]))


# ---------------------------------------------------------------------------
# exact functionals of piecewise linear functions


@dataclass
class _Region:
    """Float polytope region: interior simplices and weighted boundary simplices."""

    dim: int
    interior: list  # (points, measure)
    boundary: list  # (weight, points, canonical measure)

    @property
    def volume(self) -> float:
        return float(sum(m for _, m in self.interior))


def _float_region(mp: Polytope, normal, offset, extra=()):
    """``mp`` intersected with ``normal . x >= offset`` (and ``extra`` cuts) in floats."""
    normals = [np.array(f.normal, float) for f in mp.facets]
    offsets = [float(f.offset) for f in mp.facets]
    weights = [float(f.sigma_weight) for f in mp.facets]
    for nu, c in [(normal, offset), *extra]:
        normals.append(np.asarray(nu, float))
        offsets.append(float(c))
        weights.append(0.0)
    return _halfspace_region(normals, offsets, weights, mp.dim)


def _exact_region(mp: Polytope, normal, offset):
    q = clip(mp, normal, offset)
    if q is None:
        return None
    interior = [([q.vertices[i] for i in s], q.simplex_volume(s)) for s in q.simplices]
    boundary = []
    for k, ss in enumerate(q.facet_simplices):
        for s in ss:
            boundary.append(
                (q.facets[k].sigma_weight, [q.vertices[i] for i in s], q.facet_simplex_measure(k, s))
            )
    return _Region(mp.dim, interior, boundary)


def _moments_of(points, measure, n):
    from .geometry import _simplex_moments

    return _simplex_moments([tuple(p) for p in points], measure, n)


def _region_L(region: _Region, density: AffineFunction, h: AffineFunction):
    """``int_{dR} h d sigma - int_R A h d mu`` over a clipped region."""
    if region is None:
        return 0
    n = region.dim
    a, a0 = list(density.gradient), density.constant
    g, c = list(h.gradient), h.constant
    bterm = 0
    for w, pts, meas in region.boundary:
        if w == 0:
            continue
        m0, m1, _ = _moments_of(pts, meas, n)
        bterm += w * (sum(g[i] * m1[i] for i in range(n)) + c * m0)
    iterm = 0
    for pts, meas in region.interior:
        m0, m1, m2 = _moments_of(pts, meas, n)
        iterm += (
            sum(a[i] * g[j] * m2[i][j] for i in range(n) for j in range(n))
            + sum((a0 * g[i] + c * a[i]) * m1[i] for i in range(n))
            + a0 * c * m0
        )
    return bterm - iterm


def crease_functional(mp: Polytope, density, h: AffineFunction, exact: bool | None = None):
    """Exact ``L_A(max(h, 0))`` by clipping ``P`` along the crease.

    With rational ``A`` and ``h`` the computation is carried out in rational
    arithmetic and returns a Fraction; otherwise a float.
    """
    if not isinstance(density, AffineFunction):
        density = AffineFunction((0,) * mp.dim, density)
    if exact is None:
        exact = density.is_exact and h.is_exact
    if exact:
        if all(a == 0 for a in h.gradient):
            c = max(h.constant, 0)
            mt = moments(mp, 1)
            inner = density.constant * mt.interior[(0,) * mp.dim] + sum(
                a * mt.interior[tuple(int(k == i) for k in range(mp.dim))]
                for i, a in enumerate(density.gradient)
            )
            return c * (mt.boundary[(0,) * mp.dim] - inner)
        return _region_L(_exact_region(mp, h.gradient, -h.constant), density, h)
    d, hf = density.as_float(), h.as_float()
    region = _float_region(mp, np.array(hf.gradient), -hf.constant)
    return float(_region_L(region, d, hf))


def pl_functional(mp: Polytope, density, pieces: Sequence[AffineFunction]) -> float:
    """``L_A(max_k l_k)`` for a finite max of affine functions (float clipping).

    Each piece is integrated over its maximality region ``{l_k >= l_j}``;
    ties between identical pieces go to the lowest index.
    """
    if not isinstance(density, AffineFunction):
        density = AffineFunction((0,) * mp.dim, float(density))
    density = density.as_float()
    pieces = [p.as_float() for p in pieces]
    total = 0.0
    for k, lk in enumerate(pieces):
        cuts = []
        for j, lj in enumerate(pieces):
            diff = lk - lj
            if j == k:
                continue
            if np.allclose(diff.gradient, 0):
                if diff.constant < 0 or (diff.constant == 0 and j < k):
                    break
                continue
            cuts.append((np.array(diff.gradient), -diff.constant))
        else:
            if cuts:
                region = _float_region(mp, cuts[0][0], cuts[0][1], cuts[1:])
            else:
                region = _float_region(mp, np.zeros(mp.dim), -1.0)
            total += float(_region_L(region, density, lk))
    return total


def _halfspace_region(normals, offsets, weights, n):
    pts = []
    m = len(normals)
    for combo in itertools.combinations(range(m), n):
        a = np.array([normals[k] for k in combo])
        if abs(np.linalg.det(a)) < 1e-14:
            continue
        x = np.linalg.solve(a, [offsets[k] for k in combo])
        if all(normals[k] @ x - offsets[k] >= -1e-11 * max(1.0, np.linalg.norm(normals[k]))
               for k in range(m)):
            if not any(np.linalg.norm(x - p) <= 1e-11 for p in pts):
                pts.append(x)
    if len(pts) < n + 1:
        return None
    pts = np.array(pts)
    if n == 1:
        lo, hi = float(pts.min()), float(pts.max())
        if hi - lo <= 1e-14:
            return None
        bnd = []
        for k in range(m):
            if weights[k] == 0:
                continue
            x = offsets[k] / normals[k][0]
            if abs(x - lo) <= 1e-12 or abs(x - hi) <= 1e-12:
                bnd.append((weights[k], np.array([[x]]), 1.0))
        return _Region(1, [(np.array([[lo], [hi]]), hi - lo)], bnd)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    centre = pts[hull.vertices].mean(axis=0)
    interior, boundary = [], []
    for simplex, eq in zip(hull.simplices, hull.equations):
        face = pts[simplex]
        interior.append((np.vstack([centre, face]), abs(np.linalg.det(face - centre)) / math.factorial(n)))
        for k in range(m):
            nu = normals[k]
            if weights[k] == 0:
                continue
            if np.dot(-eq[:n], nu) / np.linalg.norm(nu) > 1 - 1e-9 and np.all(
                np.abs(face @ nu - offsets[k]) <= 1e-10 * np.linalg.norm(nu)
            ):
                w = nu / (nu @ nu)
                meas = abs(np.linalg.det(np.vstack([face[1:] - face[0], w]))) / math.factorial(n - 1)
                boundary.append((weights[k], face, meas))
                break
    return _Region(n, interior, boundary)


# ---------------------------------------------------------------------------
# flow functionals (thin wrappers; the discretisation lives in calabiflow)


def mabuchi_F(A, state, quad: Quadrature | None = None) -> float:
    """Relative ``F_A(u) - F_A(u_0)`` for a 1-D flow state."""
    from .calabiflow import mabuchi_relative

    return mabuchi_relative(state, A)


def calabi_energy(state, B_target, quad: Quadrature | None = None) -> float:
    """``|| S(u) - B_target ||_{L2}`` on the flow mesh."""
    from .calabiflow import curvature_residual

    return curvature_residual(state, B_target)


def s_hat(mp: Polytope) -> Fraction:
    return scalar_summary(mp).s_hat


def max_affine_functional(mp: Polytope, density, gradients, constants, weights=None):
    """Exact ``L_A(f)`` for ``f = max_j (g_j . x + c_j)`` restricted to ``P``.

    The epigraph of ``f`` over ``P``, capped at a height ``T``, is built as a
    halfspace intersection in ``R^{n+1}``.  Its lower facets are the
    linearity regions of ``f`` (integrated with an exact degree-two rule) and
    its vertical walls over each facet ``F`` have volume
    ``T |F| - int_F f``, which yields the boundary term.

    Parameters
    ----------
    weights : sequence, optional
        Per-facet weights replacing ``sigma_weight`` (for example canonical
        weights for normalisation).

    Returns
    -------
    FunctionalValue
    """
    from scipy.spatial import HalfspaceIntersection

    n = mp.dim
    g = np.atleast_2d(np.asarray(gradients, float)).reshape(-1, n)
    c = np.asarray(constants, float).ravel()
    if not isinstance(density, AffineFunction):
        density = AffineFunction((0.0,) * n, float(density))
    dens = density.as_float()
    verts = mp.vertex_array
    vals = verts @ g.T + c
    fmax = float(vals.max())
    fmin_c = float(np.max(np.array([float(a) for a in mp.centroid]) @ g.T + c))
    span = max(1.0, fmax - fmin_c)
    T = fmax + span
    hs = [np.concatenate([g[j], [-1.0, c[j]]]) for j in range(len(c))]
    for f in mp.facets:
        nu = np.array(f.normal, float)
        hs.append(np.concatenate([-nu, [0.0, float(f.offset)]]))
    hs.append(np.concatenate([np.zeros(n), [1.0, -T]]))
    x0 = np.array([float(a) for a in mp.centroid])
    interior = np.append(x0, 0.5 * (fmin_c + T))
    inter = HalfspaceIntersection(np.array(hs), interior)
    pts = inter.intersections
    hull = ConvexHull(pts)
    bary, rule_w = _rule(n)
    iterm = 0.0
    for simplex, eq in zip(hull.simplices, hull.equations):
        if eq[n] < -1e-9:  # outward normal points down: lower facet
            p = pts[simplex]
            xs, ts = p[:, :n], p[:, n]
            vol = abs(np.linalg.det(xs[1:] - xs[0])) / math.factorial(n) if n > 1 else abs(xs[1, 0] - xs[0, 0])
            q = bary @ xs
            iterm += vol * float(rule_w @ (dens(q) * (bary @ ts)))
    w = [float(f.sigma_weight) for f in mp.facets] if weights is None else [float(a) for a in weights]
    bterm = 0.0
    for k, f in enumerate(mp.facets):
        if w[k] == 0:
            continue
        nu = np.array(f.normal, float)
        unit = nu / np.linalg.norm(nu)
        wall = 0.0
        for simplex, eq in zip(hull.simplices, hull.equations):
            if abs(eq[n]) < 1e-9 and float(eq[:n] @ -unit) > 1 - 1e-9:
                p = pts[simplex]
                d = p[1:] - p[0]
                wall += math.sqrt(max(np.linalg.det(d @ d.T), 0.0)) / math.factorial(n) if n > 1 else float(np.ptp(p[:, n]))
        area = float(mp.facet_measures[k]) * np.linalg.norm(nu)  # Euclidean
        bterm += w[k] * (T * area - wall) / np.linalg.norm(nu)
    return FunctionalValue(bterm, iterm)


def _rule(n):
    from .geometry import simplex_rule

    return simplex_rule(n)
