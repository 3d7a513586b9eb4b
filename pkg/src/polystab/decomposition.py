"""Linearity regions of a piecewise-linear destabiliser.

When ``Phi`` is (numerically) piecewise linear, the polytope splits into the
maximal regions on which it is affine.  Each region ``Q_i`` inherits the
boundary weights of ``P`` and gets weight zero on interior cut faces.  The
density ``B = D - Phi`` restricted to ``Q_i`` should then be the extremal
affine function of ``(Q_i, dsigma_i)`` and each piece semistable, with the
pieces' densities gluing to a concave function.

Detection is a heuristic on mesh data: per-cell P1 gradients are clustered
and a maximum of affine fits must reproduce ``Phi``.  Once cut hyperplanes
are snapped to simple rationals, ``Phi`` is re-solved exactly in the space of
continuous functions that are affine on each piece (the exact optimum lies
in that space whenever the pieces are the true linearity regions).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .convexcone import ConvexGridFunction
from .destabilizer import DestabilizerResult, SolverOptions, semistability_test
from .errors import CreaseResolutionFailure, NotUnstable
from .functionals import AffineFunction, crease_functional, extremal_affine
from .geometry import (
    Polytope,
    Quadrature,
    _rank,
    _solve,
    clip,
    moments,
    primitive_normal,
    to_fraction,
    trapezium,
)

log = logging.getLogger(__name__)

__all__ = [
    "Cluster",
    "Piece",
    "DecompositionConfig",
    "DecompositionReport",
    "detect_piecewise_linear",
    "extract_pieces",
    "polish_destabilizer",
    "verify_piece",
    "decompose",
    "concavity_check",
    "TrapeziumReference",
    "trapezium_reference",
]


@dataclass
class DecompositionConfig:
    """Heuristic thresholds for PL detection and cut snapping.

    Attributes
    ----------
    max_clusters : int
        Cap on the number of significant gradient clusters.
    min_fraction : float
        Clusters below this volume fraction are treated as transition
        cells straddling a crease.
    fit_tol : float
        Accept ``k`` clusters when the max of their affine fits matches
        ``Phi`` to this relative L2 error.
    max_denominator : int
        Largest denominator tried when snapping cut data to rationals.
    normal_tol : float
        Snapping tolerance for unit-max-norm cut normals.
    offset_tol : float or None
        Snapping tolerance for cut offsets; ``None`` means half the mesh size.
    coverage_tol : float
    jobs : int
        Concurrent piece verifications.
    """

    max_clusters: int = 6
    min_fraction: float = 0.02
    fit_tol: float = 0.25
    max_denominator: int = 12
    normal_tol: float = 0.1
    offset_tol: float | None = None
    coverage_tol: float = 1e-10
    jobs: int = 1


@dataclass
class Cluster:
    gradient: np.ndarray
    constant: float
    cells: np.ndarray
    nodes: np.ndarray
    volume_fraction: float

    def to_dict(self) -> dict:
        return {
            "gradient": self.gradient.tolist(),
            "constant": self.constant,
            "n_cells": int(len(self.cells)),
            "volume_fraction": self.volume_fraction,
        }


@dataclass
class Piece:
    """A linearity region with its inherited measure and local density."""

    subpolytope: Polytope
    inherited_weights: tuple
    local_density: AffineFunction
    node_set: np.ndarray
    phi_piece: AffineFunction | None = None
    extremal: AffineFunction | None = None
    verdict: str | None = None
    density_mismatch: float | None = None
    result: DestabilizerResult | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "facets": [f.to_dict() for f in self.subpolytope.facets],
            "inherited_weights": [str(w) for w in self.inherited_weights],
            "volume": str(self.subpolytope.volume),
            "local_density": self.local_density.to_dict(),
            "extremal_affine": self.extremal.to_dict() if self.extremal else None,
            "density_mismatch": self.density_mismatch,
            "verdict": self.verdict,
            "n_nodes": int(len(self.node_set)),
        }


@dataclass
class DecompositionReport:
    pieces: list[Piece]
    pl_detected: bool
    concavity_ok: bool | None
    coverage_defect: float | None = None
    clusters: list[Cluster] = field(default_factory=list)
    cuts: list[tuple] = field(default_factory=list)
    fit_residual: float | None = None
    mesh_phi_error: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def verdicts(self) -> list[str | None]:
        return [p.verdict for p in self.pieces]

    def to_dict(self) -> dict:
        return {
            "pl_detected": self.pl_detected,
            "concavity_ok": self.concavity_ok,
            "coverage_defect": self.coverage_defect,
            "fit_residual": self.fit_residual,
            "mesh_phi_error": self.mesh_phi_error,
            "cluster_histogram": [c.to_dict() for c in self.clusters],
            "cuts": [
                {"pieces": [i, j], "normal": list(nu), "offset": str(c)} for i, j, nu, c in self.cuts
            ],
            "pieces": [p.to_dict() for p in self.pieces],
            "verdicts": self.verdicts,
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# detection


def _cell_gradients(values: np.ndarray, quad: Quadrature) -> np.ndarray:
    x = quad.mesh_nodes
    out = np.empty((len(quad.cells), quad.dim))
    for k, c in enumerate(quad.cells):
        X = np.column_stack([x[c], np.ones(len(c))])
        out[k] = np.linalg.solve(X, values[c])[:-1]
    return out


def _fit_plane(values, nodes_xy, idx):
    X = np.column_stack([nodes_xy[idx], np.ones(len(idx))])
    coef = np.linalg.lstsq(X, values[idx], rcond=None)[0]
    return coef[:-1], float(coef[-1])


def _rel_l2(diff, values, quad):
    M = quad.mass_matrix
    den = float(np.sqrt(max(values @ M @ values, 0.0)))
    num = float(np.sqrt(max(diff @ M @ diff, 0.0)))
    return num / den if den > 0 else num


def detect_piecewise_linear(phi: ConvexGridFunction, quad: Quadrature, tol: float | None = None,
                            config: DecompositionConfig | None = None):
    """Cluster per-cell gradients of the P1 interpolant of ``phi``.

    Complete-linkage clusters are cut at increasing counts; small-volume
    clusters are discarded as crease transitions.  The first count whose
    significant clusters' affine fits reproduce ``phi`` (as their maximum)
    within ``fit_tol`` is accepted.  A zero or affine ``phi`` is one cluster.

    Returns
    -------
    (pl_detected, clusters)
        ``clusters`` are the significant clusters of the accepted cut, or
        of the finest tried cut when nothing was accepted.  This is a
        diagnostic, not a proof of piecewise linearity.
    """
    cfg = config or DecompositionConfig()
    fit_tol = cfg.fit_tol if tol is None else tol
    f = np.asarray(phi.values, float)
    x = quad.mesh_nodes
    cells = np.asarray(quad.cells)
    vol = np.asarray(quad.cell_volumes, float)
    vol = vol / vol.sum()
    G = _cell_gradients(f, quad)
    scale = max(float(np.max(np.abs(f))), 1e-300)
    if np.max(np.abs(f)) == 0 or np.ptp(G, axis=0).max() <= 1e-9 * scale:
        g, c = _fit_plane(f, x, np.arange(len(f)))
        return True, [Cluster(g, c, np.arange(len(cells)), np.arange(len(f)), 1.0)]
    Z = linkage(G, method="complete")
    last: list[Cluster] = []
    for k in range(1, 4 * cfg.max_clusters + 1):
        labels = fcluster(Z, k, criterion="maxclust")
        clusters = []
        for lab in np.unique(labels):
            m = labels == lab
            frac = float(vol[m].sum())
            if frac < cfg.min_fraction:
                continue
            nodes = np.unique(cells[m])
            g, c = _fit_plane(f, x, nodes)
            clusters.append(Cluster(g, c, np.flatnonzero(m), nodes, frac))
        if len(clusters) > cfg.max_clusters:
            break
        last = clusters
        fit = np.max([x @ cl.gradient + cl.constant for cl in clusters], axis=0)
        res = _rel_l2(f - fit, f, quad)
        log.debug("pl detection: k=%d significant=%d residual=%.3g", k, len(clusters), res)
        if res <= fit_tol:
            for cl in clusters:
                cl.fit_residual = res
            return True, clusters
        if len(np.unique(labels)) < k:
            break
    return False, last


# ---------------------------------------------------------------------------
# extraction


def _simplest_rational(v: float, tol: float, max_den: int) -> Fraction:
    for q in range(1, max_den + 1):
        p = round(v * q)
        if abs(v - p / q) <= tol:
            return Fraction(p, q)
    return Fraction(v).limit_denominator(max_den)


def _rational_cut(g: np.ndarray, c: float, cfg: DecompositionConfig, h: float):
    """Snap ``g . x >= c`` to a rational inequality with a primitive normal."""
    s = float(np.max(np.abs(g)))
    if s == 0:
        raise CreaseResolutionFailure("coincident affine components")
    nu = [_simplest_rational(a / s, cfg.normal_tol, cfg.max_denominator) for a in g]
    if all(a == 0 for a in nu):
        raise CreaseResolutionFailure("cut normal snapped to zero")
    nu_f = np.array([float(a) for a in nu])
    # re-fit the offset along the snapped normal so the crease stays in place
    off_tol = cfg.offset_tol if cfg.offset_tol is not None else 0.5 * h
    off = _simplest_rational(c / s, off_tol, cfg.max_denominator)
    return primitive_normal(nu, off), nu_f


def extract_pieces(phi: ConvexGridFunction, mp: Polytope, clusters: list[Cluster],
                   quad: Quadrature | None = None, config: DecompositionConfig | None = None):
    """Maximality regions of the clusters' affine fits, cut by rational hyperplanes.

    Returns ``(pieces, cuts, coverage_defect)``; pieces carry placeholder
    local densities until :func:`polish_destabilizer` fills them.

    Raises
    ------
    CreaseResolutionFailure
        When the snapped cuts do not tile ``P`` (mesh too coarse for the
        crease geometry).
    """
    cfg = config or DecompositionConfig()
    nodes = phi.nodes
    h = quad.mesh_h if quad is not None else 1.0 / 16
    zero = AffineFunction((0,) * mp.dim, 0)
    if len(clusters) <= 1:
        piece = Piece(mp, mp.weights, zero, np.arange(len(nodes)))
        return [piece], [], 0.0
    k = len(clusters)
    cuts = {}
    for i in range(k):
        for j in range(i + 1, k):
            g = clusters[i].gradient - clusters[j].gradient
            c = clusters[j].constant - clusters[i].constant
            (nu, off), _ = _rational_cut(g, c, cfg, h)
            cuts[(i, j)] = (nu, off)
    polys, keep = [], []
    for i in range(k):
        q = mp
        for j in range(k):
            if j == i or q is None:
                continue
            nu, off = cuts[(min(i, j), max(i, j))]
            if i > j:
                nu, off = tuple(-a for a in nu), -off
            q = clip(q, nu, off)
        if q is not None:
            polys.append(q)
            keep.append(i)
    total = sum((q.volume for q in polys), Fraction(0))
    defect = float(abs(total - mp.volume) / mp.volume)
    if defect > cfg.coverage_tol:
        raise CreaseResolutionFailure(
            f"snapped cuts leave a coverage defect of {defect:.3e}; refine the mesh"
        )
    pieces = []
    for q in polys:
        inside = np.array([q.contains(p, tol=1e-9) for p in nodes])
        pieces.append(Piece(q, q.weights, zero, np.flatnonzero(inside)))
    used = []
    for a, i in enumerate(keep):
        for b, j in enumerate(keep):
            if a < b and (i, j) in cuts:
                nu, off = cuts[(i, j)]
                if _face_vertices(polys[a], nu, off):
                    used.append((a, b, nu, off))
    return pieces, used, defect


def _face_vertices(q: Polytope, nu, off) -> list:
    """Vertices of ``q`` on ``nu . x = off`` when they span a facet, else []."""
    pts = [v for v in q.vertices if sum(a * b for a, b in zip(nu, v)) == off]
    if len(pts) < q.dim:
        return []
    rows = [[a - b for a, b in zip(p, pts[0])] for p in pts[1:]]
    if q.dim > 1 and _rank(rows) < q.dim - 1:
        return []
    return pts


# ---------------------------------------------------------------------------
# exact re-solve on fixed pieces


def _basis_gram(q: Polytope):
    n = q.dim
    mt = moments(q, 2)
    basis = [(0,) * n] + [tuple(int(k == i) for k in range(n)) for i in range(n)]
    gram = [[mt.interior[tuple(a + b for a, b in zip(u, v))] for v in basis] for u in basis]
    load = [mt.boundary[u] for u in basis]
    return gram, load


def polish_destabilizer(pieces: list[Piece], cuts, density: AffineFunction):
    """Exact minimiser of ``L_D(f) + 1/2 ||f||^2`` over continuous piecewise-affine ``f``.

    ``f`` is affine on each piece and continuous across the cuts.  For
    rational data the KKT system is solved in Fractions.  Fills each piece's
    ``phi_piece`` and ``local_density = D - phi_piece``.
    """
    n = pieces[0].subpolytope.dim
    m = n + 1
    P = len(pieces)
    d = [to_fraction(density.constant)] + [to_fraction(a) for a in density.gradient]
    size = P * m
    H = [[Fraction(0)] * size for _ in range(size)]
    rhs = [Fraction(0)] * size
    for p, piece in enumerate(pieces):
        gram, load = _basis_gram(piece.subpolytope)
        for a in range(m):
            for b in range(m):
                H[p * m + a][p * m + b] = gram[a][b]
            # gradient of theta.load - theta.G d + 1/2 theta.G theta is G theta + load - G d
            rhs[p * m + a] = sum(gram[a][b] * d[b] for b in range(m)) - load[a]
    rows = []
    for i, j, nu, off in cuts:
        pts = _face_vertices(pieces[i].subpolytope, nu, off)
        chosen = []
        for v in pts:
            trial = chosen + [v]
            diffs = [[a - b for a, b in zip(u, trial[0])] for u in trial[1:]]
            if not diffs or _rank(diffs) == len(diffs):
                chosen = trial
            if len(chosen) == n:
                break
        for v in chosen:
            r = [Fraction(0)] * size
            e = [Fraction(1)] + list(v)
            for a in range(m):
                r[i * m + a] = e[a]
                r[j * m + a] = -e[a]
            rows.append(r)
    k = len(rows)
    K = [H[a] + [rows[c][a] for c in range(k)] for a in range(size)]
    K += [rows[c] + [Fraction(0)] * k for c in range(k)]
    sol = _solve(K, rhs + [Fraction(0)] * k)
    if sol is None:
        raise CreaseResolutionFailure("singular system on the detected pieces")
    for p, piece in enumerate(pieces):
        th = sol[p * m:(p + 1) * m]
        piece.phi_piece = AffineFunction(tuple(th[1:]), th[0])
        piece.local_density = AffineFunction(
            tuple(d[1 + a] - th[1 + a] for a in range(n)), d[0] - th[0]
        )
    return pieces


def concavity_check(pieces: list[Piece], cuts, tol: float = 1e-12) -> bool:
    """Glued density is concave: each piece's density is the smaller one on its own side.

    Across a cut ``nu . x = off`` with piece ``i`` on ``nu . x >= off``,
    ``B_i - B_j`` must vanish on the cut and be ``<= 0`` on ``i``'s side.
    """
    for i, j, nu, off in cuts:
        bi, bj = pieces[i].local_density, pieces[j].local_density
        diff = [a - b for a, b in zip(bi.gradient, bj.gradient)]
        cdiff = bi.constant - bj.constant
        # diff . x + cdiff = lam (nu . x - off) must hold with lam <= 0
        k = next(t for t, a in enumerate(nu) if a != 0)
        lam = diff[k] / nu[k]
        parallel = all(abs(float(diff[t] - lam * nu[t])) <= tol for t in range(len(nu)))
        matches = abs(float(cdiff + lam * off)) <= tol
        if not (parallel and matches and float(lam) <= tol):
            return False
    return True


def verify_piece(piece: Piece, resolution: int = 8, opts: SolverOptions | None = None,
                 tol: float = 1e-5) -> str:
    """Semistability of ``(Q_i, dsigma_i)`` re-meshed, plus ``A_i`` vs local density."""
    q = piece.subpolytope
    A = extremal_affine(q)
    piece.extremal = A
    diff = A - piece.local_density
    vol = float(q.volume)
    mt = moments(q, 2)
    n = q.dim
    g = [float(a) for a in diff.gradient]
    c = float(diff.constant)
    e = [tuple(int(k == i) for k in range(n)) for i in range(n)]
    sq = c * c * float(mt.interior[(0,) * n])
    sq += 2 * c * sum(g[i] * float(mt.interior[e[i]]) for i in range(n))
    sq += sum(g[i] * g[j] * float(mt.interior[tuple(a + b for a, b in zip(e[i], e[j]))])
              for i in range(n) for j in range(n))
    piece.density_mismatch = float(np.sqrt(max(sq, 0.0) / vol))
    res = semistability_test(q, opts=opts, resolution=resolution)
    piece.result = res
    piece.verdict = res.verdict
    if piece.density_mismatch > tol:
        log.warning("piece density mismatch %.3e exceeds %.1e", piece.density_mismatch, tol)
    return res.verdict


def decompose(result: DestabilizerResult, mp: Polytope, config: DecompositionConfig | None = None,
              resolution: int | None = None, opts: SolverOptions | None = None,
              require_unstable: bool = True) -> DecompositionReport:
    """Full pipeline: detect, extract, re-solve exactly, verify pieces."""
    cfg = config or DecompositionConfig()
    if require_unstable and result.verdict != "unstable":
        raise NotUnstable(f"verdict is {result.verdict}; nothing to decompose")
    quad = result.quad
    ok, clusters = detect_piecewise_linear(result.phi, quad, config=cfg)
    if not ok:
        return DecompositionReport([], False, None, clusters=clusters,
                                   notes=["Phi is not piecewise linear at this resolution"])
    pieces, cuts, defect = extract_pieces(result.phi, mp, clusters, quad, cfg)
    polish_destabilizer(pieces, cuts, result.density)
    polished = np.zeros(quad.n_nodes)
    x = quad.mesh_nodes
    for p in pieces:
        polished[p.node_set] = p.phi_piece(x[p.node_set])
    mesh_err = _rel_l2(result.phi.values - polished, result.phi.values, quad) \
        if np.any(result.phi.values) else 0.0
    concave = concavity_check(pieces, cuts)
    res = resolution or quad.resolution
    if cfg.jobs > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(cfg.jobs) as ex:
            list(ex.map(lambda p: verify_piece(p, res, opts), pieces))
    else:
        for p in pieces:
            verify_piece(p, res, opts)
    fit = getattr(clusters[0], "fit_residual", None) if clusters else None
    return DecompositionReport(pieces, True, concave, defect, clusters, cuts, fit, mesh_err)


# ---------------------------------------------------------------------------
# trapezium oracle


@dataclass
class TrapeziumReference:
    l: Fraction
    A: AffineFunction
    crease_values: dict
    polytope: Polytope

    def kernel_slack(self, t) -> Fraction:
        """``g(0) + l g(1) - int_0^1 (1+(l-1)x) A(x) g(x) dx`` for ``g = max(0, x - t)``."""
        t = to_fraction(t)
        l = self.l
        a1, a0 = self.A.gradient[0], self.A.constant
        # integrand (1 + (l-1)x)(a1 x + a0)(x - t) on [t, 1]; coefficients of x^0..x^3
        p = [Fraction(1), l - 1]
        q = [a0, a1]
        pq = [p[0] * q[0], p[0] * q[1] + p[1] * q[0], p[1] * q[1]]
        poly = [-t * pq[0], pq[0] - t * pq[1], pq[1] - t * pq[2], pq[2]]
        integral = sum(c * (1 - t ** (k + 1)) / (k + 1) for k, c in enumerate(poly))
        g0 = max(Fraction(0), -t)
        g1 = max(Fraction(0), 1 - t)
        return g0 + l * g1 - integral


def trapezium_reference(l, us=(Fraction(1, 4), Fraction(1, 2), Fraction(3, 4))) -> TrapeziumReference:
    """Closed-form extremal function and exact crease values for the trapezium.

    ``A(x, y) = [12(l^2-1) x - 6(l^2-2l-1)] / (l^2+4l+1)``; the creases join
    ``(0, u)`` and ``(1, ul)``, i.e. ``h = y - u(1 + (l-1)x)``.
    """
    l = to_fraction(l)
    den = l * l + 4 * l + 1
    A = AffineFunction((12 * (l * l - 1) / den, Fraction(0)), -6 * (l * l - 2 * l - 1) / den)
    mp = trapezium(l)
    vals = {}
    for u in us:
        u = to_fraction(u)
        h = AffineFunction((-u * (l - 1), Fraction(1)), -u)
        vals[u] = crease_functional(mp, A, h, exact=True)
    return TrapeziumReference(l, A, vals, mp)
