"""Optimal destabilising convex function by quadratic programming.

The discrete problem is

    minimise  G(f) = L_D(f) + 1/2 ||f||^2   over the discrete convex cone,

where ``D`` is the reference density (``S_hat`` for the absolute problem,
the extremal affine function for the relative one), ``L_D`` and the L2 norm
are evaluated on the P1 interpolant of the nodal values, and the cone is the
pairwise supporting-plane system in the unknowns ``(f_i, s_i)``.  The
directional derivative of ``G`` at the minimiser ``Phi`` toward ``g`` equals
``L_B(g)`` with ``B = D - Phi``, so optimality is exactly
``L_B >= 0`` on the cone with ``L_B(Phi) = 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog, minimize_scalar
from scipy.spatial import cKDTree

from ._ipm import solve_qp
from .convexcone import (
    ConvexGridFunction,
    default_base_point,
    normalize,
    sample_cone,
    supporting_violation,
)
from .errors import CertificateFailure, InfeasibleStart
from .functionals import (
    AffineFunction,
    crease_functional,
    extremal_affine,
    project_affine,
)
from .geometry import Polytope, Quadrature, build_quadrature, scalar_summary

log = logging.getLogger(__name__)

__all__ = [
    "SolverOptions",
    "Certificates",
    "DestabilizerResult",
    "solve_optimal_destabilizer",
    "semistability_test",
    "certificate_check",
    "brute_force_oracle",
    "crease_search",
    "secondary_lp",
    "cone_qp",
]


@dataclass
class SolverOptions:
    """Tolerances and caps for the destabiliser solve.

    Attributes
    ----------
    tol : float
        Pairwise feasibility tolerance relative to the value scale.
    norm_tol : float
        ``Phi`` counts as zero when ``||Phi|| <= norm_tol * ||D||``.
    epsilon : float or None
        Threshold on the normalised secondary minimum separating stable from
        strictly semistable; ``None`` means ``1e-7 * vol_sigma``.
    init : str
        ``"zero"``, ``"random"`` or ``"unconstrained"`` start for the QP.
    seed : int
        Seed for random starts and for the certificate battery.
    """

    tol: float = 1e-8
    norm_tol: float = 1e-6
    epsilon: float | None = None
    qp_tol: float = 1e-11
    max_iter: int = 200
    max_rounds: int = 40
    neighbors: int | None = None
    init: str = "zero"
    seed: int = 0
    battery_size: int = 200
    battery_seed: int = 12345
    secondary: bool = True
    crease_fraction: float = 0.05
    crease_directions: int = 90
    crease_offsets: int = 24


@dataclass
class Certificates:
    kkt_residual: float
    cone_min: float
    scaling_residual: float
    affine_part: float
    feasibility: float
    battery_size: int
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DestabilizerResult:
    """Outcome of a destabiliser solve.

    ``phi`` is the minimiser on the mesh nodes, ``b_density`` the nodal
    values of ``B = D - Phi``.  ``verdict`` is ``stable``,
    ``semistable_strict`` or ``unstable``.
    """

    phi: ConvexGridFunction
    b_density: np.ndarray
    w_value: float
    verdict: str
    certificates: Certificates | None
    norm: float
    L_value: float
    problem: str
    density: AffineFunction
    extremal: AffineFunction
    quad: Quadrature = field(repr=False)
    marginal: bool = False
    trusted: bool = True
    secondary: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def semistable(self) -> bool:
        return self.verdict in ("stable", "semistable_strict")

    def summary(self) -> dict:
        return {
            "problem": self.problem,
            "verdict": self.verdict,
            "marginal": self.marginal,
            "trusted": self.trusted,
            "phi_norm": self.norm,
            "L_phi": self.L_value,
            "w_value": self.w_value,
            "certificates": self.certificates.to_dict() if self.certificates else None,
            "secondary": self.secondary,
            "solver": self.info,
        }


# ---------------------------------------------------------------------------
# assembly


def _load_vector(quad: Quadrature, density) -> np.ndarray:
    """``b_i = L_D(phi_i)`` for the nodal hat functions."""
    if isinstance(density, AffineFunction):
        dq = density(quad.interior_points)
    elif np.ndim(density) == 0:
        dq = np.full(len(quad.interior_weights), float(density))
    else:
        dq = quad.interior_basis @ np.asarray(density, float)
    interior = np.asarray(quad.interior_basis.T @ (quad.interior_weights * dq)).ravel()
    return quad.boundary_load - interior


def _initial_pairs(quad: Quadrature, k: int | None) -> set[tuple[int, int]]:
    n = quad.dim
    pairs = set()
    for a, b in quad.edges:
        pairs.add((int(a), int(b)))
        pairs.add((int(b), int(a)))
    k = (2 if n == 1 else 3**n - 1) if k is None else k
    k = min(k, quad.n_nodes - 1)
    tree = cKDTree(quad.mesh_nodes)
    _, idx = tree.query(quad.mesh_nodes, k=k + 1)
    for j, row in enumerate(np.atleast_2d(idx)):
        for i in row[1:]:
            pairs.add((int(i), j))
    return pairs


def _constraint_matrix(pairs, nodes: np.ndarray) -> sp.csr_matrix:
    """Rows ``f_i - f_j - s_j . (x_i - x_j) >= 0`` in ``z = [f, s]``."""
    N, n = nodes.shape
    pairs = np.array(sorted(pairs), dtype=int)
    i, j = pairs[:, 0], pairs[:, 1]
    m = len(pairs)
    rows = np.repeat(np.arange(m), 2 + n)
    cols = np.empty((m, 2 + n), dtype=int)
    vals = np.empty((m, 2 + n))
    cols[:, 0], vals[:, 0] = i, 1.0
    cols[:, 1], vals[:, 1] = j, -1.0
    diff = nodes[i] - nodes[j]
    for d in range(n):
        cols[:, 2 + d] = N + j * n + d
        vals[:, 2 + d] = -diff[:, d]
    return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(m, N * (1 + n)))


def _violated_pairs(f, s, nodes, tol, per_node: int = 4):
    """Pairs whose supporting-plane slack is below ``-tol``; a few per node."""
    planes = f - np.einsum("jd,jd->j", s, nodes)
    out = []
    N = len(f)
    for a in range(0, N, 256):
        jj = np.arange(a, min(a + 256, N))
        slack = f[:, None] - (nodes @ s[jj].T + planes[jj])  # (N, block)
        for col, j in enumerate(jj):
            bad = np.flatnonzero(slack[:, col] < -tol)
            if len(bad):
                worst = bad[np.argsort(slack[bad, col])[:per_node]]
                out.extend((int(i), int(j)) for i in worst)
    return out


def cone_qp(quad: Quadrature, density, opts: SolverOptions | None = None):
    """Minimise ``L_D(f) + 1/2 f^T M f`` over the discrete cone by cutting planes.

    Returns ``(values, subgradients, info)``.
    """
    opts = opts or SolverOptions()
    nodes = quad.mesh_nodes
    N, n = nodes.shape
    M = quad.mass_matrix
    b = _load_vector(quad, density)
    scale_m = float(np.max(np.diag(M)))
    H = np.zeros((N * (1 + n), N * (1 + n)))
    H[:N, :N] = M
    idx = np.arange(N, N * (1 + n))
    H[idx, idx] = 1e-9 * scale_m
    c = np.concatenate([b, np.zeros(N * n)])
    rng = np.random.default_rng(opts.seed)
    if opts.init == "random":
        z0 = rng.normal(size=N * (1 + n))
    elif opts.init == "unconstrained":
        z0 = np.concatenate([np.linalg.solve(M, -b), np.zeros(N * n)])
    else:
        z0 = np.zeros(N * (1 + n))
    pairs = _initial_pairs(quad, opts.neighbors)
    if opts.init == "random":
        extra = rng.integers(0, N, size=(N, 2))
        pairs |= {(int(a), int(b_)) for a, b_ in extra if a != b_}
    total_iter = 0
    for rnd in range(1, opts.max_rounds + 1):
        C = _constraint_matrix(pairs, nodes)
        res = solve_qp(H, c, C, z0=z0, tol=opts.qp_tol, max_iter=opts.max_iter)
        total_iter += res.iterations
        f, s = res.z[:N], res.z[N:].reshape(N, n)
        vscale = max(1.0, float(np.max(np.abs(f))))
        new = [p for p in _violated_pairs(f, s, nodes, 0.1 * opts.tol * vscale) if p not in pairs]
        if not new:
            break
        pairs.update(new)
        z0 = res.z
    else:
        log.warning("cutting planes did not settle in %d rounds", opts.max_rounds)
    info = {
        "rounds": rnd,
        "ipm_iterations": total_iter,
        "active_pairs": len(pairs),
        "primal_residual": res.primal_residual,
        "dual_residual": res.dual_residual,
    }
    return f, s, info


# ---------------------------------------------------------------------------
# secondary classification


def _canonical(mp: Polytope) -> Polytope:
    return mp.with_weights([0 if f.cut else 1 for f in mp.facets])


def crease_search(mp: Polytope, density: AffineFunction, opts: SolverOptions | None = None):
    """Minimise ``L_A(f) / int_{dP} f d sigma_can`` over normalised simple creases.

    Creases are restricted so that each side holds at least
    ``crease_fraction`` of the volume (creases hugging the boundary
    degenerate to affine functions).  Evaluation is exact PL integration by
    clipping.  Dimensions one and two only; returns ``None`` otherwise.
    """
    opts = opts or SolverOptions()
    n = mp.dim
    if n > 2:
        return None
    canon = _canonical(mp)
    vol = float(mp.volume)
    x0 = default_base_point(mp)
    verts = mp.vertex_array
    zero = AffineFunction((0.0,) * n, 0.0)
    dens = density.as_float()

    from .geometry import clip_volume_float

    def ratio(theta, c):
        d = np.array([1.0]) if n == 1 else np.array([math.cos(theta), math.sin(theta)])
        h = AffineFunction(tuple(d), -c)
        if h(x0[None])[0] > 0:
            h = -h
        num = crease_functional(mp, dens, h, exact=False)
        den = crease_functional(canon, zero, h, exact=False)
        return (num / den if den > 1e-14 else np.inf), h

    def side_ok(theta, c):
        d = np.array([1.0]) if n == 1 else np.array([math.cos(theta), math.sin(theta)])
        v = clip_volume_float(mp, d, c)
        return opts.crease_fraction * vol <= v <= (1 - opts.crease_fraction) * vol

    thetas = [0.0] if n == 1 else np.linspace(0, math.pi, opts.crease_directions, endpoint=False)
    best = (np.inf, None, None)
    for th in thetas:
        d = np.array([1.0]) if n == 1 else np.array([math.cos(th), math.sin(th)])
        proj = verts @ d
        lo, hi = float(proj.min()), float(proj.max())
        for c in np.linspace(lo, hi, opts.crease_offsets + 2)[1:-1]:
            if not side_ok(th, c):
                continue
            r, h = ratio(th, c)
            if r < best[0]:
                best = (r, th, c)
    if best[1] is None:
        return None
    # local refinement in the offset, then in the direction
    r0, th, c = best
    d = np.array([1.0]) if n == 1 else np.array([math.cos(th), math.sin(th)])
    proj = verts @ d
    step_c = (proj.max() - proj.min()) / (opts.crease_offsets + 1)

    penalty = abs(r0) + 1e3  # finite, so the bounded Brent search stays well defined

    def f_c(cc):
        return min(ratio(th, cc)[0], penalty) if side_ok(th, cc) else penalty

    res = minimize_scalar(f_c, bounds=(c - step_c, c + step_c), method="bounded",
                          options={"xatol": 1e-10})
    if res.fun < r0:
        r0, c = float(res.fun), float(res.x)
    if n == 2:
        step_t = math.pi / opts.crease_directions

        def f_t(tt):
            dd = np.array([math.cos(tt), math.sin(tt)])
            # keep the crease through the same point on the old line
            p = c * d
            cc = float(dd @ p)
            return min(ratio(tt, cc)[0], penalty) if side_ok(tt, cc) else penalty

        res = minimize_scalar(f_t, bounds=(th - step_t, th + step_t), method="bounded",
                              options={"xatol": 1e-10})
        if res.fun < r0:
            p = c * d
            th = float(res.x)
            d = np.array([math.cos(th), math.sin(th)])
            c = float(d @ p)
            r0 = float(res.fun)
    r, h = ratio(th, c)
    return {"value": float(r), "crease": h.to_dict(), "theta": float(th), "offset": float(c)}


def secondary_lp(quad: Quadrature, density, opts: SolverOptions | None = None):
    """Mesh LP ``min L_A(f)`` over convex ``f >= 0`` with ``f(x_0) = 0``.

    The boundary integral is fixed to one in the canonical measure of the
    original facets.  Solved with HiGHS and cutting planes on the pairwise
    system.  Returns a dict with the value and the minimiser.
    """
    opts = opts or SolverOptions()
    nodes = quad.mesh_nodes
    N, n = nodes.shape
    b = _load_vector(quad, density)
    c = np.concatenate([b, np.zeros(N * n)])
    x0 = quad.centroid_node
    pairs = _initial_pairs(quad, opts.neighbors)
    a_eq = np.zeros((2, N * (1 + n)))
    a_eq[0, :N] = quad.canonical_boundary_load
    a_eq[1, x0] = 1.0
    bounds = [(0, None)] * N + [(None, None)] * (N * n)
    for _ in range(opts.max_rounds):
        C = _constraint_matrix(pairs, nodes)
        res = linprog(c, A_ub=-C, b_ub=np.zeros(C.shape[0]), A_eq=a_eq, b_eq=[1.0, 0.0],
                      bounds=bounds, method="highs")
        if res.status != 0:
            raise InfeasibleStart(f"secondary LP failed: {res.message}")
        f, s = res.x[:N], res.x[N:].reshape(N, n)
        new = [p for p in _violated_pairs(f, s, nodes, 1e-10) if p not in pairs]
        if not new:
            break
        pairs.update(new)
    pa = project_affine(f, quad)
    resid = f - pa(nodes)
    nontrivial = float(np.sqrt(max(resid @ quad.mass_matrix @ resid, 0)))
    g = ConvexGridFunction(f, s, nodes, nodes[x0], kind="secondary-lp")
    return {"value": float(res.fun), "minimizer": f, "function": g, "nonaffine_norm": nontrivial}


# ---------------------------------------------------------------------------
# main entry points


def _l2(v, quad):
    return float(np.sqrt(max(v @ quad.mass_matrix @ v, 0.0)))


def _scale(quad: Quadrature, density) -> float:
    if isinstance(density, AffineFunction):
        vals = density(quad.mesh_nodes)
    else:
        vals = np.full(quad.n_nodes, float(density))
    return max(_l2(vals, quad), 1e-300)


def extension_value(mp: Polytope, density, g: ConvexGridFunction, canonical: bool = False):
    """Exact ``L_D`` (and canonical boundary integral) of the PL extension of ``g``.

    In one dimension the P1 interpolant of convex nodal data is itself
    convex, so the mesh value is returned.  In higher dimension the
    interpolant may exceed the extension between nodes; the extension is the
    genuine convex function and is integrated exactly.
    """
    from .functionals import max_affine_functional

    consts = g.values - np.einsum("jd,jd->j", g.subgradients, g.nodes)
    planes = np.round(np.column_stack([g.subgradients, consts]), 12)
    planes = np.unique(planes, axis=0)
    val = max_affine_functional(mp, density, planes[:, :-1], planes[:, -1])
    out = {"L": val.value}
    if canonical:
        canon = [0 if f.cut else 1 for f in mp.facets]
        out["boundary"] = max_affine_functional(
            mp, 0.0, planes[:, :-1], planes[:, -1], weights=canon
        ).boundary_term
    return out


def _classify(mp, quad, A, opts, summary):
    eps = opts.epsilon if opts.epsilon is not None else 1e-7 * float(summary.vol_sigma)
    out = {"epsilon": eps}
    cs = crease_search(mp, A, opts)
    lp = secondary_lp(quad, A, opts)
    out["crease_min"] = None if cs is None else cs["value"]
    out["crease_witness"] = None if cs is None else cs["crease"]
    out["lp_value_mesh"] = lp["value"]
    out["lp_nonaffine_norm"] = lp["nonaffine_norm"]
    if mp.dim == 1:
        out["lp_value"] = lp["value"]
    else:
        ext = extension_value(mp, A, lp["function"], canonical=True)
        out["lp_value"] = ext["L"] / ext["boundary"] if ext["boundary"] > 0 else np.inf
    candidates = [v for v in (out["crease_min"], out["lp_value"]) if v is not None]
    value = min(candidates)
    out["value"] = value
    strict = value <= eps and (out["crease_min"] is not None and out["crease_min"] <= eps
                               or lp["nonaffine_norm"] > 1e-6)
    marginal = eps < value <= 100 * eps
    return ("semistable_strict" if strict else "stable"), marginal, out


def _result(mp, quad, density, problem, f, s, opts, info, check=True):
    summary = scalar_summary(mp)
    A = extremal_affine(mp)
    nodes = quad.mesh_nodes
    x0 = default_base_point(mp)
    phi = ConvexGridFunction(f, s, nodes, x0, kind="destabilizer")
    norm = _l2(f, quad)
    L = float(_load_vector(quad, density) @ f)
    dens_nodes = density(nodes) if isinstance(density, AffineFunction) else np.full(len(f), float(density))
    b_density = dens_nodes - f
    scale = _scale(quad, density)
    zero_tol = opts.norm_tol * scale
    w_value = L / norm if norm > 0 else 0.0
    marginal = 0.1 * zero_tol < norm <= 10 * zero_tol
    secondary = {}
    unstable = norm > zero_tol
    if unstable and mp.dim > 1:
        # an interpolation artefact unless the convex extension itself destabilises
        ext_L = extension_value(mp, density, phi)["L"]
        info["extension_L"] = ext_L
        if ext_L >= -opts.tol * max(1.0, norm * scale):
            unstable = False
            marginal = True
            secondary["discrete_artifact"] = {"phi_norm": norm, "extension_L": ext_L}
    if unstable:
        verdict = "unstable"
    elif opts.secondary:
        verdict, marg2, sec = _classify(mp, quad, A, opts, summary)
        secondary.update(sec)
        marginal = marginal or marg2
    else:
        verdict = "semistable"
    info = dict(info, zero_threshold=zero_tol, density_norm=scale)
    res = DestabilizerResult(
        phi=phi,
        b_density=b_density,
        w_value=w_value,
        verdict=verdict,
        certificates=None,
        norm=norm,
        L_value=L,
        problem=problem,
        density=density if isinstance(density, AffineFunction) else AffineFunction((0.0,) * mp.dim, float(density)),
        extremal=A,
        quad=quad,
        marginal=marginal,
        secondary=secondary,
        info=info,
    )
    if check:
        cert = certificate_check(res, mp, quad, opts.battery_size, opts.battery_seed)
        res.certificates = cert
        res.trusted = cert.passed
        if not cert.passed:
            log.warning("certificate check failed: %s", cert)
    return res


def solve_optimal_destabilizer(
    mp: Polytope, quad: Quadrature | None = None, opts: SolverOptions | None = None,
    *, density=None, problem: str = "absolute", resolution: int = 16, check: bool = True,
) -> DestabilizerResult:
    """Optimal destabiliser for the absolute (``S_hat``) or relative (``A``) problem."""
    opts = opts or SolverOptions()
    quad = quad or build_quadrature(mp, resolution)
    if density is None:
        if problem == "relative":
            density = extremal_affine(mp)
        else:
            density = AffineFunction((0,) * mp.dim, scalar_summary(mp).s_hat)
    f, s, info = cone_qp(quad, density, opts)
    return _result(mp, quad, density, problem, f, s, opts, info, check=check)


def semistability_test(mp: Polytope, quad: Quadrature | None = None,
                       opts: SolverOptions | None = None, *, resolution: int = 16,
                       check: bool = True) -> DestabilizerResult:
    """Relative problem with density ``A``; verdict plus crease witness."""
    return solve_optimal_destabilizer(mp, quad, opts, problem="relative",
                                      resolution=resolution, check=check)


def certificate_check(result: DestabilizerResult, mp: Polytope, quad: Quadrature,
                      battery_size: int = 200, seed: int = 12345, tol: float = 1e-6) -> Certificates:
    """Post-hoc optimality certificates on a fresh battery."""
    f = result.phi.values
    M = quad.mass_matrix
    b_ref = _load_vector(quad, result.density)
    # L_B(g) = L_D(g) + <Phi, g>
    b_B = b_ref + M @ f
    norm2 = float(f @ M @ f)
    kkt = abs(float(b_B @ f))
    scaling = abs(float(b_ref @ f) + norm2)
    battery = sample_cone(mp, battery_size, seed, quad=quad)
    vals = []
    for g in battery:
        gn = _l2(g.values, quad)
        if gn > 0:
            vals.append(float(b_B @ g.values) / gn)
    cone_min = min(vals) if vals else 0.0
    pa = project_affine(f, quad)
    target = result.density.as_float() - result.extremal.as_float()
    diff = pa(quad.mesh_nodes) - target(quad.mesh_nodes)
    affine = _l2(diff, quad)
    scale = max(1.0, float(np.max(np.abs(f))))
    feas = supporting_violation(f, result.phi.subgradients, quad.mesh_nodes)
    passed = kkt <= tol and scaling <= tol and cone_min >= -tol and affine <= 1e-5 * max(1.0, _l2(f, quad)) \
        and feas >= -1e-7 * scale
    return Certificates(kkt, cone_min, scaling, affine, feas, len(vals), passed)


# ---------------------------------------------------------------------------
# brute force oracle


def _jensen_rows(nodes: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """All rows ``sum_j lambda_j e_j - e_i`` with ``x_i`` in the hull of other nodes.

    Uses every simplex (of dimension <= n) of other nodes containing ``x_i``;
    by Caratheodory these rows cut out exactly the convex-extendable vectors.
    """
    import itertools

    N, n = nodes.shape
    rows = []
    for i in range(N):
        others = [j for j in range(N) if j != i]
        for k in range(2, n + 2):
            for combo in itertools.combinations(others, k):
                pts = nodes[list(combo)]
                a = np.vstack([pts.T, np.ones(k)])
                rhs = np.append(nodes[i], 1.0)
                lam, res, rank, _ = np.linalg.lstsq(a, rhs, rcond=None)
                if rank < k:
                    continue
                if np.linalg.norm(a @ lam - rhs) > tol or np.any(lam < -tol):
                    continue
                if np.any(lam < tol):
                    continue  # covered by a smaller simplex
                r = np.zeros(N)
                r[list(combo)] = lam
                r[i] -= 1.0
                rows.append(r)
    return np.array(rows).reshape(-1, N)


def brute_force_oracle(mp: Polytope, quad: Quadrature | None = None, density=None, *,
                       resolution: int = 2, restarts: int = 20, iterations: int = 4000,
                       seed: int = 0) -> ConvexGridFunction:
    """Independent solve of the same discrete problem on a tiny mesh.

    The cone is described by Jensen rows ``R f >= 0`` (no subgradient
    variables).  The dual ``max_{mu >= 0} -1/2 |R^T mu - b|^2_{M^-1}`` is
    attacked by accelerated projected gradient from random starts; the best
    dual point's active set is then polished exactly.  With at most twelve
    rows every active set is enumerated instead.
    """
    quad = quad or build_quadrature(mp, resolution)
    if density is None:
        density = AffineFunction((0,) * mp.dim, scalar_summary(mp).s_hat)
    nodes = quad.mesh_nodes
    N = len(nodes)
    M = quad.mass_matrix
    b = _load_vector(quad, density)
    R = _jensen_rows(nodes)
    Minv = np.linalg.inv(M)

    def primal(mu):
        return Minv @ (R.T @ mu - b)

    def objective(f):
        return float(b @ f + 0.5 * f @ M @ f)

    def kkt_solve(active):
        Ra = R[list(active)]
        k = len(active)
        K = np.block([[M, -Ra.T], [Ra, np.zeros((k, k))]])
        try:
            sol = np.linalg.lstsq(K, np.concatenate([-b, np.zeros(k)]), rcond=None)[0]
        except np.linalg.LinAlgError:
            return None
        f, mu = sol[:N], sol[N:]
        if np.any(mu < -1e-9) or np.any(R @ f < -1e-9):
            return None
        return f

    candidates = []
    m = len(R)
    if m <= 12:
        import itertools

        for k in range(m + 1):
            for active in itertools.combinations(range(m), k):
                f = kkt_solve(active)
                if f is not None:
                    candidates.append(f)
    else:
        rng = np.random.default_rng(seed)
        G = R @ Minv @ R.T
        Lip = float(np.linalg.eigvalsh(G)[-1])
        g0 = R @ Minv @ b
        for r in range(restarts):
            mu = rng.uniform(0, 1, size=m) if r else np.zeros(m)
            y, t = mu.copy(), 1.0
            for _ in range(iterations):
                grad = G @ y - g0
                mu_new = np.maximum(y - grad / Lip, 0.0)
                t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
                y = mu_new + (t - 1) / t_new * (mu_new - mu)
                mu, t = mu_new, t_new
            f = primal(mu)
            active = tuple(np.flatnonzero(mu > 1e-10 * max(1.0, mu.max())))
            polished = kkt_solve(active) if active else None
            if polished is None:
                # fall back on rows that are tight at the PG point
                tight = tuple(np.flatnonzero(R @ f < 1e-7 * max(1.0, np.abs(f).max())))
                polished = kkt_solve(tight)
            candidates.append(polished if polished is not None else f)
    feasible = [f for f in candidates if np.all(R @ f >= -1e-8 * max(1.0, np.abs(f).max()))]
    best = min(feasible or candidates, key=objective)
    x0 = default_base_point(mp)
    return ConvexGridFunction(best, np.zeros_like(nodes), nodes, x0, kind="oracle")
