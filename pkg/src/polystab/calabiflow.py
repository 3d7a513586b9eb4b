"""Calabi flow of symplectic potentials on weighted intervals.

The potential is ``u = u0w + v`` with the weighted Guillemin model

    u0w(x) = (1/w0) d0 log d0 + (1/w1) d1 log d1,   d0 = x - lo,  d1 = hi - x,

so that ``psi = 1/u''`` vanishes at each endpoint with slope equal to that
endpoint's weight.  The singular part enters only through the exact values
``u0w''(x_k)`` at interior nodes; the smooth part ``v`` is differenced.

The discrete scalar curvature is defined by summation by parts,

    W S = l - D^T (c * psi),   psi_k = 1 / (u0w''(x_k) + (D v)_k),

with ``W`` the lumped nodal weights, ``l`` the endpoint weights, ``D`` the
three-point second difference at interior nodes and ``c`` its lumped
weights.  For every nodal ``f`` this gives the exact discrete identity
``sum W S f = l.f - sum c psi D f``, the analogue of integrating
``-(1/u'')'' f`` by parts, so ``L_S`` kills affine functions and is
non-negative on discrete convex data.  It also makes ``S`` the W-gradient of

    F_0(v) = -sum_k c_k log(u0w''_k + (D v)_k) + l.v,

which turns backward Euler into a proximal step of a convex function.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BlowUpDetected,
    ConvexityLoss,
    DegreeUnsupported,
    NonConvexStart,
    StepRejected,
    ZeroWeightEndpoint,
)
from .functionals import AffineFunction
from .geometry import Polytope, _graded

log = logging.getLogger(__name__)

__all__ = [
    "FlowMesh",
    "FlowState",
    "FlowConfig",
    "FlowDiagnostics",
    "init_potential",
    "scalar_curvature",
    "step",
    "run_flow",
    "curvature_residual",
    "mabuchi_relative",
    "discrete_extremal",
    "coercivity_constant",
    "guillemin_second_derivative",
]

DIAG_COLUMNS = ("t", "calabi_energy", "target_residual", "F_Shat", "F_B", "L_Sv0", "boundary_integral")


# ---------------------------------------------------------------------------
# mesh and state


@dataclass(frozen=True, eq=False)
class FlowMesh:
    """Nodes, lumped weights and the interior second-difference operator."""

    lo: float
    hi: float
    weights: tuple[float, float]
    nodes: np.ndarray
    W: np.ndarray
    c: np.ndarray
    D: sp.csr_matrix
    load: np.ndarray
    g0: np.ndarray  # u0w'' at interior nodes
    u0: np.ndarray  # u0w at all nodes
    psi0: np.ndarray  # 1/u0w'' at interior nodes

    @property
    def h(self) -> float:
        return float(np.min(np.diff(self.nodes)))

    @property
    def s_hat(self) -> float:
        return float(self.load.sum() / self.W.sum())

    def inner(self, f, g) -> float:
        return float(np.sum(self.W * f * g))

    def norm(self, f) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))

    def affine_values(self, A) -> np.ndarray:
        """Nodal values of a scalar, an :class:`AffineFunction` or a nodal array."""
        if isinstance(A, AffineFunction):
            return A(self.nodes[:, None])
        a = np.asarray(A, float)
        return np.full(len(self.nodes), float(a)) if a.ndim == 0 else a

    def affine_projection(self, f) -> np.ndarray:
        """Coefficients ``(alpha, beta)`` of the W-projection onto ``alpha + beta x``."""
        basis = np.vstack([np.ones_like(self.nodes), self.nodes])
        gram = (basis * self.W) @ basis.T
        return np.linalg.solve(gram, (basis * self.W) @ f)


def guillemin_second_derivative(x, lo, hi, weights):
    """``u0w''(x) = 1/(w0 (x-lo)) + 1/(w1 (hi-x))``."""
    x = np.asarray(x, float)
    return 1.0 / (weights[0] * (x - lo)) + 1.0 / (weights[1] * (hi - x))


def _xlogx(d):
    d = np.asarray(d, float)
    out = np.zeros_like(d)
    pos = d > 0
    out[pos] = d[pos] * np.log(d[pos])
    return out


def _interval_data(mp: Polytope):
    if mp.dim != 1:
        raise DegreeUnsupported("the flow is implemented on intervals only")
    lo = hi = None
    w = [None, None]
    for f in mp.facets:
        if f.normal[0] > 0:
            lo, w[0] = float(f.offset), float(f.sigma_weight)
        else:
            hi, w[1] = float(-f.offset), float(f.sigma_weight)
    if min(w) <= 0:
        raise ZeroWeightEndpoint(f"flow needs positive endpoint weights, got {tuple(w)}")
    return lo, hi, (w[0], w[1])


def build_mesh(mp: Polytope, resolution: int = 64, grading: float = 1.0) -> FlowMesh:
    lo, hi, w = _interval_data(mp)
    N = int(resolution)
    if N < 4:
        raise ValueError("flow resolution must be at least 4")
    xi = np.array([_graded(k / N, grading) for k in range(N + 1)])
    x = lo + (hi - lo) * xi
    dx = np.diff(x)
    W = np.zeros(N + 1)
    W[:-1] += dx / 2
    W[1:] += dx / 2
    c = W[1:-1].copy()
    rows, cols, vals = [], [], []
    for k in range(1, N):
        hl, hr = dx[k - 1], dx[k]
        s = 2.0 / (hl + hr)
        rows += [k - 1] * 3
        cols += [k - 1, k, k + 1]
        vals += [s / hl, -s * (1 / hl + 1 / hr), s / hr]
    D = sp.csr_matrix((vals, (rows, cols)), shape=(N - 1, N + 1))
    load = np.zeros(N + 1)
    load[0], load[-1] = w
    g0 = guillemin_second_derivative(x[1:-1], lo, hi, w)
    u0 = _xlogx(x - lo) / w[0] + _xlogx(hi - x) / w[1]
    return FlowMesh(lo, hi, w, x, W, c, D, load, g0, u0, 1.0 / g0)


@dataclass(frozen=True, eq=False)
class FlowState:
    """Smooth part ``v`` (gauge-projected), time and accumulated affine drift.

    ``drift`` holds the coefficients of the affine function removed by the
    gauge so far; ``v + drift`` is the genuine solution of ``u_t = -S``.
    ``origin`` is the ungauged smooth part at ``t = 0``.
    """

    mesh: FlowMesh
    v: np.ndarray
    time: float = 0.0
    drift: np.ndarray = field(default_factory=lambda: np.zeros(2))
    origin: np.ndarray | None = None
    mp: Polytope | None = None

    @property
    def nodes(self) -> np.ndarray:
        return self.mesh.nodes

    def second_derivative(self) -> np.ndarray:
        """``u''`` at interior nodes."""
        return self.mesh.g0 + self.mesh.D @ self.v

    def potential(self, gauged: bool = False) -> np.ndarray:
        """Nodal values of ``u``; ungauged unless requested."""
        v = self.v if gauged else self.v + self.drift[0] + self.drift[1] * self.nodes
        return self.mesh.u0 + v


def init_potential(mp: Polytope, perturbation=None, resolution: int = 64,
                   grading: float = 1.0) -> FlowState:
    """Weighted Guillemin potential plus a smooth perturbation.

    Parameters
    ----------
    mp : Polytope
        An interval with positive endpoint weights.
    perturbation : callable, array or None
        ``v`` at ``t = 0``; a callable is evaluated at the nodes.
    """
    mesh = build_mesh(mp, resolution, grading)
    if perturbation is None:
        v = np.zeros(len(mesh.nodes))
    elif callable(perturbation):
        v = np.asarray(perturbation(mesh.nodes), float) * np.ones(len(mesh.nodes))
    else:
        v = np.asarray(perturbation, float)
    if v.shape != mesh.nodes.shape or not np.all(np.isfinite(v)):
        raise NonConvexStart("perturbation must give finite values at every node")
    upp = mesh.g0 + mesh.D @ v
    if np.any(upp <= 0):
        k = int(np.argmin(upp)) + 1
        raise NonConvexStart(f"u'' = {upp.min():.3e} <= 0 at x = {mesh.nodes[k]:.6g}")
    return FlowState(mesh, v.copy(), 0.0, np.zeros(2), v.copy(), mp)


# ---------------------------------------------------------------------------
# curvature and functionals


def _psi(mesh: FlowMesh, v) -> np.ndarray:
    upp = mesh.g0 + mesh.D @ v
    if np.any(upp <= 0):
        raise ConvexityLoss(f"u'' lost positivity (min {upp.min():.3e})")
    return 1.0 / upp


def _curvature(mesh: FlowMesh, v) -> np.ndarray:
    return (mesh.load - mesh.D.T @ (mesh.c * _psi(mesh, v))) / mesh.W


def scalar_curvature(state: FlowState) -> np.ndarray:
    """Discrete Abreu curvature ``S = -(1/u'')''`` at the nodes."""
    return _curvature(state.mesh, state.v)


def curvature_residual(state: FlowState, B=None) -> float:
    """``||S(u) - B||`` in the lumped L2 norm; ``B`` defaults to ``S_hat``."""
    mesh = state.mesh
    target = mesh.s_hat if B is None else B
    return mesh.norm(scalar_curvature(state) - mesh.affine_values(target))


def discrete_extremal(mesh: FlowMesh) -> AffineFunction:
    """Affine ``A`` with ``l.g = sum W A g`` for ``g = 1, x`` on the flow mesh."""
    x = mesh.nodes
    basis = np.vstack([np.ones_like(x), x])
    gram = (basis * mesh.W) @ basis.T
    coef = np.linalg.solve(gram, basis @ mesh.load)
    return AffineFunction((float(coef[1]),), float(coef[0]))


def _F(mesh: FlowMesh, v_full, A_vals) -> float:
    upp = mesh.g0 + mesh.D @ v_full
    if np.any(upp <= 0):
        return math.inf
    return float(-np.sum(mesh.c * np.log(upp)) + mesh.load @ v_full - np.sum(mesh.W * A_vals * v_full))


def mabuchi_relative(state: FlowState, A=None, reference: FlowState | None = None) -> float:
    """``F_A(u) - F_A(u_ref)`` with ``F_A = -int log u'' + L_A(u)``.

    The singular part cancels in the difference, so only ``v`` enters.
    ``reference`` defaults to the run's starting potential.
    """
    mesh = state.mesh
    A_vals = mesh.affine_values(mesh.s_hat if A is None else A)
    full = state.v + state.drift[0] + state.drift[1] * mesh.nodes
    ref = state.origin if reference is None else reference.v + reference.drift[0] + reference.drift[1] * mesh.nodes
    return _F(mesh, full, A_vals) - _F(mesh, ref, A_vals)


def L_of(mesh: FlowMesh, density_vals, f) -> float:
    """Discrete ``L_D(f) = l.f - sum W D f``."""
    return float(mesh.load @ f - np.sum(mesh.W * density_vals * f))


def normalized_potential(state: FlowState, base: int | None = None) -> np.ndarray:
    """``u`` minus its centred-difference tangent line at the node nearest the centre."""
    x = state.nodes
    u = state.potential(gauged=True)
    i = int(np.argmin(np.abs(x - 0.5 * (x[0] + x[-1])))) if base is None else base
    slope = (u[i + 1] - u[i - 1]) / (x[i + 1] - x[i - 1])
    return u - u[i] - slope * (x - x[i])


def coercivity_constant(state: FlowState, count: int = 200, seed: int = 0) -> float:
    """Estimate ``lambda`` with ``L_{S(v)}(f) >= lambda int_d f dsigma`` on a battery.

    The battery holds simple creases at every interior node and random
    maxima of affine functions, each normalised at the centre node.
    """
    mesh = state.mesh
    S = scalar_curvature(state)
    x = mesh.nodes
    i0 = int(np.argmin(np.abs(x - 0.5 * (x[0] + x[-1]))))
    rng = np.random.default_rng(seed)
    fams = [np.maximum(x - t, 0.0) for t in x[1:-1]] + [np.maximum(t - x, 0.0) for t in x[1:-1]]
    L = x[-1] - x[0]
    while len(fams) < count + 2 * (len(x) - 2):
        k = int(rng.integers(2, 5))
        slopes = rng.normal(size=k) / L
        pts = rng.uniform(x[0], x[-1], size=k)
        fams.append(np.max(slopes[:, None] * (x[None, :] - pts[:, None]), axis=0))
    best = math.inf
    for f in fams:
        # subtract a supporting line at the centre node
        left = (f[i0] - f[i0 - 1]) / (x[i0] - x[i0 - 1])
        g = np.maximum(f - f[i0] - left * (x - x[i0]), 0.0)
        b = float(mesh.load @ g)
        if b <= 1e-12:
            continue
        best = min(best, L_of(mesh, S, g) / b)
    return best


# ---------------------------------------------------------------------------
# stepping


@dataclass
class FlowConfig:
    """Time-stepping controls.

    ``method`` is ``"implicit"`` (backward Euler via Newton on the proximal
    objective; unconditionally monotone) or ``"explicit"`` (forward Euler
    with ``dt = cfl * h^4``).
    """

    method: str = "implicit"
    dt: float | None = None
    cfl: float = 0.1
    dt_max: float = 0.05
    growth: float = 1.5
    max_halvings: int = 30
    max_steps: int = 100000
    target_tol: float | None = None
    blowup_cap: float = 1e8
    newton_tol: float = 1e-15
    newton_max_iter: int = 60
    monotone_slack: float = 1e-10
    record_every: int = 1


def _gauge(mesh: FlowMesh, v, drift):
    coef = mesh.affine_projection(v)
    return v - coef[0] - coef[1] * mesh.nodes, drift + coef


def _explicit(state: FlowState, dt: float, slack: float) -> np.ndarray:
    mesh = state.mesh
    S = _curvature(mesh, state.v)
    w = state.v - dt * S
    upp = mesh.g0 + mesh.D @ w
    if np.any(upp <= 0):
        raise StepRejected(f"convexity lost at dt={dt:.3e}", dt / 2)
    E0 = mesh.norm(S - mesh.s_hat)
    E1 = mesh.norm(_curvature(mesh, w) - mesh.s_hat)
    if E1 > E0 * (1 + 1e-6) + slack:
        raise StepRejected(f"Calabi energy grew at dt={dt:.3e} ({E0:.3e} -> {E1:.3e})", dt / 2)
    return w


def _implicit(state: FlowState, dt: float, tol: float, max_iter: int) -> np.ndarray:
    """Backward Euler: minimise ``F_0(w) + |w - v|_W^2 / (2 dt)`` by damped Newton."""
    mesh = state.mesh
    v = state.v
    D, DT = mesh.D, mesh.D.T.tocsr()
    Wdt = mesh.W / dt

    def objective(w):
        upp = mesh.g0 + D @ w
        if np.any(upp <= 0):
            return math.inf
        r = w - v
        return float(-np.sum(mesh.c * np.log(upp)) + mesh.load @ w + 0.5 * np.sum(Wdt * r * r))

    w = v.copy()
    try:
        pred = v - dt * _curvature(mesh, v)
        if objective(pred) < objective(w):
            w = pred
    except ConvexityLoss:
        pass
    scale = 1.0 + float(np.max(np.abs(mesh.load / mesh.W)))
    res = math.inf
    for it in range(max_iter):
        q = 1.0 / (mesh.g0 + D @ w)
        grad = mesh.load - DT @ (mesh.c * q) + Wdt * (w - v)
        res = float(np.max(np.abs(grad / mesh.W)))
        if res <= tol * scale:
            return w
        H = DT @ sp.diags(mesh.c * q * q) @ D + sp.diags(Wdt)
        step_ = -spla.spsolve(H.tocsc(), grad)
        if float(np.max(np.abs(step_))) <= 8 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(w)))):
            return w  # converged to the round-off floor ulp(v) / h^4
        dec = -float(grad @ step_)
        f0 = objective(w)
        if dec <= 1e-10 * (1.0 + abs(f0)) and np.isfinite(objective(w + step_)):
            w = w + step_  # objective differences are below round-off; trust Newton
            continue
        a = 1.0
        while a > 1e-12:
            cand = w + a * step_
            if objective(cand) <= f0 - 0.25 * a * dec:
                break
            a *= 0.5
        else:
            break
        w = cand
    if res <= 1e3 * tol * scale:
        return w
    raise StepRejected(f"Newton stalled at dt={dt:.3e} (residual {res:.2e})", dt / 2)


def step(state: FlowState, dt: float, method: str = "implicit", *,
         config: FlowConfig | None = None) -> FlowState:
    """One flow step ``u_t = -S(u)`` followed by the affine gauge projection.

    Raises
    ------
    StepRejected
        Convexity loss, Calabi-energy growth (explicit) or Newton failure
        (implicit); ``suggested_dt`` carries the halved step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = config or FlowConfig(method=method)
    if method == "explicit":
        w = _explicit(state, dt, cfg.monotone_slack)
    elif method == "implicit":
        w = _implicit(state, dt, cfg.newton_tol, cfg.newton_max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    w, drift = _gauge(state.mesh, w, state.drift)
    return replace(state, v=w, time=state.time + dt, drift=drift)


# ---------------------------------------------------------------------------
# runs


@dataclass
class FlowDiagnostics:
    """Time series recorded at every accepted step, plus run metadata."""

    rows: list[dict] = field(default_factory=list)
    target: AffineFunction | None = None
    coercivity: float | None = None
    rejections: int = 0
    stopped: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(DIAG_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(repr(float(r[c])) for c in DIAG_COLUMNS))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        last = self.rows[-1] if self.rows else {}
        return {
            "steps": len(self.rows) - 1,
            "t_final": last.get("t"),
            "calabi_energy": last.get("calabi_energy"),
            "target_residual": last.get("target_residual"),
            "target": self.target.to_dict() if self.target else None,
            "coercivity_lambda": self.coercivity,
            "rejections": self.rejections,
            "stopped": self.stopped,
        }


def _record(state: FlowState, B_vals, S0) -> dict:
    mesh = state.mesh
    S = scalar_curvature(state)
    u = state.potential()
    ut = normalized_potential(state)
    return {
        "t": state.time,
        "calabi_energy": mesh.norm(S - mesh.s_hat),
        "target_residual": mesh.norm(S - B_vals),
        "F_Shat": mabuchi_relative(state, mesh.s_hat),
        "F_B": mabuchi_relative(state, B_vals),
        "L_Sv0": L_of(mesh, S0, u),
        "boundary_integral": float(mesh.load @ ut),
        "max_abs_S": float(np.max(np.abs(S))),
    }


def run_flow(state0: FlowState, t_end: float, callbacks: Iterable[Callable] = (),
             config: FlowConfig | None = None, target=None) -> tuple[FlowDiagnostics, FlowState]:
    """Integrate to ``t_end`` (or until ``||S - B|| < target_tol``).

    ``target`` defaults to the discrete extremal affine function of the
    flow mesh, the expected limit for a relatively stable interval.  Each
    callback receives ``(state, row)`` after every accepted step.
    """
    cfg = config or FlowConfig()
    mesh = state0.mesh
    B = discrete_extremal(mesh) if target is None else target
    B_vals = mesh.affine_values(B)
    S0 = scalar_curvature(state0)
    diag = FlowDiagnostics(target=B if isinstance(B, AffineFunction) else None)
    diag.coercivity = coercivity_constant(state0)
    log.info("flow start: lambda estimate %.4g", diag.coercivity)
    if cfg.dt is not None:
        dt = cfg.dt
    elif cfg.method == "explicit":
        dt = cfg.cfl * mesh.h**4
    else:
        dt = min(cfg.dt_max, 10 * mesh.h**2)
    state = state0
    row = _record(state, B_vals, S0)
    diag.rows.append(row)
    for cb in callbacks:
        cb(state, row)
    n_steps = 0
    while state.time < t_end * (1 - 1e-12) and n_steps < cfg.max_steps:
        h = min(dt, t_end - state.time)
        rejected = False
        for _ in range(cfg.max_halvings + 1):
            try:
                new = step(state, h, cfg.method, config=cfg)
                break
            except (StepRejected, ConvexityLoss) as exc:
                diag.rejections += 1
                rejected = True
                h = getattr(exc, "suggested_dt", h / 2)
                log.debug("step rejected: %s", exc)
        else:
            raise ConvexityLoss(f"step rejected {cfg.max_halvings} times at t={state.time:.6g}")
        state = new
        n_steps += 1
        row = _record(state, B_vals, S0)
        if row["max_abs_S"] > cfg.blowup_cap:
            raise BlowUpDetected(f"max|S| = {row['max_abs_S']:.3e} at t={state.time:.6g}")
        if n_steps % cfg.record_every == 0 or state.time >= t_end * (1 - 1e-12):
            diag.rows.append(row)
            for cb in callbacks:
                cb(state, row)
        if cfg.target_tol is not None and row["target_residual"] < cfg.target_tol:
            if diag.rows[-1] is not row:
                diag.rows.append(row)
            diag.stopped = "target"
            break
        if rejected:
            dt = h
        elif cfg.method == "implicit" and h == dt:
            dt = min(cfg.dt_max, dt * cfg.growth)
    if not diag.stopped:
        diag.stopped = "t_end" if state.time >= t_end * (1 - 1e-12) else "max_steps"
    return diag, state
