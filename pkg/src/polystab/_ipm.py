"""Mehrotra predictor-corrector interior-point method for convex QPs.

Solves ``min 1/2 z^T H z + c^T z  s.t.  C z >= d`` with dense ``H`` and
sparse ``C``.  The normal equations ``H + C^T (Lambda/Y) C`` are factorised
densely, which is adequate for the few thousand unknowns arising here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import SolverDiverged

log = logging.getLogger(__name__)


@dataclass
class QPResult:
    z: np.ndarray
    multipliers: np.ndarray
    slacks: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float


def _step_length(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def solve_qp(
    H: np.ndarray,
    c: np.ndarray,
    C: sp.spmatrix,
    d: np.ndarray | None = None,
    z0: np.ndarray | None = None,
    tol: float = 1e-11,
    max_iter: int = 200,
) -> QPResult:
    """Interior-point solve from an infeasible start.

    Convergence is declared when primal and dual residuals and the mean
    complementarity are below ``tol`` relative to the data scale.
    """
    C = sp.csr_matrix(C)
    m, nz = C.shape
    d = np.zeros(m) if d is None else np.asarray(d, float)
    z = np.zeros(nz) if z0 is None else np.array(z0, float)
    scale_c = 1.0 + float(np.max(np.abs(c)))
    scale_h = float(np.max(np.abs(np.diag(H)))) or 1.0
    y = np.maximum(C @ z - d, 1.0)
    lam = np.ones(m)
    ct = C.T.tocsr()
    eye_reg = 1e-13 * scale_h
    best = None
    stalled = 0
    for it in range(1, max_iter + 1):
        cz = C @ z
        rp = cz - d - y
        rd = H @ z + c - ct @ lam
        mu = float(y @ lam) / m
        rp_n = float(np.max(np.abs(rp))) if m else 0.0
        rd_n = float(np.max(np.abs(rd)))
        merit = max(rp_n, rd_n / scale_c, mu / scale_c)
        if best is None or merit < best[0]:
            best = (merit, QPResult(z, lam, y, it, rp_n, rd_n, mu))
        if rp_n <= tol * (1 + np.max(np.abs(cz))) and rd_n <= tol * scale_c and mu <= 1e-3 * tol * scale_c:
            return best[1]
        if stalled >= 3:
            if best[0] <= 1e3 * tol:
                log.debug("ipm stalled; returning best iterate (merit %.2e)", best[0])
                return best[1]
            break
        D = lam / y
        K = H + (ct @ sp.diags(D) @ C).toarray()
        K[np.diag_indices_from(K)] += eye_reg
        fac = None
        for shift in (0.0, 1e-10, 1e-8, 1e-6):
            Kr = K.copy()
            Kr[np.diag_indices_from(Kr)] += shift * scale_h
            try:
                fac = sla.cho_factor(Kr, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                continue
        if fac is None:
            break

        def solve(r, fac=fac, K=K):
            # iterative refinement undoes most of the diagonal shift
            x = sla.cho_solve(fac, r, check_finite=False)
            for _ in range(3):
                x = x + sla.cho_solve(fac, r - K @ x, check_finite=False)
            return x

        def direction(rc):
            rhs = -rd - ct @ (D * rp + rc / y)
            dz = solve(rhs)
            dy = C @ dz + rp
            dl = -(rc + lam * dy) / y
            return dz, dy, dl

        dz, dy, dl = direction(y * lam)
        a_aff = min(_step_length(y, dy), _step_length(lam, dl))
        mu_aff = float((y + a_aff * dy) @ (lam + a_aff * dl)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dz, dy, dl = direction(y * lam + dy * dl - sigma * mu)
        eta = max(0.9, 1.0 - 10 * mu / scale_c) if mu > 0 else 0.995
        eta = min(eta, 0.9999)
        alpha = min(1.0, eta * _step_length(y, dy), eta * _step_length(lam, dl))
        log.debug("ipm it=%d rp=%.2e rd=%.2e mu=%.2e alpha=%.3f", it, rp_n, rd_n, mu, alpha)
        stalled = stalled + 1 if alpha < 1e-3 else 0
        z = z + alpha * dz
        y = y + alpha * dy
        lam = lam + alpha * dl
        if not (np.all(np.isfinite(z)) and np.all(y > 0) and np.all(lam > 0)):
            log.debug("ipm iterates left the positive orthant at it=%d", it)
            break
    if best is not None and best[0] <= 1e3 * tol:
        return best[1]
    raise SolverDiverged(
        f"interior point did not converge in {it} iterations "
        f"(primal {rp_n:.2e}, dual {rd_n:.2e}, gap {mu:.2e})"
    )
