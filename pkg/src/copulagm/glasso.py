"""L1-penalized Gaussian precision estimation (graphical lasso).

Solves

    maximize_Theta  log det Theta - tr(Theta S) - lambda * ||Theta||_1,pen

by block coordinate descent over columns of the working covariance W with an
inner coordinate-descent lasso, the classical glasso scheme.  The penalty
covers off-diagonal entries only unless ``penalize_diagonal`` is set.  Every
returned estimate is checked against the stationarity (KKT) certificate

    |W_ij - S_ij - lambda sign(theta_ij)| on the support,
    max(0, |W_ij - S_ij| - lambda)       off the support,
    |W_ii - S_ii (- lambda)|             on the diagonal,

with W = inv(Theta); the solver keeps sweeping until both the mean absolute
change of W and this certificate drop below ``tol``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# entries of Theta below this magnitude do not count as edges
EDGE_TOL = 1e-10

_SYM_TOL = 1e-12


class SolverError(RuntimeError):
    """Input validation or numerical failure inside the solver."""


class SolverWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverSettings:
    """Convergence knobs for glasso_fit.

    tol bounds both the mean absolute change of W between sweeps and the
    KKT residual of the returned estimate.
    """

    tol: float = 1e-4
    max_sweeps: int = 200
    penalize_diagonal: bool = False


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric matrix input to the solver, tagged by its provenance role.

    Roles in use: 'input-s' (raw input), 'expected-rbar' (full-variant
    expected latent covariance), 'expected-rtilde' (partitioned variant),
    'tau-gamma' (sine-transformed Kendall tau).
    """

    values: np.ndarray
    role: str = "input-s"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise SolverError("matrix must be square")
        if not np.all(np.isfinite(values)):
            raise SolverError("matrix must be finite")
        if np.max(np.abs(values - values.T)) > _SYM_TOL * max(1.0, np.max(np.abs(values))):
            raise SolverError("matrix must be symmetric")
        values = 0.5 * (values + values.T)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def p(self) -> int:
        return self.values.shape[0]


def as_matrix(S) -> np.ndarray:
    """Accept a CorrelationMatrix or a plain array; return the ndarray."""
    if isinstance(S, CorrelationMatrix):
        return S.values
    arr = np.asarray(S, dtype=float)
    return CorrelationMatrix(arr).values  # reuse validation


@dataclass
class PrecisionEstimate:
    """A fitted sparse precision matrix.

    theta is symmetric positive definite; edges are the strictly-upper
    support pairs (|theta_ij| > EDGE_TOL); partial correlations are
    -theta_ij / sqrt(theta_ii theta_jj).
    """

    theta: np.ndarray
    lam: float
    converged: bool = True
    sweeps: int = 0
    kkt: float = np.nan

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        theta = 0.5 * (theta + theta.T)
        theta.setflags(write=False)
        self.theta = theta

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        i, j = np.nonzero(np.triu(np.abs(self.theta) > EDGE_TOL, k=1))
        return tuple(zip(i.tolist(), j.tolist()))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def partial_correlations(self) -> np.ndarray:
        d = np.sqrt(np.diag(self.theta))
        pc = -self.theta / np.outer(d, d)
        np.fill_diagonal(pc, 1.0)
        pc = np.where(np.abs(self.theta) > EDGE_TOL, pc, 0.0)
        np.fill_diagonal(pc, 1.0)
        return pc


def _validate_input(S: np.ndarray, lam: float) -> None:
    if lam < 0:
        raise SolverError(f"penalty must be >= 0, got {lam}")
    diag = np.diag(S)
    if np.any(diag <= 0):
        raise SolverError("input matrix needs a strictly positive diagonal")
    w = np.linalg.eigvalsh(S)
    scale = max(1.0, float(np.max(np.abs(S))))
    if w[0] < -1e-8 * scale:
        raise SolverError(f"input matrix is not PSD (min eigenvalue {w[0]:.3e})")
    if lam == 0 and w[0] <= 1e-10 * scale:
        raise SolverError("lambda = 0 requires a strictly positive definite input")


def objective(theta: np.ndarray, S, lam: float, penalize_diagonal: bool = False) -> float:
    """Penalized log-likelihood objective the solver maximizes."""
    S = as_matrix(S)
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return -np.inf
    pen = np.sum(np.abs(theta))
    if not penalize_diagonal:
        pen -= np.sum(np.abs(np.diag(theta)))
    return float(logdet - np.sum(theta * S) - lam * pen)


def kkt_residual(theta, S, lam: float, penalize_diagonal: bool = False) -> float:
    """Max stationarity violation of theta for the glasso objective.

    Support classification uses EDGE_TOL, matching edge extraction.
    """
    if isinstance(theta, PrecisionEstimate):
        theta = theta.theta
    S = as_matrix(S)
    theta = np.asarray(theta, dtype=float)
    try:
        np.linalg.cholesky(theta)
    except np.linalg.LinAlgError as exc:
        raise SolverError("theta is not positive definite") from exc
    W = np.linalg.inv(theta)
    diff = W - S
    off = ~np.eye(theta.shape[0], dtype=bool)
    active = off & (np.abs(theta) > EDGE_TOL)
    inactive = off & ~active
    res = 0.0
    if active.any():
        res = max(res, np.max(np.abs(diff[active] - lam * np.sign(theta[active]))))
    if inactive.any():
        res = max(res, max(0.0, np.max(np.abs(diff[inactive])) - lam))
    diag_target = lam if penalize_diagonal else 0.0
    res = max(res, np.max(np.abs(np.diag(diff) - diag_target)))
    return float(res)


def _soft(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def _lasso_cd(V, u, beta, lam, coord_tol, screen_eps, max_rounds=50, max_passes=1000):
    """min_b 0.5 b'Vb - u'b + lam ||b||_1 by coordinate descent.

    Screening: only coordinates violating |grad| <= lam join the active set,
    so sparse solutions touch few coordinates per round.  ``beta`` is
    updated in place and returned.
    """
    diag = np.diag(V).copy()
    r = V @ beta  # maintained as V @ beta
    for _round in range(max_rounds):
        grad = u - r
        active = np.flatnonzero((beta != 0.0) | (np.abs(grad) > lam + screen_eps))
        if active.size == 0:
            return beta
        for _pass in range(max_passes):
            delta = 0.0
            for k in active:
                bk = beta[k]
                gk = u[k] - r[k] + diag[k] * bk
                bnew = _soft(gk, lam) / diag[k]
                if bnew != bk:
                    step = bnew - bk
                    r += V[:, k] * step
                    beta[k] = bnew
                    if abs(step) > delta:
                        delta = abs(step)
            if delta < coord_tol:
                break
        r = V @ beta  # refresh accumulated residual before re-screening
        grad = u - r
        viol = (np.abs(grad) > lam + screen_eps) & (beta == 0.0)
        if not viol.any():
            return beta
    return beta


def _theta_from_working(W, B, others):
    p = W.shape[0]
    theta = np.zeros((p, p))
    for j in range(p):
        idx = others[j]
        beta = B[idx, j]
        denom = W[j, j] - W[idx, j] @ beta
        if denom <= 0:
            raise SolverError("working covariance lost positive definiteness")
        tjj = 1.0 / denom
        theta[j, j] = tjj
        theta[idx, j] = -tjj * beta
    # symmetrize; at convergence both triangles agree and zeros line up
    return 0.5 * (theta + theta.T)


def glasso_fit(S, lam: float, warm: PrecisionEstimate | None = None,
               settings: SolverSettings = SolverSettings()) -> PrecisionEstimate:
    """Fit the penalized precision matrix for one penalty value.

    Parameters
    ----------
    S : CorrelationMatrix or (p, p) array
        Symmetric PSD input with positive diagonal; must be strictly PD
        when lam == 0.
    lam : float
        Nonnegative penalty.  For lam >= max |off-diagonal of S| the
        solution is exactly diagonal.
    warm : PrecisionEstimate, optional
        Warm start; its theta seeds the working matrices.
    """
    S = as_matrix(S)
    _validate_input(S, lam)
    p = S.shape[0]
    pd_extra = lam if settings.penalize_diagonal else 0.0

    if p == 1:
        theta = np.array([[1.0 / (S[0, 0] + pd_extra)]])
        return PrecisionEstimate(theta=theta, lam=lam, converged=True, sweeps=0, kkt=0.0)

    others = [np.concatenate((np.arange(j), np.arange(j + 1, p))) for j in range(p)]

    if warm is not None:
        theta0 = np.asarray(warm.theta, dtype=float)
        if theta0.shape != S.shape:
            raise SolverError("warm start has the wrong dimension")
        W = np.linalg.inv(theta0)
        B = np.empty((p, p))
        for j in range(p):
            B[others[j], j] = -theta0[others[j], j] / theta0[j, j]
    else:
        W = S + lam * np.eye(p)
        B = np.zeros((p, p))
    # stationarity pins the diagonal of W regardless of the start
    np.fill_diagonal(W, np.diag(S) + pd_extra)
    np.fill_diagonal(B, 0.0)

    coord_tol = 0.02 * settings.tol
    screen_eps = 0.01 * settings.tol
    best = None
    best_kkt = np.inf
    theta = None
    for sweep in range(1, settings.max_sweeps + 1):
        W_prev = W.copy()
        for j in range(p):
            idx = others[j]
            V = W[np.ix_(idx, idx)]
            beta = _lasso_cd(V, S[idx, j], B[idx, j].copy(), lam, coord_tol, screen_eps)
            w12 = V @ beta
            W[idx, j] = w12
            W[j, idx] = w12
            B[idx, j] = beta
        mean_change = float(np.mean(np.abs(W - W_prev)))
        if mean_change < settings.tol:
            theta = _theta_from_working(W, B, others)
            cert = kkt_residual(theta, S, lam, settings.penalize_diagonal)
            if cert < best_kkt:
                best, best_kkt = theta, cert
            if cert <= settings.tol:
                return PrecisionEstimate(theta=theta, lam=lam, converged=True,
                                         sweeps=sweep, kkt=cert)
            # W settled but the certificate has not: solve subproblems tighter
            coord_tol = max(coord_tol * 0.1, 1e-14)
            screen_eps = max(screen_eps * 0.1, 1e-14)
    if best is None:
        best = _theta_from_working(W, B, others)
        best_kkt = kkt_residual(best, S, lam, settings.penalize_diagonal)
    warnings.warn(
        f"glasso did not reach tol={settings.tol} within {settings.max_sweeps} sweeps "
        f"(best KKT residual {best_kkt:.3e}); returning best iterate",
        SolverWarning,
    )
    return PrecisionEstimate(theta=best, lam=lam, converged=False,
                             sweeps=settings.max_sweeps, kkt=best_kkt)


def glasso_path(S, lambdas, settings: SolverSettings = SolverSettings()) -> list[PrecisionEstimate]:
    """Fit a strictly decreasing penalty path with warm starts."""
    lams = np.asarray(lambdas, dtype=float)
    if lams.ndim != 1 or lams.size == 0:
        raise SolverError("lambda path must be a non-empty 1-d sequence")
    if np.any(np.diff(lams) >= 0):
        raise SolverError("lambda path must be strictly decreasing")
    out = []
    warm = None
    for lam in lams:
        warm = glasso_fit(S, float(lam), warm=warm, settings=settings)
        out.append(warm)
    return out


def lambda_grid_auto(S, num: int = 10, floor_ratio: float = 0.1) -> np.ndarray:
    """Log-spaced decreasing grid from lambda_max = max |off-diag S|.

    lambda_max makes the fit exactly diagonal; the grid descends to
    floor_ratio * lambda_max.
    """
    S = as_matrix(S)
    if num < 1:
        raise SolverError("grid needs at least one point")
    off = np.abs(S[~np.eye(S.shape[0], dtype=bool)])
    lam_max = float(np.max(off)) if off.size else 1.0
    if lam_max <= 0:
        lam_max = 1.0
    if num == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, floor_ratio * lam_max, num)
