"""Penalized Monte Carlo EM for latent Gaussian precision estimation.

Each iteration estimates the expected latent covariance given the observed
cell intervals (E-step, Gibbs sampling), then solves an l1-penalized
precision problem on it (M-step, graphical lasso).  The M-step maximizes
the fixed-R surrogate

    log det Theta - tr(Theta R) - lambda ||Theta||_1,off

so the recorded surrogate never decreases within an iteration; should a
fresh solve land below the previous iterate (possible only inside solver
tolerance), the loop stops at the previous iterate instead of recording a
non-ascending step.

Model selection recomputes the expected covariance at the converged
estimate with a 10x Monte Carlo budget and scores

    AIC = -2 Q + 2 H + 2 d,     BIC = -2 Q + 2 H + log(n) d,

where d counts the nonzero upper off-diagonal entries and the entropy term
H is either omitted (default) or estimated by sequential-conditioning Monte
Carlo over the cell intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

from .dataio import DataError, IntervalBounds, MixedDataset, interval_bounds
from .glasso import (CorrelationMatrix, PrecisionEstimate, SolverSettings,
                     glasso_fit, lambda_grid_auto, objective)
from .tmvn import (McSettings, _gibbs_chains, _truncated_standard_sample,
                   expected_covariance_full, expected_covariance_partitioned)

# seed stream tags; row indices are appended by the samplers
_TAG_ESTEP = 1
_TAG_FINAL = 2
_TAG_GHK = 3

_SELECTION_MC_FACTOR = 10


@dataclass(frozen=True)
class EmSettings:
    max_iters: int = 10
    conv_tol: float = 1e-3
    variant: str = "partitioned"
    mc: McSettings = field(default_factory=McSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.conv_tol <= 0:
            raise ValueError("conv_tol must be positive")
        if self.variant not in ("full", "partitioned"):
            raise ValueError(f"unknown variant '{self.variant}'")


@dataclass
class EmResult:
    """Converged (or budget-exhausted) EM state for one penalty value."""

    theta: PrecisionEstimate
    r_bar: CorrelationMatrix
    r_hat: CorrelationMatrix | None
    q_trace: list[float]
    iterations: int
    converged: bool
    lam: float
    n: int
    trace: list[dict]
    settings: EmSettings
    dataset: MixedDataset
    bounds: IntervalBounds
    final_state: np.ndarray
    # True when the monotonicity safeguard halted the loop early
    ascent_stop: bool = False


@dataclass(frozen=True)
class IcReport:
    """Information criteria for one fitted penalty value."""

    lam: float
    d: int
    q_term: float
    h_term: float
    h_mode: str
    aic: float
    bic: float
    estimate: PrecisionEstimate


def _q_value(theta: np.ndarray, R: np.ndarray, n: int) -> float:
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return -np.inf
    return 0.5 * n * (logdet - float(np.sum(theta * R)))


def _estep(bounds: IntervalBounds, theta, variant: str, mc: McSettings,
           seed_path, init):
    fn = expected_covariance_full if variant == "full" else expected_covariance_partitioned
    return fn(bounds, theta, mc, rescale=True, init=init,
              return_state=True, seed_path=seed_path)


def em_fit(dataset: MixedDataset, lam: float, settings: EmSettings = EmSettings(),
           theta0: np.ndarray | None = None, chain_init: np.ndarray | None = None,
           final_estep: bool = True) -> EmResult:
    """Fit one penalty value by Monte Carlo EM.

    Starts at the identity precision unless ``theta0`` is given.  The Gibbs
    chains may be warm-started through ``chain_init`` (used by em_path to
    chain along a penalty grid).  ``final_estep=False`` skips the 10x
    selection E-step when criteria will not be needed.
    """
    if lam < 0:
        raise ValueError("penalty must be >= 0")
    bounds = interval_bounds(dataset, mode=settings.variant)
    n = dataset.n
    p = dataset.p
    seed = settings.mc.seed
    pen_diag = settings.solver.penalize_diagonal

    theta = np.eye(p) if theta0 is None else np.asarray(theta0, dtype=float)
    estimate = None
    deterministic = not (bounds.lower < bounds.upper).any()

    q_trace: list[float] = []
    trace: list[dict] = []
    converged = False
    iterations = 0
    state = chain_init
    r_bar = None
    ascent_stop = False

    for m in range(settings.max_iters):
        r_bar_new, state = _estep(bounds, theta, settings.variant, settings.mc,
                                  seed_path=[seed, _TAG_ESTEP, m], init=state)
        fitted = glasso_fit(r_bar_new, lam, warm=estimate, settings=settings.solver)
        surr_prev = objective(theta, r_bar_new, lam, pen_diag)
        surr_new = objective(fitted.theta, r_bar_new, lam, pen_diag)
        if surr_new < surr_prev:
            # only reachable within solver tolerance of the optimum; keep
            # the previous iterate so recorded steps always ascend
            if r_bar is None:
                r_bar = r_bar_new
            converged = True
            ascent_stop = True
            break
        max_change = float(np.max(np.abs(fitted.theta - theta)))
        r_bar = r_bar_new
        iterations = m + 1
        q_pen = _q_value(fitted.theta, r_bar_new.values, n) - 0.5 * n * lam * _penalty(
            fitted.theta, pen_diag)
        q_trace.append(q_pen)
        trace.append({
            "iteration": iterations,
            "q": _q_value(fitted.theta, r_bar_new.values, n),
            "q_penalized": q_pen,
            "surrogate_prev": surr_prev,
            "surrogate_new": surr_new,
            "kkt": fitted.kkt,
            "edge_count": fitted.edge_count,
            "max_change": max_change,
        })
        theta = fitted.theta
        estimate = fitted
        if max_change < settings.conv_tol or deterministic:
            converged = True
            break

    if estimate is None:
        # ascent safeguard fired on the very first iteration: keep theta0
        estimate = PrecisionEstimate(theta=theta, lam=lam, converged=True, kkt=np.nan)
        iterations = 0
        converged = True

    r_hat = None
    if final_estep:
        if deterministic:
            r_hat = r_bar
        else:
            sel_mc = replace(settings.mc,
                             n_samples=_SELECTION_MC_FACTOR * settings.mc.n_samples)
            r_hat, _ = _estep(bounds, estimate.theta, settings.variant, sel_mc,
                              seed_path=[seed, _TAG_FINAL, 0], init=state)

    return EmResult(theta=estimate, r_bar=r_bar, r_hat=r_hat, q_trace=q_trace,
                    iterations=iterations, converged=converged, lam=lam, n=n,
                    trace=trace, settings=settings, dataset=dataset, bounds=bounds,
                    final_state=state if state is not None else bounds.lower.copy(),
                    ascent_stop=ascent_stop)


def _penalty(theta: np.ndarray, penalize_diagonal: bool) -> float:
    pen = float(np.sum(np.abs(theta)))
    if not penalize_diagonal:
        pen -= float(np.sum(np.abs(np.diag(theta))))
    return pen


def em_path(dataset: MixedDataset, lambdas=None, settings: EmSettings = EmSettings(),
            final_estep: bool = True, n_lambdas: int = 10) -> list[EmResult]:
    """Fit a decreasing penalty grid, warm-starting estimates and chains.

    With ``lambdas=None`` the grid is ``n_lambdas`` log-spaced values from
    lambda_max = max |off-diagonal| of the first E-step covariance down to
    0.1 lambda_max.
    """
    bounds = interval_bounds(dataset, mode=settings.variant)
    if lambdas is None:
        r0, _ = _estep(bounds, np.eye(dataset.p), settings.variant, settings.mc,
                       seed_path=[settings.mc.seed, _TAG_ESTEP, 0], init=None)
        lambdas = lambda_grid_auto(r0, num=n_lambdas, floor_ratio=0.1)
    lams = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lams) >= 0):
        raise ValueError("lambda grid must be strictly decreasing")
    out: list[EmResult] = []
    theta0 = None
    chain = None
    for lam in lams:
        res = em_fit(dataset, float(lam), settings=settings, theta0=theta0,
                     chain_init=chain, final_estep=final_estep)
        out.append(res)
        theta0 = res.theta.theta
        chain = res.final_state
    return out


def _ghk_log_orthant(lower, upper, chol, u):
    """Log of the Gaussian interval probability P(a < Z <= b), Z ~ N(0, LL').

    Sequential conditioning: coordinate j is drawn truncated given the
    previous coordinates, and the draw weight collects the per-coordinate
    interval masses.  ``u`` holds (draws, p) uniforms.
    """
    draws, p = u.shape
    e = np.zeros((draws, p))
    logw = np.zeros(draws)
    for j in range(p):
        mu = e[:, :j] @ chol[j, :j] if j else np.zeros(draws)
        lo = (lower[j] - mu) / chol[j, j]
        hi = (upper[j] - mu) / chol[j, j]
        mass = np.maximum(ndtr(hi) - ndtr(lo), 1e-300)
        logw += np.log(mass)
        e[:, j] = _truncated_standard_sample(u[:, j], lo, hi)
    return float(logsumexp(logw) - math.log(draws))


def _entropy_mc(result: EmResult, n_draws: int) -> float:
    """Monte Carlo estimate of H = E[log p(Z | Z in D, Theta)] over rows.

    Works on the full interval representation of the dataset regardless of
    the EM variant, since the rank event D is defined by intervals.
    """
    theta = result.theta.theta
    p = theta.shape[0]
    bounds = interval_bounds(result.dataset, mode="full")
    sigma = np.linalg.inv(theta)
    chol = np.linalg.cholesky(sigma)
    seed = result.settings.mc.seed

    mc = replace(result.settings.mc, n_samples=n_draws)
    _, _, draws, _ = _gibbs_chains(bounds.lower, bounds.upper, theta,
                                   mc.n_samples, mc.burn_in,
                                   seed_path=[seed, _TAG_GHK, 0], collect=True)
    # mean log density of the truncated draws, per row
    sign, logdet = np.linalg.slogdet(theta)
    const = -0.5 * p * math.log(2.0 * math.pi) + 0.5 * logdet
    quad = np.einsum("tij,jk,tik->ti", draws, theta, draws)
    mean_logpdf = const - 0.5 * quad.mean(axis=0)

    h = 0.0
    for i in range(result.n):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([seed, _TAG_GHK, 1, i])))
        u = rng.random((n_draws, p))
        log_orthant = _ghk_log_orthant(bounds.lower[i], bounds.upper[i], chol, u)
        h += float(mean_logpdf[i]) - log_orthant
    return h


def information_criteria(result: EmResult, n: int | None = None,
                         h_mode: str = "omit", ghk_draws: int = 200) -> IcReport:
    """Score one fitted penalty value.

    q_term is -2 Q at the converged estimate against the selection-grade
    expected covariance (10x Monte Carlo budget).  h_mode 'omit' sets the
    entropy term to zero, canceling in comparisons across one grid;
    'monte_carlo' estimates it by sequential conditioning.
    """
    if h_mode not in ("omit", "monte_carlo"):
        raise ValueError(f"unknown h_mode '{h_mode}'")
    n = result.n if n is None else int(n)
    R = result.r_hat if result.r_hat is not None else result.r_bar
    if R is None:
        raise ValueError("result carries no expected covariance")
    q_term = -2.0 * _q_value(result.theta.theta, R.values, n)
    d = result.theta.edge_count
    h_term = 0.0 if h_mode == "omit" else 2.0 * _entropy_mc(result, ghk_draws)
    aic = q_term + h_term + 2.0 * d
    bic = q_term + h_term + math.log(n) * d
    return IcReport(lam=result.lam, d=d, q_term=q_term, h_term=h_term,
                    h_mode=h_mode, aic=aic, bic=bic, estimate=result.theta)


def select_model(reports: Sequence[IcReport], criterion: str = "bic") -> IcReport:
    """Pick the report minimizing the criterion; ties go to the larger penalty."""
    if criterion not in ("aic", "bic"):
        raise ValueError(f"unknown criterion '{criterion}'")
    if not reports:
        raise ValueError("no reports to select from")
    best = None
    for rep in reports:
        score = getattr(rep, criterion)
        if best is None:
            best = rep
            continue
        best_score = getattr(best, criterion)
        if score < best_score or (score == best_score and rep.lam > best.lam):
            best = rep
    return best
