"""Pairwise rank-correlation estimation of a latent Gaussian correlation.

Each variable pair gets a Kendall tau: either the tie-corrected sample
statistic (tau-b), or the tau implied by a bivariate copula fitted to the
pair's pseudo-observations.  Taus map to latent correlations through

    Gamma_ij = sin(pi * tau_ij / 2),

the matrix is repaired to positive semidefiniteness by eigenvalue clipping,
and a single graphical-lasso solve yields the precision estimate.

Closed-form taus of the supported families:

    gaussian  tau = (2/pi) arcsin(rho)            rho in (-1, 1)
    clayton   tau = theta / (theta + 2)           theta > 0
    gumbel    tau = 1 - 1/theta                   theta >= 1
    frank     tau = 1 - (4/theta)(1 - D1(theta))  theta != 0

with D1 the first Debye function.  Clayton and gumbel cover negative
dependence through a 90-degree rotation, which flips the sign of tau.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import ndtri
from scipy.stats import kendalltau

from .dataio import DataError, MixedDataset, rescaled_ecdf
from .glasso import (CorrelationMatrix, PrecisionEstimate, SolverSettings,
                     glasso_fit)

_PSD_FLOOR = 1e-6
_MIN_PAIRS = 10
_U_CLIP = 1e-12

# parameter clamps keep tau inversion inside each family's domain
_RHO_MAX = 0.9999
_THETA_MAX = 200.0
_THETA_MIN = 1e-6


class TauWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CopulaFamily:
    """A copula family tag plus rotation (90 degrees = reflected first margin)."""

    name: str
    rotation: int = 0

    def __post_init__(self):
        if self.name not in ("gaussian", "clayton", "gumbel", "frank"):
            raise ValueError(f"unknown copula family '{self.name}'")
        if self.rotation not in (0, 90):
            raise ValueError("rotation must be 0 or 90")
        if self.name in ("gaussian", "frank") and self.rotation != 0:
            raise ValueError(f"{self.name} covers both signs; rotation not supported")

    @property
    def label(self) -> str:
        return self.name if self.rotation == 0 else f"{self.name}@{self.rotation}"


GAUSSIAN = CopulaFamily("gaussian")
FRANK = CopulaFamily("frank")
CLAYTON = CopulaFamily("clayton")
CLAYTON_90 = CopulaFamily("clayton", 90)
GUMBEL = CopulaFamily("gumbel")
GUMBEL_90 = CopulaFamily("gumbel", 90)

DEFAULT_CANDIDATES = (GAUSSIAN, CLAYTON, CLAYTON_90, GUMBEL, GUMBEL_90, FRANK)


def debye1(theta: float) -> float:
    """First Debye function D1(t) = (1/t) * integral_0^t x/(e^x - 1) dx."""
    if theta == 0:
        return 1.0

    def integrand(x):
        return x / np.expm1(x) if x != 0 else 1.0

    val, _ = integrate.quad(integrand, 0.0, theta, limit=200)
    return val / theta


def _check_parameter(family: CopulaFamily, parameter: float) -> float:
    par = float(parameter)
    if family.name == "gaussian":
        if not -1.0 < par < 1.0:
            raise ValueError(f"gaussian parameter must be in (-1, 1), got {par}")
    elif family.name == "clayton":
        if not par > 0:
            raise ValueError(f"clayton parameter must be > 0, got {par}")
    elif family.name == "gumbel":
        if not par >= 1.0:
            raise ValueError(f"gumbel parameter must be >= 1, got {par}")
    else:  # frank
        if par == 0:
            raise ValueError("frank parameter must be nonzero")
    return par


def tau_from_copula(family: CopulaFamily, parameter: float) -> float:
    """Population Kendall tau implied by a fitted pair copula."""
    par = _check_parameter(family, parameter)
    if family.name == "gaussian":
        tau = 2.0 / np.pi * np.arcsin(par)
    elif family.name == "clayton":
        tau = par / (par + 2.0)
    elif family.name == "gumbel":
        tau = 1.0 - 1.0 / par
    else:
        tau = 1.0 - 4.0 / par * (1.0 - debye1(par))
    if family.rotation == 90:
        tau = -tau
    return float(tau)


def _frank_parameter_from_tau(tau: float) -> float:
    def f(theta):
        return 1.0 - 4.0 / theta * (1.0 - debye1(theta)) - abs(tau)

    hi = 5.0
    while f(hi) < 0 and hi < _THETA_MAX:
        hi *= 2.0
    hi = min(hi, _THETA_MAX)
    if f(hi) < 0:
        theta = hi
    else:
        theta = optimize.brentq(f, 1e-8, hi, xtol=1e-12)
    return float(np.copysign(max(theta, _THETA_MIN), tau))


def parameter_from_tau(family: CopulaFamily, tau: float) -> float:
    """Invert the closed-form tau map; clamps keep the result in-domain.

    The tau handed in must already match the family's sign (rotated
    families take negative tau).
    """
    t = -tau if family.rotation == 90 else tau
    if family.name == "gaussian":
        return float(np.clip(np.sin(np.pi * t / 2.0), -_RHO_MAX, _RHO_MAX))
    if family.name == "clayton":
        if t <= 0:
            raise ValueError("clayton requires positive dependence (after rotation)")
        t = min(t, 1.0 - 1e-8)
        return float(np.clip(2.0 * t / (1.0 - t), _THETA_MIN, _THETA_MAX))
    if family.name == "gumbel":
        if t < 0:
            raise ValueError("gumbel requires nonnegative dependence (after rotation)")
        t = min(t, 1.0 - 1e-8)
        return float(np.clip(1.0 / (1.0 - t), 1.0, _THETA_MAX))
    if t == 0:
        raise ValueError("frank is undefined at exactly zero dependence")
    return _frank_parameter_from_tau(t)


def _gaussian_logpdf(u, v, rho):
    x = ndtri(u)
    y = ndtri(v)
    r2 = rho * rho
    return (-0.5 * np.log1p(-r2)
            - (r2 * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * (1.0 - r2)))


def _clayton_logpdf(u, v, theta):
    lu = np.log(u)
    lv = np.log(v)
    # log(u^-t + v^-t - 1) in log space; m >= log 2 so log1p is safe
    m = np.logaddexp(-theta * lu, -theta * lv)
    ls = m + np.log1p(-np.exp(-m))
    return (np.log1p(theta) - (1.0 + theta) * (lu + lv)
            - (2.0 + 1.0 / theta) * ls)


def _gumbel_logpdf(u, v, theta):
    x = -np.log(u)
    y = -np.log(v)
    lx = np.log(x)
    ly = np.log(y)
    a = np.exp(np.logaddexp(theta * lx, theta * ly) / theta)
    la = np.log(a)
    return (-a + x + y + (theta - 1.0) * (lx + ly)
            + (1.0 - 2.0 * theta) * la + np.log(a + theta - 1.0))


def _frank_logpdf(u, v, theta):
    gu = np.expm1(-theta * u)
    gv = np.expm1(-theta * v)
    g1 = np.expm1(-theta)
    denom = g1 + gu * gv
    return (np.log(np.abs(theta)) + np.log(np.abs(g1)) - theta * (u + v)
            - 2.0 * np.log(np.abs(denom)))


def copula_log_density(family: CopulaFamily, parameter: float, u, v) -> np.ndarray:
    """Pointwise log density; rotated families evaluate at (1 - u, v)."""
    par = _check_parameter(family, parameter)
    u = np.clip(np.asarray(u, dtype=float), _U_CLIP, 1.0 - _U_CLIP)
    v = np.clip(np.asarray(v, dtype=float), _U_CLIP, 1.0 - _U_CLIP)
    if family.rotation == 90:
        u = 1.0 - u
    if family.name == "gaussian":
        return _gaussian_logpdf(u, v, par)
    if family.name == "clayton":
        return _clayton_logpdf(u, v, par)
    if family.name == "gumbel":
        return _gumbel_logpdf(u, v, par)
    return _frank_logpdf(u, v, par)


@dataclass(frozen=True)
class PairCopulaFit:
    family: CopulaFamily
    parameter: float
    tau: float
    loglik: float
    n: int


def _admissible(family: CopulaFamily, tau: float) -> bool:
    if family.name == "gaussian":
        return True
    if family.name == "frank":
        return tau != 0.0
    signed = -tau if family.rotation == 90 else tau
    if family.name == "clayton":
        return signed > 0.0
    return signed >= 0.0  # gumbel includes independence at theta = 1


_MLE_BOUNDS = {
    "gaussian": (-_RHO_MAX, _RHO_MAX),
    "clayton": (_THETA_MIN, _THETA_MAX),
    "gumbel": (1.0 + 1e-9, _THETA_MAX),
    "frank": (_THETA_MIN, _THETA_MAX),  # sign fixed by the tau-inverted start
}


def _refine_mle(family: CopulaFamily, start: float, u, v) -> float:
    lo, hi = _MLE_BOUNDS[family.name]
    sign = 1.0
    if family.name == "frank" and start < 0:
        sign = -1.0
        start = -start

    def nll(par):
        return -float(np.sum(copula_log_density(family, sign * par, u, v)))

    res = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-8})
    par = float(res.x) if res.success else start
    return sign * par


def fit_pair_copula(u, v, candidates: Sequence[CopulaFamily] = DEFAULT_CANDIDATES,
                    estimator: str = "tau") -> PairCopulaFit:
    """Fit one pair of pseudo-observations and return the implied tau.

    Per candidate the parameter comes from inverting the sample tau
    (estimator 'tau', default) or from maximizing the pseudo-log-likelihood
    started at that inversion (estimator 'mle'); the family with the best
    pseudo-log-likelihood wins.  When no candidate can represent the sample
    tau's sign, the gaussian family is the fallback.
    """
    if estimator not in ("tau", "mle"):
        raise ValueError(f"unknown estimator '{estimator}'")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise DataError("pseudo-observations must be matching vectors")
    if u.size < _MIN_PAIRS:
        raise DataError(f"need at least {_MIN_PAIRS} complete pairs, got {u.size}")
    if np.any((u <= 0) | (u >= 1) | (v <= 0) | (v >= 1)):
        raise DataError("pseudo-observations must lie strictly inside (0, 1)")

    tau_s = sample_kendall_tau(u, v)
    fits = []
    for family in candidates:
        if not _admissible(family, tau_s):
            continue
        try:
            par = parameter_from_tau(family, tau_s)
        except ValueError:
            continue
        if estimator == "mle":
            par = _refine_mle(family, par, u, v)
        ll = float(np.sum(copula_log_density(family, par, u, v)))
        fits.append(PairCopulaFit(family=family, parameter=par,
                                  tau=tau_from_copula(family, par),
                                  loglik=ll, n=u.size))
    if not fits:
        par = parameter_from_tau(GAUSSIAN, tau_s)
        if estimator == "mle":
            par = _refine_mle(GAUSSIAN, par, u, v)
        ll = float(np.sum(copula_log_density(GAUSSIAN, par, u, v)))
        return PairCopulaFit(family=GAUSSIAN, parameter=par,
                             tau=tau_from_copula(GAUSSIAN, par), loglik=ll, n=u.size)
    return max(fits, key=lambda f: f.loglik)


def sample_kendall_tau(x, y) -> float:
    """Tie-corrected sample Kendall tau (tau-b) on complete pairs.

    Zero variance in either margin leaves tau undefined; that returns 0
    with a warning so downstream matrices stay finite.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("inputs must be matching vectors")
    keep = ~(np.isnan(x) | np.isnan(y))
    x, y = x[keep], y[keep]
    if x.size < 2:
        raise DataError(f"need at least 2 complete pairs, got {x.size}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        warnings.warn("constant margin: tau undefined, using 0", TauWarning)
        return 0.0
    tau = kendalltau(x, y, variant="b").statistic
    if np.isnan(tau):
        warnings.warn("tau undefined for this pair, using 0", TauWarning)
        return 0.0
    return float(tau)


@dataclass(frozen=True)
class TauMatrix:
    """Symmetric matrix of pairwise Kendall taus with unit diagonal."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("tau matrix must be square")
        if not np.allclose(values, values.T, atol=1e-12):
            raise ValueError("tau matrix must be symmetric")
        if np.any(np.abs(values) > 1.0) or not np.allclose(np.diag(values), 1.0):
            raise ValueError("taus must lie in [-1, 1] with a unit diagonal")
        values = 0.5 * (values + values.T)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def p(self) -> int:
        return self.values.shape[0]


def _pseudo_observations(dataset: MixedDataset) -> np.ndarray:
    out = np.full((dataset.n, dataset.p), np.nan)
    for j in range(dataset.p):
        obs = ~dataset.missing[:, j]
        ecdf = rescaled_ecdf(dataset.values[obs, j])
        out[obs, j] = ecdf(dataset.values[obs, j])
    return out


def kendall_tau_matrix(dataset: MixedDataset, mode: str = "sample",
                       candidates: Sequence[CopulaFamily] = DEFAULT_CANDIDATES,
                       estimator: str = "tau"):
    """All pairwise taus of a dataset.

    mode 'sample' uses tau-b directly; mode 'copula' fits a pair copula to
    the rescaled-ECDF pseudo-observations and uses its implied tau.
    Returns (TauMatrix, fits) where fits maps (i, j) to the PairCopulaFit
    (empty in sample mode).
    """
    if mode not in ("sample", "copula"):
        raise DataError(f"unknown tau mode '{mode}'")
    p = dataset.p
    taus = np.eye(p)
    fits: dict[tuple[int, int], PairCopulaFit] = {}
    pseudo = _pseudo_observations(dataset) if mode == "copula" else None
    for i in range(p):
        for j in range(i + 1, p):
            both = ~(dataset.missing[:, i] | dataset.missing[:, j])
            if mode == "sample":
                tau = sample_kendall_tau(dataset.values[both, i], dataset.values[both, j])
            else:
                fit = fit_pair_copula(pseudo[both, i], pseudo[both, j],
                                      candidates=candidates, estimator=estimator)
                fits[(i, j)] = fit
                tau = fit.tau
            taus[i, j] = taus[j, i] = tau
    return TauMatrix(taus), fits


def correlation_from_tau(taus: TauMatrix) -> CorrelationMatrix:
    """Sine bridge from Kendall tau to the latent Gaussian correlation."""
    gamma = np.sin(0.5 * np.pi * taus.values)
    np.fill_diagonal(gamma, 1.0)
    return CorrelationMatrix(gamma, role="tau-gamma")


def nearest_psd(gamma, floor: float = _PSD_FLOOR) -> CorrelationMatrix:
    """Eigenvalue-clipped correlation repair.

    Eigenvalues below ``floor`` are raised to it and the diagonal is
    renormalized to one; inputs already satisfying the floor are returned
    unchanged, making the repair idempotent.
    """
    values = gamma.values if isinstance(gamma, CorrelationMatrix) else np.asarray(gamma, dtype=float)
    values = 0.5 * (values + values.T)
    for _ in range(100):
        w = np.linalg.eigvalsh(values)
        if w[0] >= floor and np.allclose(np.diag(values), 1.0, atol=1e-12):
            return CorrelationMatrix(values, role="tau-gamma")
        w, V = np.linalg.eigh(values)
        w = np.maximum(w, floor * (1.0 + 1e-3))
        repaired = (V * w) @ V.T
        d = np.sqrt(np.diag(repaired))
        values = repaired / np.outer(d, d)
        np.fill_diagonal(values, 1.0)
        values = 0.5 * (values + values.T)
    raise RuntimeError("PSD repair failed to stabilize")


def skeptic_fit(dataset: MixedDataset, lam: float, mode: str = "sample",
                candidates: Sequence[CopulaFamily] = DEFAULT_CANDIDATES,
                estimator: str = "tau",
                settings: SolverSettings = SolverSettings(),
                return_pair_fits: bool = False):
    """Rank-based precision estimate: taus -> sine bridge -> repair -> glasso."""
    taus, fits = kendall_tau_matrix(dataset, mode=mode, candidates=candidates,
                                    estimator=estimator)
    gamma = nearest_psd(correlation_from_tau(taus))
    est = glasso_fit(gamma, lam, settings=settings)
    if return_pair_fits:
        return est, taus, fits
    return est
