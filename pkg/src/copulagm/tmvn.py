"""Truncated multivariate normal sampling and expected latent covariances.

The Gibbs kernel works from the precision matrix directly: conditioned on
the other coordinates, z_j is normal with variance 1/theta_jj and mean
z_j - (Theta z)_j / theta_jj, truncated to the cell interval (a_j, b_j].
Draws use the inverse-CDF transform with tail reflection for stability.

Randomness is organized as one independent stream per data row, derived
from (seed, row index), so results are bit-reproducible no matter how rows
are scheduled; sweeps update coordinates in fixed index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .dataio import IntervalBounds
from .glasso import CorrelationMatrix

# uniforms are pre-drawn per row in blocks of this many sweeps; block size
# does not change the stream, only how it is sliced
_SWEEP_CHUNK = 64

_U_EPS = 1e-12


@dataclass(frozen=True)
class McSettings:
    """Monte Carlo budget for one E-step: retained samples and burn-in."""

    n_samples: int = 100
    burn_in: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass(frozen=True)
class RowMoments:
    """First and second moment estimates for one row's latent vector."""

    mean: np.ndarray
    second: np.ndarray


def _phi(x):
    out = np.zeros_like(np.asarray(x, dtype=float))
    finite = np.isfinite(x)
    out[finite] = np.exp(-0.5 * np.square(x[finite])) / np.sqrt(2.0 * np.pi)
    return out


def trunc_norm_moments_1d(mu: float, sigma: float, a: float, b: float):
    """Closed-form mean and variance of N(mu, sigma^2) truncated to (a, b].

    Infinite bounds are allowed; a must be strictly below b.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not a < b:
        raise ValueError("need a < b")
    alpha = np.array([(a - mu) / sigma, (b - mu) / sigma])
    mass = ndtr(alpha[1]) - ndtr(alpha[0])
    if mass <= 0:
        raise FloatingPointError("interval probability underflows")
    dens = _phi(alpha)
    # x * pdf(x) -> 0 at infinite bounds
    xdens = np.zeros(2)
    finite = np.isfinite(alpha)
    xdens[finite] = alpha[finite] * dens[finite]
    m = (dens[0] - dens[1]) / mass
    var_factor = 1.0 + (xdens[0] - xdens[1]) / mass - m * m
    return float(mu + sigma * m), float(sigma * sigma * var_factor)


def _truncated_standard_sample(u, lo, hi):
    """Inverse-CDF draw of a standard normal restricted to (lo, hi].

    Intervals in the upper tail are reflected so the CDF difference is
    always computed where it has precision.  Float-edge results are nudged
    back inside the half-open interval.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    flip = lo > 0
    lo2 = np.where(flip, -hi, lo)
    hi2 = np.where(flip, -lo, hi)
    plo = ndtr(lo2)
    phi_ = ndtr(hi2)
    mass = phi_ - plo
    uu = np.clip(u, _U_EPS, 1.0 - _U_EPS)
    with np.errstate(invalid="ignore"):
        z = ndtri(plo + uu * mass)
    z = np.minimum(z, hi2)
    # pathological underflow: both bounds deep in one tail
    dead = ~(mass > 0)
    if dead.any():
        fallback = np.where(np.isfinite(hi2), hi2, np.nextafter(lo2, np.inf))
        z = np.where(dead, fallback, z)
    # respect the open lower end; only float dust lands here
    at_edge = z <= lo2
    if at_edge.any():
        bumped = np.where(np.isfinite(lo2), np.nextafter(lo2, np.inf), hi2)
        z = np.where(at_edge, np.minimum(bumped, hi2), z)
    return np.where(flip, -z, z)


def _midpoint_start(lower, upper):
    """Deterministic in-interval start: the quantile halfway through the
    interval's normal mass (0 for a fully unbounded cell)."""
    plo = ndtr(lower)
    phi_ = ndtr(upper)
    z = ndtri(0.5 * (plo + phi_))
    z = np.minimum(np.maximum(z, lower), upper)
    degen = lower == upper
    return np.where(degen, lower, z)


def _row_rngs(n: int, seed_path: Sequence[int]):
    path = [int(s) for s in seed_path]
    return [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(path + [i])))
        for i in range(n)
    ]


def _gibbs_chains(lower, upper, theta, n_samples, burn_in, seed_path,
                  init=None, want_cross=True, collect=False):
    """Run n independent Gibbs chains (one per row) under shared precision.

    Returns (mean, cross, draws, final): per-row retained-sample means,
    the (p, p) sum of z z^T over all rows and retained sweeps divided by
    the retained count, optionally the raw draws, and the final state.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n, p = lower.shape
    theta = np.asarray(theta, dtype=float)
    diag = np.diag(theta).copy()
    if np.any(diag <= 0):
        raise ValueError("precision matrix needs a positive diagonal")
    sd = 1.0 / np.sqrt(diag)

    z = _midpoint_start(lower, upper) if init is None else init.copy()
    free = lower < upper
    free_cols = np.flatnonzero(free.any(axis=0))
    col_masks = {j: free[:, j] for j in free_cols}
    full_cols = {j: bool(free[:, j].all()) for j in free_cols}

    total = burn_in + n_samples
    mean_acc = np.zeros((n, p))
    cross_acc = np.zeros((p, p)) if want_cross else None
    draws = [] if collect else None

    if free_cols.size == 0:
        # nothing to sample: the state is the (degenerate) answer
        mean = z.copy()
        cross = (z.T @ z) / n if want_cross else None
        if collect:
            draws = np.broadcast_to(z, (n_samples, n, p)).copy()
        return mean, cross, draws, z

    rngs = _row_rngs(n, seed_path)
    done = 0
    while done < total:
        m = min(_SWEEP_CHUNK, total - done)
        U = np.empty((n, m, p))
        for i, rng in enumerate(rngs):
            U[i] = rng.random((m, p))
        for t in range(m):
            for j in free_cols:
                tcol = theta[:, j]
                mu = z[:, j] - (z @ tcol) / diag[j]
                alpha = (lower[:, j] - mu) / sd[j]
                beta = (upper[:, j] - mu) / sd[j]
                znew = mu + sd[j] * _truncated_standard_sample(U[:, t, j], alpha, beta)
                if full_cols[j]:
                    z[:, j] = znew
                else:
                    mask = col_masks[j]
                    z[mask, j] = znew[mask]
            if done + t >= burn_in:
                mean_acc += z
                if want_cross:
                    cross_acc += z.T @ z
                if collect:
                    draws.append(z.copy())
        done += m

    mean = mean_acc / n_samples
    cross = cross_acc / (n_samples * n) if want_cross else None
    if collect:
        draws = np.stack(draws)
    return mean, cross, draws, z


def gibbs_row(lower, upper, sigma, settings: McSettings = McSettings(),
              collect: bool = False):
    """Estimate latent moments of one row given its intervals.

    Parameters
    ----------
    lower, upper : (p,) arrays
        Cell intervals (lower, upper]; equal entries mark degenerate cells.
    sigma : (p, p) array
        Covariance of the untruncated latent vector (inverted once here;
        the kernel itself runs on the precision).
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValueError("lower and upper must be matching vectors")
    if np.any(lower > upper):
        raise ValueError("need lower <= upper")
    sigma = np.asarray(sigma, dtype=float)
    theta = np.linalg.inv(sigma)
    mean, _, draws, _ = _gibbs_chains(
        lower[None, :], upper[None, :], theta,
        settings.n_samples, settings.burn_in,
        seed_path=[settings.seed, 0], collect=True,
    )
    samples = draws[:, 0, :]
    second = samples.T @ samples / samples.shape[0]
    moments = RowMoments(mean=mean[0], second=second)
    if collect:
        return moments, samples
    return moments


def _rescale_to_correlation(R: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(R))
    out = R / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    return 0.5 * (out + out.T)


def expected_covariance_full(bounds: IntervalBounds, theta_m, settings: McSettings,
                             rescale: bool = True, init=None, return_state: bool = False,
                             seed_path: Sequence[int] | None = None):
    """Average E[Z Z^T | Z in D(row), Theta] over rows, by Gibbs sampling.

    Second moments are accumulated directly from the retained draws, which
    equals mean mean^T + sample covariance per row.  With ``rescale`` the
    average is projected to unit diagonal, guarding against scale drift of
    the latent representation across EM iterations.
    """
    theta = theta_m.theta if hasattr(theta_m, "theta") else np.asarray(theta_m, dtype=float)
    path = list(seed_path) if seed_path is not None else [settings.seed, 0, 0]
    _, cross, _, state = _gibbs_chains(
        bounds.lower, bounds.upper, theta,
        settings.n_samples, settings.burn_in, seed_path=path, init=init,
    )
    R = 0.5 * (cross + cross.T)
    if rescale:
        R = _rescale_to_correlation(R)
    out = CorrelationMatrix(R, role="expected-rbar")
    return (out, state) if return_state else out


def _free_pattern_groups(free: np.ndarray):
    """Group row indices by their free-cell pattern (usually one group)."""
    groups: dict[bytes, list[int]] = {}
    for i, row in enumerate(free):
        groups.setdefault(row.tobytes(), []).append(i)
    out = []
    for key, rows in groups.items():
        pattern = np.frombuffer(key, dtype=bool)
        out.append((np.flatnonzero(pattern), np.asarray(rows)))
    return out


def expected_covariance_partitioned(bounds: IntervalBounds, theta_m, settings: McSettings,
                                    rescale: bool = True, init=None,
                                    return_state: bool = False,
                                    seed_path: Sequence[int] | None = None):
    """Expected latent covariance with observed continuous cells held fixed.

    Per row, fixed cells contribute their scores exactly; sampled cells
    contribute their Gibbs-estimated conditional means; the sampled block's
    second moment is corrected by the untruncated conditional covariance,
    the inverse of that block of Theta.  With no degenerate cells this
    falls back to the full-variant estimator; with no sampled cells the
    result is the exact score cross-moment matrix.
    """
    theta = theta_m.theta if hasattr(theta_m, "theta") else np.asarray(theta_m, dtype=float)
    free = bounds.lower < bounds.upper
    n = bounds.n
    path = list(seed_path) if seed_path is not None else [settings.seed, 0, 0]

    if not bounds.degenerate.any():
        return expected_covariance_full(bounds, theta, settings, rescale=rescale,
                                        init=init, return_state=return_state,
                                        seed_path=path)

    if not free.any():
        Z = bounds.lower
        R = (Z.T @ Z) / n
        R = 0.5 * (R + R.T)
        if rescale:
            R = _rescale_to_correlation(R)
        out = CorrelationMatrix(R, role="expected-rtilde")
        return (out, Z.copy()) if return_state else out

    zhat, _, _, state = _gibbs_chains(
        bounds.lower, bounds.upper, theta,
        settings.n_samples, settings.burn_in, seed_path=path, init=init,
        want_cross=False,
    )
    R = (zhat.T @ zhat) / n
    # second-moment correction: untruncated conditional covariance of the
    # sampled block, Theta_SS^{-1}, added once per row
    for cols, rows in _free_pattern_groups(free):
        if cols.size == 0:
            continue
        block_inv = np.linalg.inv(theta[np.ix_(cols, cols)])
        R[np.ix_(cols, cols)] += (rows.size / n) * block_inv
    R = 0.5 * (R + R.T)
    if rescale:
        R = _rescale_to_correlation(R)
    out = CorrelationMatrix(R, role="expected-rtilde")
    return (out, state) if return_state else out
