"""Synthetic mixed-data generation and structure-recovery evaluation.

Truth precisions are sparse with off-diagonal magnitudes in [0.2, 0.5] and
random signs, made diagonally dominant and then rescaled so the implied
covariance is a correlation matrix.  Latent Gaussian draws pass through
marginal transforms per block:

    binary     1{z > 0}
    ordinal    equiprobable levels (quantile thresholds)
    count      Poisson(3) quantile of Phi(z)
    chisquare  chi-square(1) quantile of Phi(z)
    normal     identity

Structure recovery is scored by true/false positive rates of estimated edge
sets along a penalty path, averaged pointwise over replicates, with the
area under the (0,0)- and (1,1)-anchored curve as the summary.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import chi2, poisson

from .copulaem import EmSettings, em_path
from .copulatau import (DEFAULT_CANDIDATES, CopulaFamily, correlation_from_tau,
                        kendall_tau_matrix, nearest_psd)
from .dataio import ColumnSpec, DataError, MixedDataset, VariableKind, rescaled_ecdf
from .glasso import (CorrelationMatrix, PrecisionEstimate, SolverSettings,
                     glasso_path, lambda_grid_auto)

METHODS = ("CopulaEM", "CopulaTau", "NPNtau", "NPNscore")

# seed stream tags for the pieces of one replicate
_TAG_TRUTH = 11
_TAG_DATA = 12
_TAG_OUTLIER = 13
_TAG_EM = 14


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class GraphModel:
    """Sparsity pattern generator: independent edges or a band."""

    kind: str
    edge_prob: float | None = None
    bandwidth: int | None = None

    def __post_init__(self):
        if self.kind == "erdos_renyi":
            if self.edge_prob is None or not 0.0 < self.edge_prob <= 1.0:
                raise SimulationError("erdos_renyi needs edge_prob in (0, 1]")
        elif self.kind == "banded":
            if self.bandwidth is None or self.bandwidth < 1:
                raise SimulationError("banded needs bandwidth >= 1")
        else:
            raise SimulationError(f"unknown graph model '{self.kind}'")

    @classmethod
    def erdos_renyi(cls, edge_prob: float) -> "GraphModel":
        return cls(kind="erdos_renyi", edge_prob=edge_prob)

    @classmethod
    def banded(cls, bandwidth: int) -> "GraphModel":
        return cls(kind="banded", bandwidth=bandwidth)


def default_blocks(p: int) -> tuple[int, int, int, int, int]:
    """Block sizes (binary, ordinal, count, chisquare, normal) at the
    reference proportions 10/10/10/10/60 percent."""
    b = max(round(0.1 * p), 0)
    sizes = [b, b, b, b]
    normal = p - sum(sizes)
    if normal < 0:
        raise SimulationError(f"p={p} too small for the default block layout")
    return (*sizes, normal)


@dataclass(frozen=True)
class SimDesign:
    """One simulation scenario: dimensions, block layout, contamination."""

    n: int
    p: int
    blocks: tuple[int, int, int, int, int] | None = None
    ordinal_levels: int = 4
    outlier_rate: float = 0.0
    graph: GraphModel = field(default_factory=lambda: GraphModel.erdos_renyi(0.1))
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 2:
            raise SimulationError("need n >= 2 and p >= 2")
        blocks = self.blocks if self.blocks is not None else default_blocks(self.p)
        blocks = tuple(int(b) for b in blocks)
        if len(blocks) != 5 or any(b < 0 for b in blocks):
            raise SimulationError("blocks must be 5 nonnegative counts")
        if sum(blocks) != self.p:
            raise SimulationError(f"blocks {blocks} do not sum to p={self.p}")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise SimulationError("outlier_rate must be in [0, 1)")
        if self.ordinal_levels < 2:
            raise SimulationError("ordinal_levels must be >= 2")
        object.__setattr__(self, "blocks", blocks)

    @property
    def normal_columns(self) -> np.ndarray:
        """Indices of the identity-transformed (normal) block."""
        start = sum(self.blocks[:4])
        return np.arange(start, self.p)


def _rng(seed_path) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(s) for s in seed_path])))


def random_sparse_precision(p: int, graph: GraphModel, seed: int = 0) -> PrecisionEstimate:
    """Draw a sparse positive definite precision whose implied covariance is
    a correlation matrix; the support is preserved by the rescaling."""
    rng = _rng([seed, _TAG_TRUTH])
    support = np.zeros((p, p), dtype=bool)
    iu = np.triu_indices(p, k=1)
    if graph.kind == "erdos_renyi":
        support[iu] = rng.random(iu[0].size) < graph.edge_prob
    else:
        band = (iu[1] - iu[0]) <= graph.bandwidth
        support[iu] = band
    theta = np.zeros((p, p))
    k = int(support[iu].sum())
    mags = rng.uniform(0.2, 0.5, size=k)
    signs = rng.choice([-1.0, 1.0], size=k)
    vals = np.zeros(iu[0].size)
    vals[support[iu]] = mags * signs
    theta[iu] = vals
    theta = theta + theta.T
    np.fill_diagonal(theta, np.abs(theta).sum(axis=1) + 0.1)
    # rescale so the implied covariance has unit diagonal
    sigma = np.linalg.inv(theta)
    d = np.sqrt(np.diag(sigma))
    theta = theta * np.outer(d, d)
    theta = 0.5 * (theta + theta.T)
    return PrecisionEstimate(theta=theta, lam=0.0, converged=True, kkt=0.0)


_BLOCK_KINDS = (
    ("bin", VariableKind.BINARY),
    ("ord", VariableKind.ORDINAL),
    ("cnt", VariableKind.COUNT),
    ("chi", VariableKind.CONTINUOUS),
    ("nrm", VariableKind.CONTINUOUS),
)

_CDF_CAP = np.nextafter(1.0, 0.0)


def generate_mixed_data(truth: PrecisionEstimate, design: SimDesign):
    """Draw latent Gaussians under the truth and push them through the
    block transforms.  Returns (dataset, latent matrix)."""
    p = truth.p
    if p != design.p:
        raise SimulationError("truth dimension does not match the design")
    sigma = np.linalg.inv(truth.theta)
    chol = np.linalg.cholesky(sigma)
    rng = _rng([design.seed, _TAG_DATA])
    z = rng.standard_normal((design.n, p)) @ chol.T

    values = np.empty_like(z)
    specs: list[ColumnSpec] = []
    col = 0
    ord_cuts = ndtri(np.arange(1, design.ordinal_levels) / design.ordinal_levels)
    for (prefix, kind), size in zip(_BLOCK_KINDS, design.blocks):
        for k in range(size):
            zj = z[:, col]
            if prefix == "bin":
                values[:, col] = (zj > 0).astype(float)
            elif prefix == "ord":
                values[:, col] = np.searchsorted(ord_cuts, zj, side="left").astype(float)
            elif prefix == "cnt":
                values[:, col] = poisson.ppf(np.minimum(ndtr(zj), _CDF_CAP), 3.0)
            elif prefix == "chi":
                values[:, col] = chi2.ppf(np.minimum(ndtr(zj), _CDF_CAP), df=1)
            else:
                values[:, col] = zj
            specs.append(ColumnSpec(name=f"{prefix}_{k:02d}", kind=kind))
            col += 1
    dataset = MixedDataset(values=values, missing=np.zeros_like(values, dtype=bool),
                           schema=tuple(specs))
    return dataset, z


def inject_outliers(dataset: MixedDataset, rate: float, seed: int = 0,
                    sign_prob: float = 0.6, scheme: str = "sign",
                    columns: Sequence[int] | None = None) -> MixedDataset:
    """Contaminate observed cells with the shock values +-5.

    scheme 'sign' (default): a cell selected at ``rate`` becomes +5 with
    probability ``sign_prob``, else -5.  scheme 'replace': a selected cell
    is replaced only with probability ``sign_prob``, the sign then uniform.
    Discrete columns are contaminated on their numeric codes; binary
    columns that end up with more than two levels are relabeled ordinal so
    the dataset contract still holds.  ``columns`` restricts contamination
    (e.g. to the normal block); missing cells are never touched.
    """
    if not 0.0 <= rate < 1.0:
        raise SimulationError("rate must be in [0, 1)")
    if scheme not in ("sign", "replace"):
        raise SimulationError(f"unknown outlier scheme '{scheme}'")
    if rate == 0.0:
        return dataset
    rng = _rng([seed, _TAG_OUTLIER])
    values = dataset.values.copy()
    n, p = values.shape
    allowed = np.zeros(p, dtype=bool)
    allowed[np.arange(p) if columns is None else np.asarray(columns, dtype=int)] = True
    selected = (rng.random((n, p)) < rate) & ~dataset.missing & allowed[None, :]
    coin = rng.random((n, p))
    if scheme == "sign":
        shock = np.where(coin < sign_prob, 5.0, -5.0)
        values[selected] = shock[selected]
    else:
        replace_mask = selected & (coin < sign_prob)
        signs = np.where(rng.random((n, p)) < 0.5, 5.0, -5.0)
        values[replace_mask] = signs[replace_mask]
    schema = list(dataset.schema)
    for j, spec in enumerate(schema):
        if spec.kind is VariableKind.BINARY:
            obs = ~dataset.missing[:, j]
            if np.unique(values[obs, j]).size > 2:
                schema[j] = ColumnSpec(name=spec.name, kind=VariableKind.ORDINAL)
    return MixedDataset(values=values, missing=dataset.missing.copy(), schema=tuple(schema))


def truncated_normal_scores(dataset: MixedDataset) -> np.ndarray:
    """Winsorized normal scores: the rescaled ECDF is clipped to
    [delta_n, 1 - delta_n] with delta_n = 1/(4 n^(1/4) sqrt(pi log n))
    before taking quantiles.  Requires complete data."""
    if dataset.missing.any():
        raise DataError("truncated normal scores require complete data")
    out = np.empty((dataset.n, dataset.p))
    for j in range(dataset.p):
        col = dataset.values[:, j]
        ecdf = rescaled_ecdf(col)
        n = ecdf.n
        delta = 1.0 / (4.0 * n ** 0.25 * np.sqrt(np.pi * np.log(n)))
        out[:, j] = ndtri(np.clip(ecdf(col), delta, 1.0 - delta))
    return out


def _edge_set(est) -> frozenset:
    if isinstance(est, PrecisionEstimate):
        return frozenset(est.edges)
    return frozenset(tuple(sorted(e)) for e in est)


@dataclass(frozen=True)
class RocCurve:
    """Operating points over one penalty grid, in grid order, plus AUC."""

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float = field(init=False)

    def __post_init__(self):
        fpr = np.atleast_1d(np.asarray(self.fpr, dtype=float))
        tpr = np.atleast_1d(np.asarray(self.tpr, dtype=float))
        if fpr.shape != tpr.shape:
            raise SimulationError("fpr and tpr must match")
        if np.any((fpr < 0) | (fpr > 1) | (tpr < 0) | (tpr > 1)):
            raise SimulationError("rates must lie in [0, 1]")
        fpr.setflags(write=False)
        tpr.setflags(write=False)
        object.__setattr__(self, "fpr", fpr)
        object.__setattr__(self, "tpr", tpr)
        order = np.lexsort((tpr, fpr))
        fx = np.concatenate(([0.0], fpr[order], [1.0]))
        ty = np.concatenate(([0.0], tpr[order], [1.0]))
        object.__setattr__(self, "auc", float(np.trapezoid(ty, fx)))


def roc_curve(truth, path: Sequence[PrecisionEstimate]) -> RocCurve:
    """Edge-recovery operating points of a penalty path against a truth."""
    true_edges = _edge_set(truth)
    p = truth.p if isinstance(truth, PrecisionEstimate) else None
    if p is None:
        raise SimulationError("truth must be a PrecisionEstimate")
    total_pairs = p * (p - 1) // 2
    n_pos = len(true_edges)
    n_neg = total_pairs - n_pos
    if n_pos == 0:
        raise SimulationError("truth has no edges; TPR undefined")
    if n_neg == 0:
        raise SimulationError("truth is complete; FPR undefined")
    tprs, fprs = [], []
    for est in path:
        edges = _edge_set(est)
        tp = len(edges & true_edges)
        fp = len(edges - true_edges)
        tprs.append(tp / n_pos)
        fprs.append(fp / n_neg)
    fpr = np.array(fprs)
    tpr = np.array(tprs)
    # sorted by FPR; on a decreasing penalty grid this is the grid order
    order = np.lexsort((tpr, fpr))
    return RocCurve(fpr=fpr[order], tpr=tpr[order])


@dataclass
class ComparisonResult:
    """Mean ROC curves per method plus per-replicate AUCs."""

    design: SimDesign
    methods: tuple[str, ...]
    reps: int
    curves: dict[str, RocCurve]
    rep_aucs: dict[str, list[float]]

    def mean_auc(self, method: str) -> float:
        return self.curves[method].auc


def _method_path(method: str, dataset: MixedDataset, lambdas, n_lambdas: int,
                 em_settings: EmSettings, solver: SolverSettings,
                 candidates, estimator: str, rep_seed: int) -> list[PrecisionEstimate]:
    if method == "NPNscore":
        scores = truncated_normal_scores(dataset)
        C = CorrelationMatrix(np.corrcoef(scores, rowvar=False), role="input-s")
        grid = lambda_grid_auto(C, num=n_lambdas) if lambdas is None else lambdas
        return glasso_path(C, grid, settings=solver)
    if method in ("NPNtau", "CopulaTau"):
        mode = "sample" if method == "NPNtau" else "copula"
        taus, _ = kendall_tau_matrix(dataset, mode=mode, candidates=candidates,
                                     estimator=estimator)
        gamma = nearest_psd(correlation_from_tau(taus))
        grid = lambda_grid_auto(gamma, num=n_lambdas) if lambdas is None else lambdas
        return glasso_path(gamma, grid, settings=solver)
    if method == "CopulaEM":
        em = replace(em_settings,
                     mc=replace(em_settings.mc, seed=rep_seed),
                     solver=solver)
        results = em_path(dataset, lambdas=lambdas, settings=em, final_estep=False,
                          n_lambdas=n_lambdas)
        return [r.theta for r in results]
    raise SimulationError(f"unknown method '{method}' (choose from {METHODS})")


def _one_rep(design: SimDesign, rep: int, methods, lambdas, n_lambdas,
             em_settings, solver, candidates, estimator):
    rep_design = replace(design, seed=int(_rng([design.seed, 100, rep]).integers(2 ** 62)))
    truth = random_sparse_precision(design.p, design.graph, seed=rep_design.seed)
    dataset, _ = generate_mixed_data(truth, rep_design)
    if design.outlier_rate > 0:
        dataset = inject_outliers(dataset, design.outlier_rate, seed=rep_design.seed)
    out = {}
    for method in methods:
        em_seed = int(_rng([rep_design.seed, _TAG_EM]).integers(2 ** 62))
        path = _method_path(method, dataset, lambdas, n_lambdas, em_settings,
                            solver, candidates, estimator, em_seed)
        curve = roc_curve(truth, path)
        out[method] = (curve.fpr, curve.tpr, curve.auc)
    return out


def run_comparison(design: SimDesign, methods: Sequence[str] = METHODS,
                   reps: int = 20, lambdas=None, n_lambdas: int = 10,
                   em_settings: EmSettings | None = None,
                   solver: SolverSettings | None = None,
                   candidates: Sequence[CopulaFamily] = DEFAULT_CANDIDATES,
                   estimator: str = "tau", threads: int = 1) -> ComparisonResult:
    """Replicate the draw/fit/score loop and average operating points.

    Each method fits its own automatic 10-point penalty grid per replicate
    unless an explicit decreasing ``lambdas`` grid is supplied; curves are
    averaged pointwise per grid index.  Replicates are independent and may
    run on ``threads`` workers; results are identical for any thread count.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise SimulationError(f"unknown method '{m}' (choose from {METHODS})")
    if reps < 1:
        raise SimulationError("reps must be >= 1")
    em_settings = em_settings if em_settings is not None else EmSettings()
    solver = solver if solver is not None else SolverSettings()

    def work(rep):
        return _one_rep(design, rep, methods, lambdas, n_lambdas,
                        em_settings, solver, candidates, estimator)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_rep = list(pool.map(work, range(reps)))
    else:
        per_rep = [work(rep) for rep in range(reps)]

    curves = {}
    rep_aucs = {}
    for method in methods:
        fprs = np.mean([per_rep[r][method][0] for r in range(reps)], axis=0)
        tprs = np.mean([per_rep[r][method][1] for r in range(reps)], axis=0)
        curves[method] = RocCurve(fpr=fprs, tpr=tprs)
        rep_aucs[method] = [per_rep[r][method][2] for r in range(reps)]
    return ComparisonResult(design=design, methods=methods, reps=reps,
                            curves=curves, rep_aucs=rep_aucs)
