"""Writers for fit artifacts: delimited tables, DOT graphs, figures.

All numbers are formatted with "%.10g" so reruns of the same fit produce
byte-identical files.  Figures are rendered straight to PNG through the
Agg canvas with the software tag stripped for the same reason.
"""

from __future__ import annotations

import csv
import json
from typing import Mapping, Sequence

import numpy as np
from matplotlib.figure import Figure

from .copulaem import IcReport
from .copulatau import PairCopulaFit
from .dataio import MixedDataset, VariableKind
from .glasso import PrecisionEstimate
from .simulate import ComparisonResult

_FMT = "%.10g"

_DOT_COLORS = {
    VariableKind.BINARY: "lightblue",
    VariableKind.ORDINAL: "khaki",
    VariableKind.COUNT: "lightsalmon",
    VariableKind.CONTINUOUS: "lightgray",
}


def _fmt(x) -> str:
    return _FMT % float(x)


def write_theta_csv(path, estimate: PrecisionEstimate,
                    names: Sequence[str] | None = None) -> None:
    """Dense precision matrix, one header row of column names."""
    p = estimate.p
    names = list(names) if names is not None else [f"v{j}" for j in range(p)]
    if len(names) != p:
        raise ValueError("names do not match the matrix dimension")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(p):
            writer.writerow([_fmt(v) for v in estimate.theta[i]])


def write_edges_tsv(path, estimate: PrecisionEstimate,
                    names: Sequence[str] | None = None) -> None:
    """Edge list with precision entries and partial correlations."""
    p = estimate.p
    names = list(names) if names is not None else [f"v{j}" for j in range(p)]
    if len(names) != p:
        raise ValueError("names do not match the matrix dimension")
    pcorr = estimate.partial_correlations
    with open(path, "w", newline="") as fh:
        fh.write("i\tj\ttheta_ij\tpartial_corr\n")
        for i, j in estimate.edges:
            fh.write("\t".join([names[i], names[j],
                                _fmt(estimate.theta[i, j]),
                                _fmt(pcorr[i, j])]) + "\n")


def write_dot(path, estimate: PrecisionEstimate, dataset: MixedDataset | None = None,
              names: Sequence[str] | None = None) -> None:
    """Undirected graph in DOT form, nodes colored by variable kind."""
    p = estimate.p
    if dataset is not None:
        names = list(dataset.column_names)
        kinds = list(dataset.kinds)
    else:
        names = list(names) if names is not None else [f"v{j}" for j in range(p)]
        kinds = [VariableKind.CONTINUOUS] * p
    if len(names) != p:
        raise ValueError("names do not match the matrix dimension")
    pcorr = estimate.partial_correlations
    lines = ["graph precision {", "  node [style=filled];"]
    for j in range(p):
        color = _DOT_COLORS[kinds[j]]
        lines.append(f'  "{names[j]}" [fillcolor={color}];')
    for i, j in estimate.edges:
        label = _fmt(pcorr[i, j])
        lines.append(f'  "{names[i]}" -- "{names[j]}" [label="{label}"];')
    lines.append("}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_roc_tsv(path, comparison: ComparisonResult) -> None:
    """Mean operating points per method and grid index."""
    with open(path, "w", newline="") as fh:
        fh.write("method\tlambda_index\tfpr\ttpr\n")
        for method in comparison.methods:
            curve = comparison.curves[method]
            for k in range(curve.fpr.size):
                fh.write("\t".join([method, str(k),
                                    _fmt(curve.fpr[k]), _fmt(curve.tpr[k])]) + "\n")


def write_auc_tsv(path, comparison: ComparisonResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("method\tauc\tmean_rep_auc\n")
        for method in comparison.methods:
            mean_rep = float(np.mean(comparison.rep_aucs[method]))
            fh.write("\t".join([method, _fmt(comparison.curves[method].auc),
                                _fmt(mean_rep)]) + "\n")


def write_ic_tsv(path, reports: Sequence[IcReport]) -> None:
    """Information criteria along a penalty path."""
    with open(path, "w", newline="") as fh:
        fh.write("lambda\td\tq_term\th_term\taic\tbic\n")
        for rep in reports:
            fh.write("\t".join([_fmt(rep.lam), str(rep.d), _fmt(rep.q_term),
                                _fmt(rep.h_term), _fmt(rep.aic), _fmt(rep.bic)]) + "\n")


def write_pair_report_tsv(path, fits: Mapping[tuple[int, int], PairCopulaFit],
                          names: Sequence[str]) -> None:
    """Selected pair family, parameter, tau and log-likelihood per pair."""
    with open(path, "w", newline="") as fh:
        fh.write("i\tj\tfamily\tparameter\ttau\tloglik\tn\n")
        for (i, j) in sorted(fits):
            fit = fits[(i, j)]
            fh.write("\t".join([names[i], names[j], fit.family.label,
                                _fmt(fit.parameter), _fmt(fit.tau),
                                _fmt(fit.loglik), str(fit.n)]) + "\n")


def write_data_csv(path, dataset: MixedDataset, missing_token: str = "NA") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.column_names)
        for i in range(dataset.n):
            row = []
            for j in range(dataset.p):
                if dataset.missing[i, j]:
                    row.append(missing_token)
                else:
                    row.append(_fmt(dataset.values[i, j]))
            writer.writerow(row)


def write_schema_json(path, dataset: MixedDataset, missing_token: str = "NA") -> None:
    schema = {"missing_token": missing_token,
              "columns": [{"name": spec.name, "kind": spec.kind.value}
                          for spec in dataset.schema]}
    with open(path, "w") as fh:
        json.dump(schema, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_manifest(path, manifest: Mapping) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save(fig: Figure, path) -> None:
    # a fixed metadata dict keeps reruns byte-identical
    fig.savefig(path, format="png", metadata={"Software": None})


def render_roc_figure(path, comparison: ComparisonResult) -> None:
    """Mean ROC per method with AUCs in the legend."""
    fig = Figure(figsize=(6.0, 4.5), dpi=100)
    ax = fig.subplots()
    for method in comparison.methods:
        curve = comparison.curves[method]
        order = np.argsort(curve.fpr, kind="stable")
        ax.plot(curve.fpr[order], curve.tpr[order], marker="o", markersize=3,
                label=f"{method} (AUC {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_ic_figure(path, reports: Sequence[IcReport],
                     selected: IcReport | None = None,
                     criterion: str = "bic") -> None:
    """AIC/BIC against the penalty, optionally marking the selected fit."""
    lams = [rep.lam for rep in reports]
    fig = Figure(figsize=(6.0, 4.5), dpi=100)
    ax = fig.subplots()
    ax.plot(lams, [rep.aic for rep in reports], marker="o", markersize=3, label="AIC")
    ax.plot(lams, [rep.bic for rep in reports], marker="s", markersize=3, label="BIC")
    if selected is not None:
        value = selected.bic if criterion == "bic" else selected.aic
        ax.axvline(selected.lam, linestyle=":", color="gray", linewidth=1)
        ax.plot([selected.lam], [value], marker="*", markersize=12, color="black",
                label=f"selected ({criterion.upper()})")
    ax.set_xlabel("penalty")
    ax.set_ylabel("criterion")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
