"""Per-subset diagnostic report: assembly and serialization.

One row per deletion subset, combining the closed-form perturbation
degree, exact and first-order distances, replicate summaries, scaled
distances, and the three calibration probabilities.  Serialization is
byte-deterministic: floats are written with ``repr`` (shortest
round-trip), missing values as empty cells (CSV) or null (JSON).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .approx import expected_cd_trace, first_order_cd, lm_pieces, lmm_pieces
from .bootstrap import (
    BootstrapSummary,
    bootstrap_summaries,
    influence_probabilities,
    scaled_distances,
)
from .data import CrossSectionData
from .deletion import SubsetIndex, cook_distance, cook_lm_closed, refit_without
from .exceptions import ValidationError
from .params import FitResult
from .perturbation import (
    PerturbationSpec,
    perturb_lm_fixed,
    perturb_lmm_cluster,
    perturb_mc,
)

CSV_COLUMNS = (
    "subset_id", "n_obs", "perturbation", "p_approx", "p_mc", "p_mc_se",
    "cd", "cd_tilde", "e_cd_trace", "mean_cd", "std_cd", "median_cd",
    "mstd_cd", "scd1", "scd2", "p_a", "p_b", "p_c",
)


@dataclass(frozen=True)
class CookReportRow:
    subset_id: str
    n_obs: int
    perturbation: float
    p_approx: float | None
    p_mc: float | None
    p_mc_se: float | None
    cd: float
    cd_tilde: float
    e_cd_trace: float
    mean_cd: float | None = None
    std_cd: float | None = None
    median_cd: float | None = None
    mstd_cd: float | None = None
    scd1: float | None = None
    scd2: float | None = None
    cscd1: float | None = None
    cscd2: float | None = None
    p_a: float | None = None
    p_b: float | None = None
    p_c: float | None = None


@dataclass(frozen=True)
class CookReport:
    rows: tuple[CookReportRow, ...]
    meta: dict = field(default_factory=dict)


def _beta_grams(data, fit):
    """Per-unit expected information blocks for the regression effects."""
    if isinstance(data, CrossSectionData):
        X = data.X
        return np.einsum("ni,nj->nij", X, X) / fit.theta_hat.sigma2
    from .perturbation import lmm_cluster_grams

    return lmm_cluster_grams(data, fit)


def build_report(data, fit: FitResult, subsets: list[SubsetIndex],
                 n_replicates: int = 100, mode: str | None = None,
                 conditional: bool = True, seed: int = 0, threads: int = 1,
                 mc_draws: int | None = None) -> CookReport:
    """Run the full diagnostic pipeline for the given subsets.

    ``n_replicates=0`` disables the bootstrap: replicate summaries, the
    scaled distances and p_a/p_b stay empty but the observed distances,
    perturbations and p_c are still reported.
    """
    if not subsets:
        raise ValidationError("need at least one subset")
    is_lm = fit.model == "lm"
    from .bootstrap import _normalize_mode

    mode = _normalize_mode(mode, fit.model)

    grams = _beta_grams(data, fit)
    F_beta = grams.sum(axis=0)

    cds = np.empty(len(subsets))
    tildes = np.empty(len(subsets))
    traces = np.empty(len(subsets))
    perts: list[tuple[float, float | None, float | None, float | None]] = []
    for j, sub in enumerate(subsets):
        if is_lm:
            cds[j] = cook_lm_closed(data, fit, sub)
            pieces = lm_pieces(data, fit, sub)
            pv = perturb_lm_fixed(data, fit, sub, interest="beta_only")
        else:
            theta_del = refit_without(data, sub, fit=fit,
                                      interest="beta")
            cds[j] = cook_distance(fit, theta_del)
            pieces = lmm_pieces(data, fit, sub)
            pv = perturb_lmm_cluster(data, fit, sub)
        tildes[j] = first_order_cd(pieces)
        ids = list(sub.ids)
        traces[j] = expected_cd_trace(F_beta, grams[ids].sum(axis=0))
        p_mc = p_mc_se = None
        if mc_draws:
            spec = PerturbationSpec(model=fit.model, interest="beta_only",
                                    mc_draws=int(mc_draws))
            p_mc, p_mc_se = perturb_mc(data, fit, sub, spec, seed=seed)
        perts.append((pv.value, pv.approx, p_mc, p_mc_se))

    K = len(subsets)
    if K > 1:
        p_c = np.array([
            float((np.delete(cds, k) <= cds[k]).mean()) for k in range(K)
        ])
    else:
        p_c = np.full(1, np.nan)

    summaries: list[BootstrapSummary] | None = None
    if n_replicates:
        summaries = bootstrap_summaries(
            data, fit, subsets, n_replicates=n_replicates, mode=mode,
            conditional=conditional, seed=seed, threads=threads,
        )
        observed = tildes if mode == "first_order" else cds
        scaled_obs = np.empty(K)
        scaled_rep = np.empty((K, n_replicates))
        pair = []
        for j, summ in enumerate(summaries):
            s1, s2 = scaled_distances(float(observed[j]), summ)
            pair.append((s1, s2))
            scaled_obs[j] = s1
            scaled_rep[j] = (summ.replicate_cds - summ.mean) / summ.std
        probs = influence_probabilities(scaled_obs, scaled_rep, cds)

    rows = []
    for j, sub in enumerate(subsets):
        value, approx, p_mc, p_mc_se = perts[j]
        extra: dict = {"p_c": float(p_c[j])}
        if summaries is not None:
            summ = summaries[j]
            s1, s2 = pair[j]
            extra.update(
                mean_cd=summ.mean, std_cd=summ.std, median_cd=summ.median,
                mstd_cd=summ.mstd,
                p_a=float(probs.p_a[j]), p_b=float(probs.p_b[j]),
            )
            if conditional:
                extra.update(cscd1=s1, cscd2=s2)
            else:
                extra.update(scd1=s1, scd2=s2)
        rows.append(CookReportRow(
            subset_id=sub.label, n_obs=sub.n_obs, perturbation=float(value),
            p_approx=approx, p_mc=p_mc, p_mc_se=p_mc_se,
            cd=float(cds[j]), cd_tilde=float(tildes[j]),
            e_cd_trace=float(traces[j]), **extra,
        ))

    meta = {
        "model": fit.model,
        "seed": int(seed),
        "S": int(n_replicates),
        "mode": mode,
        "conditional": bool(conditional),
        "n_subsets": K,
    }
    return CookReport(rows=tuple(rows), meta=meta)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def report_to_csv(report: CookReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        d = asdict(row)
        # The CSV exposes one scaled pair; which one depends on whether
        # the replicates conditioned on the covariate structure.
        d["scd1"] = d["cscd1"] if d["cscd1"] is not None else d["scd1"]
        d["scd2"] = d["cscd2"] if d["cscd2"] is not None else d["scd2"]
        writer.writerow([_cell(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def report_to_json(report: CookReport) -> str:
    payload = {
        "meta": dict(report.meta),
        "rows": [asdict(row) for row in report.rows],
    }

    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (np.floating, float)):
            v = float(obj)
            return None if np.isnan(v) else v
        if isinstance(obj, np.integer):
            return int(obj)
        return obj

    return json.dumps(clean(payload), indent=2) + "\n"


def write_report(report: CookReport, out_prefix: str) -> tuple[str, str]:
    csv_path = out_prefix + ".csv"
    json_path = out_prefix + ".json"
    with open(csv_path, "w") as fh:
        fh.write(report_to_csv(report))
    with open(json_path, "w") as fh:
        fh.write(report_to_json(report))
    return csv_path, json_path
