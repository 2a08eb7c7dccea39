"""TSV and JSON rendering of fits, ladders, and parameter tables.

Numbers in TSV output carry 6 significant digits. Every report starts with
commented key/value lines echoing the run configuration, so a run can be
replayed exactly; nothing time- or host-dependent is ever written.
"""

import json

import numpy as np
from scipy.stats import norm


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and not np.isfinite(x):
        return ""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def config_header(config):
    return [f"# {key}: {value}" for key, value in config.items()]


def render_tsv(headers, rows, config=None):
    lines = config_header(config or {})
    lines.append("\t".join(headers))
    for row in rows:
        lines.append("\t".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def path_label(entry, spec):
    t = entry.wave
    if entry.target == "lambda":
        lat = spec.latents[entry.col]
        ind = spec.indicator_names[entry.row]
        return f"{lat}@{t} =~ {ind}.{t}"
    if entry.target == "beta":
        src = spec.latents[entry.col]
        dst = spec.latents[entry.row]
        return f"{src}@{t} -> {dst}@{t}"
    if entry.target == "pi":
        lat = spec.latents[entry.row]
        return f"{lat}@{entry.wave_src} -> {lat}@{t}"
    if entry.target == "c":
        cov = spec.covariate_names[entry.col]
        lat = spec.latents[entry.row]
        return f"{cov} -> {lat}@{t}"
    if entry.target == "mu":
        if t is None:
            return f"intercept {spec.covariate_names[entry.row - spec.n_indicators * spec.waves]}"
        return f"intercept {spec.indicator_names[entry.row]}.{t}"
    if entry.target == "psi":
        if t is None:
            c1 = spec.covariate_names[entry.row]
            c2 = spec.covariate_names[entry.col]
            return f"var {c1}" if c1 == c2 else f"cov({c1},{c2})"
        return f"disturbance {spec.latents[entry.row]}@{t}"
    if entry.target == "theta":
        return f"residual {spec.indicator_names[entry.row]}.{t}"
    return entry.name


ESTIMATE_HEADERS = (
    "coefficient",
    "path",
    "estimate",
    "std_estimate",
    "ci_lower",
    "ci_upper",
    "p_value",
    "se",
    "status",
)


def estimate_rows(result, std, wald_level=0.99, boot=None):
    """One row per parameter entry, Table-3 shaped.

    Without a bootstrap the CI columns are Wald intervals on the raw
    estimate; with one they are percentile intervals on the standardized
    estimate, plus an n_failed column.
    """
    table = result.table
    spec = table.spec
    z = norm.ppf(0.5 + wald_level / 2.0)
    rows = []
    for e in table.entries:
        est = e.value if e.status == "fixed" else float(result.theta_hat[e.slot])
        se = p = lo = hi = None
        if e.slot is not None and result.se is not None:
            s = result.se[e.slot]
            if np.isfinite(s):
                se = float(s)
                if se > 0:
                    p = float(2.0 * norm.sf(abs(est) / se))
                lo, hi = est - z * se, est + z * se
        std_val = std.get(e.name)
        row = [
            e.name,
            path_label(e, spec),
            est,
            std_val,
            lo,
            hi,
            p,
            se,
            e.status if e.class_id is None else f"equal({e.class_id})",
        ]
        if boot is not None:
            interval = boot.std_intervals.get(e.name) if not boot.withheld else None
            row[4] = interval[0] if interval else None
            row[5] = interval[1] if interval else None
            row.append(boot.n_failed)
        rows.append(row)
    return rows


def fit_report_tsv(result, std, indices, config, boot=None):
    headers = list(ESTIMATE_HEADERS)
    cfg = dict(config)
    if boot is not None:
        headers.append("n_failed")
        cfg["ci"] = f"bootstrap percentile {boot.level:g} (standardized estimate)"
        if boot.withheld:
            cfg["bootstrap"] = (
                f"intervals withheld: {boot.n_failed} of "
                f"{boot.n_failed + boot.n_used} replicates failed"
            )
    else:
        cfg["ci"] = "wald 0.99 (raw estimate)"
    cfg.update(_fit_lines(result, indices))
    return render_tsv(headers, estimate_rows(result, std, boot=boot), cfg)


def _fit_lines(result, indices):
    out = {
        "converged": str(bool(result.converged)).lower(),
        "iterations": result.iterations,
        "f_min": fmt(result.f_min),
        "grad_norm": fmt(result.grad_norm),
    }
    if indices is not None:
        ci = indices.rmsea_ci90
        out.update(
            {
                "chi2": fmt(indices.chi2),
                "df": indices.df,
                "cfi": fmt(indices.cfi),
                "rmsea": fmt(indices.rmsea),
                "rmsea_ci90": f"({fmt(ci[0])}, {fmt(ci[1])})",
                "srmr": fmt(indices.srmr),
                "n": indices.n,
            }
        )
        out.update(indices.cutoffs())
    return out


def fit_report_json(result, std, indices, config, boot=None):
    table = result.table
    params = []
    for row in estimate_rows(result, std, boot=boot):
        rec = dict(zip(ESTIMATE_HEADERS, row[: len(ESTIMATE_HEADERS)]))
        if boot is not None:
            rec["n_failed"] = boot.n_failed
        params.append(_jsonable(rec))
    payload = {
        "config": _jsonable(dict(config)),
        "convergence": {
            "converged": bool(result.converged),
            "iterations": int(result.iterations),
            "f_min": float(result.f_min),
            "grad_norm": float(result.grad_norm),
            "status": result.status,
            "evaluations": int(result.n_evals),
        },
        "fit": None
        if indices is None
        else {
            "chi2": float(indices.chi2),
            "df": int(indices.df),
            "cfi": float(indices.cfi),
            "srmr": float(indices.srmr),
            "rmsea": float(indices.rmsea),
            "rmsea_ci90": [float(v) for v in indices.rmsea_ci90],
            "n": int(indices.n),
            "chi2_null": float(indices.chi2_null),
            "df_null": int(indices.df_null),
            "cutoffs": indices.cutoffs(),
        },
        "free_parameters": int(table.free_count),
        "parameters": params,
    }
    return json.dumps(payload, indent=2) + "\n"


def _jsonable(record):
    out = {}
    for key, value in record.items():
        if isinstance(value, (np.floating, float)):
            out[key] = None if value is None or not np.isfinite(value) else float(value)
        elif isinstance(value, np.integer):
            out[key] = int(value)
        else:
            out[key] = value
    return out


LADDER_HEADERS = (
    "model",
    "chi2",
    "df",
    "cfi",
    "rmsea",
    "rmsea_ci_lower",
    "rmsea_ci_upper",
    "srmr",
    "cfi>.90",
    "srmr<.08",
    "rmsea<.06",
)


def ladder_report_tsv(labels, indices_list, comparison, config):
    rows = []
    for label, ix in zip(labels, indices_list):
        cut = ix.cutoffs()
        rows.append(
            [
                label,
                ix.chi2,
                ix.df,
                ix.cfi,
                ix.rmsea,
                ix.rmsea_ci90[0],
                ix.rmsea_ci90[1],
                ix.srmr,
                cut["cfi>.90"],
                cut["srmr<.08"],
                cut["rmsea<.06"],
            ]
        )
    text = render_tsv(LADDER_HEADERS, rows, config)
    lines = [text.rstrip("\n"), ""]
    lines.append("comparison\tdelta_chi2\tdelta_df\tdelta_cfi\tverdict")
    for step in comparison.steps:
        lines.append(
            "\t".join(
                [
                    f"{step.baseline} vs {step.constrained}",
                    fmt(step.delta_chi2),
                    fmt(step.delta_df),
                    fmt(step.delta_cfi),
                    step.verdict,
                ]
            )
        )
    lines.append(f"# selected: {comparison.selected}")
    return "\n".join(lines) + "\n"


def ladder_report_json(labels, indices_list, comparison, config):
    payload = {
        "config": _jsonable(dict(config)),
        "models": [
            {
                "model": label,
                "chi2": float(ix.chi2),
                "df": int(ix.df),
                "cfi": float(ix.cfi),
                "rmsea": float(ix.rmsea),
                "rmsea_ci90": [float(v) for v in ix.rmsea_ci90],
                "srmr": float(ix.srmr),
                "cutoffs": ix.cutoffs(),
            }
            for label, ix in zip(labels, indices_list)
        ],
        "comparisons": [
            {
                "baseline": s.baseline,
                "constrained": s.constrained,
                "delta_chi2": float(s.delta_chi2),
                "delta_df": int(s.delta_df),
                "delta_cfi": float(s.delta_cfi),
                "verdict": s.verdict,
            }
            for s in comparison.steps
        ],
        "selected": comparison.selected,
    }
    return json.dumps(payload, indent=2) + "\n"


def table_dump_tsv(table, config=None):
    headers = ("id", "name", "matrix", "wave", "row", "col", "status", "class", "start", "fixed_value")
    rows = [
        (
            e.id,
            e.name,
            e.target,
            "" if e.wave is None else e.wave,
            e.row,
            e.col,
            e.status,
            e.class_id or "",
            e.start,
            e.value if e.status == "fixed" else None,
        )
        for e in table.entries
    ]
    cfg = dict(config or {})
    cfg["free_parameters"] = table.free_count
    return render_tsv(headers, rows, cfg)


def matrices_dump_tsv(m, config=None):
    lines = config_header(config or {})
    blocks = (
        ("mu", m.mu.reshape(-1, 1)),
        ("lambda", m.lam),
        ("gamma", m.gamma),
        ("psi", m.psi),
        ("theta_resid", m.theta_resid),
    )
    for name, arr in blocks:
        lines.append(f"# matrix: {name} {arr.shape[0]}x{arr.shape[1]}")
        for row in arr:
            lines.append("\t".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"
