"""Command-line entry point.

Subcommands: fit, ladder, simulate, bootstrap, dump. Exit codes: 0 success,
2 ingestion failure, 3 spec/identification failure, 4 non-convergence.
Reports are byte-deterministic for identical inputs and seeds.
"""

import argparse
import os
import sys

import numpy as np

from . import report
from .bootstrap import BootstrapConfig, bootstrap_ci
from .data import load_panel_csv
from .errors import (
    AsmError,
    IngestionError,
    NonPositiveDefiniteError,
    SpecSyntaxError,
    UnderIdentifiedError,
)
from .estimate import fit, moments_from_data, standard_errors, standardize
from .fitstats import compare_invariance, fit_indices
from .modelspec import parse_model_spec, validate_template
from .paramtable import build_parameter_table, theta_to_matrices
from .reference import truth_vector
from .simulate import GeneratorConfig, simulate_dataset

EXIT_OK = 0
EXIT_INGESTION = 2
EXIT_IDENTIFICATION = 3
EXIT_CONVERGENCE = 4


def main(argv=None):
    sys.exit(run(argv))


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecSyntaxError as exc:
        print(exc.render(), file=sys.stderr)
        return EXIT_IDENTIFICATION
    except (UnderIdentifiedError,) as exc:
        print(f"identification error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFICATION
    except (IngestionError, NonPositiveDefiniteError) as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except AsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFICATION


def build_parser():
    parser = argparse.ArgumentParser(
        prog="asm",
        description="Fit autoregressive structural models to longitudinal panels.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_fit = sub.add_parser("fit", help="fit the spec's model to a panel CSV")
    _common(p_fit, data=True)
    p_fit.add_argument("--dump-matrices", action="store_true",
                       help="also write the assembled matrices next to --out")
    p_fit.set_defaults(func=cmd_fit)

    p_ladder = sub.add_parser("ladder", help="fit the invariance ladder")
    _common(p_ladder, data=True)
    p_ladder.set_defaults(func=cmd_ladder)

    p_sim = sub.add_parser("simulate", help="generate a panel from truth values")
    p_sim.add_argument("--spec", required=True)
    p_sim.add_argument("--truth", required=True,
                       help="TSV with columns name/value (configural entry names)")
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default="-")
    p_sim.set_defaults(func=cmd_simulate)

    p_boot = sub.add_parser("bootstrap", help="fit plus bootstrap intervals")
    _common(p_boot, data=True)
    p_boot.add_argument("--replicates", type=int, default=1000)
    p_boot.add_argument("--level", type=float, default=0.99)
    p_boot.set_defaults(func=cmd_bootstrap)

    p_dump = sub.add_parser("dump", help="dump the parameter table as TSV")
    p_dump.add_argument("--spec", required=True)
    p_dump.add_argument("--out", default="-")
    p_dump.add_argument("--dump-matrices", action="store_true",
                        help="also dump matrices at the default starting values")
    p_dump.set_defaults(func=cmd_dump)
    return parser


def _common(p, data=False):
    if data:
        p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    p.add_argument("--seed", type=int, default=0)


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)


def _load_spec(args):
    try:
        with open(args.spec, "r", encoding="utf-8") as handle:
            text = handle.read()
    except FileNotFoundError as exc:
        raise IngestionError(f"cannot open spec {args.spec}") from exc
    spec = parse_model_spec(text, filename=args.spec)
    diags = validate_template(spec)
    if diags:
        for d in diags:
            print(f"{args.spec}: {d}", file=sys.stderr)
        raise UnderIdentifiedError("template validation failed")
    return spec


def _run_config(args, **extra):
    cfg = {
        "subcommand": args.subcommand,
        "spec": args.spec,
    }
    for key in ("data", "out", "format", "seed"):
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    cfg.update(extra)
    threads = os.environ.get("ASM_THREADS")
    if threads:
        cfg["asm_threads"] = threads
    return cfg


def cmd_fit(args):
    spec = _load_spec(args)
    table = build_parameter_table(spec)
    frame, ingest = load_panel_csv(args.data, spec, min_rows=10 * table.free_count)
    moments = moments_from_data(frame, spec)
    result = fit(moments, table)
    standard_errors(result, moments)
    std = standardize(result)
    indices = fit_indices(result)
    config = _run_config(args, level=table.level, n=moments.n,
                         rows_read=ingest.rows_read, rows_kept=ingest.rows_kept)
    if args.format == "json":
        text = report.fit_report_json(result, std, indices, config)
    else:
        text = report.fit_report_tsv(result, std, indices, config)
    _write(args.out, text)
    if args.dump_matrices:
        dump_path = "-" if args.out == "-" else args.out + ".matrices.tsv"
        _write(dump_path, report.matrices_dump_tsv(result.matrices(), config))
    return EXIT_OK if result.converged else EXIT_CONVERGENCE


def _warm_start_from(table, prev_result):
    """Map a previous level's estimates onto this table's slots."""
    prev = prev_result.table
    values = {}
    for e in prev.entries:
        values[e.name] = (
            e.value if e.status == "fixed" else float(prev_result.theta_hat[e.slot])
        )
    starts = np.zeros(table.free_count)
    counts = np.zeros(table.free_count)
    for e in table.entries:
        if e.slot is None:
            continue
        starts[e.slot] += values[e.name]
        counts[e.slot] += 1
    return starts / np.maximum(counts, 1)


def cmd_ladder(args):
    spec = _load_spec(args)
    if spec.waves < 2:
        print(
            "warning: single-wave spec; ladder degenerates to the configural model",
            file=sys.stderr,
        )
        levels = ["configural"]
    else:
        levels = ["configural", "weak", "strong"]
    tables = []
    for level in levels:
        table = build_parameter_table(spec, level)
        if tables and table.free_count == tables[-1].free_count:
            print(
                f"warning: {level} invariance adds no constraints here; skipped",
                file=sys.stderr,
            )
            continue
        tables.append(table)
    frame = None
    labels, fits, indices_list = [], [], []
    all_converged = True
    prev = None
    for table in tables:
        if frame is None:
            frame, _ = load_panel_csv(args.data, spec, min_rows=10 * table.free_count)
            moments = moments_from_data(frame, spec)
        warm = _warm_start_from(table, prev) if prev is not None else None
        try:
            result = fit(moments, table, warm_start=warm)
        except AsmError as exc:
            raise type(exc)(f"{table.level}: {exc}") from exc
        all_converged &= result.converged
        labels.append(table.level)
        fits.append(result)
        indices_list.append(fit_indices(result))
        prev = result
    comparison = compare_invariance(list(zip(labels, indices_list)))
    config = _run_config(args, exempt=",".join(spec.invariance_exempt) or "none",
                         n=moments.n)
    if args.format == "json":
        text = report.ladder_report_json(labels, indices_list, comparison, config)
    else:
        text = report.ladder_report_tsv(labels, indices_list, comparison, config)
    _write(args.out, text)
    return EXIT_OK if all_converged else EXIT_CONVERGENCE


def _read_truth(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except FileNotFoundError as exc:
        raise IngestionError(f"cannot open truth file {path}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            parts = line.split()
        if parts[0] in ("name", "coefficient"):  # header row
            continue
        if len(parts) < 2:
            raise IngestionError(f"{path}:{lineno}: expected 'name<TAB>value'")
        name = parts[0]
        try:
            values[name] = float(parts[1])
        except ValueError as exc:
            raise IngestionError(
                f"{path}:{lineno}: bad value '{parts[1]}' for {name}"
            ) from exc
    if not values:
        raise IngestionError(f"truth file {path} holds no values")
    return values


def cmd_simulate(args):
    spec = _load_spec(args)
    # simulation always uses the configural parameterization: truth files
    # address per-entry names, so wave-varying generators stay expressible
    table = build_parameter_table(spec, "configural")
    values = _read_truth(args.truth)
    unknown = [name for name in values if name not in table._by_name]
    if unknown:
        raise AsmError(f"truth names no model cell: {', '.join(unknown[:5])}")
    theta = table.default_starts()
    for name, value in values.items():
        e = table.entry(name)
        if e.slot is None:
            if abs(e.value - value) > 1e-12:
                raise AsmError(f"{name} is fixed at {e.value}; truth says {value}")
        else:
            theta[e.slot] = value
    matrices = theta_to_matrices(table, theta)
    cfg = GeneratorConfig(
        matrices=matrices,
        latent_means=np.zeros(len(table.layout.lat_names)),
        n=args.n,
        seed=args.seed,
    )
    frame = simulate_dataset(cfg)
    if args.out == "-":
        sys.stdout.write(frame.to_csv(index=False))
    else:
        frame.to_csv(args.out, index=False)
    return EXIT_OK


def cmd_bootstrap(args):
    spec = _load_spec(args)
    table = build_parameter_table(spec)
    frame, ingest = load_panel_csv(args.data, spec, min_rows=10 * table.free_count)
    moments = moments_from_data(frame, spec)
    result = fit(moments, table)
    standard_errors(result, moments)
    std = standardize(result)
    indices = fit_indices(result)
    cfg = BootstrapConfig(
        replicates=args.replicates,
        level=args.level,
        seed=args.seed,
        parallel_width=None,
    )
    boot = bootstrap_ci(frame, table, cfg)
    config = _run_config(
        args,
        level=table.level,
        replicates=args.replicates,
        coverage=args.level,
        n=moments.n,
        rows_read=ingest.rows_read,
        rows_kept=ingest.rows_kept,
    )
    if args.format == "json":
        text = report.fit_report_json(result, std, indices, config, boot=boot)
    else:
        text = report.fit_report_tsv(result, std, indices, config, boot=boot)
    _write(args.out, text)
    return EXIT_OK if result.converged else EXIT_CONVERGENCE


def cmd_dump(args):
    spec = _load_spec(args)
    table = build_parameter_table(spec)
    config = _run_config(args, level=table.level)
    _write(args.out, report.table_dump_tsv(table, config))
    if args.dump_matrices:
        matrices = theta_to_matrices(table, table.default_starts())
        dump_path = "-" if args.out == "-" else args.out + ".matrices.tsv"
        _write(dump_path, report.matrices_dump_tsv(matrices, config))
    return EXIT_OK


if __name__ == "__main__":
    main()
