"""Command-line front end: simulate / estimate / diagnose."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .control_function import fit_drcf
from .data import Dataset, LoadReport, load_csv, write_csv
from .diagnostics import (
    LABEL_BOTH_WEAK,
    DiagnosticsReport,
    diagnose,
)
from .exceptions import ConfigError, DataError, DegenerateInstrumentError, QlsivError, RankDeficientError
from .first_stage import fit_first_stage
from .grids import InstrumentBasis, QuantileGrid
from .instruments import WeightMethod, build_instrument
from .iv import fit_2sls
from .simulation import (
    DEFAULT_STEPS,
    DISPLAY_NAMES,
    ESTIMATOR_IDS,
    ReportRow,
    SimulationReport,
    parse_design,
    run_study,
)

DEFAULT_DESIGNS = (("A", 0.0), ("B", 0.0), ("B", 0.5), ("C", 0.0))
WEIGHT_CHOICES = {
    "equal": WeightMethod.equal,
    "ols": WeightMethod.ols,
    "ridge": WeightMethod.ridge,
    "lasso-equal": WeightMethod.lasso_equal,
    "lasso-coef": WeightMethod.lasso_coef,
}


@dataclass(frozen=True)
class StudyConfig:
    designs: tuple = DEFAULT_DESIGNS
    ns: tuple = (500, 1000)
    steps: tuple = DEFAULT_STEPS
    estimators: tuple = ESTIMATOR_IDS
    replications: int = 1000
    seed: int = 20240901
    jobs: int = 1
    out_dir: str = "qlsiv_results"


_TOP_KEYS = ("reps", "seed", "ns", "steps", "estimators", "jobs", "out")


def parse_study_config(text: str) -> StudyConfig:
    """Flat key = value lines with one [A]/[B]/[C] section per design;
    [B] sections may set omega. Unknown keys are rejected."""
    cfg = StudyConfig()
    designs: list[tuple[str, float]] = []
    section: str | None = None
    pending_omega: dict | None = None
    updates: dict = {}

    def flush_section():
        nonlocal pending_omega
        if pending_omega is not None:
            designs.append((pending_omega["design"], pending_omega.get("omega", 0.0)))
            pending_omega = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            flush_section()
            name = line[1:-1].strip().upper()
            if name not in ("A", "B", "C"):
                raise ConfigError(f"line {lineno}: unknown design section [{name}]")
            section = name
            pending_omega = {"design": name}
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if section is None:
            if key not in _TOP_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            updates[key] = value
        else:
            if key != "omega":
                raise ConfigError(f"line {lineno}: unknown key {key!r} in design section")
            if section != "B":
                raise ConfigError(f"line {lineno}: omega only applies to design B")
            pending_omega["omega"] = float(value)
    flush_section()

    def split_list(v):
        return tuple(tok.strip() for tok in v.split(",") if tok.strip())

    kwargs = {}
    if "reps" in updates:
        kwargs["replications"] = int(updates["reps"])
    if "seed" in updates:
        kwargs["seed"] = int(updates["seed"])
    if "jobs" in updates:
        kwargs["jobs"] = int(updates["jobs"])
    if "out" in updates:
        kwargs["out_dir"] = updates["out"]
    if "ns" in updates:
        kwargs["ns"] = tuple(int(v) for v in split_list(updates["ns"]))
    if "steps" in updates:
        kwargs["steps"] = tuple(float(v) for v in split_list(updates["steps"]))
    if "estimators" in updates:
        ests = split_list(updates["estimators"])
        for e in ests:
            if e not in ESTIMATOR_IDS:
                raise ConfigError(f"unknown estimator id {e!r}")
        kwargs["estimators"] = ests
    if designs:
        kwargs["designs"] = tuple(designs)
    return replace(cfg, **kwargs)


# ---------------------------------------------------------------- simulate


def _fmt17(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def report_to_csv_text(report: SimulationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["design", "omega", "n", "step", "k", "estimator", "bias", "rmse", "coverage", "mean_se", "sd", "failures", "reps"]
    )
    for r in report.rows:
        writer.writerow(
            [
                r.design,
                _fmt17(r.omega),
                r.n,
                _fmt17(r.step) if r.step is not None else "",
                r.k if r.k is not None else "",
                r.estimator,
                _fmt17(r.bias),
                _fmt17(r.rmse),
                _fmt17(r.coverage),
                _fmt17(r.mean_se),
                _fmt17(r.sd),
                r.failures,
                r.reps,
            ]
        )
    return buf.getvalue()


def report_from_csv_text(text: str) -> SimulationReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = []
    for rec in reader:
        if not rec:
            continue
        d = dict(zip(header, rec))
        rows.append(
            ReportRow(
                design=d["design"],
                omega=float(d["omega"]),
                n=int(d["n"]),
                step=float(d["step"]) if d["step"] else None,
                k=int(d["k"]) if d["k"] else None,
                estimator=d["estimator"],
                bias=float(d["bias"]),
                rmse=float(d["rmse"]),
                coverage=float(d["coverage"]),
                mean_se=float(d["mean_se"]),
                sd=float(d["sd"]),
                failures=int(d["failures"]),
                reps=int(d["reps"]),
            )
        )
    return SimulationReport(rows=tuple(rows))


def report_to_table_text(report: SimulationReport) -> str:
    """Human-readable Bias(RMSE)Cov. table, one block per design."""
    lines = []
    cells = {}
    blocks = []
    for r in report.rows:
        key = (r.design, r.omega)
        if key not in blocks:
            blocks.append(key)
        cells.setdefault(key, {}).setdefault((r.k, r.estimator), {})[r.n] = r
    for design, omega in blocks:
        block = cells[(design, omega)]
        ns = sorted({n for by_n in block.values() for n in by_n})
        title = f"Design {design}" + (f" (omega={omega:g})" if design == "B" else "")
        lines.append(title)
        head = f"{'K':>5}  {'Estimator':<10}" + "".join(f"  {'n=' + str(n):>22}" for n in ns)
        lines.append(head)
        lines.append("-" * len(head))
        for (k, est), by_n in block.items():
            kdisp = "--" if k is None else str(k)
            row = f"{kdisp:>5}  {DISPLAY_NAMES.get(est, est):<10}"
            for n in ns:
                r = by_n.get(n)
                cell = f"{r.bias:.3f}({r.rmse:.3f}){r.coverage:.3f}" if r is not None else ""
                row += f"  {cell:>22}"
            lines.append(row)
        lines.append("")
    return "\n".join(lines)


def expected_row_keys(config: StudyConfig):
    """Row grid (design, omega, n, k, estimator) a study with this
    configuration will produce."""
    keys = []
    for design, omega in config.designs:
        for n in config.ns:
            for est in config.estimators:
                if est == "classic-iv":
                    keys.append((design, omega, n, None, est))
                else:
                    for s in config.steps:
                        keys.append((design, omega, n, QuantileGrid(step=s).k, est))
    return keys


def cmd_simulate(args) -> int:
    if args.config:
        with open(args.config) as fh:
            config = parse_study_config(fh.read())
    else:
        config = StudyConfig()
    if args.reps is not None:
        config = replace(config, replications=args.reps)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.jobs is not None:
        config = replace(config, jobs=args.jobs)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    report = run_study(
        designs=config.designs,
        ns=config.ns,
        grid_steps=config.steps,
        estimators=config.estimators,
        replications=config.replications,
        master_seed=config.seed,
        parallelism=config.jobs,
    )
    os.makedirs(config.out_dir, exist_ok=True)
    csv_path = os.path.join(config.out_dir, "simulation_report.csv")
    txt_path = os.path.join(config.out_dir, "simulation_report.txt")
    with open(csv_path, "w", newline="") as fh:
        fh.write(report_to_csv_text(report))
    table = report_to_table_text(report)
    with open(txt_path, "w") as fh:
        fh.write(table)
    print(table)
    print(f"wrote {csv_path} and {txt_path}")
    return 0


# ------------------------------------------------------- estimate/diagnose


def _load_dataset(args) -> tuple[Dataset, LoadReport]:
    controls = tuple(tok for tok in (args.controls or "").split(",") if tok)
    instruments = tuple(tok for tok in (args.instruments or "").split(",") if tok)
    if not instruments:
        raise DataError("at least one instrument column is required (--instruments)")
    outcome = getattr(args, "outcome", None)
    dataset, rep = load_csv(
        args.data,
        outcome=outcome if outcome else args.endog,  # diagnose has no outcome column
        endog=args.endog,
        controls=controls,
        instruments=instruments,
        cluster=getattr(args, "cluster", None),
        trim_upper_fraction=getattr(args, "trim_top", None),
    )
    if rep.rows_dropped_missing or rep.rows_dropped_trim:
        print(
            f"dropped {rep.rows_dropped_missing} rows with missing values, "
            f"{rep.rows_dropped_trim} rows above the trim cutoff"
            + (f" ({rep.trim_cutoff:.6g})" if rep.trim_cutoff is not None else "")
        )
    return dataset, rep


def _first_stage_for(data: Dataset, step: float, basis_spec: str):
    basis = InstrumentBasis(basis_spec)
    grid = QuantileGrid(step=step)
    try:
        return fit_first_stage(data, basis, grid)
    except RankDeficientError:
        if basis_spec == "quadratic-full":
            print("note: quadratic-full basis is singular (binary instrument?); using quadratic-no-z2sq")
            return fit_first_stage(data, InstrumentBasis("quadratic-no-z2sq"), grid)
        raise


def _print_diagnostics(diag: DiagnosticsReport) -> None:
    print(f"mean first-stage F:      {diag.mean_f:.6g}")
    shown = [t for t in (0.10, 0.25, 0.50, 0.75, 0.90)]
    for tau in shown:
        try:
            print(f"quantile joint F at {tau:.2f}: {diag.quantile_f_at(tau):.6g}")
        except KeyError:
            pass
    print(f"max quantile joint F:    {diag.max_quantile_f:.6g}")
    if np.isfinite(diag.distributional_f):
        print(f"distributional F:        {diag.distributional_f:.6g} (df {diag.distributional_df})")
    print(f"decision label:          {diag.label}")
    for note in diag.notes:
        print(f"note: {note}")
    if diag.label == LABEL_BOTH_WEAK:
        print("advice: neither first stage is strong; focus on reduced-form estimates")


def _diag_csv_rows(diag: DiagnosticsReport):
    rows = [("stat", "mean_f", _fmt17(diag.mean_f), "")]
    for tau, f in diag.quantile_f:
        rows.append(("stat", f"quantile_f_{tau:g}", _fmt17(f), ""))
    rows.append(("stat", "distributional_f", _fmt17(diag.distributional_f), ""))
    rows.append(("stat", "distributional_df", str(diag.distributional_df), ""))
    rows.append(("label", "decision", diag.label, ""))
    for note in diag.notes:
        rows.append(("note", "", note, ""))
    return rows


def _write_rows(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "name", "value", "se"])
        for row in rows:
            writer.writerow(row)


def cmd_estimate(args) -> int:
    data, _ = _load_dataset(args)
    status = 0
    rows = []
    diag = None
    try:
        if args.qls:
            fs = _first_stage_for(data, args.step, args.basis)
            method = WEIGHT_CHOICES[args.weights]()
            gi = build_instrument(fs, data.x, method, seed=args.seed)
            fit = fit_2sls(data, gi, cluster=args.cluster is not None)
            diag = diagnose(data, fs)
        else:
            fit = fit_2sls(data, cluster=args.cluster is not None)
            try:
                fs = _first_stage_for(data, args.step, args.basis)
                diag = diagnose(data, fs)
            except QlsivError:
                diag = diagnose(data, None)
        print(f"method: {fit.method}   n = {fit.n}")
        for name, est, se in zip(fit.param_names, fit.theta, fit.se):
            print(f"  {name:<12} {est:>14.6g}  (se {se:.6g})")
            rows.append(("coef", name, _fmt17(est), _fmt17(se)))
        for note in fit.notes:
            print(f"note: {note}")
    except DegenerateInstrumentError as exc:
        status = 1
        print(f"degenerate instrument: {exc}")
        rows.append(("error", "degenerate-instrument", str(exc), ""))
        if diag is None:
            try:
                fs = _first_stage_for(data, args.step, args.basis)
                diag = diagnose(data, fs)
            except QlsivError:
                diag = diagnose(data, None)
        print("advice: focus on reduced-form estimates (decision table, weak row)")
    if diag is not None:
        _print_diagnostics(diag)
        rows.extend(_diag_csv_rows(diag))
    _write_rows(args.out, rows)
    print(f"wrote {args.out}")
    return status


def cmd_diagnose(args) -> int:
    args.outcome = None
    data, _ = _load_dataset(args)
    fs = _first_stage_for(data, args.step, args.basis)
    diag = diagnose(data, fs)
    _print_diagnostics(diag)
    _write_rows(args.out, _diag_csv_rows(diag))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlsiv",
        description="Quantile-aggregated IV estimation, diagnostics, and the Monte Carlo study",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the Monte Carlo study")
    sim.add_argument("--config", help="study configuration file (key = value with [A]/[B]/[C] sections)")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--jobs", type=int)
    sim.add_argument("--out", help="output directory")
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="estimate the structural coefficient on a CSV dataset")
    est.add_argument("--data", required=True)
    est.add_argument("--outcome", required=True)
    est.add_argument("--endog", required=True)
    est.add_argument("--controls", default="")
    est.add_argument("--instruments", default="")
    est.add_argument("--qls", action="store_true", help="use the quantile-aggregated generated instrument")
    est.add_argument("--step", type=float, default=0.10, help="quantile grid step (default 0.10, K=10)")
    est.add_argument("--weights", choices=sorted(WEIGHT_CHOICES), default="ols")
    est.add_argument("--basis", choices=["linear", "quadratic-full", "quadratic-no-z2sq"], default="quadratic-full")
    est.add_argument("--cluster", default=None, help="cluster column for robust SEs")
    est.add_argument("--trim-top", type=float, default=None, dest="trim_top")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out", default="estimate_report.csv")
    est.set_defaults(func=cmd_estimate)

    dia = sub.add_parser("diagnose", help="first-stage diagnostics on a CSV dataset")
    dia.add_argument("--data", required=True)
    dia.add_argument("--endog", required=True)
    dia.add_argument("--controls", default="")
    dia.add_argument("--instruments", default="")
    dia.add_argument("--step", type=float, default=0.10)
    dia.add_argument("--basis", choices=["linear", "quadratic-full", "quadratic-no-z2sq"], default="quadratic-full")
    dia.add_argument("--out", default="diagnose_report.csv")
    dia.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
