"""Command-line entry point.

Subcommands::

    carbonlaw sweep        run scenario curves and power-law fits to CSV
    carbonlaw search       best layout for one d_model, optional candidate log
    carbonlaw estimate     carbon report for a user-supplied plan
    carbonlaw gpu-project  print a projected GPU spec
    carbonlaw calibrate    fit the GEMM efficiency constant from measurements

Exit codes: 0 success, 2 configuration error, 3 infeasible search,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from types import SimpleNamespace
from typing import Optional, Sequence

from . import __version__
from .carbon import ideal_report, total_carbon
from .config import ConfigError, RunConfig, load_config, parse_duration, validate
from .hardware import GpuSpec, HardwareError, project
from .perf_model import gemm_efficiency
from .scaling_laws import ScalingError, model_point, sweep
from .scenarios import CSV_COLUMNS, fit_rows, run_scenario
from .search import DIAGNOSTIC_COLUMNS, NoFeasiblePlan, evaluate, search

log = logging.getLogger("carbonlaw")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
FIT_COLUMNS = ("scenario", "k", "alpha_exp", "r2", "n_points")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(fh, header: str, columns: Sequence[str], rows: Sequence[dict]) -> None:
    fh.write(header + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])


def _write_file(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-+" else "_" for ch in name)


# -- configuration --------------------------------------------------------


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else load_config()
    prov = cfg.provenance
    if getattr(args, "gpu", None):
        cfg.gpu = args.gpu
        prov["gpu.name"] = "cli"
    if getattr(args, "years", None) is not None:
        cfg.years = args.years
        prov["gpu.years"] = "cli"
    if getattr(args, "deadline", None):
        cfg.search = replace(cfg.search, deadline_s=parse_duration(args.deadline))
        prov["search.deadline_s"] = "cli"
    if getattr(args, "carbon_intensity", None) is not None:
        cfg.carbon = replace(cfg.carbon, carbon_intensity=args.carbon_intensity)
        prov["carbon.carbon_intensity"] = "cli"
    if getattr(args, "pue", None) is not None:
        cfg.carbon = replace(cfg.carbon, pue=args.pue)
        prov["carbon.pue"] = "cli"
    if getattr(args, "gemm_k", None) is not None:
        cfg.perf = replace(cfg.perf, gemm_k=args.gemm_k)
        prov["perf.gemm_k"] = "cli"
    if getattr(args, "d_models", None):
        cfg.d_models = args.d_models
        prov["sweep.d_models"] = "cli"
    if getattr(args, "seq_len", None) is not None:
        cfg.seq_len = args.seq_len
        prov["sweep.seq_len"] = "cli"
    if getattr(args, "scenario", None):
        cfg.scenario_names = list(args.scenario)
        prov["scenarios.run"] = "cli"
    if getattr(args, "ideal", False) and "ideal" not in cfg.scenario_names:
        cfg.scenario_names = ["ideal"] + cfg.scenario_names
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    validate(cfg)
    return cfg


def _provenance(cfg: RunConfig) -> dict:
    """Every parameter with its value and whether it is a default or an override."""
    out = {}
    for section in ("scaling", "rates", "perf", "search", "carbon"):
        for key, value in cfg.resolved()[section].items():
            name = f"{section}.{key}"
            out[name] = {"value": value, "source": cfg.provenance.get(name, "default")}
    for name, value in (("gpu.name", cfg.gpu), ("gpu.years", cfg.years)):
        out[name] = {"value": value, "source": cfg.provenance.get(name, "default")}
    return out


# -- subcommands ----------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    points = sweep(cfg.d_models, cfg.seq_len, cfg.consts)
    ctx = cfg.context()
    out = Path(cfg.out_dir)
    header = cfg.header()
    fits = []
    infeasible = 0
    for scenario in cfg.scenarios():
        log.info("scenario %s: %d points", scenario.name, len(points))
        rows = run_scenario(points, scenario, ctx, cfg.workers)
        buf = io.StringIO()
        write_csv(buf, header, CSV_COLUMNS, [r.csv_row() for r in rows])
        _write_file(out / f"scenario_{_safe_name(scenario.name)}.csv", buf.getvalue())
        for r in rows:
            if not r.ok:
                infeasible += 1
                log.warning("%s: %s", scenario.name, r.error)
        try:
            fit = fit_rows(rows)
        except ValueError as exc:
            log.warning("%s: no fit (%s)", scenario.name, exc)
            continue
        fits.append({"scenario": scenario.name, "k": fit.k, "alpha_exp": fit.alpha_exp,
                     "r2": fit.r_squared, "n_points": fit.n_points})
    buf = io.StringIO()
    write_csv(buf, header, FIT_COLUMNS, fits)
    _write_file(out / "fits.csv", buf.getvalue())
    resolved = {"version": __version__, "config_sha256": cfg.digest(), "config": cfg.resolved(),
                "provenance": _provenance(cfg)}
    _write_file(out / "resolved_config.json", json.dumps(resolved, indent=2, sort_keys=True, default=repr) + "\n")
    for f in fits:
        print(f"{f['scenario']}: k={f['k']:.6g} alpha={f['alpha_exp']:.6g} r2={f['r2']:.4f} n={f['n_points']}")
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


def _plan_summary(plan) -> dict:
    return {
        "n_gpu": plan.n_gpu, "n_tp": plan.n_tp, "n_dp": plan.n_dp, "n_pp": plan.n_pp,
        "n_ep": plan.n_ep, "microbatch_tokens": plan.microbatch_tokens,
        "n_microbatches": plan.n_microbatches, "duration_s": plan.duration_s,
        "utilization": plan.utilization, "memory_bytes": asdict(plan.memory),
        "step_breakdown_s": asdict(plan.breakdown),
    }


def _gpu(cfg: RunConfig) -> GpuSpec:
    return project(cfg.base_gpu(), cfg.years, cfg.rates)


def cmd_search(args) -> int:
    cfg = _resolve(args)
    point = model_point(args.d_model, cfg.seq_len, cfg.consts)
    gpu = _gpu(cfg)
    sink = None
    diag_fh = None
    if args.diagnostics:
        diag_fh = sys.stdout if args.diagnostics == "-" else open(args.diagnostics, "w", encoding="utf-8")
        diag_fh.write(cfg.header() + "\n")
        writer = csv.writer(diag_fh, lineterminator="\n")
        writer.writerow(DIAGNOSTIC_COLUMNS)
        sink = lambda c: writer.writerow([_fmt(v) for v in c.row()])  # noqa: E731
    try:
        plan = search(point, gpu, cfg.search, cfg.perf, diagnostics=sink,
                      method="scan" if args.diagnostics else "indexed")
    finally:
        if diag_fh is not None and diag_fh is not sys.stdout:
            diag_fh.close()
    report = total_carbon(plan, gpu, cfg.carbon)
    out = {"d_model": point.d_model, "gpu": gpu.name, "plan": _plan_summary(plan),
           "carbon_t": report.as_dict()}
    stream = sys.stderr if args.diagnostics == "-" else sys.stdout
    print(json.dumps(out, indent=2), file=stream)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _resolve(args)
    gpu = _gpu(cfg)
    if args.layout:
        if args.d_model is None:
            raise ConfigError("--layout needs --d-model")
        point = model_point(args.d_model, cfg.seq_len, cfg.consts)
        try:
            tp, dp, pp = (int(x) for x in args.layout.split(","))
        except ValueError:
            raise ConfigError(f"--layout expects TP,DP,PP, got {args.layout!r}") from None
        cand = evaluate(point, gpu, tp, dp, pp, point.n_experts, cfg.search.deadline_s, cfg.perf)
        if cand.plan is None:
            raise NoFeasiblePlan(f"layout {args.layout} rejected: {cand.reject_reason}")
        plan = cand.plan
        report = total_carbon(plan, gpu, cfg.carbon)
        extra = {"plan": _plan_summary(plan), "meets_deadline": cand.feasible}
    elif args.ideal:
        if args.d_model is None:
            raise ConfigError("--ideal needs --d-model")
        point = model_point(args.d_model, cfg.seq_len, cfg.consts)
        report = ideal_report(point, gpu, cfg.carbon, cfg.search.deadline_s)
        extra = {"mode": "ideal"}
    else:
        missing = [f for f in ("n_gpu", "duration", "utilization") if getattr(args, f) is None]
        if missing:
            raise ConfigError("estimate needs --layout, --ideal, or all of "
                              "--n-gpu --duration --utilization (missing "
                              + ", ".join("--" + m.replace("_", "-") for m in missing) + ")")
        if args.n_gpu < 1 or not 0 <= args.utilization <= 1:
            raise ConfigError("--n-gpu must be >= 1 and --utilization in [0, 1]")
        plan = SimpleNamespace(n_gpu=args.n_gpu, duration_s=parse_duration(args.duration),
                               utilization=args.utilization)
        report = total_carbon(plan, gpu, cfg.carbon)
        extra = {}
    out = {"gpu": gpu.as_dict(), "report_t": report.as_dict(),
           "per_gpu_t": report.per_gpu_t, "per_gpu_embodied_share": report.per_gpu_embodied_share,
           "provenance": _provenance(cfg), "config_sha256": cfg.digest(), **extra}
    print(json.dumps(out, indent=2, default=repr))
    return EXIT_OK


def cmd_gpu_project(args) -> int:
    cfg = _resolve(args)
    gpu = _gpu(cfg)
    print(json.dumps(gpu.as_dict(), indent=2))
    return EXIT_OK


def calibrate_gemm_k(samples: Sequence[tuple[float, float, float]], gpu: GpuSpec) -> tuple[float, float]:
    """Least-squares K from ``(tokens, d_model, measured_s)`` square-GEMM timings.

    Model: ``t = F / (peak * eff)`` with ``F = 2 tokens d_model^2``, which is
    linear in K: ``t - F/peak = K * F / (peak * sram * tokens * d_model)``.
    Returns ``(K, r_squared)`` of the timing fit.
    """
    if len(samples) < 1:
        raise ValueError("no calibration samples")
    num = den = 0.0
    for tokens, d_model, measured in samples:
        if tokens <= 0 or d_model <= 0 or measured <= 0:
            raise ValueError("calibration rows must be positive")
        flops = 2.0 * tokens * d_model * d_model
        a = flops / (gpu.peak_flops * gpu.sram_capacity_scale * tokens * d_model)
        b = measured - flops / gpu.peak_flops
        num += a * b
        den += a * a
    k = num / den
    if not k > 0:
        raise ValueError("measurements are faster than peak; cannot fit K")
    pred = [2.0 * t * d * d / (gpu.peak_flops * gemm_efficiency(t, d, gpu.sram_capacity_scale, k))
            for t, d, _ in samples]
    meas = [m for _, _, m in samples]
    mean = sum(meas) / len(meas)
    ss_tot = sum((m - mean) ** 2 for m in meas)
    ss_res = sum((m - p) ** 2 for m, p in zip(meas, pred))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return k, r2


def cmd_calibrate(args) -> int:
    cfg = _resolve(args)
    gpu = _gpu(cfg)
    samples = []
    with open(args.table, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        need = {"tokens", "d_model", "measured_s"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigError(f"{args.table}: columns must include {', '.join(sorted(need))}")
        for i, row in enumerate(reader, start=2):
            try:
                samples.append((float(row["tokens"]), float(row["d_model"]), float(row["measured_s"])))
            except ValueError:
                raise ConfigError(f"{args.table}: bad number on line {i}") from None
    try:
        k, r2 = calibrate_gemm_k(samples, gpu)
    except ValueError as exc:
        raise ConfigError(f"{args.table}: {exc}") from None
    print(f"[perf]\ngemm_k = {k!r}\n# r2 = {r2:.6f} over {len(samples)} samples on {gpu.name}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--gpu", help="catalog or custom GPU name")
    p.add_argument("--years", type=float, help="technology projection horizon")
    p.add_argument("--deadline", help='training deadline, e.g. "3 months"')
    p.add_argument("--carbon-intensity", type=float, help="gCO2e/kWh")
    p.add_argument("--pue", type=float)
    p.add_argument("--gemm-k", type=float)
    p.add_argument("--seq-len", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carbonlaw",
        description="Scaling-law sweeps, parallelism search and training carbon estimates.",
        epilog="exit codes: 0 ok, 2 configuration error, 3 infeasible search, 4 I/O error",
    )
    parser.add_argument("--version", action="version", version=f"carbonlaw {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="scenario curves and power-law fits")
    _common(p)
    p.add_argument("--d-models", type=int, nargs="+")
    p.add_argument("--scenario", action="append", help="scenario name (repeatable)")
    p.add_argument("--ideal", action="store_true", help="also emit the ideal curve")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("search", help="parallelism search for one model")
    _common(p)
    p.add_argument("--d-model", type=int, required=True)
    p.add_argument("--diagnostics", help="write every candidate as CSV ('-' for stdout)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("estimate", help="carbon report for a given plan")
    _common(p)
    p.add_argument("--d-model", type=int)
    p.add_argument("--layout", help="TP,DP,PP (EP = number of experts)")
    p.add_argument("--ideal", action="store_true")
    p.add_argument("--n-gpu", type=int)
    p.add_argument("--duration", help='e.g. "1 hour"')
    p.add_argument("--utilization", type=float)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("gpu-project", help="print a projected GPU spec")
    _common(p)
    p.set_defaults(func=cmd_gpu_project)

    p = sub.add_parser("calibrate", help="fit the GEMM efficiency constant")
    _common(p)
    p.add_argument("--table", required=True, help="CSV with tokens,d_model,measured_s")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ScalingError, HardwareError) as exc:
        print(f"carbonlaw: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoFeasiblePlan as exc:
        print(f"carbonlaw: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"carbonlaw: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"carbonlaw: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
