"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime or
evaluation failure, 4 measurement did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

from . import __version__
from .bdmetrics import BD_FIELDS, METHODS, BDError, bd_result, mean_result, read_rd_csv
from .dse import (
    DSEError,
    Evaluated,
    select_ebe,
    select_ee,
    full_search,
    greedy_dse,
    normalize_objective,
    pareto_front,
    sensitivity,
    DSETrace,
)
from .evaluator import (
    CachedEvaluator,
    ConfigError,
    EvalCache,
    EvaluationError,
    SyntheticLandscape,
    load_evaluator,
)
from .measurement import (
    ConfidenceParams,
    MeasurementError,
    measure_command,
    measure_until_confident,
    parse_source,
)
from .profiles import (
    CodingConfig,
    ProfileError,
    ToolCatalog,
    builtin_catalog,
    ctc_profile,
    derived_switches,
    emit_profile,
    loads_profile,
)

log = logging.getLogger("tooldse")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_NONCONVERGED = 0, 2, 3, 4
REPORT_SCHEMA_VERSION = 1
ENV_PREFIX = "TOOLDSE_"


class UsageError(Exception):
    pass


# --- option resolution: flags > environment > config file > defaults ---------

# dest -> (default, caster)
RUN_OPTIONS: dict[str, tuple[Any, Any]] = {
    "config": (None, str),
    "evaluator": (None, str),
    "objective": ("bdde-psnr", str),
    "method": ("pchip", str),
    "out": (None, str),
    "catalog": (None, str),
    "tools": (None, str),
    "seed": (None, int),
    "jobs": (1, int),
    "sequential_accept": (False, lambda v: str(v).lower() in ("1", "true", "yes", "on")),
    "svg": (False, lambda v: str(v).lower() in ("1", "true", "yes", "on")),
    "refine_evaluator": (None, str),
    "bdr_cap": (10.0, float),
    "top_k": (3, int),
    "cache": (None, str),
    "max_iterations": (64, int),
}


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
        if p.suffix == ".toml":
            from .evaluator import tomllib

            doc = tomllib.loads(text)
        else:
            doc = json.loads(text)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read run config {path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in doc.items()}


def resolve_options(args: argparse.Namespace, names) -> dict:
    file_cfg = _load_config_file(getattr(args, "run_config", None))
    resolved = {}
    for name in names:
        default, cast = RUN_OPTIONS[name]
        flag = getattr(args, name, None)
        env = os.environ.get(ENV_PREFIX + name.upper())
        if flag is not None and flag is not False:
            value = flag
        elif env is not None:
            value = env
        elif name in file_cfg:
            value = file_cfg[name]
        else:
            value = default
        try:
            resolved[name] = None if value is None else cast(value)
        except (TypeError, ValueError):
            raise UsageError(f"option {name}: cannot use value {value!r}") from None
    return resolved


def _objective(name: str) -> str:
    try:
        return normalize_objective(name)
    except DSEError as exc:
        raise UsageError(str(exc)) from None


def _catalog(path: str | None) -> ToolCatalog:
    if path is None:
        return builtin_catalog()
    try:
        return ToolCatalog.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read catalog {path}: {exc}") from None


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _tool_list(text: str | None) -> list[str] | None:
    if not text:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _evaluated_json(e: Evaluated, catalog: ToolCatalog) -> dict:
    return {
        "profile_id": e.profile.profile_id(catalog),
        "profile": emit_profile(e.profile, catalog),
        "derived_switches": derived_switches(e.profile),
        **{k: (None if e.bd is None else e.bd.get(k)) for k in BD_FIELDS},
    }


def _write_results_csv(path: Path, rows, catalog: ToolCatalog, tools: list[str] | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["rank", "profile_id"] + (tools or []) + list(BD_FIELDS) + ["error"]
        w.writerow(head)
        for rank, e in enumerate(rows, start=1):
            bits = [int(e.profile[t]) for t in tools] if tools else []
            vals = ["" if e.bd is None or e.bd.get(k) is None else repr(e.bd.get(k))
                    for k in BD_FIELDS]
            w.writerow([rank, e.profile.profile_id(catalog), *bits, *vals, e.error or ""])


def _prepare_evaluator(opts: dict, catalog: ToolCatalog, spec_key: str = "evaluator"):
    spec = opts[spec_key]
    if not spec:
        raise UsageError(f"--{spec_key.replace('_', '-')} is required")
    ev = load_evaluator(spec, catalog, opts["config"])
    if opts.get("seed") is not None and isinstance(ev, SyntheticLandscape):
        ev.seed = int(opts["seed"])
    cache = EvalCache(opts["cache"]) if opts.get("cache") and spec_key == "evaluator" else None
    return CachedEvaluator(ev, cache)


def _resolved_doc(command: str, opts: dict, catalog: ToolCatalog) -> dict:
    return {
        "command": command,
        "options": opts,
        "catalog": {"name": catalog.name, "fingerprint": catalog.fingerprint()},
        "version": __version__,
    }


# --- commands ----------------------------------------------------------------


def cmd_bd(args) -> int:
    curves = read_rd_csv(args.csv)
    if args.csv2:
        other = read_rd_csv(args.csv2)
    else:
        other = curves
    ref_ids = sorted({pid for pid, _ in curves})
    test_ids = sorted({pid for pid, _ in other})
    ref_id = args.ref or (ref_ids[0] if len(ref_ids) == 1 else None)
    test_id = args.test or (test_ids[0] if len(test_ids) == 1 and args.csv2 else None)
    if ref_id is None or test_id is None:
        raise UsageError(f"choose curves with --ref/--test; profiles available: {ref_ids}")
    costs = ["rate", "energy"] if args.cost == "both" else [args.cost]
    quals = ["psnr", "vmaf"] if args.quality == "both" else [args.quality]

    seqs = sorted(s for pid, s in curves if pid == ref_id)
    if args.sequence:
        seqs = [s for s in seqs if s == args.sequence]
    if not seqs:
        raise UsageError(f"no curves found for reference profile {ref_id!r}")
    per_seq = {}
    for seq in seqs:
        test = other.get((test_id, seq))
        if test is None:
            raise UsageError(f"no curve for test profile {test_id!r}, sequence {seq!r}")
        per_seq[seq] = bd_result(curves[(ref_id, seq)], test, cost_axis=costs,
                                 method=args.method, quality=quals, strict=True)
    mean = mean_result(list(per_seq.values()))
    shown = [k for k in BD_FIELDS if mean.get(k) is not None]
    print("sequence".ljust(20) + "".join(k.upper().replace("_", "-").rjust(12) for k in shown))
    for seq, res in per_seq.items():
        print((seq or "-").ljust(20) + "".join(f"{res.get(k):12.2f}" for k in shown))
    if len(per_seq) > 1:
        print("mean".ljust(20) + "".join(f"{mean.get(k):12.2f}" for k in shown))
    doc = {
        "ref": ref_id, "test": test_id, "method": args.method,
        "sequences": {s: r.to_json() for s, r in per_seq.items()},
        "mean": {k: mean.get(k) for k in shown},
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_dse_run(args) -> int:
    opts = resolve_options(args, list(RUN_OPTIONS))
    for req in ("config", "evaluator", "out"):
        if not opts[req]:
            raise UsageError(f"--{req} is required (flag, {ENV_PREFIX}{req.upper()} or run config)")
    catalog = _catalog(opts["catalog"])
    config = CodingConfig.parse(opts["config"])
    objective = _objective(opts["objective"])
    if opts["method"] not in METHODS:
        raise UsageError(f"--method must be one of {METHODS}")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved_config.json", _resolved_doc("dse run", opts, catalog))
    ev = _prepare_evaluator(opts, catalog)
    tools = _tool_list(opts["tools"])

    trace_path = out / "trace.jsonl"
    with open(trace_path, "w", encoding="utf-8") as trace_fh:
        def on_record(rec):
            trace_fh.write(json.dumps(rec.to_json(config), sort_keys=True) + "\n")
            trace_fh.flush()

        result = greedy_dse(
            ev, catalog, config, objective, tools=tools,
            sequential_accept=opts["sequential_accept"], method=opts["method"],
            jobs=opts["jobs"], max_iterations=opts["max_iterations"], on_record=on_record,
        )

    ee = select_ee(result.evaluated, result.baseline)
    refine = None
    if opts["refine_evaluator"]:
        refine = _prepare_evaluator(opts, catalog, "refine_evaluator")
    ebe_doc: dict = {}
    ebe = None
    try:
        sel = select_ebe(result.evaluated, refine, bdr_cap=opts["bdr_cap"], k=opts["top_k"],
                         method=opts["method"])
        ebe = sel.chosen
        ebe_doc = {**_evaluated_json(ebe, catalog), **sel.to_json(catalog)}
    except DSEError as exc:
        ebe_doc = {"error": str(exc)}
    sens = sensitivity(result.trace, catalog, config, objective)
    front = pareto_front([e for e in result.evaluated if e.error is None])

    with open(out / "pareto.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["profile_id", "bdr", "bdde"])
        for e in front:
            w.writerow([e.profile.profile_id(catalog), repr(e.bdr), repr(e.value)])
    _write_results_csv(out / "evaluated.csv", result.evaluated, catalog)

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": config.value,
        "objective": objective,
        "method": opts["method"],
        "seed": getattr(ev.inner, "seed", opts["seed"]),
        "catalog": {"name": catalog.name, "fingerprint": catalog.fingerprint()},
        "evaluator": ev.fingerprint(),
        "iterations": result.iterations,
        "stop_reason": result.stop_reason,
        "final_reference": emit_profile(result.final_reference, catalog),
        "greedy_profile": _evaluated_json(result.best, catalog),
        "ee_profile": _evaluated_json(ee, catalog),
        "ebe_profile": ebe_doc,
        "sensitivity": {t: c.value for t, c in sens.items()},
        "pareto": [
            {"profile_id": e.profile.profile_id(catalog), "bdr": e.bdr, "bdde": e.value}
            for e in front
        ],
        "evaluator_call_count": result.unique_evaluations,
        "underlying_evaluations": ev.profile_evaluations,
        "resolved_config": _resolved_doc("dse run", opts, catalog),
    }
    _write_json(out / "report.json", report)
    if opts["svg"]:
        from .plotting import plot_pareto, plot_search

        plot_search(result.trace, out / "trace.svg", ee=ee, ebe=ebe, objective=objective,
                    title=f"{config.value} greedy search")
        plot_pareto(result.evaluated, out / "pareto.svg", title=f"{config.value} Pareto front")

    print(f"iterations: {result.iterations} ({result.stop_reason}), "
          f"profiles evaluated: {result.unique_evaluations}")
    print(f"EE : {ee.profile.profile_id(catalog)}  BDDE {ee.value:+.2f}%  BDR {ee.bdr:+.2f}%")
    if ebe is not None:
        print(f"EBE: {ebe.profile.profile_id(catalog)}  BDDE {ebe.value:+.2f}%  BDR {ebe.bdr:+.2f}%")
    else:
        print(f"EBE: {ebe_doc['error']}")
    return EXIT_OK


def cmd_dse_fullsearch(args) -> int:
    opts = resolve_options(args, ["config", "evaluator", "objective", "method", "out",
                                  "catalog", "tools", "seed", "jobs", "svg", "cache"])
    for req in ("config", "evaluator", "tools"):
        if not opts[req]:
            raise UsageError(f"--{req} is required")
    catalog = _catalog(opts["catalog"])
    config = CodingConfig.parse(opts["config"])
    objective = _objective(opts["objective"])
    subset = _tool_list(opts["tools"]) or []
    if len(subset) > 20:
        raise UsageError(f"full search is limited to 20 tools, got {len(subset)}")
    ev = _prepare_evaluator(opts, catalog)
    results = full_search(ev, catalog, config, subset, objective,
                          method=opts["method"], jobs=opts["jobs"])
    used = [t for t in catalog.applicable(config) if t in subset]
    best = results[0]
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "resolved_config.json", _resolved_doc("dse fullsearch", opts, catalog))
        _write_results_csv(out / "fullsearch.csv", results, catalog, used)
        _write_json(out / "fullsearch_best.json", _evaluated_json(best, catalog))
        if opts["svg"]:
            from .plotting import plot_pareto

            plot_pareto(results, out / "fullsearch.svg",
                        title=f"{config.value} full search, {len(results)} profiles")
    print(f"profiles evaluated: {len(results)}")
    print(f"optimum: {best.profile.profile_id(catalog)}  "
          + " ".join(f"{t}={int(best.profile[t])}" for t in used)
          + f"  BDDE {best.value:+.2f}%  BDR {best.bdr:+.2f}%")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    catalog = _catalog(args.catalog)
    try:
        trace = DSETrace.from_jsonl(Path(args.trace).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read trace {args.trace}: {exc}") from None
    except DSEError as exc:
        raise UsageError(str(exc)) from None
    try:
        cats = sensitivity(trace, catalog, trace.config, _objective(args.objective), args.threshold)
    except DSEError as exc:
        raise UsageError(str(exc)) from None
    doc = {"config": trace.config.value, "threshold": args.threshold,
           "categories": {t: c.value for t, c in cats.items()}}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_measure(args) -> int:
    params = ConfidenceParams(beta=args.beta, alpha=args.alpha, m_min=args.m_min,
                              m_max=args.m_max, two_sided=not args.one_sided)
    source = parse_source(args.source)
    command = list(args.command or [])
    if command and command[0] == "--":
        command = command[1:]
    if command:
        series = measure_command(command, source, params, idle_per_run=args.idle_per_run)
    else:
        if args.source.startswith("counter:"):
            raise UsageError("a counter source needs a command to measure (after --)")
        series = measure_until_confident(lambda: None, source, params,
                                         idle_per_run=args.idle_per_run)
    text = json.dumps(series.to_json(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK if series.converged else EXIT_NONCONVERGED


def cmd_profile_validate(args) -> int:
    catalog = _catalog(args.catalog)
    try:
        text = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc}") from None
    profile = loads_profile(text, catalog)
    print(json.dumps({"valid": True, "config": profile.config.value,
                      "profile_id": profile.profile_id(catalog),
                      "derived_switches": derived_switches(profile)}, indent=2))
    return EXIT_OK


def cmd_profile_ctc(args) -> int:
    catalog = _catalog(args.catalog)
    print(json.dumps(emit_profile(ctc_profile(catalog, args.config), catalog), indent=2))
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="coding configuration: AI, LB or RA")
    p.add_argument("--evaluator", help="synthetic:<landscape.json> or pipeline:<config.toml|json>")
    p.add_argument("--objective", help="bdde-psnr (default) or bdde-vmaf")
    p.add_argument("--method", help="BD interpolation: pchip (default) or poly")
    p.add_argument("--catalog", help="tool catalog JSON (default: built-in VVC catalog)")
    p.add_argument("--tools", help="comma-separated tool subset")
    p.add_argument("--seed", type=int, help="seed for synthetic measurement noise")
    p.add_argument("--jobs", type=int, help="parallel candidate evaluations (pure evaluators)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--svg", action="store_true", default=None, help="also render SVG figures")
    p.add_argument("--cache", help="SQLite file for a persistent evaluation cache")
    p.add_argument("--run-config", help="JSON/TOML file with default option values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tooldse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bd", help="Bjøntegaard-Delta metrics from RD CSV files")
    p.add_argument("csv")
    p.add_argument("csv2", nargs="?", help="second file holding the test curves")
    p.add_argument("--ref", help="reference profile_id")
    p.add_argument("--test", help="test profile_id")
    p.add_argument("--cost", choices=("rate", "energy", "both"), default="both")
    p.add_argument("--quality", choices=("psnr", "vmaf", "both"), default="psnr")
    p.add_argument("--method", choices=METHODS, default="pchip")
    p.add_argument("--sequence", help="restrict to one sequence")
    p.set_defaults(func=cmd_bd)

    dse = sub.add_parser("dse", help="design space exploration")
    dsub = dse.add_subparsers(dest="dse_command", required=True)
    p = dsub.add_parser("run", help="greedy search with EE/EBE selection")
    _add_eval_flags(p)
    p.add_argument("--sequential-accept", action="store_true", default=None,
                   help="apply improving flips immediately instead of per iteration")
    p.add_argument("--refine-evaluator", help="evaluator used to re-score the EBE shortlist")
    p.add_argument("--bdr-cap", type=float, help="EBE bit-rate cap in percent (default 10)")
    p.add_argument("--top-k", type=int, help="EBE shortlist size (default 3)")
    p.add_argument("--max-iterations", type=int)
    p.set_defaults(func=cmd_dse_run)
    p = dsub.add_parser("fullsearch", help="exhaustive search over a tool subset")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_dse_fullsearch)

    p = sub.add_parser("sensitivity", help="categorize tools from a search trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--catalog")
    p.add_argument("--objective", default="bdde-psnr")
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("measure", help="repeat a command until its energy is confident")
    p.add_argument("--source", required=True,
                   help="counter:<path>[,<path>][@modulus] or stub:constant|gauss[,k=v...]")
    p.add_argument("--beta", type=float, default=0.02)
    p.add_argument("--alpha", type=float, default=0.99)
    p.add_argument("--m-min", type=int, default=5)
    p.add_argument("--m-max", type=int, default=1000)
    p.add_argument("--one-sided", action="store_true")
    p.add_argument("--idle-per-run", action="store_true")
    p.add_argument("--out")
    p.add_argument("command", nargs=argparse.REMAINDER)
    p.set_defaults(func=cmd_measure)

    prof = sub.add_parser("profile", help="profile utilities")
    psub = prof.add_subparsers(dest="profile_command", required=True)
    p = psub.add_parser("validate", help="check a profile JSON file")
    p.add_argument("file")
    p.add_argument("--catalog")
    p.set_defaults(func=cmd_profile_validate)
    p = psub.add_parser("ctc", help="print the CTC profile of a configuration")
    p.add_argument("--config", required=True, type=str.upper, choices=[c.value for c in CodingConfig])
    p.add_argument("--catalog")
    p.set_defaults(func=cmd_profile_ctc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ProfileError, BDError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvaluationError, DSEError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except MeasurementError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
