"""Command line front end: ``gridrisk validate | run | rank``.

Exit codes: 0 success, 2 validation or consistency failure, 3 I/O error,
4 internal error.  Severe scenarios are results, not failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import caseio
from .engine import MANIFEST_FILE, RESULTS_FILE, EngineConfig, ResumeError, read_results, run_all
from .grid import GridError
from .risk import RiskInputError, compute_risk, emit_reports, format_table

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4


def _err(msg: str) -> None:
    print(f"gridrisk: {msg}", file=sys.stderr)


def _load(path: str) -> caseio.CaseDocument:
    return caseio.load_case(path)


def cmd_validate(args) -> int:
    doc = _load(args.case)
    g = doc.grid
    print(f"buses={g.n_bus} lines={g.n_lines} transformers={g.n_transformers} generators={g.n_generators}")
    if g.external_grids:
        print(f"external_grids={len(g.external_grids)} slack_bus={g.slack_bus}")
    print(f"checksum={doc.checksum}")
    print("valid")
    return EXIT_OK


def _default_workers() -> int:
    env = os.environ.get("GRIDRISK_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            _err(f"ignoring GRIDRISK_WORKERS={env!r}")
    return 1


def cmd_run(args) -> int:
    doc = _load(args.case)
    grid = doc.grid
    if args.dynamics:
        grid = caseio.load_dynamics(Path(args.dynamics).read_bytes(), grid)
    if args.reliability:
        caseio.load_reliability(Path(args.reliability).read_bytes(), grid)
    config = EngineConfig(max_order=args.order, include_base=not args.no_base,
                          workers=args.workers or _default_workers(), tol_pf=args.tol_pf,
                          max_iter=args.max_iter, eps_stab=args.eps_stab,
                          sequential_redispatch=args.sequential_redispatch,
                          warm_start=args.warm_start, limit=args.limit)
    manifest, stats = run_all(grid, config, args.out, checksum=caseio.case_checksum(grid))
    manifest["source_case_checksum"] = doc.checksum
    (Path(args.out) / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n")
    counts = manifest["counts"]
    evaluated = manifest["evaluated"]
    stable = counts["stable"] / evaluated if evaluated else 0.0
    print(f"scenarios total={manifest['totals']['total']} (base={manifest['totals']['base']} "
          f"n1={manifest['totals']['n1']} n2={manifest['totals']['n2']}) selected={manifest['selected']} "
          f"evaluated={evaluated} skipped={stats.skipped}")
    print(f"stable={counts['stable']} severe={counts['severe']} stable_fraction={stable:.4f}")
    for reason, n in counts["by_reason"].items():
        print(f"  {reason}: {n}")
    return EXIT_OK


def cmd_rank(args) -> int:
    results = Path(args.results)
    if results.is_dir():
        results = results / RESULTS_FILE
    manifest_path = results.parent / MANIFEST_FILE
    if not manifest_path.exists():
        _err(f"no {MANIFEST_FILE} next to {results}; the run is incomplete")
        return EXIT_INVALID
    manifest = json.loads(manifest_path.read_text())
    doc = _load(args.case)
    src = manifest.get("source_case_checksum", manifest.get("case_checksum"))
    if src is not None and src != doc.checksum:
        _err(f"results were produced from a different case (checksum {src}, now {doc.checksum})")
        return EXIT_INVALID
    table = caseio.ReliabilityTable()
    if args.reliability:
        table = caseio.load_reliability(Path(args.reliability).read_bytes(), doc.grid)
    ranking = compute_risk(read_results(results), table, doc.grid, unordered_pairs=args.unordered_pairs,
                           manifest=manifest, allow_partial=args.allow_partial)
    out = Path(args.out) if args.out else results.parent
    emit_reports(ranking, out, top_k=args.top)
    print(format_table(ranking.top(args.top)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridrisk", description="N-1/N-2 contingency screening and risk ranking")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and validate a case file")
    v.add_argument("case")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="evaluate contingency scenarios")
    r.add_argument("--case", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--reliability")
    r.add_argument("--dynamics")
    r.add_argument("--order", type=int, choices=(1, 2), default=2)
    r.add_argument("--no-base", action="store_true")
    r.add_argument("--workers", type=int, default=None, help="default: $GRIDRISK_WORKERS or 1")
    r.add_argument("--tol-pf", type=float, default=1e-8)
    r.add_argument("--max-iter", type=int, default=20)
    r.add_argument("--eps-stab", type=float, default=1e-9)
    r.add_argument("--sequential-redispatch", action="store_true")
    r.add_argument("--warm-start", action="store_true", help="start each solve from the base case voltages")
    r.add_argument("--limit", type=int, default=None,
                   help="evaluate an evenly spaced sample of this many scenarios")
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("rank", help="compute the risk index ranking from a results file")
    k.add_argument("--results", required=True, help="results.jsonl or the run output directory")
    k.add_argument("--case", required=True)
    k.add_argument("--reliability")
    k.add_argument("--top", type=int, default=None)
    k.add_argument("--unordered-pairs", action="store_true")
    k.add_argument("--allow-partial", action="store_true", help="rank a sampled run")
    k.add_argument("--out", help="report directory (default: next to the results)")
    k.set_defaults(func=cmd_rank)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        _err("--workers must be >= 1")
        return EXIT_INVALID
    try:
        return args.func(args)
    except caseio.CaseValidationError as exc:
        _err("validation failed:")
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return EXIT_INVALID
    except (caseio.CaseParseError, GridError, RiskInputError, ResumeError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    except OSError as exc:
        _err(f"I/O error: {exc}")
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal error")
        _err(f"internal error: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
