"""Risk index aggregation and ranking reports.

For component i, ``R_i = F_i S_i + sum_{j != i} F_ij S_ij`` with
``F_i = lambda_i`` and ``F_ij = lambda_i * lambda_j``.  Every ordered pair
scenario (i, j) is a separate term, so a severe unordered pair {i, j}
contributes ``2 * lambda_i * lambda_j`` to both R_i and R_j.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .caseio import ReliabilityTable
from .engine import ScenarioResult, enumerate_scenarios, parse_scenario_id
from .grid import COMPONENT_CLASSES, ComponentRef, GridCase, component_universe


class RiskInputError(ValueError):
    """Results do not match the manifest or the case."""


def scenario_frequency(outages, table: ReliabilityTable) -> float:
    """Failures per year of an N-1 or N-2 outage set (independent failures)."""
    outages = tuple(outages)
    if len(outages) == 1:
        return table.rate(outages[0])
    if len(outages) == 2:
        return table.rate(outages[0]) * table.rate(outages[1])
    raise ValueError("scenario frequency is defined for one or two outages only")


@dataclass(frozen=True)
class RiskEntry:
    component: ComponentRef
    lam: float
    n1_contribution: float
    n2_contribution: float

    @property
    def r_total(self) -> float:
        return self.n1_contribution + self.n2_contribution

    @property
    def kind(self) -> str:
        return self.component.kind


@dataclass(frozen=True)
class RiskRanking:
    entries: tuple[RiskEntry, ...]

    def by_class(self, kind: str) -> tuple[RiskEntry, ...]:
        return tuple(e for e in self.entries if e.kind == kind)

    def top(self, k: int | None) -> tuple[RiskEntry, ...]:
        return self.entries if k is None else self.entries[:k]

    def __getitem__(self, ref: ComponentRef) -> RiskEntry:
        for e in self.entries:
            if e.component == ref:
                return e
        raise KeyError(ref)


def compute_risk(results: Iterable[ScenarioResult | dict], table: ReliabilityTable, case: GridCase, *,
                 unordered_pairs: bool = False, manifest: dict | None = None,
                 allow_partial: bool = False) -> RiskRanking:
    """Accumulate frequency x severity over every scenario containing each component.

    With ``manifest`` the results must cover exactly the manifest's scenario
    set unless ``allow_partial``; missing scenarios then count as not severe.
    ``unordered_pairs`` counts each unordered pair once (halving N-2 terms).
    """
    universe = component_universe(case)
    n1 = {c: 0.0 for c in universe}
    n2 = {c: 0.0 for c in universe}
    pair_weight = 0.5 if unordered_pairs else 1.0
    seen = set()
    count = 0
    for res in results:
        rec = res.to_record() if isinstance(res, ScenarioResult) else res
        sid = rec["id"]
        if sid in seen:
            raise RiskInputError(f"duplicate scenario {sid}")
        seen.add(sid)
        count += 1
        try:
            outages = parse_scenario_id(sid)
            for ref in outages:
                case.resolve(ref)
        except ValueError as exc:
            raise RiskInputError(f"scenario {sid}: {exc}") from None
        if rec["severity"] not in (0, 1):
            raise RiskInputError(f"scenario {sid}: severity must be 0 or 1")
        if not rec["severity"] or not outages:
            continue
        f = scenario_frequency(outages, table)
        if len(outages) == 1:
            n1[outages[0]] += f
        else:
            for ref in outages:
                n2[ref] += pair_weight * f
    if manifest is not None:
        _check_coverage(manifest, case, seen, count, allow_partial)
    entries = [RiskEntry(c, table.rate(c), n1[c], n2[c]) for c in universe]
    return RiskRanking(_rank(entries, universe))


def _check_coverage(manifest, case, seen, count, allow_partial):
    cfg = manifest.get("config", {})
    totals = manifest.get("totals", {})
    n_comp = len(component_universe(case))
    comps = manifest.get("components")
    if comps and comps != {"line": case.n_lines, "transformer": case.n_transformers,
                           "generator": case.n_generators}:
        raise RiskInputError(f"manifest component counts {comps} do not match the case")
    if manifest.get("evaluated") is not None and manifest["evaluated"] != count:
        raise RiskInputError(f"manifest lists {manifest['evaluated']} evaluated scenarios, "
                             f"results file has {count}")
    if allow_partial:
        return
    expected = {s.id for s in enumerate_scenarios(case, cfg.get("max_order", 2), cfg.get("include_base", True))}
    if totals.get("total") is not None and totals["total"] != len(expected):
        raise RiskInputError(f"manifest total {totals['total']} does not match {len(expected)} "
                             f"scenarios for {n_comp} components")
    missing = expected - seen
    extra = seen - expected
    if missing or extra:
        raise RiskInputError(f"results cover {len(seen & expected)} of {len(expected)} scenarios "
                             f"({len(missing)} missing, {len(extra)} unexpected); "
                             "use allow_partial for sampled runs")


def _rank(entries, universe):
    pos = {c: k for k, c in enumerate(universe)}
    return tuple(sorted(entries, key=lambda e: (-e.r_total, pos[e.component])))


def risk_upper_bound(ref: ComponentRef, table: ReliabilityTable, case: GridCase,
                     max_order: int = 2, unordered_pairs: bool = False) -> float:
    """R_i when every scenario containing ``ref`` is severe."""
    lam = table.rate(ref)
    if max_order == 1:
        return lam
    others = sum(table.rate(c) for c in component_universe(case) if c != ref)
    return lam + (1.0 if unordered_pairs else 2.0) * lam * others


# ------------------------------------------------------------------ reports

RANKING_HEADER = ["rank", "component", "class", "lambda_per_year", "n1_risk", "n2_risk", "total_risk"]


def _rows(entries):
    for k, e in enumerate(entries, start=1):
        yield [k, str(e.component), e.kind, repr(e.lam), repr(e.n1_contribution),
               repr(e.n2_contribution), repr(e.r_total)]


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_reports(ranking: RiskRanking, out_dir, *, top_k: int | None = None,
                 formats=("csv", "json", "plot")) -> list[Path]:
    """Write ranking.csv, ranking_<class>.csv, ranking.json and plotdata.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    top = ranking.top(top_k)
    if "csv" in formats:
        _write_csv(out / "ranking.csv", RANKING_HEADER, _rows(top))
        written.append(out / "ranking.csv")
        for kind in COMPONENT_CLASSES:
            path = out / f"ranking_{kind}.csv"
            sub = ranking.by_class(kind)
            _write_csv(path, RANKING_HEADER, _rows(sub if top_k is None else sub[:top_k]))
            written.append(path)
    if "json" in formats:
        doc = {
            "units": "failure-events/year",
            "combined": [_entry_json(k, e) for k, e in enumerate(top, start=1)],
            "by_class": {kind: [_entry_json(k, e) for k, e in enumerate(ranking.by_class(kind), start=1)]
                         for kind in COMPONENT_CLASSES},
        }
        (out / "ranking.json").write_text(json.dumps(doc, indent=2) + "\n")
        written.append(out / "ranking.json")
    if "plot" in formats:
        _write_csv(out / "plotdata.csv", ["label", "class", "n1", "n2"],
                   ([_label(e.component), e.kind, repr(e.n1_contribution), repr(e.n2_contribution)]
                    for e in top))
        written.append(out / "plotdata.csv")
    return written


def _label(ref: ComponentRef) -> str:
    return f"{ref.kind.capitalize()} {ref.index}"


def _entry_json(rank, e: RiskEntry) -> dict:
    return {"rank": rank, "component": str(e.component), "class": e.kind, "lambda_per_year": e.lam,
            "n1_risk": e.n1_contribution, "n2_risk": e.n2_contribution, "total_risk": e.r_total}


def format_table(entries) -> str:
    lines = [f"{'rank':>4}  {'component':<16} {'lambda':>8} {'N-1':>10} {'N-2':>10} {'R':>10}"]
    for k, e in enumerate(entries, start=1):
        lines.append(f"{k:>4}  {str(e.component):<16} {e.lam:>8.4f} {e.n1_contribution:>10.6f} "
                     f"{e.n2_contribution:>10.6f} {e.r_total:>10.6f}")
    return "\n".join(lines)
