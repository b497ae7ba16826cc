"""Case and parameter file readers/writers.

Native cases are JSON documents (see ``data/case.schema.json``).  MATPOWER
``.m`` files are supported for the version-2 subset: ``baseMVA``, ``bus``,
``gen`` and ``branch``.  Reliability and dynamics parameters come from small
CSV files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
import warnings
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

from .grid import (COMPONENT_CLASSES, GENERATOR, LINE, PQ, PV, SLACK, TRANSFORMER,
                   Branch, Bus, ComponentRef, Generator, GridCase, GridError)

FORMAT_NAME = "gridrisk-case"
FORMAT_VERSION = 1

# Failure rates per year when the reliability file says nothing about a class.
DEFAULT_FAILURE_RATES = {LINE: 0.05, TRANSFORMER: 0.02, GENERATOR: 0.10}

HOURS_PER_YEAR = 8760.0


class CaseParseError(ValueError):
    """Malformed input; ``context`` names the offending line, row or field."""

    def __init__(self, message: str, context: str | None = None):
        self.context = context
        super().__init__(f"{context}: {message}" if context else message)


class CaseValidationError(ValueError):
    """Well-formed input describing an invalid network or parameter set."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class CaseDocument:
    grid: GridCase
    name: str = ""
    source: str = ""
    checksum: str = ""


# ---------------------------------------------------------------- native JSON

_BUS_FIELDS = {"id": int, "kind": str, "voltage_setpoint": float, "load_p": float,
               "load_q": float, "vmin": float, "vmax": float, "gs": float, "bs": float,
               "external_id": int}
_BRANCH_FIELDS = {"id": int, "from_bus": int, "to_bus": int, "kind": str, "r": float,
                  "x": float, "b_shunt": float, "tap_ratio": float, "rating": float,
                  "in_service": bool}
_GEN_FIELDS = {"id": int, "bus": int, "p_set": float, "p_min": float, "p_max": float,
               "q_min": float, "q_max": float, "mva_base": float, "inertia_h": float,
               "damping_d": float, "xd_transient": float, "in_service": bool}
_REQUIRED = {
    "buses": ("id", "kind"),
    "branches": ("id", "from_bus", "to_bus", "kind", "r", "x"),
    "generators": ("id", "bus", "p_set", "p_min", "p_max"),
    "external_grids": ("id", "bus"),
}
# JSON has no infinity; null stands for an unbounded limit
_NULL_MEANS_INF = {"rating": math.inf, "q_min": -math.inf, "q_max": math.inf}


def _coerce(value, typ, where):
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise CaseParseError(f"expected boolean, got {value!r}", where)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise CaseParseError(f"expected integer, got {value!r}", where)
        return int(value)
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise CaseParseError(f"expected finite number, got {value!r}", where)
        return float(value)
    if not isinstance(value, str):
        raise CaseParseError(f"expected string, got {value!r}", where)
    return value


def _records(doc, key, spec, cls):
    rows = doc.get(key, [])
    if not isinstance(rows, list):
        raise CaseParseError("expected a list", key)
    out = []
    for k, row in enumerate(rows):
        where = f"{key}[{k}]"
        if not isinstance(row, dict):
            raise CaseParseError("expected an object", where)
        unknown = set(row) - set(spec)
        if unknown:
            raise CaseParseError(f"unknown field(s) {sorted(unknown)}", where)
        for req in _REQUIRED[key]:
            if req not in row:
                raise CaseParseError("missing required field", f"{where}.{req}")
        kwargs = {}
        for name, value in row.items():
            if value is None and name in _NULL_MEANS_INF:
                kwargs[name] = _NULL_MEANS_INF[name]
            elif value is None and name == "external_id":
                kwargs[name] = None
            else:
                kwargs[name] = _coerce(value, spec[name], f"{where}.{name}")
        out.append(cls(**kwargs))
    return out


def parse_native_case(text: str | bytes, *, source: str = "") -> CaseDocument:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CaseParseError(f"not UTF-8 ({exc.reason})", f"byte {exc.start}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    except RecursionError:
        raise CaseParseError("document nested too deeply") from None
    if not isinstance(doc, dict):
        raise CaseParseError("top level must be a JSON object")
    if doc.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise CaseParseError(f"unsupported format {doc.get('format')!r}", "format")
    if doc.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise CaseParseError(f"unsupported version {doc.get('version')!r}", "version")
    known = {"format", "version", "name", "source", "base_mva", "frequency",
             "buses", "branches", "generators", "external_grids"}
    unknown = set(doc) - known
    if unknown:
        raise CaseParseError(f"unknown field(s) {sorted(unknown)}")
    for key in ("buses", "branches", "generators"):
        if key not in doc:
            raise CaseParseError("missing required field", key)
    name = doc.get("name", "")
    src = doc.get("source", source)
    if not isinstance(name, str) or not isinstance(src, str):
        raise CaseParseError("name and source must be strings")
    for key in ("base_mva", "frequency"):
        if key in doc:
            _coerce(doc[key], float, key)
    grid = GridCase(
        buses=_records(doc, "buses", _BUS_FIELDS, Bus),
        branches=_records(doc, "branches", _BRANCH_FIELDS, Branch),
        generators=_records(doc, "generators", _GEN_FIELDS, Generator),
        external_grids=_records(doc, "external_grids", _GEN_FIELDS, Generator),
        base_mva=float(doc.get("base_mva", 100.0)),
        frequency=float(doc.get("frequency", 60.0)),
        name=name,
    )
    errors = grid.validate()
    if errors:
        raise CaseValidationError(errors)
    return CaseDocument(grid, name=name, source=src, checksum=case_checksum(grid))


def _jsonable(obj) -> dict:
    d = asdict(obj)
    for k, v in d.items():
        if isinstance(v, float) and math.isinf(v):
            d[k] = None
    return d


def case_to_dict(grid: GridCase, *, name: str | None = None, source: str = "") -> dict:
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
           "name": grid.name if name is None else name}
    if source:
        doc["source"] = source
    doc.update({
        "base_mva": grid.base_mva,
        "frequency": grid.frequency,
        "buses": [_jsonable(b) for b in grid.buses],
        "branches": [_jsonable(b) for b in grid.branches],
        "generators": [_jsonable(g) for g in grid.generators],
        "external_grids": [_jsonable(g) for g in grid.external_grids],
    })
    return doc


def serialize_native_case(grid: GridCase, *, name: str | None = None, source: str = "") -> str:
    doc = case_to_dict(grid, name=name, source=source)
    parts = ["{"]
    items = list(doc.items())
    for k, (key, value) in enumerate(items):
        sep = "," if k < len(items) - 1 else ""
        if isinstance(value, list):
            rows = ",\n".join("    " + json.dumps(v) for v in value)
            body = f"[\n{rows}\n  ]" if value else "[]"
            parts.append(f"  {json.dumps(key)}: {body}{sep}")
        else:
            parts.append(f"  {json.dumps(key)}: {json.dumps(value)}{sep}")
    parts.append("}")
    return "\n".join(parts) + "\n"


def case_checksum(grid: GridCase) -> str:
    doc = case_to_dict(grid, name="")
    del doc["name"]
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ------------------------------------------------------------------ MATPOWER

_BLOCK_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([^\[\s;][^;\n]*);")
_ARITY = {"bus": 13, "gen": 10, "branch": 11}
_MP_BUS_KIND = {1: PQ, 2: PV, 3: SLACK}


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix(name: str, body: str) -> list[list[float]]:
    rows = []
    chunks = [c for c in re.split(r"[;\n]", body) if c.strip()]
    for k, chunk in enumerate(chunks, start=1):
        try:
            rows.append([float(tok) for tok in chunk.replace(",", " ").split()])
        except ValueError:
            raise CaseParseError(f"non-numeric entry in {chunk.strip()!r}", f"{name} row {k}") from None
        if not all(math.isfinite(v) for v in rows[-1]):
            raise CaseParseError("non-finite entry", f"{name} row {k}")
    return rows


def parse_matpower_case(text: str | bytes, *, source: str = "", name: str = "") -> CaseDocument:
    """Read the bus/gen/branch/baseMVA subset of a MATPOWER case.

    Bus numbers are compacted to 0..n-1 (the originals are kept as
    ``Bus.external_id``).  Generators on the reference bus become external
    grids.  A branch is a transformer when its tap column is nonzero or its
    end buses have different base voltages.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CaseParseError(f"not UTF-8 ({exc.reason})", f"byte {exc.start}") from None
    clean = _strip_comments(text)
    blocks = {m.group(1): m.group(2) for m in _BLOCK_RE.finditer(clean)}
    scalars = {m.group(1): m.group(2).strip() for m in _SCALAR_RE.finditer(clean)}
    for key in list(blocks) + list(scalars):
        if key not in ("bus", "gen", "branch", "baseMVA", "version"):
            warnings.warn(f"ignoring unsupported MATPOWER field mpc.{key}", stacklevel=2)
    if "baseMVA" not in scalars:
        raise CaseParseError("missing mpc.baseMVA")
    try:
        base_mva = float(scalars["baseMVA"])
    except ValueError:
        raise CaseParseError(f"bad value {scalars['baseMVA']!r}", "baseMVA") from None
    if not base_mva > 0:
        raise CaseParseError("must be positive", "baseMVA")
    mats = {}
    for key in ("bus", "gen", "branch"):
        if key not in blocks:
            raise CaseParseError(f"missing mpc.{key} block")
        mats[key] = _matrix(key, blocks[key])
        for k, row in enumerate(mats[key], start=1):
            if len(row) < _ARITY[key]:
                raise CaseParseError(f"expected at least {_ARITY[key]} columns, got {len(row)}",
                                     f"{key} row {k}")

    ext_to_int = {}
    base_kv = {}
    buses = []
    for k, row in enumerate(mats["bus"]):
        ext = int(row[0])
        if ext != row[0] or ext in ext_to_int:
            raise CaseParseError(f"bad or duplicate bus number {row[0]}", f"bus row {k + 1}")
        kind = _MP_BUS_KIND.get(int(row[1]))
        if kind is None:
            # isolated buses (type 4) are not modelled
            raise CaseParseError(f"unsupported bus type {row[1]}", f"bus row {k + 1}")
        ext_to_int[ext] = k
        base_kv[k] = row[9]
        buses.append(Bus(id=k, kind=kind, voltage_setpoint=row[7], load_p=row[2], load_q=row[3],
                         gs=row[4], bs=row[5], vmax=row[11], vmin=row[12], external_id=ext))

    def bus_index(value, where):
        try:
            return ext_to_int[int(value)]
        except KeyError:
            raise CaseParseError(f"unknown bus {value:g}", where) from None

    gens, ext_grids = [], []
    setpoints = {}
    for k, row in enumerate(mats["gen"]):
        bus = bus_index(row[0], f"gen row {k + 1}")
        p_max, p_min = row[8], row[9]
        on = row[7] > 0
        pool = ext_grids if buses[bus].kind == SLACK else gens
        # MATPOWER tolerates Pg outside [Pmin, Pmax] for reference units
        p_set = row[1] if pool is gens else min(max(row[1], p_min), p_max)
        pool.append(Generator(id=len(pool), bus=bus, p_set=p_set, p_min=p_min, p_max=p_max,
                              q_min=row[4], q_max=row[3], mva_base=row[6] or base_mva,
                              in_service=on))
        if on:
            setpoints.setdefault(bus, row[5])
    buses = [replace(b, voltage_setpoint=setpoints[b.id]) if b.id in setpoints and b.kind != PQ else b
             for b in buses]

    branches = []
    for k, row in enumerate(mats["branch"]):
        where = f"branch row {k + 1}"
        f, t = bus_index(row[0], where), bus_index(row[1], where)
        tap = row[8]
        if len(row) > 9 and row[9] != 0:
            warnings.warn(f"{where}: phase shift ignored", stacklevel=2)
        is_xfmr = tap != 0 or base_kv[f] != base_kv[t]
        branches.append(Branch(id=k, from_bus=f, to_bus=t, kind=TRANSFORMER if is_xfmr else LINE,
                               r=row[2], x=row[3], b_shunt=row[4], tap_ratio=tap if tap != 0 else 1.0,
                               rating=row[5] if row[5] > 0 else math.inf, in_service=row[10] > 0))

    grid = GridCase(buses=buses, branches=branches, generators=gens, base_mva=base_mva,
                    external_grids=ext_grids, name=name)
    errors = grid.validate()
    if errors:
        raise CaseValidationError(errors)
    return CaseDocument(grid, name=name, source=source, checksum=case_checksum(grid))


def load_case(path) -> CaseDocument:
    """Read a native (.json) or MATPOWER (.m) case file."""
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if path.endswith(".m"):
        return parse_matpower_case(data, source=path)
    return parse_native_case(data, source=path)


def bundled_case_path(name: str = "ieee118.json"):
    return resources.files("gridrisk") / "data" / name


def load_ieee118() -> CaseDocument:
    """The bundled IEEE 118-bus case (175 lines, 11 transformers, 53 generators)."""
    return parse_native_case(bundled_case_path().read_bytes(), source="ieee118.json")


# --------------------------------------------------------------- reliability

@dataclass(frozen=True)
class ReliabilityTable:
    class_defaults: dict = field(default_factory=lambda: dict(DEFAULT_FAILURE_RATES))
    overrides: dict = field(default_factory=dict)

    def rate(self, ref: ComponentRef) -> float:
        return self.overrides.get(ref, self.class_defaults[ref.kind])


def _csv_rows(text, header, label):
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    rows = [(n, [c.strip() for c in row]) for n, row in enumerate(reader, start=1)
            if row and any(c.strip() for c in row) and not row[0].lstrip().startswith("#")]
    if not rows:
        return []
    n, first = rows[0]
    if [c.lower() for c in first] == list(header):
        rows = rows[1:]
    for n, row in rows:
        if len(row) != len(header):
            raise CaseParseError(f"expected {len(header)} columns, got {len(row)}", f"{label} line {n}")
    return rows


def _to_lambda(kind: str, value: float, unit: str, where: str) -> float:
    unit = unit.lower().replace("-", "_").replace(" ", "_")
    if kind == "lambda":
        if unit in ("per_year", "1/year", "1/yr", "per_yr", "yr^-1", ""):
            return value
        if unit in ("per_hour", "1/hour", "1/h"):
            return value * HOURS_PER_YEAR
        raise CaseParseError(f"unknown failure-rate unit {unit!r}", where)
    if unit in ("years", "year", "yr", "y", ""):
        years = value
    elif unit in ("hours", "hour", "h"):
        years = value / HOURS_PER_YEAR
    else:
        raise CaseParseError(f"unknown MTTF unit {unit!r}", where)
    if not years > 0:
        raise CaseValidationError([f"{where}: MTTF must be positive"])
    return 1.0 / years


def load_reliability(text: str | bytes, case: GridCase) -> ReliabilityTable:
    """Failure rates from a ``kind,target,value,unit`` CSV.

    ``kind`` is ``lambda`` or ``mttf``; ``target`` is a class (``line``,
    ``transformer``, ``generator``) or an element (``line:39``).  Element rows
    override class rows; later rows override earlier ones.
    """
    defaults = dict(DEFAULT_FAILURE_RATES)
    overrides = {}
    errors = []
    rows = _csv_rows(text, ("kind", "target", "value", "unit"), "reliability")
    class_rows, elem_rows = [], []
    for n, (kind, target, value, unit) in rows:
        where = f"reliability line {n}"
        kind = kind.lower()
        if kind not in ("lambda", "mttf"):
            raise CaseParseError(f"kind must be lambda or mttf, got {kind!r}", where)
        try:
            val = float(value)
        except ValueError:
            raise CaseParseError(f"bad value {value!r}", where) from None
        if not val > 0 or not math.isfinite(val):
            errors.append(f"{where}: {kind} must be positive and finite")
            continue
        lam = _to_lambda(kind, val, unit, where)
        tgt = target.lower()
        if tgt in COMPONENT_CLASSES:
            class_rows.append((tgt, lam))
            continue
        try:
            ref = ComponentRef.parse(tgt)
            case.resolve(ref)
        except GridError as exc:
            errors.append(f"{where}: {exc}")
            continue
        elem_rows.append((ref, lam))
    if errors:
        raise CaseValidationError(errors)
    for tgt, lam in class_rows:
        defaults[tgt] = lam
    for ref, lam in elem_rows:
        overrides[ref] = lam
    return ReliabilityTable(defaults, overrides)


def load_dynamics(text: str | bytes, case: GridCase) -> GridCase:
    """Apply a ``generator_id,h_seconds,d_pu,xd_transient_pu`` CSV to ``case``."""
    by_id = {g.id: g for g in case.generators}
    errors = []
    for n, (gid, h, d, xd) in _csv_rows(text, ("generator_id", "h_seconds", "d_pu", "xd_transient_pu"),
                                        "dynamics"):
        where = f"dynamics line {n}"
        try:
            gid_i = int(gid)
            h_f, d_f, xd_f = float(h), float(d), float(xd)
        except ValueError:
            raise CaseParseError("non-numeric field", where) from None
        if gid_i not in by_id:
            errors.append(f"{where}: unknown generator {gid_i}")
            continue
        if not (h_f > 0 and xd_f > 0 and d_f >= 0):
            errors.append(f"{where}: require h > 0, xd_transient > 0, d >= 0")
            continue
        by_id[gid_i] = replace(by_id[gid_i], inertia_h=h_f, damping_d=d_f, xd_transient=xd_f)
    if errors:
        raise CaseValidationError(errors)
    return replace(case, generators=tuple(by_id[g.id] for g in case.generators))
