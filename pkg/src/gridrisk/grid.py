"""Immutable network data model and bus admittance matrix construction.

Bus loads, generator powers and ratings are kept in MW / MVAr / MVA as they
appear in case files; impedances are per unit on ``GridCase.base_mva``.  The
solvers convert to per unit on the way in.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp

SLACK, PV, PQ = "Slack", "PV", "PQ"
BUS_KINDS = (SLACK, PV, PQ)

LINE, TRANSFORMER, GENERATOR = "line", "transformer", "generator"
COMPONENT_CLASSES = (LINE, TRANSFORMER, GENERATOR)


class GridError(ValueError):
    """Invalid network data or an invalid reference into a network."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    voltage_setpoint: float = 1.0
    load_p: float = 0.0
    load_q: float = 0.0
    vmin: float = 0.9
    vmax: float = 1.1
    # fixed shunt, MW / MVAr consumed at 1 pu voltage
    gs: float = 0.0
    bs: float = 0.0
    external_id: int | None = None


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    kind: str
    r: float
    x: float
    b_shunt: float = 0.0
    tap_ratio: float = 1.0
    rating: float = float("inf")
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_set: float
    p_min: float = 0.0
    p_max: float = 0.0
    q_min: float = -float("inf")
    q_max: float = float("inf")
    mva_base: float = 100.0
    inertia_h: float = 4.0
    damping_d: float = 2.0
    xd_transient: float = 0.3
    in_service: bool = True


@dataclass(frozen=True, order=True)
class ComponentRef:
    """Reference to an outageable element: the ``index``-th line, transformer or generator."""

    kind: str
    index: int

    def __str__(self) -> str:
        return f"{self.kind}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "ComponentRef":
        kind, sep, idx = text.strip().partition(":")
        kind = kind.lower()
        if kind == "gen":
            kind = GENERATOR
        if not sep or kind not in COMPONENT_CLASSES or not idx.strip().isdigit():
            raise GridError(f"malformed component reference {text!r}")
        return cls(kind, int(idx))


@dataclass(frozen=True)
class GridCase:
    """A power network.

    ``external_grids`` are slack-bus sources (MATPOWER generators sitting on
    the reference bus).  They take part in power flow and in the dynamic model
    but are not outageable components.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_mva: float = 100.0
    frequency: float = 60.0
    external_grids: tuple[Generator, ...] = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        for attr in ("buses", "branches", "generators", "external_grids"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def lines(self) -> tuple[Branch, ...]:
        return tuple(sorted((b for b in self.branches if b.kind == LINE), key=lambda b: b.id))

    @cached_property
    def transformers(self) -> tuple[Branch, ...]:
        return tuple(sorted((b for b in self.branches if b.kind == TRANSFORMER), key=lambda b: b.id))

    @cached_property
    def sorted_generators(self) -> tuple[Generator, ...]:
        return tuple(sorted(self.generators, key=lambda g: g.id))

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_transformers(self) -> int:
        return len(self.transformers)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    @cached_property
    def slack_bus(self) -> int:
        slack = [b.id for b in self.buses if b.kind == SLACK]
        if len(slack) != 1:
            raise GridError(f"expected exactly one slack bus, found {len(slack)}")
        return slack[0]

    @cached_property
    def _branch_pos(self) -> dict[int, int]:
        return {br.id: k for k, br in enumerate(self.branches)}

    def branch_position(self, branch_id: int) -> int:
        return self._branch_pos[branch_id]

    def resolve(self, ref: ComponentRef) -> Branch | Generator:
        pool = {LINE: self.lines, TRANSFORMER: self.transformers,
                GENERATOR: self.sorted_generators}.get(ref.kind)
        if pool is None or not 0 <= ref.index < len(pool):
            raise GridError(f"unknown component {ref}")
        return pool[ref.index]

    def validate(self) -> list[str]:
        """Return every invariant breach as a message (empty when valid)."""
        errors = []
        ids = [b.id for b in self.buses]
        if sorted(ids) != list(range(len(ids))):
            errors.append("bus ids must be unique and dense 0..n_bus-1")
        slack = [b for b in self.buses if b.kind == SLACK]
        if not slack:
            errors.append("no slack bus")
        elif len(slack) > 1:
            errors.append("multiple slack buses: " + ", ".join(_bus_label(b) for b in slack))
        for b in self.buses:
            if b.kind not in BUS_KINDS:
                errors.append(f"bus {b.id}: unknown kind {b.kind!r}")
            if not 0 < b.vmin < b.vmax:
                errors.append(f"bus {b.id}: require 0 < vmin < vmax")
        busset = set(ids)
        seen = set()
        for br in self.branches:
            if br.id in seen:
                errors.append(f"branch {br.id}: duplicate id")
            seen.add(br.id)
            if br.kind not in (LINE, TRANSFORMER):
                errors.append(f"branch {br.id}: unknown kind {br.kind!r}")
            if br.from_bus not in busset or br.to_bus not in busset:
                errors.append(f"branch {br.id}: endpoint references a missing bus")
            if br.from_bus == br.to_bus:
                errors.append(f"branch {br.id}: from_bus equals to_bus")
            if br.x == 0:
                errors.append(f"branch {br.id}: x must be nonzero")
            if not br.rating > 0:
                errors.append(f"branch {br.id}: rating must be positive")
            if not br.tap_ratio > 0:
                errors.append(f"branch {br.id}: tap_ratio must be positive")
        for label, units in (("generator", self.generators), ("external grid", self.external_grids)):
            seen = set()
            for g in units:
                if g.id in seen:
                    errors.append(f"{label} {g.id}: duplicate id")
                seen.add(g.id)
                if g.bus not in busset:
                    errors.append(f"{label} {g.id}: bus {g.bus} does not exist")
                if not g.p_min <= g.p_set <= g.p_max:
                    errors.append(f"{label} {g.id}: require p_min <= p_set <= p_max")
                for attr in ("mva_base", "inertia_h", "xd_transient"):
                    if not getattr(g, attr) > 0:
                        errors.append(f"{label} {g.id}: {attr} must be positive")
                if g.damping_d < 0:
                    errors.append(f"{label} {g.id}: damping_d must be non-negative")
        if not self.base_mva > 0:
            errors.append("base_mva must be positive")
        return errors


def _bus_label(b: Bus) -> str:
    if b.external_id is not None and b.external_id != b.id:
        return f"{b.id} (external {b.external_id})"
    return str(b.id)


def component_universe(case: GridCase) -> list[ComponentRef]:
    """Lines, then transformers, then generators, each in id order."""
    return ([ComponentRef(LINE, k) for k in range(case.n_lines)]
            + [ComponentRef(TRANSFORMER, k) for k in range(case.n_transformers)]
            + [ComponentRef(GENERATOR, k) for k in range(case.n_generators)])


def outaged_branch_ids(case: GridCase, outages: Iterable[ComponentRef]) -> frozenset[int]:
    out = set()
    for ref in outages:
        obj = case.resolve(ref)
        if isinstance(obj, Branch):
            out.add(obj.id)
    return frozenset(out)


def outaged_generator_ids(case: GridCase, outages: Iterable[ComponentRef]) -> frozenset[int]:
    out = set()
    for ref in outages:
        obj = case.resolve(ref)
        if isinstance(obj, Generator):
            out.add(obj.id)
    return frozenset(out)


def active_branches(case: GridCase, outages: Iterable[ComponentRef] = ()) -> list[Branch]:
    dead = outaged_branch_ids(case, outages)
    return [br for br in case.branches if br.in_service and br.id not in dead]


@dataclass(frozen=True)
class AdmittanceMatrix:
    matrix: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __getitem__(self, ij):
        return self.matrix[ij]


def branch_admittances(branches: list[Branch]):
    """Two-port admittance terms (yff, yft, ytf, ytt) for each branch.

    Ideal tap on the from side: yff = (ys + jb/2)/t^2, yft = ytf = -ys/t,
    ytt = ys + jb/2.
    """
    r = np.array([br.r for br in branches], dtype=float)
    x = np.array([br.x for br in branches], dtype=float)
    b = np.array([br.b_shunt for br in branches], dtype=float)
    t = np.array([br.tap_ratio for br in branches], dtype=float)
    ys = 1.0 / (r + 1j * x)
    ytt = ys + 0.5j * b
    yff = ytt / (t * t)
    yft = -ys / t
    return yff, yft, yft.copy(), ytt


def bus_shunts(case: GridCase) -> np.ndarray:
    return np.array([b.gs + 1j * b.bs for b in case.buses], dtype=complex) / case.base_mva


def build_ybus(case: GridCase, outages: Iterable[ComponentRef] = ()) -> AdmittanceMatrix:
    branches = active_branches(case, outages)
    n = case.n_bus
    f = np.array([br.from_bus for br in branches], dtype=int)
    t = np.array([br.to_bus for br in branches], dtype=int)
    yff, yft, ytf, ytt = branch_admittances(branches)
    rows = np.concatenate([f, f, t, t])
    cols = np.concatenate([f, t, f, t])
    vals = np.concatenate([yff, yft, ytf, ytt])
    y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex).tocsr()
    y = y + sp.diags(bus_shunts(case), format="csr") if n else y
    y.sum_duplicates()
    return AdmittanceMatrix(y.tocsr())
