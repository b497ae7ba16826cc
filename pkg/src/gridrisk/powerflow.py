"""Post-contingency feasibility: redispatch, AC power flow and limit checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import (PQ, ComponentRef, Generator, GridCase, active_branches, branch_admittances,
                   build_ybus, outaged_generator_ids)
from .topology import IslandPartition, find_islands, live_units, slack_source_lost

TOL_PF = 1e-8
MAX_ITER = 20


class PowerFlowPreconditionError(ValueError):
    """The requested slack bus is not part of the island being solved."""


class ContractError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dispatch:
    gen_p: dict
    gen_v: dict
    feasible: bool = True
    shortfall: float = 0.0


def _spread(gen_p: dict, p_max: dict, lost: float) -> float:
    """Add ``lost`` MW to ``gen_p`` in proportion to headroom; return the shortfall."""
    if lost <= 0:
        return 0.0
    headroom = {g: max(p_max[g] - p, 0.0) for g, p in gen_p.items()}
    total = sum(headroom.values())
    if total + 1e-9 < lost:
        for g in gen_p:
            gen_p[g] = p_max[g]
        return lost - total
    for g, h in headroom.items():
        if h > 0:
            gen_p[g] = min(gen_p[g] + lost * h / total, p_max[g])
    return 0.0


def redispatch(case: GridCase, outaged: Iterable[ComponentRef] = (), *,
               sequential: bool = False) -> Dispatch:
    """Cover the output of outaged generators from the remaining units.

    Lost MW goes to in-service generators in proportion to their headroom
    ``p_max - p_set``.  With ``sequential`` each generator outage is
    redistributed in turn, so the order of ``outaged`` matters.
    """
    outaged = list(outaged)
    units = {g.id: g for g in case.generators if g.in_service}
    gen_p = {g.id: g.p_set for g in units.values()}
    p_max = {g.id: g.p_max for g in units.values()}
    dead = [gid for gid in _ordered_gen_ids(case, outaged) if gid in gen_p]
    shortfall = 0.0
    if sequential:
        for gid in dead:
            lost = gen_p.pop(gid)
            shortfall += _spread(gen_p, p_max, lost)
    else:
        lost = sum(gen_p.pop(gid) for gid in dead)
        shortfall = _spread(gen_p, p_max, lost)
    gen_v = {gid: case.buses[units[gid].bus].voltage_setpoint for gid in gen_p}
    return Dispatch(gen_p, gen_v, feasible=shortfall == 0.0, shortfall=shortfall)


def _ordered_gen_ids(case, outaged):
    ids = []
    for ref in outaged:
        obj = case.resolve(ref)
        if isinstance(obj, Generator):
            ids.append(obj.id)
    return ids


@dataclass(frozen=True)
class PowerFlowSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    branch_flow: np.ndarray  # complex MVA, columns (from end, to end)
    slack_p: float
    converged: bool
    iterations: int
    max_mismatch: float
    reason: str = ""
    island: tuple = ()
    slack_bus: int = -1
    pv_buses: tuple = ()
    pq_buses: tuple = ()
    q_fixed: dict = field(default_factory=dict)  # PV buses switched to PQ: bus -> MVAr generated
    s_spec: np.ndarray | None = None  # specified net injections (pu) on island buses
    switch_events: int = 0

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


@dataclass(frozen=True)
class ViolationReport:
    thermal: list
    voltage: list

    @property
    def any(self) -> bool:
        return bool(self.thermal or self.voltage)


def choose_slack(case: GridCase, outages: Sequence[ComponentRef],
                 partition: IslandPartition) -> int | None:
    """The slack bus to solve ``partition.main_island`` with.

    Keeps the case slack when it still has its source and sits in the main
    island; otherwise the unit with the largest ``p_max`` in the island.
    """
    labels = partition.labels
    slack = case.slack_bus
    if labels[slack] == partition.main_island and not slack_source_lost(case, outages):
        return slack
    gens, ext = live_units(case, outages)
    cands = [g for g in (*ext, *gens) if labels[g.bus] == partition.main_island]
    if not cands:
        return None
    best = max(cands, key=lambda g: g.p_max)  # first wins ties: external grids, then by id
    return best.bus


def _jacobian(y, v, pvpq, pq):
    ibus = y @ v
    vnorm = v / np.abs(v)
    dv = np.diag(v)
    ds_dvm = dv @ np.conj(y * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    ds_dva = 1j * dv @ np.conj(np.diag(ibus) - y * v[None, :])
    return np.block([
        [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
        [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
    ])


def _mismatch(y, v, s_spec, pvpq, pq):
    mis = v * np.conj(y @ v) - s_spec
    return np.concatenate([mis[pvpq].real, mis[pq].imag])


def _newton(y, v, s_spec, pvpq, pq, tol, max_iter):
    """Polar Newton-Raphson.  Returns (v, converged, iterations, max_mismatch, reason)."""
    va, vm = np.angle(v), np.abs(v)
    npvpq = len(pvpq)
    f = _mismatch(y, v, s_spec, pvpq, pq)
    norm = np.max(np.abs(f)) if f.size else 0.0
    it = 0
    while norm >= tol:
        if it >= max_iter:
            return v, False, it, norm, "max_iter"
        jac = _jacobian(y, v, pvpq, pq)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            return v, False, it, norm, "singular"
        it += 1
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = _mismatch(y, v, s_spec, pvpq, pq)
        norm = np.max(np.abs(f))
        if not np.isfinite(norm) or np.any(vm[pq] <= 0):
            return v, False, it, norm, "diverged"
    return v, True, it, norm, ""


def solve_power_flow(case: GridCase, outages: Sequence[ComponentRef] = (),
                     dispatch: Dispatch | None = None, *, v0: np.ndarray | None = None,
                     tol: float = TOL_PF, max_iter: int = MAX_ITER, enforce_q_limits: bool = True,
                     partition: IslandPartition | None = None,
                     slack: int | None = None) -> PowerFlowSolution:
    """AC power flow of the main island after ``outages``.

    ``v0`` (complex, one entry per bus) warm-starts the solve; the default is
    a flat start with generator setpoints.  Generators that hit a reactive
    limit are switched from PV to PQ and the solve is repeated, at most
    ``2 * n_generators`` times.
    """
    outages = list(outages)
    if dispatch is None:
        dispatch = redispatch(case, outages)
    if partition is None:
        partition = find_islands(case, outages)
    island = np.array(partition.members(partition.main_island), dtype=int)
    island_list = [int(b) for b in island]
    if slack is None:
        slack = choose_slack(case, outages, partition)
    elif partition.labels[slack] != partition.main_island:
        raise PowerFlowPreconditionError(
            f"slack bus {slack} is outside the solved island; re-anchor the slack "
            "(choose_slack) before solving")
    n = case.n_bus
    nan = np.full(n, np.nan)
    if slack is None:
        return PowerFlowSolution(nan, nan.copy(), np.zeros((len(case.branches), 2), complex),
                                 np.nan, False, 0, np.inf, "no_source", tuple(island.tolist()))

    local = {bus: k for k, bus in enumerate(island_list)}
    ybus = build_ybus(case, outages).matrix[island][:, island].toarray()
    base = case.base_mva

    gens, ext = live_units(case, outages)
    gen_p = np.zeros(n)
    for gid, p in dispatch.gen_p.items():
        gen_p[_gen_by_id(case, gid).bus] += p
    regulated: dict[int, list[Generator]] = {}
    for g in gens:
        if g.id in dispatch.gen_p:
            regulated.setdefault(g.bus, []).append(g)
    for g in ext:
        regulated.setdefault(g.bus, []).append(g)
    load = np.array([b.load_p + 1j * b.load_q for b in case.buses])

    pv = [b for b in island_list if b != slack and b in regulated and case.buses[b].kind != PQ]
    q_fixed: dict[int, float] = {}

    vm = np.ones(len(island))
    va = np.zeros(len(island))
    for b in [*pv, slack]:
        vm[local[b]] = case.buses[b].voltage_setpoint
    if v0 is not None:
        v_init = np.asarray(v0)[island]
        va = np.angle(v_init)
        free = [k for k, b in enumerate(island_list) if b != slack and b not in pv]
        vm[free] = np.abs(v_init[free])
    v = vm * np.exp(1j * va)

    limit_q = {b: (sum(g.q_min for g in units), sum(g.q_max for g in units))
               for b, units in regulated.items()}
    max_switch = 2 * max(len(case.generators), 1)
    events = 0
    total_it = 0
    while True:
        s_spec = (gen_p[island] - load[island].real) / base + 0j
        for k, b in enumerate(island_list):
            if b not in pv and b != slack:
                s_spec[k] += 1j * (q_fixed.get(b, 0.0) - load[b].imag) / base
        pv_l = [local[b] for b in pv]
        pq_l = [k for k, b in enumerate(island_list) if b != slack and b not in pv]
        pvpq = np.array(pv_l + pq_l, dtype=int)
        pq_a = np.array(pq_l, dtype=int)
        v, ok, it, norm, reason = _newton(ybus, v, s_spec, np.sort(pvpq), pq_a, tol, max_iter)
        total_it += it
        if not ok or not enforce_q_limits:
            break
        s_calc = v * np.conj(ybus @ v)
        q_gen = {b: s_calc[local[b]].imag * base + load[b].imag for b in pv}
        over = [b for b in pv if q_gen[b] > limit_q[b][1] + 1e-9]
        under = [b for b in pv if q_gen[b] < limit_q[b][0] - 1e-9]
        if not over and not under:
            break
        events += len(over) + len(under)
        if events > max_switch:
            ok, reason = False, "q_limit_cycling"
            break
        for b in over:
            q_fixed[b] = limit_q[b][1]
        for b in under:
            q_fixed[b] = limit_q[b][0]
        pv = [b for b in pv if b not in q_fixed]

    v_mag, v_ang = nan.copy(), nan.copy()
    v_mag[island], v_ang[island] = np.abs(v), np.angle(v)
    flows = branch_flows(case, outages, v_mag, v_ang)
    s_slack = (v * np.conj(ybus @ v))[local[slack]] * base + load[slack]
    pq_final = tuple(int(b) for b in island if b != slack and b not in pv)
    return PowerFlowSolution(
        v_mag, v_ang, flows, float(s_slack.real), bool(ok), total_it, float(norm), reason,
        tuple(int(b) for b in island), int(slack), tuple(int(b) for b in pv), pq_final,
        q_fixed, s_spec, events)


def _gen_by_id(case, gid):
    for g in case.generators:
        if g.id == gid:
            return g
    raise KeyError(gid)


def branch_flows(case: GridCase, outages, v_mag, v_ang) -> np.ndarray:
    """Complex power (MVA) entering each branch at its from and to ends."""
    flows = np.zeros((len(case.branches), 2), dtype=complex)
    live = [br for br in active_branches(case, outages)]
    if not live:
        return flows
    v = np.nan_to_num(v_mag) * np.exp(1j * np.nan_to_num(v_ang))
    yff, yft, ytf, ytt = branch_admittances(live)
    f = np.array([br.from_bus for br in live])
    t = np.array([br.to_bus for br in live])
    sf = v[f] * np.conj(yff * v[f] + yft * v[t])
    st = v[t] * np.conj(ytf * v[f] + ytt * v[t])
    pos = [case.branch_position(br.id) for br in live]
    flows[pos, 0] = sf * case.base_mva
    flows[pos, 1] = st * case.base_mva
    return flows


def check_limits(solution: PowerFlowSolution, case: GridCase) -> ViolationReport:
    """Thermal (per branch, worst end) and voltage-bound violations."""
    if not solution.converged:
        raise ContractError("check_limits needs a converged power flow solution")
    thermal = []
    mags = np.abs(np.asarray(solution.branch_flow))
    for k, br in enumerate(case.branches):
        worst = mags[k].max()
        if worst > br.rating:
            thermal.append((br.id, float(worst / br.rating)))
    thermal.sort()
    voltage = []
    for b in case.buses:
        vm = solution.v_mag[b.id]
        if np.isnan(vm):
            continue
        if vm < b.vmin:
            voltage.append((b.id, float(vm), b.vmin))
        elif vm > b.vmax:
            voltage.append((b.id, float(vm), b.vmax))
    return ViolationReport(thermal, voltage)


