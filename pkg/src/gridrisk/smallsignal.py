"""Classical multimachine linearization and eigenvalue stability test.

Each machine is a constant voltage behind transient reactance with swing
dynamics.  Loads become constant admittances at the solved voltages, the
network is Kron-reduced to the machine internal nodes and the synchronizing
matrix K = dPe/d(delta) is evaluated at the operating point.  Angles are
taken relative to a reference machine, which removes the rigid-body mode;
the state vector is ``[delta_i - delta_ref (i != ref), omega_i (all i)]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import ComponentRef, Generator, GridCase, build_ybus
from .powerflow import ContractError, PowerFlowSolution, redispatch
from .topology import find_islands, live_units

EPS_STAB = 1e-9


class DegenerateModelError(Exception):
    """Fewer than two machines in the main island; no oscillatory model exists."""


class LinearizationError(ArithmeticError):
    pass


class EigenSolveError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Machine:
    label: str
    bus: int
    unit: Generator


@dataclass(frozen=True)
class DynamicParams:
    """Per-machine H (s), D (pu on machine base) and x'd (pu on machine base)."""

    inertia_h: dict
    damping_d: dict
    xd_transient: dict
    omega_s: float

    @classmethod
    def from_case(cls, case: GridCase) -> "DynamicParams":
        h, d, xd = {}, {}, {}
        for label, g in _all_units(case):
            h[label], d[label], xd[label] = g.inertia_h, g.damping_d, g.xd_transient
        return cls(h, d, xd, 2 * np.pi * case.frequency)


def _all_units(case):
    for g in case.external_grids:
        yield f"ext:{g.id}", g
    for g in case.generators:
        yield f"gen:{g.id}", g


@dataclass(frozen=True)
class StateMatrix:
    a: np.ndarray
    machines: tuple[str, ...]
    reference: str
    k_sync: np.ndarray
    inertia: np.ndarray  # M_i, pu*s^2/rad on system base
    damping: np.ndarray  # D_i, pu*s/rad on system base
    internal_emf: np.ndarray  # complex E'_i
    y_reduced: np.ndarray  # Kron-reduced admittance at the internal nodes

    @property
    def dimension(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray
    spectral_abscissa: float
    unstable: bool
    dominant_mode: complex


def electrical_power(emf: np.ndarray, y_red: np.ndarray) -> np.ndarray:
    """P_ei = sum_j E_i E_j (G_ij cos d_ij + B_ij sin d_ij)."""
    e, d = np.abs(emf), np.angle(emf)
    dij = d[:, None] - d[None, :]
    return (e[:, None] * e[None, :] * (y_red.real * np.cos(dij) + y_red.imag * np.sin(dij))).sum(axis=1)


def synchronizing_matrix(emf: np.ndarray, y_red: np.ndarray) -> np.ndarray:
    e, d = np.abs(emf), np.angle(emf)
    dij = d[:, None] - d[None, :]
    k = e[:, None] * e[None, :] * (y_red.real * np.sin(dij) - y_red.imag * np.cos(dij))
    np.fill_diagonal(k, 0.0)
    np.fill_diagonal(k, -k.sum(axis=1))
    return k


def state_matrix(k_sync: np.ndarray, inertia: np.ndarray, damping: np.ndarray, ref: int) -> np.ndarray:
    m = len(inertia)
    others = [i for i in range(m) if i != ref]
    a = np.zeros((2 * m - 1, 2 * m - 1))
    nd = m - 1
    for row, i in enumerate(others):
        a[row, nd + i] = 1.0
        a[row, nd + ref] = -1.0
    for i in range(m):
        a[nd + i, :nd] = -k_sync[i, others] / inertia[i]
        a[nd + i, nd + i] = -damping[i] / inertia[i]
    return a


def machines_in_island(case: GridCase, outages: Sequence[ComponentRef], island: set) -> list[Machine]:
    gens, ext = live_units(case, outages)
    out = [Machine(f"ext:{g.id}", g.bus, g) for g in ext if g.bus in island]
    out += [Machine(f"gen:{g.id}", g.bus, g) for g in sorted(gens, key=lambda g: g.id) if g.bus in island]
    return out


def linearize(case: GridCase, outages: Sequence[ComponentRef], solution: PowerFlowSolution,
              params: DynamicParams | None = None, dispatch=None) -> StateMatrix:
    if not solution.converged:
        raise ContractError("linearize needs a converged power flow solution")
    outages = list(outages)
    params = params or DynamicParams.from_case(case)
    dispatch = dispatch or redispatch(case, outages)
    island = list(solution.island)
    isl = set(island)
    machines = machines_in_island(case, outages, isl)
    machines = [mc for mc in machines if mc.label.startswith("ext") or mc.unit.id in dispatch.gen_p]
    if len(machines) < 2:
        raise DegenerateModelError(f"{len(machines)} machine(s) in the main island")

    base = case.base_mva
    local = {b: k for k, b in enumerate(island)}
    y_net = build_ybus(case, outages).matrix[island][:, island].toarray()
    v = solution.voltage[island]
    s_inj = v * np.conj(y_net @ v)  # pu
    load = np.array([case.buses[b].load_p + 1j * case.buses[b].load_q for b in island]) / base

    # machine complex outputs (pu)
    by_bus: dict[int, list[int]] = {}
    for k, mc in enumerate(machines):
        by_bus.setdefault(mc.bus, []).append(k)
    s_mach = np.zeros(len(machines), dtype=complex)
    for bus, idx in by_bus.items():
        s_bus = s_inj[local[bus]] + load[local[bus]]
        weights = np.array([machines[k].unit.mva_base for k in idx], dtype=float)
        weights /= weights.sum()
        if bus == solution.slack_bus:
            p = s_bus.real * weights
        else:
            p = np.array([dispatch.gen_p.get(machines[k].unit.id, 0.0) if not machines[k].label.startswith("ext")
                          else 0.0 for k in idx]) / base
            # any residual (PQ-kind generator buses, numerical slop) is shared by weight
            p = p + (s_bus.real - p.sum()) * weights
        s_mach[idx] = p + 1j * s_bus.imag * weights

    # everything at a bus that is not a machine output is a constant admittance
    s_machine_bus = np.zeros(len(island), dtype=complex)
    for bus, idx in by_bus.items():
        s_machine_bus[local[bus]] = s_mach[idx].sum()
    s_shunt_load = s_machine_bus - s_inj
    y_load = np.conj(s_shunt_load) / np.abs(v) ** 2

    mva = np.array([mc.unit.mva_base for mc in machines], dtype=float)
    xd = np.array([params.xd_transient[mc.label] for mc in machines]) * base / mva
    h = np.array([params.inertia_h[mc.label] for mc in machines])
    dmp = np.array([params.damping_d[mc.label] for mc in machines])
    if np.any(xd <= 0) or np.any(h <= 0) or np.any(dmp < 0):
        raise LinearizationError("dynamic parameters must be positive")
    bus_idx = np.array([local[mc.bus] for mc in machines])
    i_mach = np.conj(s_mach / v[bus_idx])
    emf = v[bus_idx] + 1j * xd * i_mach

    y_d = 1.0 / (1j * xd)
    y_bb = y_net + np.diag(y_load)
    np.add.at(y_bb, (bus_idx, bus_idx), y_d)
    nm = len(machines)
    y_bm = np.zeros((len(island), nm), dtype=complex)
    y_bm[bus_idx, np.arange(nm)] = -y_d
    try:
        y_red = np.diag(y_d) - y_bm.T @ np.linalg.solve(y_bb, y_bm)
    except np.linalg.LinAlgError as exc:
        raise LinearizationError(f"Kron reduction failed: {exc}") from None
    if not np.all(np.isfinite(y_red)):
        raise LinearizationError("Kron reduction produced non-finite entries")

    k_sync = synchronizing_matrix(emf, y_red)
    inertia = 2 * h * mva / (params.omega_s * base)
    damping = dmp * mva / (params.omega_s * base)
    p_max = [mc.unit.p_max for mc in machines]
    ref = int(np.argmax(p_max))
    a = state_matrix(k_sync, inertia, damping, ref)
    if not np.all(np.isfinite(a)):
        raise LinearizationError("state matrix has non-finite entries")
    return StateMatrix(a, tuple(mc.label for mc in machines), machines[ref].label,
                       k_sync, inertia, damping, emf, y_red)


def eigenvalues(state: StateMatrix | np.ndarray, eps_stab: float = EPS_STAB) -> SpectralReport:
    a = state.a if isinstance(state, StateMatrix) else np.asarray(state, dtype=float)
    if not np.all(np.isfinite(a)):
        raise EigenSolveError("non-finite matrix entries")
    if a.size == 0:
        return SpectralReport(np.array([], dtype=complex), -np.inf, False, complex("nan"))
    try:
        lam = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise EigenSolveError(str(exc)) from None
    lam = lam.astype(complex)
    k = int(np.argmax(lam.real))
    abscissa = float(lam.real[k])
    return SpectralReport(lam, abscissa, abscissa >= -eps_stab, complex(lam[k]))


def analyse(case: GridCase, outages: Sequence[ComponentRef] = (), solution: PowerFlowSolution | None = None,
            params: DynamicParams | None = None, eps_stab: float = EPS_STAB):
    """Linearize and classify; convenience wrapper for scripts."""
    from .powerflow import solve_power_flow
    outages = list(outages)
    dispatch = redispatch(case, outages)
    if solution is None:
        solution = solve_power_flow(case, outages, dispatch, partition=find_islands(case, outages))
    state = linearize(case, outages, solution, params, dispatch)
    return state, eigenvalues(state, eps_stab)
