"""Independent re-computations used to certify solver outputs."""
import numpy as np

from gridrisk.grid import active_branches


def bus_injections_by_branch_loop(case, outages, v):
    """Net complex injection (pu) at every bus, summed branch by branch."""
    s = np.zeros(case.n_bus, dtype=complex)
    for br in active_branches(case, outages):
        f, t = br.from_bus, br.to_bus
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.b_shunt
        tap = br.tap_ratio
        i_f = (ys + bc) / tap**2 * v[f] - ys / tap * v[t]
        i_t = -ys / tap * v[f] + (ys + bc) * v[t]
        s[f] += v[f] * np.conj(i_f)
        s[t] += v[t] * np.conj(i_t)
    for b in case.buses:
        s[b.id] += abs(v[b.id]) ** 2 * np.conj(complex(b.gs, b.bs) / case.base_mva)
    return s


def independent_mismatch(case, outages, dispatch, sol):
    """Infinity norm of the P/Q mismatch rebuilt from case data and the solved voltages."""
    v = np.nan_to_num(sol.v_mag) * np.exp(1j * np.nan_to_num(sol.v_ang))
    s = bus_injections_by_branch_loop(case, outages, v)
    gen = np.zeros(case.n_bus)
    for g in case.generators:
        if g.id in dispatch.gen_p:
            gen[g.bus] += dispatch.gen_p[g.id]
    worst = 0.0
    pv = set(sol.pv_buses)
    for b in sol.island:
        if b == sol.slack_bus:
            continue
        bus = case.buses[b]
        p_spec = (gen[b] - bus.load_p) / case.base_mva
        worst = max(worst, abs(s[b].real - p_spec))
        if b not in pv:
            q_spec = (sol.q_fixed.get(b, 0.0) - bus.load_q) / case.base_mva
            worst = max(worst, abs(s[b].imag - q_spec))
    return worst


def companion_roots(a):
    """Eigenvalues as roots of the characteristic polynomial, in 50-digit arithmetic.

    Coefficients come from the Faddeev-LeVerrier recursion; roots from
    mpmath's Durand-Kerner solver.
    """
    import mpmath as mp
    mp.mp.dps = 50
    n = a.shape[0]
    A = mp.matrix(a.tolist())
    coeffs = [mp.mpf(1)]
    m = mp.zeros(n, n)
    eye = mp.eye(n)
    for k in range(1, n + 1):
        m = A * m + coeffs[-1] * eye
        am = A * m
        c = -sum(am[i, i] for i in range(n)) / k
        coeffs.append(c)
    roots = mp.polyroots(coeffs, maxsteps=500, extraprec=200)
    return np.array([complex(r) for r in roots])
