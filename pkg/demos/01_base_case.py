# %% [markdown]
# # The IEEE 118-bus base case
#
# Load the bundled fixture, solve the AC power flow and look at the
# electromechanical modes of the classical multimachine model.

# %%
import numpy as np

from gridrisk import caseio
from gridrisk.grid import component_universe
from gridrisk.powerflow import check_limits, solve_power_flow
from gridrisk.smallsignal import analyse

doc = caseio.load_ieee118()
case = doc.grid
print(case.n_bus, "buses,", case.n_lines, "lines,", case.n_transformers, "transformers,",
      case.n_generators, "generators")
print("outageable components:", len(component_universe(case)))

# %% [markdown]
# Newton-Raphson from a flat start.  Generators that hit a reactive limit are
# switched to PQ and the solve continues.

# %%
sol = solve_power_flow(case)
print("converged:", sol.converged, "iterations:", sol.iterations, "mismatch:", f"{sol.max_mismatch:.2e}")
print("PV->PQ switches:", sol.switch_events)
print(f"voltage range: {np.nanmin(sol.v_mag):.4f} .. {np.nanmax(sol.v_mag):.4f} pu")
print("slack output (MW):", round(sol.slack_p, 2))
print("limit violations:", check_limits(sol, case).any)

# %% [markdown]
# Small-signal stability: the spectral abscissa is the largest real part
# of the state matrix eigenvalues.

# %%
state, rep = analyse(case)
print("machines:", len(state.machines), "reference:", state.reference, "states:", state.dimension)
print(f"spectral abscissa: {rep.spectral_abscissa:.4f} 1/s  unstable: {rep.unstable}")
osc = rep.eigenvalues[rep.eigenvalues.imag > 1e-6]
freq = osc.imag / (2 * np.pi)
print(f"{len(osc)} oscillatory modes between {freq.min():.2f} and {freq.max():.2f} Hz")
