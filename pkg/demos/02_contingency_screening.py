# %% [markdown]
# # Screening a sample of N-1 and N-2 contingencies
#
# The full enumeration on IEEE-118 has 57,122 states.  Here we evaluate an
# evenly spaced sample and look at why scenarios are severe.

# %%
import collections
import json
import tempfile
from pathlib import Path

from gridrisk import caseio
from gridrisk.engine import EngineConfig, evaluate_outages, run_all, scenario_count
from gridrisk.grid import ComponentRef

case = caseio.load_ieee118().grid
print("total scenarios:", scenario_count(239))

# %% [markdown]
# A single scenario first.  Outage references are per-class ordinals.

# %%
for ref in ("line:8", "transformer:3", "generator:10"):
    res = evaluate_outages(case, [ComponentRef.parse(ref)])
    print(f"{ref:>14}: severity={res.severity} reason={list(res.reason)} "
          f"islands={res.island_count} abscissa={res.spectral_abscissa}")

# %% [markdown]
# A sampled run writes results.jsonl in enumeration order plus a manifest.

# %%
out = Path(tempfile.mkdtemp()) / "run"
manifest, stats = run_all(case, EngineConfig(limit=300), out)
print(json.dumps(manifest["counts"], indent=1))
print("wall time:", manifest["wall_time_s"], "s")

# %%
orders = collections.Counter()
for line in (out / "results.jsonl").read_text().splitlines():
    rec = json.loads(line)
    orders[(len(rec["outages"]), rec["severity"])] += 1
for (order, sev), n in sorted(orders.items()):
    print(f"order {order}  severity {sev}: {n}")
