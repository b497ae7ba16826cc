# %% [markdown]
# # Risk ranking
#
# R_i adds up frequency times severity over every scenario that contains
# component i.  With every contingency severe the index saturates at
# lambda_i (1 + 2 sum_j lambda_j), which gives an upper bound per class.

# %%
import tempfile
from pathlib import Path

from gridrisk import caseio
from gridrisk.caseio import ReliabilityTable, load_reliability
from gridrisk.engine import EngineConfig, read_results, run_all
from gridrisk.grid import GENERATOR, LINE, TRANSFORMER, ComponentRef
from gridrisk.risk import compute_risk, emit_reports, format_table, risk_upper_bound

case = caseio.load_ieee118().grid
table = ReliabilityTable()
for kind in (LINE, TRANSFORMER, GENERATOR):
    ref = ComponentRef(kind, 0)
    print(f"{kind:<12} lambda={table.rate(ref):.2f}/yr  bound={risk_upper_bound(ref, table, case):.4f}")

# %% [markdown]
# Failure rates can be given as lambda or as MTTF, per class or per element.

# %%
custom = load_reliability("kind,target,value,unit\nmttf,line,25,years\nlambda,generator:3,0.4,per_year\n", case)
print(custom.rate(ComponentRef(LINE, 7)), custom.rate(ComponentRef(GENERATOR, 3)))

# %% [markdown]
# Rank a sampled run.  A sample undercounts R_i, so this needs allow_partial.

# %%
out = Path(tempfile.mkdtemp()) / "run"
manifest, _ = run_all(case, EngineConfig(limit=300), out)
ranking = compute_risk(read_results(out / "results.jsonl"), table, case, manifest=manifest, allow_partial=True)
print(format_table(ranking.top(10)))
for path in emit_reports(ranking, out, top_k=20):
    print("wrote", path.name)
