"""Regenerate data/ieee118.json from data/ieee118.m."""
from pathlib import Path

from gridrisk.caseio import parse_matpower_case, serialize_native_case

DATA = Path(__file__).resolve().parents[1] / "src" / "gridrisk" / "data"

doc = parse_matpower_case((DATA / "ieee118.m").read_text(), name="ieee118")
text = serialize_native_case(doc.grid, name="ieee118",
                             source="MATPOWER case118 (IEEE Common Data Format)")
(DATA / "ieee118.json").write_text(text)
g = doc.grid
print(f"buses={g.n_bus} lines={g.n_lines} transformers={g.n_transformers} "
      f"generators={g.n_generators} external_grids={len(g.external_grids)}")
