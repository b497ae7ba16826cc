"""Island detection on the post-contingency bus graph."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .grid import ComponentRef, GridCase, active_branches, outaged_generator_ids


@dataclass(frozen=True)
class IslandPartition:
    labels: tuple[int, ...]
    island_count: int
    main_island: int
    islanded_load: float

    def members(self, island: int) -> list[int]:
        return [bus for bus, lab in enumerate(self.labels) if lab == island]


def label_components(n: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    """Connected-component labels by iterative depth-first search.

    Islands are numbered in order of their smallest bus.
    """
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    labels = [-1] * n
    count = 0
    for root in range(n):
        if labels[root] >= 0:
            continue
        labels[root] = count
        stack = [root]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if labels[v] < 0:
                    labels[v] = count
                    stack.append(v)
        count += 1
    return labels


def live_units(case: GridCase, outages: Iterable[ComponentRef] = ()):
    """In-service generators and external grids not removed by ``outages``."""
    dead = outaged_generator_ids(case, outages)
    gens = [g for g in case.generators if g.in_service and g.id not in dead]
    return gens, [g for g in case.external_grids if g.in_service]


def slack_source_lost(case: GridCase, outages: Iterable[ComponentRef] = ()) -> bool:
    """True when the slack bus had sources and every one of them is out."""
    slack = case.slack_bus
    had = [g for g in (*case.generators, *case.external_grids) if g.bus == slack]
    if not had:
        return False
    gens, ext = live_units(case, outages)
    return not any(g.bus == slack for g in (*gens, *ext))


def find_islands(case: GridCase, outages: Iterable[ComponentRef] = ()) -> IslandPartition:
    outages = list(outages)
    labels = label_components(case.n_bus, ((br.from_bus, br.to_bus)
                                           for br in active_branches(case, outages)))
    count = max(labels) + 1 if labels else 0
    if not labels:
        return IslandPartition((), 0, 0, 0.0)
    main = labels[case.slack_bus]
    if slack_source_lost(case, outages):
        gens, ext = live_units(case, outages)
        capacity = [0.0] * count
        for g in (*gens, *ext):
            capacity[labels[g.bus]] += g.p_max
        # ties go to the lowest island index
        main = max(range(count), key=lambda k: (capacity[k], -k))
    islanded = sum(b.load_p for b in case.buses if labels[b.id] != main)
    return IslandPartition(tuple(labels), count, main, islanded)


def is_severe_islanding(partition: IslandPartition) -> bool:
    return partition.island_count > 1
