"""Hierarchical Entity Tree construction.

Entities are visited in descending area order. Every entity whose overlap
ratio ``I(n, m) / A(n)`` with a larger, earlier entity ``m`` exceeds the
threshold treats ``m`` as a candidate parent; one candidate is then picked by
the area-first (AFS) or intersection-first (IFS) rule. Entities without any
candidate hang off the virtual root (id 0), which stands for the whole image.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .scene import Entity, SceneRecord, area, intersection_area

ROOT_ID = 0
DEFAULT_THRESHOLD = 0.9


class Strategy(str, enum.Enum):
    AFS = "afs"
    IFS = "ifs"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class HetNode:
    entity_id: int
    parent_id: Optional[int]
    children: tuple[int, ...]
    depth: int


@dataclass(frozen=True)
class HetTree:
    nodes: dict
    strategy: Strategy
    threshold: float

    @property
    def root(self) -> HetNode:
        return self.nodes[ROOT_ID]

    @property
    def entity_ids(self) -> list[int]:
        """Non-root ids in ascending order."""
        return sorted(i for i in self.nodes if i != ROOT_ID)

    def parent_of(self, entity_id: int) -> Optional[int]:
        return self.nodes[entity_id].parent_id

    def children_of(self, entity_id: int) -> tuple[int, ...]:
        return self.nodes[entity_id].children

    def bfs_order(self) -> list[int]:
        order, frontier = [], [ROOT_ID]
        while frontier:
            order.extend(frontier)
            frontier = [c for n in frontier for c in self.nodes[n].children]
        return order

    def sibling_groups(self) -> list[tuple[int, ...]]:
        """Children lists of every internal node, in BFS order of the parent."""
        return [self.nodes[n].children for n in self.bfs_order() if self.nodes[n].children]

    def max_depth(self) -> int:
        return max(n.depth for n in self.nodes.values())

    def mean_branching(self) -> float:
        counts = [len(n.children) for n in self.nodes.values() if n.children]
        return sum(counts) / len(counts) if counts else 0.0

    def parent_pointers(self) -> list[tuple[int, int]]:
        return [(i, self.nodes[i].parent_id) for i in self.entity_ids]

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "threshold": self.threshold,
            "parents": [[i, p] for i, p in self.parent_pointers()],
        }

    @classmethod
    def from_parents(cls, parents: Iterable[tuple[int, int]], areas: dict,
                     strategy=Strategy.IFS, threshold: float = DEFAULT_THRESHOLD) -> "HetTree":
        """Rebuild a tree from parent pointers; ``areas`` orders the children."""
        parent_map = {int(i): int(p) for i, p in parents}
        return _assemble(parent_map, areas, Strategy.parse(strategy), threshold)


def sort_by_area(entities: Sequence[Entity]) -> list[Entity]:
    return sorted(entities, key=lambda e: (-e.area, e.id))


def parent_candidates(n: Entity, larger: Sequence[Entity], threshold: float) -> list[Entity]:
    a_n = n.area
    return [m for m in larger if intersection_area(n.box, m.box) / a_n > threshold]


def select_parent(n: Entity, candidates: Sequence[Entity], strategy) -> int:
    strategy = Strategy.parse(strategy)
    if not candidates:
        raise ValueError("select_parent needs at least one candidate")
    if strategy is Strategy.AFS:
        best = min(candidates, key=lambda m: (-m.area, m.id))
    else:
        best = min(candidates,
                   key=lambda m: (-(intersection_area(n.box, m.box) / m.area), -m.area, m.id))
    return best.id


def _assemble(parent_map: dict, areas: dict, strategy: Strategy, threshold: float) -> HetTree:
    children: dict[int, list[int]] = {ROOT_ID: []}
    for i in parent_map:
        children.setdefault(i, [])
    for i, p in parent_map.items():
        if p not in children:
            raise ValueError(f"node {i} points at unknown parent {p}")
        children[p].append(i)
    for p, kids in children.items():
        kids.sort(key=lambda c: (-areas[c], c))

    depth = {ROOT_ID: 1}
    frontier = [ROOT_ID]
    while frontier:
        nxt = []
        for n in frontier:
            for c in children[n]:
                depth[c] = depth[n] + 1
                nxt.append(c)
        frontier = nxt
    if len(depth) != len(children):
        raise ValueError("parent pointers do not form a tree rooted at 0")

    nodes = {ROOT_ID: HetNode(ROOT_ID, None, tuple(children[ROOT_ID]), 1)}
    for i, p in parent_map.items():
        nodes[i] = HetNode(i, p, tuple(children[i]), depth[i])
    return HetTree(nodes=nodes, strategy=strategy, threshold=float(threshold))


def build_het(scene, threshold: float = DEFAULT_THRESHOLD, strategy=Strategy.IFS) -> HetTree:
    """Build the HET for a scene (or a bare sequence of entities)."""
    entities = scene.entities if isinstance(scene, SceneRecord) else tuple(scene)
    strategy = Strategy.parse(strategy)
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    ordered = sort_by_area(entities)
    parent_map = {}
    for k, n in enumerate(ordered):
        cands = parent_candidates(n, ordered[:k], threshold)
        parent_map[n.id] = select_parent(n, cands, strategy) if cands else ROOT_ID
    return _assemble(parent_map, {e.id: e.area for e in entities} | {ROOT_ID: float("inf")},
                     strategy, threshold)


def depth_of(tree: HetTree, entity_id: int) -> int:
    if entity_id not in tree.nodes:
        raise KeyError(f"entity {entity_id} is not in the tree")
    return tree.nodes[entity_id].depth
