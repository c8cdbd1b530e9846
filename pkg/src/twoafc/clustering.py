"""Complete-linkage agglomerative clustering and dendrogram extraction.

Merge heights use plain (not squared) Euclidean distance by default. Nodes
are indexed leaves-first: leaves 0..n-1 in ascending identifier order, then
internal nodes n..2n-2 in merge order. Linkage ties break on the smallest
(left, right) node-index pair, which makes runs bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError

EUCLIDEAN = "euclidean"
SQUARED = "squared"


@dataclass(frozen=True)
class Dendrogram:
    leaves: tuple[str, ...]
    merges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        n = len(self.leaves)
        if n and len(self.merges) != n - 1:
            raise InputError(f"{n} leaves need {n - 1} merges, got {len(self.merges)}")
        seen: set[int] = set()
        for left, right, height in self.merges:
            if left in seen or right in seen:
                raise InputError("a node may be merged at most once")
            if height < 0:
                raise InputError("merge heights must be nonnegative")
            seen.update((left, right))
        heights = [h for _, _, h in self.merges]
        if any(b < a for a, b in zip(heights, heights[1:])):
            raise InputError("merge heights must be non-decreasing")

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)


@dataclass(frozen=True)
class Partition:
    assignment: dict[str, int]

    def __post_init__(self):
        indices = set(self.assignment.values())
        if indices and indices != set(range(len(indices))):
            raise InputError("cluster indices must be contiguous from 0")

    def n_clusters(self) -> int:
        return len(set(self.assignment.values()))

    def as_sets(self) -> list[frozenset[str]]:
        groups: dict[int, set[str]] = {}
        for leaf, c in self.assignment.items():
            groups.setdefault(c, set()).add(leaf)
        return [frozenset(groups[c]) for c in sorted(groups)]

    @classmethod
    def from_labels(cls, labels: dict[str, object]) -> "Partition":
        """Relabel arbitrary label values to contiguous indices (by first appearance in id order)."""
        mapping: dict[object, int] = {}
        assignment = {}
        for leaf in sorted(labels):
            label = labels[leaf]
            if label not in mapping:
                mapping[label] = len(mapping)
            assignment[leaf] = mapping[label]
        return cls(assignment)


def _pairwise(points: np.ndarray, metric: str) -> np.ndarray:
    # direct differencing (not the Gram-matrix identity) so that identical
    # points land at distance exactly 0
    return cdist(points, points, "sqeuclidean" if metric == SQUARED else "euclidean")


def complete_linkage(embeddings: dict[str, np.ndarray], metric: str = EUCLIDEAN) -> Dendrogram:
    """Agglomerate by minimal maximum pairwise distance between cluster members.

    Caches inter-cluster linkages and updates them with the max rule on each
    merge, so a run costs O(n^2) memory and O(n^2) work per merge.
    """
    if metric not in (EUCLIDEAN, SQUARED):
        raise InputError(f"unknown linkage metric {metric!r}")
    if not embeddings:
        raise InputError("clustering needs at least one embedding")
    ids = sorted(embeddings)
    dims = {np.asarray(embeddings[i]).shape for i in ids}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise InputError(f"embeddings must share one vector length, got shapes {dims}")
    n = len(ids)
    if n == 1:
        return Dendrogram(leaves=tuple(ids), merges=())

    points = np.array([embeddings[i] for i in ids], dtype=np.float64)
    dist = _pairwise(points, metric)
    np.fill_diagonal(dist, np.inf)

    slot_node = list(range(n))  # slot -> current node index, -1 when dead
    merges: list[tuple[int, int, float]] = []
    for step in range(n - 1):
        m = dist.min()
        best: tuple[int, int] | None = None
        best_slots = (-1, -1)
        for si, sj in np.argwhere(dist == m):
            if si >= sj:
                continue
            pair = tuple(sorted((slot_node[si], slot_node[sj])))
            if best is None or pair < best:
                best = pair
                best_slots = (int(si), int(sj))
        left, right = best
        merges.append((left, right, float(m)))
        si, sj = best_slots
        row = np.maximum(dist[si], dist[sj])
        dist[si, :] = row
        dist[:, si] = row
        dist[si, si] = np.inf
        dist[sj, :] = np.inf
        dist[:, sj] = np.inf
        slot_node[si] = n + step
        slot_node[sj] = -1
    return Dendrogram(leaves=tuple(ids), merges=tuple(merges))


def cut(dendrogram: Dendrogram, m: int) -> Partition:
    """Drop the m-1 latest merges; the remaining forest's components are clusters.

    Cluster indices are assigned by ascending smallest member identifier.
    """
    n = dendrogram.n_leaves
    if not 1 <= m <= n:
        raise InputError(f"cluster count must lie in [1, {n}], got {m}")
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for node, (left, right, _) in enumerate(dendrogram.merges[: n - m]):
        parent[find(left)] = parent[find(right)] = n + node

    groups: dict[int, list[str]] = {}
    for i, leaf in enumerate(dendrogram.leaves):
        groups.setdefault(find(i), []).append(leaf)
    ordered = sorted(groups.values(), key=min)
    assignment = {leaf: c for c, members in enumerate(ordered) for leaf in members}
    return Partition(assignment)


def level_cut(dendrogram: Dendrogram, level: int) -> Partition:
    """Binary-tree level cut: level L yields 2**L clusters."""
    if level < 0:
        raise InputError("level must be nonnegative")
    m = 2 ** level
    if m > dendrogram.n_leaves:
        raise InputError(f"level {level} needs {m} leaves, dendrogram has {dendrogram.n_leaves}")
    return cut(dendrogram, m)


def _build_tree(dendrogram: Dendrogram):
    """Node heights and children for export; leaf height is 0."""
    n = dendrogram.n_leaves
    height = [0.0] * (2 * n - 1)
    children: dict[int, tuple[int, int]] = {}
    for node, (left, right, h) in enumerate(dendrogram.merges):
        height[n + node] = h
        children[n + node] = (left, right)
    root = 2 * n - 2 if n > 1 else 0
    return height, children, root


def to_json(dendrogram: Dendrogram) -> str:
    """Recursive {"id"| "children", "height"} export."""
    height, children, root = _build_tree(dendrogram)

    def node(i: int) -> dict:
        if i < dendrogram.n_leaves:
            return {"id": dendrogram.leaves[i], "height": 0.0}
        left, right = children[i]
        return {"children": [node(left), node(right)], "height": height[i]}

    return json.dumps(node(root), indent=2)


def to_newick(dendrogram: Dendrogram) -> str:
    """Newick text with branch lengths = parent height - child height."""
    height, children, root = _build_tree(dendrogram)

    def node(i: int, parent_height: float) -> str:
        length = parent_height - height[i]
        if i < dendrogram.n_leaves:
            return f"{dendrogram.leaves[i]}:{length:.9g}"
        left, right = children[i]
        inner = f"({node(left, height[i])},{node(right, height[i])})"
        return f"{inner}:{length:.9g}"

    if dendrogram.n_leaves == 1:
        return f"{dendrogram.leaves[0]};"
    left, right = children[root]
    return f"({node(left, height[root])},{node(right, height[root])});"
