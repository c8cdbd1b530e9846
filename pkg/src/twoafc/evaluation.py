"""Partition agreement scoring (NMI), the raw-pixel baseline, and level reports."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .clustering import Dendrogram, Partition, complete_linkage, level_cut
from .errors import InputError

GEOMETRIC = "geometric"
ARITHMETIC = "arithmetic"


def nmi(u: Partition, v: Partition, normalizer: str = GEOMETRIC) -> float:
    """Normalized mutual information between two partitions of the same leaves.

    I(U;V) normalized by sqrt(H(U) * H(V)) (or the arithmetic mean when
    requested), natural logarithms; defined as 0 when either entropy is 0.
    """
    if normalizer not in (GEOMETRIC, ARITHMETIC):
        raise InputError(f"unknown normalizer {normalizer!r}")
    if set(u.assignment) != set(v.assignment):
        raise InputError("partitions must cover the same leaf set")
    leaves = sorted(u.assignment)
    total = len(leaves)
    if total == 0:
        raise InputError("partitions must be nonempty")
    nu, nv = u.n_clusters(), v.n_clusters()
    table = np.zeros((nu, nv), dtype=np.int64)
    for leaf in leaves:
        table[u.assignment[leaf], v.assignment[leaf]] += 1
    pu = table.sum(axis=1) / total
    pv = table.sum(axis=0) / total
    h_u = -np.sum(pu[pu > 0] * np.log(pu[pu > 0]))
    h_v = -np.sum(pv[pv > 0] * np.log(pv[pv > 0]))
    if h_u == 0.0 or h_v == 0.0:
        return 0.0
    joint = table / total
    mask = joint > 0
    mi = float(np.sum(joint[mask] * (np.log(joint[mask]) - np.log(np.outer(pu, pv)[mask]))))
    if normalizer == GEOMETRIC:
        value = mi / np.sqrt(h_u * h_v)
    else:
        value = 2.0 * mi / (h_u + h_v)
    return float(min(max(value, 0.0), 1.0))


def pixel_baseline(images: dict[str, np.ndarray]) -> Dendrogram:
    """Complete linkage over flattened pixel vectors scaled to [0, 1]."""
    shapes = {images[i].shape for i in images}
    if len(shapes) != 1:
        raise InputError(f"baseline images must share one shape, got {shapes}")
    vectors = {}
    for image_id, pixels in images.items():
        flat = np.asarray(pixels, dtype=np.float64).ravel()
        if pixels.dtype == np.uint8:
            flat = flat / 255.0
        vectors[image_id] = flat
    return complete_linkage(vectors)


@dataclass(frozen=True)
class LevelReport:
    rows: tuple[tuple[int, int, float, float], ...]  # (level, clusters, baseline nmi, method nmi)

    def __post_init__(self):
        for level, clusters, b, m in self.rows:
            if clusters != 2 ** level:
                raise InputError(f"level {level} must have {2 ** level} clusters, got {clusters}")
            if not (0 <= b <= 1 and 0 <= m <= 1):
                raise InputError("NMI values must lie in [0, 1]")

    def as_text(self) -> str:
        lines = [f"{'Level':>5}  {'Clusters':>8}  {'Baseline':>8}  {'Method':>8}"]
        for level, clusters, b, m in self.rows:
            lines.append(f"{level:>5}  {clusters:>8}  {b:>8.3f}  {m:>8.3f}")
        return "\n".join(lines)

    def as_csv(self) -> str:
        buf = io.StringIO()
        buf.write("level,clusters,baseline_nmi,method_nmi\n")
        for level, clusters, b, m in self.rows:
            buf.write(f"{level},{clusters},{b:.6f},{m:.6f}\n")
        return buf.getvalue()

    def as_json(self) -> list[dict]:
        return [
            {"level": level, "clusters": clusters, "baseline_nmi": b, "method_nmi": m}
            for level, clusters, b, m in self.rows
        ]


def level_report(method_dendrogram: Dendrogram, baseline_dendrogram: Dendrogram,
                 true_labels: Partition, max_level: int) -> LevelReport:
    """NMI against true labels for both dendrograms at each binary-tree level."""
    leaf_set = set(true_labels.assignment)
    for d in (method_dendrogram, baseline_dendrogram):
        if set(d.leaves) != leaf_set:
            raise InputError("dendrograms and labels must cover the same leaf set")
    if 2 ** max_level > len(leaf_set):
        raise InputError(f"max_level {max_level} exceeds leaf count {len(leaf_set)}")
    rows = []
    for level in range(max_level + 1):
        b = nmi(level_cut(baseline_dendrogram, level), true_labels)
        m = nmi(level_cut(method_dendrogram, level), true_labels)
        rows.append((level, 2 ** level, b, m))
    return LevelReport(rows=tuple(rows))
