import json

import numpy as np
import pytest

from oracles import brute_force_complete_linkage
from twoafc import clustering as C
from twoafc.errors import InputError


def merge_heights(dendrogram):
    return [h for _, _, h in dendrogram.merges]


class TestCompleteLinkage:
    def test_single_point(self):
        d = C.complete_linkage({"only": np.array([1.0, 2.0])})
        assert d.leaves == ("only",)
        assert d.merges == ()

    def test_one_dimensional_example(self):
        d = C.complete_linkage({"a": np.array([0.0]), "b": np.array([1.0]), "c": np.array([10.0])})
        assert d.leaves == ("a", "b", "c")
        (l0, r0, h0), (l1, r1, h1) = d.merges
        assert {l0, r0} == {0, 1}
        assert h0 == pytest.approx(1.0)
        assert {l1, r1} == {2, 3}
        assert h1 == pytest.approx(10.0)  # max(10, 9)

    def test_matches_brute_force_oracle(self, rng):
        for trial in range(100):
            n = int(rng.integers(2, 51))
            dim = int(rng.integers(1, 6))
            embeddings = {f"p{i:03d}": rng.normal(size=dim) for i in range(n)}
            fast = C.complete_linkage(embeddings)
            ids, slow_merges = brute_force_complete_linkage(embeddings)
            assert fast.leaves == ids
            assert len(fast.merges) == len(slow_merges)
            for (fl, fr, fh), (sl, sr, sh) in zip(fast.merges, slow_merges):
                assert (fl, fr) == (sl, sr)
                assert abs(fh - sh) < 1e-9

    def test_heights_non_decreasing(self, rng):
        for _ in range(10):
            embeddings = {f"p{i}": rng.normal(size=3) for i in range(25)}
            heights = merge_heights(C.complete_linkage(embeddings))
            assert all(b >= a for a, b in zip(heights, heights[1:]))

    def test_insertion_order_irrelevant(self, rng):
        embeddings = {f"p{i}": rng.normal(size=2) for i in range(20)}
        shuffled = {k: embeddings[k] for k in reversed(sorted(embeddings))}
        a = C.complete_linkage(embeddings)
        b = C.complete_linkage(shuffled)
        for m in range(1, 8):
            assert set(C.cut(a, m).as_sets()) == set(C.cut(b, m).as_sets())

    def test_euclidean_invariance(self, rng):
        embeddings = {f"p{i}": rng.normal(size=3) for i in range(15)}
        heights = merge_heights(C.complete_linkage(embeddings))
        shift = rng.normal(size=3)
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta), 0],
                        [np.sin(theta), np.cos(theta), 0],
                        [0, 0, 1.0]])
        moved = {k: rot @ v + shift for k, v in embeddings.items()}
        moved_heights = merge_heights(C.complete_linkage(moved))
        assert np.allclose(heights, moved_heights, atol=1e-9)

    def test_squared_metric_squares_heights(self, rng):
        embeddings = {f"p{i}": rng.normal(size=2) for i in range(10)}
        plain = C.complete_linkage(embeddings, metric=C.EUCLIDEAN)
        squared = C.complete_linkage(embeddings, metric=C.SQUARED)
        for (l1, r1, h1), (l2, r2, h2) in zip(plain.merges, squared.merges):
            assert (l1, r1) == (l2, r2)
            assert h2 == pytest.approx(h1 ** 2, rel=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            C.complete_linkage({})

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(InputError):
            C.complete_linkage({"a": np.zeros(2), "b": np.zeros(3)})


class TestCut:
    def _example(self):
        return C.complete_linkage({"a": np.array([0.0]), "b": np.array([1.0]), "c": np.array([10.0])})

    def test_m_one_single_cluster(self):
        part = C.cut(self._example(), 1)
        assert part.n_clusters() == 1
        assert set(part.assignment) == {"a", "b", "c"}

    def test_m_n_singletons(self):
        part = C.cut(self._example(), 3)
        assert part.n_clusters() == 3

    def test_two_clusters(self):
        part = C.cut(self._example(), 2)
        assert set(part.as_sets()) == {frozenset({"a", "b"}), frozenset({"c"})}

    def test_cluster_indices_by_smallest_leaf(self):
        part = C.cut(self._example(), 2)
        assert part.assignment["a"] == part.assignment["b"] == 0
        assert part.assignment["c"] == 1

    def test_always_m_nonempty_clusters(self, rng):
        embeddings = {f"p{i}": rng.normal(size=2) for i in range(12)}
        d = C.complete_linkage(embeddings)
        for m in range(1, 13):
            part = C.cut(d, m)
            sizes = [len(s) for s in part.as_sets()]
            assert len(sizes) == m
            assert all(size > 0 for size in sizes)

    def test_out_of_range(self):
        d = self._example()
        for m in (0, 4):
            with pytest.raises(InputError):
                C.cut(d, m)


class TestLevelCut:
    def test_levels(self, rng):
        embeddings = {f"p{i}": rng.normal(size=2) for i in range(9)}
        d = C.complete_linkage(embeddings)
        assert C.level_cut(d, 0).n_clusters() == 1
        assert C.level_cut(d, 1).n_clusters() == 2
        assert C.level_cut(d, 3).n_clusters() == 8

    def test_too_deep_rejected(self, rng):
        embeddings = {f"p{i}": rng.normal(size=2) for i in range(5)}
        d = C.complete_linkage(embeddings)
        with pytest.raises(InputError):
            C.level_cut(d, 3)


class TestExports:
    def _small(self):
        return C.complete_linkage({"a": np.array([0.0]), "b": np.array([1.0]), "c": np.array([10.0])})

    def test_json_structure(self):
        tree = json.loads(C.to_json(self._small()))
        assert tree["height"] == pytest.approx(10.0)
        kinds = {"leaf" if "id" in n else "internal" for n in tree["children"]}
        assert kinds == {"leaf", "internal"} or kinds == {"internal", "leaf"}

        def leaf_ids(node):
            if "id" in node:
                return [node["id"]]
            return [i for child in node["children"] for i in leaf_ids(child)]

        assert sorted(leaf_ids(tree)) == ["a", "b", "c"]

    def test_newick_round_shape(self):
        text = C.to_newick(self._small())
        assert text.endswith(";")
        assert text.count("(") == 2
        for leaf in ("a", "b", "c"):
            assert leaf in text

    def test_newick_branch_lengths_sum_to_root_height(self):
        # path length from any leaf to the root equals the root merge height
        d = self._small()
        text = C.to_newick(d)
        # ((a:len_a,b:len_b):len_ab,c:len_c); with len_a + len_ab = 10, len_c = 10
        inner = text[text.index("(") + 1:text.rindex(")")]
        assert ":9" in text or "9" in inner  # a,b merge at 1, root at 10 -> inner branch 9
        assert "c:10" in text

    def test_single_leaf_newick(self):
        d = C.complete_linkage({"solo": np.zeros(2)})
        assert C.to_newick(d) == "solo;"


class TestPartition:
    def test_contiguous_indices_enforced(self):
        with pytest.raises(InputError):
            C.Partition({"a": 0, "b": 2})

    def test_from_labels_relabels(self):
        part = C.Partition.from_labels({"x": "red", "y": "blue", "z": "red"})
        assert part.n_clusters() == 2
        assert part.assignment["x"] == part.assignment["z"]

    def test_dendrogram_invariants(self):
        with pytest.raises(InputError):
            C.Dendrogram(leaves=("a", "b"), merges=())  # missing merge
        with pytest.raises(InputError):
            C.Dendrogram(leaves=("a", "b", "c"),
                         merges=((0, 1, 1.0), (0, 2, 2.0)))  # node 0 merged twice
        with pytest.raises(InputError):
            C.Dendrogram(leaves=("a", "b", "c"),
                         merges=((0, 1, 2.0), (3, 2, 1.0)))  # heights decrease
