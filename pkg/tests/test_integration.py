"""Concept alignment, centrality, contrast detection, and the theory graph."""

import numpy as np
import pytest

from gtflow.coding import validate_result
from gtflow.embedding import HashingEmbedder, normalize
from gtflow.integration import (
    build_concept_index,
    centrality,
    code_uid,
    contrast,
    embed_codes,
    hierarchical_integration,
    lifted_relations,
)

import oracles


def result_of(cluster_id, codes, relations=(), core_label="core",
              evidence=None):
    """codes: list of (code_id, label, evidence ids)."""
    open_codes = [
        {"code_id": cid, "label": label,
         "definition": f"About {label}.", "evidence_seg_ids": list(ev)}
        for cid, label, ev in codes
    ]
    rels = [
        {"from_code": f, "to_code": t, "relation_kind": k, "rationale": ""}
        for f, t, k in relations
    ]
    support = evidence or sorted({s for _, _, ev in codes for s in ev})
    return validate_result({
        "cluster_id": cluster_id,
        "open_codes": open_codes,
        "axial_relationships": rels,
        "core_category": {
            "label": core_label, "definition": "organizing pattern",
            "properties": [], "dimensional_range": [],
        },
        "supporting_evidence": list(support),
    })


def unit(d, axis):
    v = np.zeros(d)
    v[axis] = 1.0
    return v


class TestConceptIndex:
    def test_exact_duplicates_merge_with_frequency_two(self):
        r1 = result_of("C001", [("oc1", "digital compensation", ["a:s1"])])
        r2 = result_of("C002", [("oc1", "digital compensation", ["b:s1"])])
        embedder = HashingEmbedder(dimension=64, seed=2)
        index = build_concept_index([r1, r2], embed_codes([r1, r2], embedder),
                                    0.80)
        assert len(index.concepts) == 1
        assert index.concepts[0].frequency == 2
        assert index.concepts[0].label == "digital compensation"

    def test_threshold_above_one_no_merges(self):
        r1 = result_of("C001", [("oc1", "same label", ["a:s1"])])
        r2 = result_of("C002", [("oc1", "same label", ["b:s1"])])
        embedder = HashingEmbedder(dimension=64, seed=2)
        index = build_concept_index([r1, r2], embed_codes([r1, r2], embedder),
                                    1.0 + 1e-9)
        assert len(index.concepts) == 2

    def test_three_groups_match_components_oracle(self):
        # 6 codes in 3 similarity groups under hand-built vectors
        vectors = {
            code_uid("C001", "a"): normalize(unit(6, 0) + 0.05 * unit(6, 5)),
            code_uid("C001", "b"): normalize(unit(6, 0) - 0.05 * unit(6, 5)),
            code_uid("C002", "c"): normalize(unit(6, 1) + 0.05 * unit(6, 5)),
            code_uid("C002", "d"): normalize(unit(6, 1) - 0.05 * unit(6, 5)),
            code_uid("C003", "e"): normalize(unit(6, 2) + 0.05 * unit(6, 5)),
            code_uid("C003", "f"): normalize(unit(6, 2) - 0.05 * unit(6, 5)),
        }
        r1 = result_of("C001", [("a", "one", ["s1"]), ("b", "two", ["s2"])])
        r2 = result_of("C002", [("c", "three", ["s3"]), ("d", "four", ["s4"])])
        r3 = result_of("C003", [("e", "five", ["s5"]), ("f", "six", ["s6"])])
        index = build_concept_index([r1, r2, r3], vectors, 0.80)

        uids = sorted(vectors)
        edges = [
            (i, j)
            for i in range(len(uids)) for j in range(i + 1, len(uids))
            if float(np.dot(vectors[uids[i]], vectors[uids[j]])) >= 0.80
        ]
        expected = {frozenset(uids[i] for i in comp)
                    for comp in oracles.brute_components(len(uids), edges)}
        got = {frozenset(c.member_code_uids) for c in index.concepts}
        assert got == expected
        assert len(index.concepts) == 3

    def test_each_code_maps_to_exactly_one_concept(self):
        r1 = result_of("C001", [("a", "alpha", ["s1"]), ("b", "beta", ["s2"])])
        embedder = HashingEmbedder(dimension=64, seed=2)
        index = build_concept_index([r1], embed_codes([r1], embedder), 0.8)
        seen = [u for c in index.concepts for u in c.member_code_uids]
        assert sorted(seen) == sorted(set(seen))
        assert len(seen) == 2


def star_fixture():
    """Hub concept h relates to 4 others; plus 2 isolated concepts."""
    results = [
        result_of(
            "C001",
            [("h", "hub", ["s1"]), ("a", "alpha", ["s2"]), ("b", "beta", ["s3"])],
            [("h", "a", "causal"), ("h", "b", "contextual")],
        ),
        result_of(
            "C002",
            [("h", "hub", ["s4"]), ("c", "gamma", ["s5"]), ("d", "delta", ["s6"])],
            [("c", "h", "intervening"), ("h", "d", "consequence")],
        ),
        result_of("C003", [("x", "isolated one", ["s7"]),
                           ("y", "isolated two", ["s8"])]),
    ]
    embedder = HashingEmbedder(dimension=128, seed=6)
    index = build_concept_index(results, embed_codes(results, embedder), 0.80)
    return results, index


class TestCentrality:
    def test_star_hub_ranked_first(self):
        results, index = star_fixture()
        hub_concept = index.concept_of(code_uid("C001", "h"))
        assert hub_concept == index.concept_of(code_uid("C002", "h"))
        ranking = centrality(index, lifted_relations(results, index))
        assert ranking[0][0] == hub_concept
        assert ranking[0][1] == 4

    def test_edgeless_all_zero_ordered_by_frequency_then_id(self):
        r1 = result_of("C001", [("a", "alpha", ["s1"])])
        r2 = result_of("C002", [("b", "beta", ["s2"])])
        embedder = HashingEmbedder(dimension=64, seed=6)
        index = build_concept_index([r1, r2], embed_codes([r1, r2], embedder),
                                    0.8)
        ranking = centrality(index, [])
        assert [score for _, score in ranking] == [0, 0]
        assert [cid for cid, _ in ranking] == sorted(cid for cid, _ in ranking)

    def test_hand_built_seven_node_graph(self):
        codes = [(f"c{i}", f"unique{i} topic{i}", [f"s{i}"]) for i in range(7)]
        rels = [
            ("c0", "c1", "causal"),
            ("c0", "c2", "causal"),
            ("c0", "c3", "contextual"),
            ("c1", "c2", "consequence"),
            ("c4", "c5", "intervening"),
        ]
        r = result_of("C001", codes, rels)
        embedder = HashingEmbedder(dimension=256, seed=8)
        index = build_concept_index([r], embed_codes([r], embedder), 0.95)
        assert len(index.concepts) == 7
        ranking = dict(centrality(index, lifted_relations([r], index)))
        by_code = {cid: index.concept_of(code_uid("C001", cid))
                   for cid, _, _ in codes}
        # hand-counted degrees: c0:3 c1:2 c2:2 c3:1 c4:1 c5:1 c6:0
        assert ranking[by_code["c0"]] == 3
        assert ranking[by_code["c1"]] == 2
        assert ranking[by_code["c2"]] == 2
        assert ranking[by_code["c3"]] == 1
        assert ranking[by_code["c6"]] == 0


def two_cluster_shared_concepts(rel1, rel2):
    """Two clusters sharing concepts X and Y (identical labels merge)."""
    r1 = result_of("C001",
                   [("x", "pressure", ["a:s1"]), ("y", "escape", ["a:s2"])],
                   [rel1])
    r2 = result_of("C002",
                   [("x", "pressure", ["b:s1"]), ("y", "escape", ["b:s2"])],
                   [rel2])
    embedder = HashingEmbedder(dimension=128, seed=3)
    index = build_concept_index([r1, r2], embed_codes([r1, r2], embedder), 0.8)
    assert len(index.concepts) == 2
    return [r1, r2], index


class TestContrast:
    def test_direction_conflict_detected(self):
        results, index = two_cluster_shared_concepts(
            ("x", "y", "causal"), ("y", "x", "causal"))
        tensions = contrast(results, index)
        assert len(tensions) == 1
        assert tensions[0].kind == "direction-conflict"
        clusters = {s["cluster_id"] for s in tensions[0].sides}
        assert clusters == {"C001", "C002"}
        for side in tensions[0].sides:
            assert side["evidence_seg_ids"]

    def test_agreement_is_not_tension(self):
        results, index = two_cluster_shared_concepts(
            ("x", "y", "causal"), ("x", "y", "causal"))
        assert contrast(results, index) == []

    def test_divergent_pathway_detected(self):
        # same antecedent, two distinct outcomes in different clusters
        r1 = result_of("C001",
                       [("a", "deficiency", ["a:s1"]),
                        ("b", "healthy adjustment", ["a:s2"])],
                       [("a", "b", "causal")])
        r2 = result_of("C002",
                       [("a", "deficiency", ["b:s1"]),
                        ("c", "dependency spiral", ["b:s2"])],
                       [("a", "c", "causal")])
        embedder = HashingEmbedder(dimension=128, seed=3)
        index = build_concept_index([r1, r2], embed_codes([r1, r2], embedder),
                                    0.8)
        tensions = contrast([r1, r2], index)
        assert len(tensions) == 1
        assert tensions[0].kind == "divergent-pathway"
        assert len(tensions[0].concept_ids) == 3


class TestHierarchicalIntegration:
    def build(self, results, index):
        ranking = centrality(index, lifted_relations(results, index))
        tensions = contrast(results, index)
        return hierarchical_integration(index, results, ranking, tensions)

    def test_evidence_containment_subsumption(self):
        r1 = result_of("C001", [("big", "broad theme", ["s1", "s2", "s3"])])
        r2 = result_of("C002", [("small", "narrow theme", ["s1", "s2"])])
        embedder = HashingEmbedder(dimension=128, seed=9)
        index = build_concept_index([r1, r2], embed_codes([r1, r2], embedder),
                                    0.9)
        graph = self.build([r1, r2], index)
        big = index.concept_of(code_uid("C001", "big"))
        small = index.concept_of(code_uid("C002", "small"))
        subs = [(e.src, e.dst) for e in graph.edges if e.kind == "subsumes"]
        assert (big, small) in subs

    def test_disjoint_evidence_no_subsumption(self):
        r1 = result_of("C001", [("p", "one theme", ["s1", "s2"])])
        r2 = result_of("C002", [("q", "other theme", ["s3", "s4"])])
        embedder = HashingEmbedder(dimension=128, seed=9)
        index = build_concept_index([r1, r2], embed_codes([r1, r2], embedder),
                                    0.9)
        graph = self.build([r1, r2], index)
        assert not [e for e in graph.edges if e.kind == "subsumes"]

    def test_contrast_preserved_as_parallel_branches(self):
        results, index = two_cluster_shared_concepts(
            ("x", "y", "causal"), ("y", "x", "causal"))
        graph = self.build(results, index)
        assert len(graph.contrasts) == 1
        contrast_edges = [e for e in graph.edges if e.kind == "contrast"]
        assert contrast_edges
        # both causal directions stay in the graph (parallel branches)
        causal = {(e.src, e.dst) for e in graph.edges if e.kind == "causal"}
        x = index.concept_of(code_uid("C001", "x"))
        y = index.concept_of(code_uid("C001", "y"))
        assert (x, y) in causal and (y, x) in causal

    def test_every_edge_has_evidence(self):
        results, index = star_fixture()
        graph = self.build(results, index)
        assert graph.edges
        for e in graph.edges:
            assert e.evidence_seg_ids, f"edge {e.src}->{e.dst}:{e.kind}"
            assert e.via_code_uids

    def test_core_candidates_are_top_centrality(self):
        results, index = star_fixture()
        ranking = centrality(index, lifted_relations(results, index))
        graph = hierarchical_integration(index, results, ranking,
                                         contrast(results, index), top_k=2)
        assert list(graph.core_candidates) == ranking[:2]

    def test_determinism_of_serialization(self):
        results, index = star_fixture()
        a = self.build(results, index).to_dict()
        b = self.build(results, index).to_dict()
        assert a == b

    def test_dot_export_contains_nodes_and_edges(self):
        results, index = star_fixture()
        graph = self.build(results, index)
        dot = graph.export_dot()
        assert dot.startswith("digraph")
        assert "->" in dot
        assert "evidence=" in dot
