"""Cross-cluster synthesis: concept alignment, centrality, contrast
detection, and hierarchical integration into a theory graph.

All four analyses are explicit operationalizations (degree centrality,
single-linkage concept alignment, evidence-containment subsumption,
direction/divergence tensions) and are labeled as engine definitions in
generated reports. Tensions are preserved as parallel branches, never
merged away.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .coding import ClusterCodingResult
from .embedding import EmbeddingProvider, cosine_similarity


def code_uid(cluster_id: str, code_id: str) -> str:
    return f"{cluster_id}/{code_id}"


def code_text(label: str, definition: str) -> str:
    return f"{label}: {definition}" if definition else label


def embed_codes(results: list[ClusterCodingResult],
                provider: EmbeddingProvider) -> dict[str, np.ndarray]:
    """One vector per cluster-level code, keyed by cluster_id/code_id."""
    uids, texts = [], []
    for r in results:
        for c in r.open_codes:
            uids.append(code_uid(r.cluster_id, c.code_id))
            texts.append(code_text(c.label, c.definition))
    if not uids:
        return {}
    vectors = provider.embed_texts(texts)
    return dict(zip(uids, vectors))


@dataclass(frozen=True)
class Concept:
    concept_id: str
    label: str
    member_code_uids: tuple[str, ...]
    cluster_ids: tuple[str, ...]

    @property
    def frequency(self) -> int:
        return len(self.cluster_ids)


@dataclass(frozen=True)
class ConceptIndex:
    concepts: tuple[Concept, ...]
    align_threshold: float

    def concept_of(self, uid: str) -> str:
        return self._owner[uid]

    @property
    def _owner(self) -> dict[str, str]:
        return {uid: c.concept_id for c in self.concepts for uid in c.member_code_uids}

    def by_id(self, concept_id: str) -> Concept:
        for c in self.concepts:
            if c.concept_id == concept_id:
                return c
        raise KeyError(concept_id)

    def to_dict(self) -> dict:
        return {
            "align_threshold": self.align_threshold,
            "concepts": [
                {
                    "concept_id": c.concept_id,
                    "label": c.label,
                    "member_code_uids": list(c.member_code_uids),
                    "cluster_ids": list(c.cluster_ids),
                    "frequency": c.frequency,
                }
                for c in self.concepts
            ],
        }


def build_concept_index(results: list[ClusterCodingResult],
                        embedded_codes: dict[str, np.ndarray],
                        align_threshold: float = 0.80) -> ConceptIndex:
    """Merge cluster-level codes into canonical concepts by single linkage
    over the code similarity graph (edges at cosine >= align_threshold)."""
    labels: dict[str, str] = {}
    cluster_of: dict[str, str] = {}
    for r in results:
        for c in r.open_codes:
            uid = code_uid(r.cluster_id, c.code_id)
            labels[uid] = c.label
            cluster_of[uid] = r.cluster_id

    uids = sorted(labels)
    parent = {u: u for u in uids}

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for i, a in enumerate(uids):
        for b in uids[i + 1:]:
            if cosine_similarity(embedded_codes[a], embedded_codes[b]) >= align_threshold:
                union(a, b)

    groups: dict[str, list[str]] = {}
    for u in uids:
        groups.setdefault(find(u), []).append(u)

    concepts = []
    for k, root in enumerate(sorted(groups), start=1):
        members = sorted(groups[root])
        counts = Counter(labels[u] for u in members)
        top = max(counts.values())
        label = sorted(l for l, n in counts.items() if n == top)[0]
        concepts.append(Concept(
            concept_id=f"K{k:03d}",
            label=label,
            member_code_uids=tuple(members),
            cluster_ids=tuple(sorted({cluster_of[u] for u in members})),
        ))
    return ConceptIndex(tuple(concepts), align_threshold)


def lifted_relations(results: list[ClusterCodingResult],
                     index: ConceptIndex) -> list[dict]:
    """Axial relations mapped onto canonical concepts, one entry per
    original cluster-level assertion."""
    owner = index._owner
    evidence = {}
    for r in results:
        for c in r.open_codes:
            evidence[code_uid(r.cluster_id, c.code_id)] = tuple(c.evidence_seg_ids)
    out = []
    for r in results:
        for rel in r.axial_relationships:
            fu = code_uid(r.cluster_id, rel.from_code)
            tu = code_uid(r.cluster_id, rel.to_code)
            out.append({
                "from_concept": owner[fu],
                "to_concept": owner[tu],
                "relation_kind": rel.relation_kind,
                "cluster_id": r.cluster_id,
                "from_code_uid": fu,
                "to_code_uid": tu,
                "evidence_seg_ids": tuple(sorted(set(evidence[fu]) | set(evidence[tu]))),
            })
    return out


def centrality(index: ConceptIndex,
               relations: list[dict]) -> list[tuple[str, int]]:
    """Degree of each concept in the lifted relation graph; ties broken by
    cluster frequency, then concept_id."""
    neighbors: dict[str, set[str]] = {c.concept_id: set() for c in index.concepts}
    for rel in relations:
        a, b = rel["from_concept"], rel["to_concept"]
        if a != b:
            neighbors[a].add(b)
            neighbors[b].add(a)
    freq = {c.concept_id: c.frequency for c in index.concepts}
    ranked = sorted(
        neighbors,
        key=lambda cid: (-len(neighbors[cid]), -freq[cid], cid),
    )
    return [(cid, len(neighbors[cid])) for cid in ranked]


@dataclass(frozen=True)
class Tension:
    """Opposing or divergent assertions between clusters.

    direction-conflict: two clusters assert opposite causal directions over
    the same concept pair. divergent-pathway: the same antecedent leads to
    different outcome concepts in different clusters.
    """

    kind: str
    concept_ids: tuple[str, ...]
    sides: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "concept_ids": list(self.concept_ids),
            "sides": [dict(s) for s in self.sides],
        }


_DIRECTED = ("causal", "consequence")


def contrast(results: list[ClusterCodingResult],
             index: ConceptIndex) -> list[Tension]:
    relations = lifted_relations(results, index)
    arrows = [r for r in relations
              if r["relation_kind"] in _DIRECTED and r["from_concept"] != r["to_concept"]]

    def side(rel):
        return {
            "cluster_id": rel["cluster_id"],
            "from_concept": rel["from_concept"],
            "to_concept": rel["to_concept"],
            "relation_kind": rel["relation_kind"],
            "evidence_seg_ids": list(rel["evidence_seg_ids"]),
        }

    tensions: list[Tension] = []
    seen: set = set()

    by_pair: dict[tuple[str, str], list[dict]] = {}
    for rel in arrows:
        by_pair.setdefault((rel["from_concept"], rel["to_concept"]), []).append(rel)
    for (a, b), fwd in sorted(by_pair.items()):
        rev = by_pair.get((b, a), [])
        for f in fwd:
            for r in rev:
                if f["cluster_id"] == r["cluster_id"]:
                    continue
                key = ("direction", frozenset((a, b)))
                if key in seen:
                    continue
                seen.add(key)
                tensions.append(Tension("direction-conflict",
                                        tuple(sorted((a, b))),
                                        (side(f), side(r))))

    by_antecedent: dict[str, list[dict]] = {}
    for rel in arrows:
        by_antecedent.setdefault(rel["from_concept"], []).append(rel)
    for a in sorted(by_antecedent):
        outs = by_antecedent[a]
        for i, r1 in enumerate(outs):
            for r2 in outs[i + 1:]:
                if r1["to_concept"] == r2["to_concept"]:
                    continue
                if r1["cluster_id"] == r2["cluster_id"]:
                    continue
                key = ("divergent", a, frozenset((r1["to_concept"], r2["to_concept"])))
                if key in seen:
                    continue
                seen.add(key)
                first, second = sorted((r1, r2), key=lambda r: r["to_concept"])
                tensions.append(Tension(
                    "divergent-pathway",
                    (a,) + tuple(sorted((r1["to_concept"], r2["to_concept"]))),
                    (side(first), side(second)),
                ))
    return tensions


@dataclass(frozen=True)
class TheoryNode:
    node_id: str
    kind: str  # concept | core-category
    label: str
    definition: str = ""
    cluster_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class TheoryEdge:
    src: str
    dst: str
    kind: str  # causal/contextual/intervening/consequence/subsumes/contrast/integrates
    evidence_seg_ids: tuple[str, ...]
    via_code_uids: tuple[str, ...]
    cluster_ids: tuple[str, ...]


@dataclass(frozen=True)
class TheoryGraph:
    nodes: tuple[TheoryNode, ...]
    edges: tuple[TheoryEdge, ...]
    core_candidates: tuple[tuple[str, int], ...]
    contrasts: tuple[Tension, ...]

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "node_id": n.node_id,
                    "kind": n.kind,
                    "label": n.label,
                    "definition": n.definition,
                    "cluster_ids": list(n.cluster_ids),
                }
                for n in self.nodes
            ],
            "edges": [
                {
                    "src": e.src,
                    "dst": e.dst,
                    "kind": e.kind,
                    "evidence_seg_ids": list(e.evidence_seg_ids),
                    "via_code_uids": list(e.via_code_uids),
                    "cluster_ids": list(e.cluster_ids),
                }
                for e in self.edges
            ],
            "core_candidates": [list(c) for c in self.core_candidates],
            "contrasts": [t.to_dict() for t in self.contrasts],
        }

    def export_dot(self) -> str:
        lines = ["digraph theory {"]
        for n in self.nodes:
            shape = "box" if n.kind == "core-category" else "ellipse"
            lines.append(
                f'  "{n.node_id}" [label="{n.label}", shape={shape}];'
            )
        for e in self.edges:
            ev = ",".join(e.evidence_seg_ids)
            lines.append(
                f'  "{e.src}" -> "{e.dst}" [label="{e.kind}", evidence="{ev}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


def hierarchical_integration(index: ConceptIndex,
                             results: list[ClusterCodingResult],
                             ranking: list[tuple[str, int]],
                             tensions: list[Tension],
                             top_k: int = 3,
                             on_event=None) -> TheoryGraph:
    """Assemble the theory graph.

    Subsumption is an evidence-containment heuristic: A subsumes B when B's
    evidence segments are a strict subset of A's and A touches at least as
    many clusters. Contrast pairs stay in the graph as parallel branches.
    """
    code_evidence = {}
    for r in results:
        for c in r.open_codes:
            code_evidence[code_uid(r.cluster_id, c.code_id)] = set(c.evidence_seg_ids)

    concept_evidence = {
        c.concept_id: set().union(*(code_evidence[u] for u in c.member_code_uids))
        for c in index.concepts
    }

    nodes = [
        TheoryNode(c.concept_id, "concept", c.label, cluster_ids=c.cluster_ids)
        for c in index.concepts
    ]
    for r in results:
        nodes.append(TheoryNode(
            f"core:{r.cluster_id}", "core-category",
            r.core_category.label, r.core_category.definition,
            cluster_ids=(r.cluster_id,),
        ))

    edges: dict[tuple[str, str, str], dict] = {}

    def add_edge(src, dst, kind, evidence, via, clusters):
        key = (src, dst, kind)
        if key not in edges:
            edges[key] = {"evidence": set(), "via": set(), "clusters": set()}
        edges[key]["evidence"] |= set(evidence)
        edges[key]["via"] |= set(via)
        edges[key]["clusters"] |= set(clusters)

    for rel in lifted_relations(results, index):
        if rel["from_concept"] == rel["to_concept"]:
            continue
        add_edge(rel["from_concept"], rel["to_concept"], rel["relation_kind"],
                 rel["evidence_seg_ids"],
                 (rel["from_code_uid"], rel["to_code_uid"]), (rel["cluster_id"],))

    subsumption = []
    freq = {c.concept_id: c.frequency for c in index.concepts}
    ids = sorted(concept_evidence)
    for a in ids:
        for b in ids:
            if a == b:
                continue
            if concept_evidence[b] < concept_evidence[a] and freq[a] >= freq[b]:
                subsumption.append((a, b))
    subsumption = _break_cycles(subsumption, concept_evidence, on_event)
    for a, b in subsumption:
        add_edge(a, b, "subsumes", concept_evidence[b],
                 index.by_id(b).member_code_uids, index.by_id(b).cluster_ids)

    for t in tensions:
        pair = t.concept_ids[-2:]  # diverging outcomes, or the conflicting pair
        evidence = [sid for s in t.sides for sid in s["evidence_seg_ids"]]
        clusters = [s["cluster_id"] for s in t.sides]
        via = [u for cid in pair for u in index.by_id(cid).member_code_uids]
        add_edge(pair[0], pair[1], "contrast", evidence, via, clusters)

    for r in results:
        for c in index.concepts:
            if r.cluster_id not in c.cluster_ids:
                continue
            local = [u for u in c.member_code_uids if u.startswith(f"{r.cluster_id}/")]
            evidence = set().union(*(code_evidence[u] for u in local))
            add_edge(f"core:{r.cluster_id}", c.concept_id, "integrates",
                     evidence, local, (r.cluster_id,))

    edge_objs = tuple(
        TheoryEdge(src, dst, kind,
                   tuple(sorted(data["evidence"])),
                   tuple(sorted(data["via"])),
                   tuple(sorted(data["clusters"])))
        for (src, dst, kind), data in sorted(edges.items())
    )
    return TheoryGraph(
        nodes=tuple(sorted(nodes, key=lambda n: n.node_id)),
        edges=edge_objs,
        core_candidates=tuple(ranking[:top_k]),
        contrasts=tuple(tensions),
    )


def _break_cycles(edges: list[tuple[str, str]], evidence: dict[str, set],
                  on_event=None) -> list[tuple[str, str]]:
    """Strict-containment subsumption cannot cycle, but guard anyway: any
    cycle found is broken by dropping its lowest-evidence edge."""
    edges = sorted(edges)
    while True:
        cycle = _find_cycle(edges)
        if cycle is None:
            return edges
        weakest = min(cycle, key=lambda e: (len(evidence[e[1]]), e))
        edges.remove(weakest)
        if on_event is not None:
            on_event("subsumption-cycle-broken", {"dropped_edge": list(weakest)})


def _find_cycle(edges: list[tuple[str, str]]):
    adj: dict[str, list[str]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    state: dict[str, int] = {}
    stack_edges: list[tuple[str, str]] = []

    def dfs(u):
        state[u] = 1
        for v in adj.get(u, []):
            if state.get(v, 0) == 1:
                idx = next(i for i, e in enumerate(stack_edges) if e[0] == v)
                return stack_edges[idx:] + [(u, v)]
            if state.get(v, 0) == 0:
                stack_edges.append((u, v))
                found = dfs(v)
                if found:
                    return found
                stack_edges.pop()
        state[u] = 2
        return None

    for node in sorted(adj):
        if state.get(node, 0) == 0:
            found = dfs(node)
            if found:
                return found
    return None
