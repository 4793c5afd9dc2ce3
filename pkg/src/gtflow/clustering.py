"""Hierarchical agglomerative clustering over embedded segments.

Dissimilarity is 1 - cosine similarity. Agglomeration is exact: cluster
distances are recomputed from the full leaf-level distance matrix at every
merge (no approximation), with ties broken by the smallest (left, right)
node-id pair so replays are byte-identical. Similarity thresholds cut the
dendrogram at dissimilarity 1 - threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddedSegment, normalize
from .errors import (
    InsufficientInputError,
    ConfigRangeError,
    NoValidThresholdError,
    UndefinedMetricError,
)

LINKAGES = ("average", "complete", "single")


@dataclass(frozen=True)
class Dendrogram:
    """Merge history over n leaves.

    Node ids: leaves are 0..n-1 in input order; merge i creates node n+i.
    merges is a list of (left_node, right_node, distance), non-decreasing in
    distance.
    """

    seg_ids: tuple[str, ...]
    vectors: np.ndarray  # n x d, unit rows
    merges: tuple[tuple[int, int, float], ...]
    linkage: str

    @property
    def n_leaves(self) -> int:
        return len(self.seg_ids)

    def export_text(self) -> str:
        lines = [f"# linkage={self.linkage} leaves={self.n_leaves}"]
        lines += [f"{l}\t{r}\t{d!r}" for l, r, d in self.merges]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Cluster:
    cluster_id: str
    seg_ids: tuple[str, ...]
    centroid: np.ndarray


@dataclass(frozen=True)
class ClusterQuality:
    """Silhouette is None (undefined) rather than 0 when fewer than two
    clusters exist or no cluster has two members."""

    silhouette: float | None
    davies_bouldin: float | None
    sizes: tuple[int, ...]


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...]
    threshold_used: float
    linkage: str
    quality: ClusterQuality

    def cluster_of(self, seg_id: str) -> str:
        for c in self.clusters:
            if seg_id in c.seg_ids:
                return c.cluster_id
        raise KeyError(seg_id)

    def to_dict(self) -> dict:
        return {
            "threshold_used": self.threshold_used,
            "linkage": self.linkage,
            "clusters": [
                {
                    "cluster_id": c.cluster_id,
                    "seg_ids": list(c.seg_ids),
                    "centroid": [float(x) for x in c.centroid],
                }
                for c in self.clusters
            ],
            "quality": {
                "silhouette": self.quality.silhouette,
                "davies_bouldin": self.quality.davies_bouldin,
                "sizes": list(self.quality.sizes),
            },
        }


def distance_matrix(embedded: list[EmbeddedSegment]) -> np.ndarray:
    """Pairwise 1 - cosine over unit vectors, exact zeros on the diagonal."""
    m = np.stack([e.vector for e in embedded])
    d = 1.0 - np.clip(m @ m.T, -1.0, 1.0)
    np.fill_diagonal(d, 0.0)
    return d


def _group_distance(dmat: np.ndarray, a: list[int], b: list[int], linkage: str) -> float:
    block = dmat[np.ix_(a, b)]
    if linkage == "average":
        return float(block.mean())
    if linkage == "complete":
        return float(block.max())
    return float(block.min())


def hac(embedded: list[EmbeddedSegment], linkage: str = "average") -> Dendrogram:
    """Exact agglomeration under the chosen linkage.

    Ties in candidate distance are broken by the lexicographically smallest
    (min_id, max_id) node pair.
    """
    if linkage not in LINKAGES:
        raise ConfigRangeError(f"unknown linkage {linkage!r}")
    if len(embedded) < 2:
        raise InsufficientInputError("clustering needs at least 2 segments")
    dims = {e.d for e in embedded}
    if len(dims) != 1:
        raise ConfigRangeError(f"mixed vector dimensions: {sorted(dims)}")

    dmat = distance_matrix(embedded)
    n = len(embedded)
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    # distances between active nodes, keyed by (small_id, large_id)
    dist: dict[tuple[int, int], float] = {
        (i, j): float(dmat[i, j]) for i in range(n) for j in range(i + 1, n)
    }
    merges: list[tuple[int, int, float]] = []
    next_id = n
    while len(members) > 1:
        (a, b), d = min(dist.items(), key=lambda kv: (kv[1], kv[0]))
        merges.append((a, b, d))
        merged = members.pop(a) + members.pop(b)
        for key in [k for k in dist if a in k or b in k]:
            del dist[key]
        for other, idxs in members.items():
            dist[(min(other, next_id), max(other, next_id))] = _group_distance(
                dmat, merged, idxs, linkage
            )
        members[next_id] = merged
        next_id += 1
    return Dendrogram(
        seg_ids=tuple(e.seg_id for e in embedded),
        vectors=np.stack([e.vector for e in embedded]),
        merges=tuple(merges),
        linkage=linkage,
    )


def cut(dendrogram: Dendrogram, similarity_threshold: float) -> ClusterSet:
    """Apply merges with distance <= 1 - threshold; components become
    clusters, labeled C001, C002, ... by smallest member segment index."""
    if not -1.0 < similarity_threshold < 1.0:
        raise ConfigRangeError(
            f"similarity threshold {similarity_threshold} outside (-1, 1)"
        )
    n = dendrogram.n_leaves
    cutoff = 1.0 - similarity_threshold
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    next_id = n
    for left, right, d in dendrogram.merges:
        if d <= cutoff and left in members and right in members:
            members[next_id] = members.pop(left) + members.pop(right)
        next_id += 1

    groups = sorted((sorted(idxs) for idxs in members.values()), key=lambda g: g[0])
    clusters = []
    for i, idxs in enumerate(groups, start=1):
        vecs = dendrogram.vectors[idxs]
        clusters.append(Cluster(
            cluster_id=f"C{i:03d}",
            seg_ids=tuple(dendrogram.seg_ids[k] for k in idxs),
            centroid=normalize(vecs.mean(axis=0)),
        ))
    labels = _labels_for(dendrogram.seg_ids, clusters)
    quality = assess_quality(dendrogram.vectors, labels,
                             [len(c.seg_ids) for c in clusters])
    return ClusterSet(
        clusters=tuple(clusters),
        threshold_used=similarity_threshold,
        linkage=dendrogram.linkage,
        quality=quality,
    )


def _labels_for(seg_ids, clusters) -> np.ndarray:
    owner = {}
    for i, c in enumerate(clusters):
        for s in c.seg_ids:
            owner[s] = i
    return np.asarray([owner[s] for s in seg_ids])


def assess_quality(vectors: np.ndarray, labels: np.ndarray,
                   sizes: list[int]) -> ClusterQuality:
    k = len(set(labels.tolist()))
    defined = k >= 2 and any(s >= 2 for s in sizes)
    sil = _silhouette(vectors, labels) if defined else None
    db = _davies_bouldin(vectors, labels) if k >= 2 else None
    return ClusterQuality(silhouette=sil, davies_bouldin=db, sizes=tuple(sizes))


def _silhouette(vectors: np.ndarray, labels: np.ndarray) -> float:
    dmat = 1.0 - np.clip(vectors @ vectors.T, -1.0, 1.0)
    np.fill_diagonal(dmat, 0.0)
    labs = sorted(set(labels.tolist()))
    scores = []
    for i in range(len(vectors)):
        own = np.flatnonzero((labels == labels[i]))
        own = own[own != i]
        if own.size == 0:
            scores.append(0.0)  # singleton convention
            continue
        a = float(dmat[i, own].mean())
        b = min(
            float(dmat[i, np.flatnonzero(labels == lab)].mean())
            for lab in labs if lab != labels[i]
        )
        m = max(a, b)
        scores.append(0.0 if m == 0.0 else (b - a) / m)
    return float(np.mean(scores))


def silhouette(embedded: list[EmbeddedSegment], clusterset: ClusterSet) -> float:
    """Mean silhouette under cosine distance; singletons contribute 0."""
    if len(clusterset.clusters) < 2:
        raise UndefinedMetricError("silhouette needs at least 2 clusters")
    vectors = np.stack([e.vector for e in embedded])
    labels = _labels_for([e.seg_id for e in embedded], clusterset.clusters)
    return _silhouette(vectors, labels)


def _davies_bouldin(vectors: np.ndarray, labels: np.ndarray) -> float:
    labs = sorted(set(labels.tolist()))
    cents = []
    scatters = []
    for lab in labs:
        idxs = np.flatnonzero(labels == lab)
        c = normalize(vectors[idxs].mean(axis=0))
        cents.append(c)
        scatters.append(float(np.mean(1.0 - np.clip(vectors[idxs] @ c, -1.0, 1.0))))
    total = 0.0
    for i in range(len(labs)):
        worst = 0.0
        for j in range(len(labs)):
            if i == j:
                continue
            sep = 1.0 - float(np.clip(np.dot(cents[i], cents[j]), -1.0, 1.0))
            ratio = np.inf if sep == 0.0 else (scatters[i] + scatters[j]) / sep
            worst = max(worst, ratio)
        total += worst
    return float(total / len(labs))


def davies_bouldin(embedded: list[EmbeddedSegment], clusterset: ClusterSet) -> float:
    """DB index: scatter is mean cosine distance to the re-normalized
    centroid, separation is cosine distance between centroids. Lower is
    better."""
    if len(clusterset.clusters) < 2:
        raise UndefinedMetricError("Davies-Bouldin needs at least 2 clusters")
    vectors = np.stack([e.vector for e in embedded])
    labels = _labels_for([e.seg_id for e in embedded], clusterset.clusters)
    return _davies_bouldin(vectors, labels)


@dataclass(frozen=True)
class ThresholdReport:
    candidates: tuple[dict, ...]
    best_threshold: float


def adjust_threshold(dendrogram: Dendrogram, embedded: list[EmbeddedSegment],
                     candidate_thresholds: list[float],
                     default_threshold: float = 0.52) -> tuple[float, ThresholdReport]:
    """Evaluate each candidate cut and pick the best by silhouette, then
    lower Davies-Bouldin, then closeness to the configured default.

    Candidates yielding one cluster or all singletons are degenerate; if all
    candidates are degenerate there is no valid threshold.
    """
    if not candidate_thresholds:
        raise ConfigRangeError("no candidate thresholds")
    rows = []
    for t in candidate_thresholds:
        cs = cut(dendrogram, t)
        k = len(cs.clusters)
        degenerate = k < 2 or all(len(c.seg_ids) == 1 for c in cs.clusters)
        rows.append({
            "threshold": t,
            "n_clusters": k,
            "silhouette": cs.quality.silhouette,
            "davies_bouldin": cs.quality.davies_bouldin,
            "degenerate": degenerate,
        })
    viable = [r for r in rows if not r["degenerate"] and r["silhouette"] is not None]
    if not viable:
        raise NoValidThresholdError(
            f"all {len(rows)} candidate thresholds produce degenerate clusterings"
        )
    best = min(
        viable,
        key=lambda r: (
            -r["silhouette"],
            r["davies_bouldin"] if r["davies_bouldin"] is not None else np.inf,
            abs(r["threshold"] - default_threshold),
        ),
    )
    return best["threshold"], ThresholdReport(tuple(rows), best["threshold"])


def median_cluster_size(clusterset: ClusterSet) -> float:
    sizes = sorted(len(c.seg_ids) for c in clusterset.clusters)
    mid = len(sizes) // 2
    if len(sizes) % 2:
        return float(sizes[mid])
    return (sizes[mid - 1] + sizes[mid]) / 2.0
