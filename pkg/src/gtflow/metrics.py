"""Validation, reliability, quality-evaluation, and cost metrics.

Notable conventions, all surfaced in reports rather than hidden:

* Composite quality score is the unweighted mean of the six rubric
  dimensions.
* roi() implements (value - cost) / cost * 100 exactly; for the reference
  inputs (cost 95, value 12,800) this gives 13,373.7%, not the commonly
  quoted 13,368% — the engine always reports the formula value.
* Redundancy counts connected components of the near-duplicate graph, and
  semantic alignment is the fraction of themes matched by bipartite
  matching; both are engine definitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .agents import Agent
from .embedding import EmbeddingProvider, cosine_similarity
from .errors import (
    ConfigRangeError,
    EmptyInputError,
    UndefinedMetricError,
)

QUALITY_DIMENSIONS = (
    "theoretical_coherence",
    "empirical_grounding",
    "innovation",
    "practical_value",
    "depth_of_insight",
    "contextual_sensitivity",
)


# --- coverage and redundancy ---------------------------------------------------

def cited_segments(results) -> set[str]:
    cited: set[str] = set()
    for r in results:
        cited.update(r.supporting_evidence)
        for c in r.open_codes:
            cited.update(c.evidence_seg_ids)
    return cited


def coverage_rate(results, all_segment_ids) -> float:
    """Fraction of segments cited by any code's evidence or any result's
    supporting evidence."""
    universe = set(all_segment_ids)
    if not universe:
        raise UndefinedMetricError("coverage undefined for an empty corpus")
    return len(cited_segments(results) & universe) / len(universe)


def duplicate_components(vectors: list[np.ndarray], dup_threshold: float) -> int:
    n = len(vectors)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if cosine_similarity(vectors[i], vectors[j]) >= dup_threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    return len({find(i) for i in range(n)})


def redundancy_rate(code_vectors: list[np.ndarray], dup_threshold: float = 0.90) -> float:
    """(total codes - duplicate-graph components) / total codes."""
    if not code_vectors:
        raise EmptyInputError("redundancy needs at least one code")
    n = len(code_vectors)
    return (n - duplicate_components(code_vectors, dup_threshold)) / n


# --- saturation ----------------------------------------------------------------

@dataclass(frozen=True)
class SaturationReport:
    series: tuple[tuple[int, int], ...]  # (segments_processed, distinct_concepts)
    new_per_batch: tuple[int, ...]
    saturated: bool
    saturated_at_batch: int | None

    def to_dict(self) -> dict:
        return {
            "series": [list(p) for p in self.series],
            "new_per_batch": list(self.new_per_batch),
            "saturated": self.saturated,
            "saturated_at_batch": self.saturated_at_batch,
        }


def saturation_curve(batches: list[tuple[int, set]], window: int = 2,
                     epsilon: int = 1) -> SaturationReport:
    """Cumulative distinct concepts per processed batch.

    batches: (segments_in_batch, concept ids) in processing order. Saturated
    at the first batch where each of the last `window` batches added fewer
    than `epsilon` new concepts.
    """
    if window < 1:
        raise ConfigRangeError("window must be >= 1")
    seen: set = set()
    series = []
    new_counts = []
    processed = 0
    saturated_at = None
    for i, (n_segments, concepts) in enumerate(batches, start=1):
        before = len(seen)
        seen |= set(concepts)
        processed += n_segments
        new_counts.append(len(seen) - before)
        series.append((processed, len(seen)))
        if saturated_at is None and i >= window:
            if all(c < epsilon for c in new_counts[-window:]):
                saturated_at = i
    return SaturationReport(tuple(series), tuple(new_counts),
                            saturated_at is not None, saturated_at)


# --- inter-rater reliability -----------------------------------------------------

def cohen_kappa(assign_a: dict, assign_b: dict) -> float:
    """Chance-corrected agreement between two labelings of the same
    segments. Both raters constant: 1.0 when equal, undefined when not."""
    if set(assign_a) != set(assign_b):
        raise ConfigRangeError("assignments cover different segment sets")
    if not assign_a:
        raise UndefinedMetricError("kappa undefined for empty assignments")
    keys = sorted(assign_a)
    a = [assign_a[k] for k in keys]
    b = [assign_b[k] for k in keys]
    n = len(keys)
    if len(set(a)) == 1 and len(set(b)) == 1:
        if a[0] == b[0]:
            return 1.0
        raise UndefinedMetricError(
            "kappa undefined: both raters constant with different labels"
        )
    p_o = sum(x == y for x, y in zip(a, b)) / n
    labels = sorted(set(a) | set(b))
    p_e = sum((a.count(l) / n) * (b.count(l) / n) for l in labels)
    return (p_o - p_e) / (1.0 - p_e)


def jaccard(themes_a, themes_b) -> float:
    """|A ∩ B| / |A ∪ B| over aligned theme identities; 1.0 when both
    empty."""
    a, b = set(themes_a), set(themes_b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def match_themes(themes_a: list[str], themes_b: list[str],
                 provider: EmbeddingProvider,
                 threshold: float = 0.80) -> list[tuple[int, int, float]]:
    """Maximum-similarity bipartite matching between two theme lists,
    keeping only pairs at or above the threshold."""
    from scipy.optimize import linear_sum_assignment

    if not themes_a or not themes_b:
        return []
    va = provider.embed_texts(list(themes_a))
    vb = provider.embed_texts(list(themes_b))
    sim = np.array([[cosine_similarity(x, y) for y in vb] for x in va])
    rows, cols = linear_sum_assignment(-sim)
    return [(int(i), int(j), float(sim[i, j]))
            for i, j in zip(rows, cols) if sim[i, j] >= threshold]


def jaccard_semantic(themes_a: list[str], themes_b: list[str],
                     provider: EmbeddingProvider, threshold: float = 0.80) -> float:
    """Jaccard over matched theme identities: m / (|A| + |B| - m)."""
    if not themes_a and not themes_b:
        return 1.0
    m = len(match_themes(themes_a, themes_b, provider, threshold))
    return m / (len(themes_a) + len(themes_b) - m)


def semantic_alignment(themes_a: list[str], themes_b: list[str],
                       provider: EmbeddingProvider, threshold: float = 0.80) -> float:
    """Fraction of all themes matched by the bipartite alignment
    (engine definition: 2m / (|A| + |B|))."""
    if not themes_a and not themes_b:
        return 1.0
    m = len(match_themes(themes_a, themes_b, provider, threshold))
    return 2.0 * m / (len(themes_a) + len(themes_b))


def align_label_vocabulary(labels_a: list[str], labels_b: list[str],
                           provider: EmbeddingProvider,
                           threshold: float = 0.80) -> dict[str, str]:
    """Map rater B's labels onto rater A's vocabulary where matched."""
    mapping = {}
    for i, j, _ in match_themes(labels_a, labels_b, provider, threshold):
        mapping[labels_b[j]] = labels_a[i]
    return mapping


def krippendorff_alpha(ratings: list[list], level: str = "interval") -> float:
    """Krippendorff's alpha from a raters x items matrix (None = missing).

    Computed through the coincidence-matrix formulation with the
    finite-sample correction; interval level uses squared differences.
    """
    if level not in ("interval", "nominal"):
        raise ConfigRangeError(f"unsupported level {level!r}")
    if len(ratings) < 2:
        raise ConfigRangeError("alpha needs at least 2 evaluators")
    n_items = len(ratings[0])
    if any(len(r) != n_items for r in ratings):
        raise ConfigRangeError("ragged ratings matrix")

    def delta2(a, b):
        if level == "interval":
            return (a - b) ** 2
        return 0.0 if a == b else 1.0

    units = []
    for j in range(n_items):
        vals = [r[j] for r in ratings if r[j] is not None]
        if len(vals) > 1:
            units.append(vals)
    if not units:
        raise UndefinedMetricError("no pairable values")

    domain = sorted({v for u in units for v in u})
    idx = {v: i for i, v in enumerate(domain)}
    k = len(domain)
    coincidence = np.zeros((k, k))
    for vals in units:
        w = 1.0 / (len(vals) - 1)
        for ii, x in enumerate(vals):
            for jj, y in enumerate(vals):
                if ii != jj:
                    coincidence[idx[x], idx[y]] += w
    n = coincidence.sum()
    marginals = coincidence.sum(axis=1)

    num = sum(
        coincidence[c, d] * delta2(domain[c], domain[d])
        for c in range(k) for d in range(c + 1, k)
    )
    den = sum(
        marginals[c] * marginals[d] * delta2(domain[c], domain[d])
        for c in range(k) for d in range(c + 1, k)
    )
    if den == 0.0:
        if num == 0.0:
            return 1.0
        raise UndefinedMetricError("expected disagreement is zero")
    return float(1.0 - (n - 1.0) * num / den)


# --- LLM evaluator panel ----------------------------------------------------------

@dataclass(frozen=True)
class Rubric:
    dimensions: tuple[str, ...] = QUALITY_DIMENSIONS
    temperature: float = 0.3
    instructions: str = (
        "You are reviewing an anonymized theoretical framework. Score it on "
        "each dimension from 0 to 1. Reply with JSON only: "
        '{"scores": {<dimension>: <number>, ...}} covering every dimension.'
    )

    def prompt(self) -> str:
        dims = "\n".join(f"- {d}" for d in self.dimensions)
        return f"{self.instructions}\n\nDimensions:\n{dims}"


@dataclass(frozen=True)
class QualityScores:
    per_evaluator: dict[str, dict[str, float]]
    composites: dict[str, float]
    panel_mean: float
    inter_evaluator_alpha: float
    failed_evaluators: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_evaluator": {k: dict(v) for k, v in self.per_evaluator.items()},
            "composites": dict(self.composites),
            "panel_mean": self.panel_mean,
            "inter_evaluator_alpha": self.inter_evaluator_alpha,
            "failed_evaluators": dict(self.failed_evaluators),
        }


def composite_score(dimension_scores: dict[str, float],
                    dimensions: tuple[str, ...] = QUALITY_DIMENSIONS) -> float:
    """Unweighted mean of the rubric dimensions."""
    return sum(dimension_scores[d] for d in dimensions) / len(dimensions)


def _parse_scores(output: str, dimensions) -> tuple[dict | None, str]:
    try:
        data = json.loads(output)
        scores = data["scores"]
    except (json.JSONDecodeError, TypeError, KeyError):
        return None, "unparseable evaluator output"
    if not isinstance(scores, dict):
        return None, "scores is not an object"
    parsed = {}
    for d in dimensions:
        if d not in scores:
            return None, f"missing dimension {d!r}"
        try:
            v = float(scores[d])
        except (TypeError, ValueError):
            return None, f"dimension {d!r} is not a number"
        if not 0.0 <= v <= 1.0:
            return None, f"dimension {d!r} score {v} outside [0, 1]"
        parsed[d] = v
    return parsed, ""


def evaluate_theory(rendering: str, panel: list[Agent],
                    rubric: Rubric | None = None,
                    recorder: list | None = None) -> QualityScores:
    """Blind evaluator panel: same rubric prompt to every evaluator, one
    repair reprompt on unparseable output, panel proceeds with at least two
    evaluators."""
    rubric = rubric or Rubric()
    for agent in panel:
        t = agent.handle.parameters.get("temperature")
        if t != rubric.temperature:
            raise ConfigRangeError(
                f"evaluator {agent.handle.agent_id} temperature {t} != "
                f"rubric temperature {rubric.temperature}"
            )
    prompt = rubric.prompt() + "\n\n## framework\n" + rendering

    per: dict[str, dict[str, float]] = {}
    failed: dict[str, str] = {}
    for agent in panel:
        aid = agent.handle.agent_id
        reason = ""
        for attempt in (1, 2):
            p = prompt if attempt == 1 else prompt + (
                "\n\nYour previous reply was invalid: " + reason +
                ". Reply again with only the JSON object."
            )
            reply = agent.call(p, {"response_key": f"evaluation.{aid}"})
            if recorder is not None:
                recorder.append({
                    "stage": "evaluate",
                    "response_key": f"evaluation.{aid}",
                    "attempt": attempt,
                    "prompt": p,
                    "output": reply.output,
                    "reasoning": reply.reasoning,
                    "trace_partial": reply.trace_partial,
                    "agent_id": aid,
                    "model_version": agent.handle.model_version,
                    "prompt_version": 0,
                })
            scores, reason = _parse_scores(reply.output, rubric.dimensions)
            if scores is not None:
                per[aid] = scores
                break
        else:
            failed[aid] = reason
    if len(per) < 2:
        raise UndefinedMetricError(
            f"panel needs at least 2 usable evaluators, got {len(per)} "
            f"(failed: {failed})"
        )
    composites = {aid: composite_score(s, rubric.dimensions) for aid, s in per.items()}
    panel_mean = sum(composites.values()) / len(composites)
    rows = [[per[aid][d] for d in rubric.dimensions] for aid in sorted(per)]
    alpha = krippendorff_alpha(rows, level="interval")
    return QualityScores(per, composites, panel_mean, alpha, failed)


# --- cost and ROI ------------------------------------------------------------------

COST_KINDS = ("human-labor", "api", "infrastructure", "license")


@dataclass(frozen=True)
class CostLine:
    kind: str
    description: str
    quantity: float
    unit_cost: float

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ConfigRangeError(f"unknown cost kind {self.kind!r}")

    @property
    def total(self) -> float:
        return self.quantity * self.unit_cost


@dataclass(frozen=True)
class CostLedger:
    lines: tuple[CostLine, ...]

    @property
    def total(self) -> float:
        return sum(l.total for l in self.lines)

    def total_by_kind(self) -> dict[str, float]:
        out = {k: 0.0 for k in COST_KINDS}
        for l in self.lines:
            out[l.kind] += l.total
        return out

    def roi_percent(self, value_generated: float) -> float:
        return roi(self.total, value_generated)

    def to_dict(self) -> dict:
        return {
            "lines": [
                {
                    "kind": l.kind,
                    "description": l.description,
                    "quantity": l.quantity,
                    "unit_cost": l.unit_cost,
                    "total": l.total,
                }
                for l in self.lines
            ],
            "total": self.total,
            "by_kind": self.total_by_kind(),
        }


def roi(total_cost: float, value_generated: float) -> float:
    """(value - cost) / cost * 100; undefined for non-positive cost."""
    if total_cost <= 0:
        raise UndefinedMetricError("ROI undefined for non-positive cost")
    return (value_generated - total_cost) / total_cost * 100.0


# --- aggregate report ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    coverage: float
    redundancy: float
    saturation: SaturationReport
    n_segments: int
    n_codes: int
    n_concepts: int
    n_clusters: int
    quality: QualityScores | None = None
    reliability: tuple[dict, ...] = ()
    cost: CostLedger | None = None

    def to_dict(self) -> dict:
        return {
            "coverage_rate": self.coverage,
            "redundancy_rate": self.redundancy,
            "saturation": self.saturation.to_dict(),
            "n_segments": self.n_segments,
            "n_codes": self.n_codes,
            "n_concepts": self.n_concepts,
            "n_clusters": self.n_clusters,
            "quality": self.quality.to_dict() if self.quality else None,
            "reliability": [dict(r) for r in self.reliability],
            "cost": self.cost.to_dict() if self.cost else None,
        }
