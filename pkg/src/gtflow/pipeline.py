"""Pipeline orchestration: the four analysis phases, human-in-the-loop
iteration, replay, and parallelism telemetry.

Phases are sequential barriers; each phase's output is audited before the
next begins. Worker transcripts from the concurrent coding phase are
buffered and appended grouped by cluster id, so a repeated run writes a
byte-identical trail (wall-time fields aside).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import corpus as corpus_mod
from .agents import Agent, ReplayAgent
from .audit import (
    RunStore,
    RunTrail,
    VersionStamp,
    collect_transcripts,
    make_version_stamp,
    replay_vector_records,
    run_id_for,
)
from .clustering import (
    ClusterSet,
    Cluster,
    Dendrogram,
    adjust_threshold,
    cut,
    hac,
    median_cluster_size,
)
from .coding import (
    ClusterCodingResult,
    CodingRunOutcome,
    PromptSet,
    SchedulerConfig,
    TaskTiming,
    default_prompts,
    run_all_clusters,
    validate_result,
)
from .corpus import Document, Segment, SegmentPolicy
from .embedding import (
    EmbeddedSegment,
    EmbeddingProvider,
    ReplayEmbedder,
    embed_batch,
)
from .errors import (
    ConfigRangeError,
    EmptyInputError,
    GtflowError,
    NoOpRefinementError,
    NotFoundError,
    ReplayImpossibleError,
    RunStateError,
    UndefinedTelemetryError,
)
from .integration import (
    TheoryGraph,
    build_concept_index,
    centrality,
    code_text,
    code_uid,
    contrast,
    embed_codes,
    hierarchical_integration,
    lifted_relations,
)
from .metrics import (
    CostLedger,
    CostLine,
    MetricReport,
    QualityScores,
    Rubric,
    coverage_rate,
    evaluate_theory,
    redundancy_rate,
    saturation_curve,
)

PHASES = ("ingestion", "clustering", "coding", "integration", "metrics")


@dataclass(frozen=True)
class RunConfig:
    """Every analysis parameter, recorded in full in the run manifest."""

    segment_policy: SegmentPolicy = field(default_factory=SegmentPolicy)
    segmentation_mode: str = "rule-based"  # or "agent-guided"
    dimension: int = 1536
    embed_seed: int = 7
    batch_size: int = 64
    linkage: str = "average"
    similarity_threshold: float = 0.52
    candidate_thresholds: tuple[float, ...] | None = None
    max_workers: int = 10
    align_threshold: float = 0.80
    dup_threshold: float = 0.90
    saturation_window: int = 2
    saturation_epsilon: int = 1
    top_k_core: int = 3
    evaluation_temperature: float = 0.3
    cost_rates: dict = field(default_factory=lambda: {
        "human_hourly": 50.0,
        "human_hours": 0.5,
        "api_per_call": 0.002,
        "infrastructure_flat": 1.0,
        "license_flat": 0.0,
        "value_generated": 12800.0,
    })

    def validate(self) -> None:
        if not -1.0 < self.similarity_threshold < 1.0:
            raise ConfigRangeError(
                f"similarity_threshold {self.similarity_threshold} outside (-1, 1)"
            )
        for t in self.candidate_thresholds or ():
            if not -1.0 < t < 1.0:
                raise ConfigRangeError(f"candidate threshold {t} outside (-1, 1)")
        if self.linkage not in ("average", "complete", "single"):
            raise ConfigRangeError(f"unknown linkage {self.linkage!r}")
        if self.segmentation_mode not in ("rule-based", "agent-guided"):
            raise ConfigRangeError(f"unknown segmentation mode {self.segmentation_mode!r}")
        if self.max_workers < 1:
            raise ConfigRangeError("max_workers must be >= 1")
        if self.dimension < 2:
            raise ConfigRangeError("dimension must be >= 2")
        if not 0.0 < self.align_threshold <= 1.0 + 1e-9:
            raise ConfigRangeError("align_threshold outside (0, 1]")
        if not 0.0 < self.dup_threshold <= 1.0 + 1e-9:
            raise ConfigRangeError("dup_threshold outside (0, 1]")
        if self.saturation_window < 1:
            raise ConfigRangeError("saturation_window must be >= 1")

    def to_dict(self) -> dict:
        return {
            "segment_policy": {
                "min_units": self.segment_policy.min_units,
                "max_units": self.segment_policy.max_units,
                "cjk_chars_per_unit": self.segment_policy.cjk_chars_per_unit,
            },
            "segmentation_mode": self.segmentation_mode,
            "dimension": self.dimension,
            "embed_seed": self.embed_seed,
            "batch_size": self.batch_size,
            "linkage": self.linkage,
            "similarity_threshold": self.similarity_threshold,
            "candidate_thresholds": list(self.candidate_thresholds)
            if self.candidate_thresholds else None,
            "max_workers": self.max_workers,
            "align_threshold": self.align_threshold,
            "dup_threshold": self.dup_threshold,
            "saturation_window": self.saturation_window,
            "saturation_epsilon": self.saturation_epsilon,
            "top_k_core": self.top_k_core,
            "evaluation_temperature": self.evaluation_temperature,
            "cost_rates": dict(self.cost_rates),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        policy = d.get("segment_policy", {})
        return cls(
            segment_policy=SegmentPolicy(
                min_units=policy.get("min_units", 50),
                max_units=policy.get("max_units", 200),
                cjk_chars_per_unit=policy.get("cjk_chars_per_unit", 1.7),
            ),
            segmentation_mode=d.get("segmentation_mode", "rule-based"),
            dimension=d.get("dimension", 1536),
            embed_seed=d.get("embed_seed", 7),
            batch_size=d.get("batch_size", 64),
            linkage=d.get("linkage", "average"),
            similarity_threshold=d.get("similarity_threshold", 0.52),
            candidate_thresholds=tuple(d["candidate_thresholds"])
            if d.get("candidate_thresholds") else None,
            max_workers=d.get("max_workers", 10),
            align_threshold=d.get("align_threshold", 0.80),
            dup_threshold=d.get("dup_threshold", 0.90),
            saturation_window=d.get("saturation_window", 2),
            saturation_epsilon=d.get("saturation_epsilon", 1),
            top_k_core=d.get("top_k_core", 3),
            evaluation_temperature=d.get("evaluation_temperature", 0.3),
            cost_rates=dict(d.get("cost_rates", cls().cost_rates)),
        )


@dataclass(frozen=True)
class ParallelTelemetry:
    per_worker_busy_s: dict[str, float]
    wall_s: float
    serial_s: float
    speedup: float
    load_balancing_coefficient: float
    sync_overhead_fraction: float
    n_tasks: int
    tasks: tuple[dict, ...] = ()

    def to_dict(self) -> dict:
        return {
            "per_worker_busy_s": dict(self.per_worker_busy_s),
            "wall_s": self.wall_s,
            "serial_s": self.serial_s,
            "speedup": self.speedup,
            "load_balancing_coefficient": self.load_balancing_coefficient,
            "sync_overhead_fraction": self.sync_overhead_fraction,
            "n_tasks": self.n_tasks,
            "tasks": [dict(t) for t in self.tasks],
        }


def compute_telemetry(timings: list[TaskTiming]) -> ParallelTelemetry:
    """Busy-time accounting over the coding tasks.

    load_balancing_coefficient = min(busy) / max(busy) over workers that
    received work; sync_overhead_fraction = (wall - max busy) / wall,
    floored at zero.
    """
    if not timings:
        raise UndefinedTelemetryError("no tasks were executed")
    busy: dict[str, float] = {}
    for t in timings:
        busy[t.worker] = busy.get(t.worker, 0.0) + t.duration_s
    wall = max(t.ended_s for t in timings) - min(t.started_s for t in timings)
    serial = sum(t.duration_s for t in timings)
    max_busy = max(busy.values())
    return ParallelTelemetry(
        per_worker_busy_s=dict(sorted(busy.items())),
        wall_s=wall,
        serial_s=serial,
        speedup=serial / wall if wall > 0 else 1.0,
        load_balancing_coefficient=min(busy.values()) / max_busy if max_busy > 0 else 1.0,
        sync_overhead_fraction=max(0.0, (wall - max_busy) / wall) if wall > 0 else 0.0,
        n_tasks=len(timings),
        tasks=tuple(
            {
                "cluster_id": t.cluster_id,
                "worker": t.worker,
                "started_s": t.started_s,
                "ended_s": t.ended_s,
            }
            for t in timings
        ),
    )


def telemetry(run: "AnalysisRun") -> ParallelTelemetry:
    if run.status not in ("complete", "partial", "failed"):
        raise RunStateError(f"run {run.run_id} is not sealed")
    data = run.manifest.get("telemetry")
    if not data or not data.get("tasks"):
        raise UndefinedTelemetryError(f"run {run.run_id} executed no coding tasks")
    timings = [
        TaskTiming(t["cluster_id"], t["worker"], t["started_s"], t["ended_s"])
        for t in data["tasks"]
    ]
    return compute_telemetry(timings)


@dataclass
class AnalysisRun:
    run_id: str
    status: str
    stamp: VersionStamp
    store_root: str
    manifest: dict
    parent_run: str | None = None
    segments: list[Segment] | None = None
    embedded: list[EmbeddedSegment] | None = None
    clusterset: ClusterSet | None = None
    results: list[ClusterCodingResult] | None = None
    theory: TheoryGraph | None = None
    metrics: MetricReport | None = None


def _corpus_payload(docs: list[Document]) -> list[dict]:
    return [
        {
            "doc_id": d.doc_id,
            "text": d.text,
            "source_kind": d.source_kind,
            "metadata": dict(sorted(d.metadata.items())),
        }
        for d in sorted(docs, key=lambda d: d.doc_id)
    ]


def _model_config(embedder: EmbeddingProvider, agent: Agent,
                  panel: list[Agent] | None) -> dict:
    return {
        "embedding": {
            "provider_id": embedder.provider_id,
            "model_version": embedder.model_version,
            "dimension": embedder.dimension,
        },
        "agent": agent.handle.to_dict(),
        "panel": [a.handle.to_dict() for a in panel] if panel else [],
    }


def _vector_records(refs: list[str], embedded: list[EmbeddedSegment],
                    texts: list[str]) -> list[dict]:
    return [
        {
            "ref_id": ref,
            "provider_id": e.provider_id,
            "model_version": e.model_version,
            "d": e.d,
            "values": [float(x) for x in e.vector],
            "text_key": ReplayEmbedder.text_key(t),
        }
        for ref, e, t in zip(refs, embedded, texts)
    ]


def _analysis_params(config: RunConfig) -> dict:
    params = config.to_dict()
    params.pop("cost_rates")  # pricing does not change the analysis
    return params


def render_blind(theory: TheoryGraph) -> str:
    """Text rendering of a theory graph with no method-identifying
    metadata, for blind evaluation."""
    label = {n.node_id: n.label for n in theory.nodes}
    lines = ["Concepts:"]
    for n in theory.nodes:
        if n.kind == "concept":
            lines.append(f"- {n.label}")
    lines.append("Core categories:")
    for n in theory.nodes:
        if n.kind == "core-category":
            lines.append(f"- {n.label}: {n.definition}")
    lines.append("Relations:")
    for e in theory.edges:
        if e.kind in ("subsumes", "integrates", "contrast"):
            continue
        lines.append(f"- {label[e.src]} --{e.kind}--> {label[e.dst]}")
    if theory.contrasts:
        lines.append("Tensions:")
        for t in theory.contrasts:
            names = " / ".join(label[c] for c in t.concept_ids)
            lines.append(f"- {t.kind}: {names}")
    return "\n".join(lines)


class _PhaseFailed(Exception):
    def __init__(self, phase: str, cause: GtflowError):
        self.phase = phase
        self.cause = cause


def run(config: RunConfig, docs: list[Document], embedder: EmbeddingProvider,
        agent: Agent, store: RunStore, prompts: PromptSet | None = None,
        panel: list[Agent] | None = None, parent_run: str | None = None,
        clock=None, progress=None, reuse: dict | None = None,
        run_id: str | None = None) -> AnalysisRun:
    """Execute phases 1-4 plus metrics, audit everything, seal the run."""
    config.validate()
    if not docs:
        raise EmptyInputError("corpus is empty")
    prompts = prompts or default_prompts()
    reuse = reuse or {}

    corpus_payload = _corpus_payload(docs)
    model_config = _model_config(embedder, agent, panel)
    stamp = make_version_stamp(corpus_payload, model_config, prompts.texts(),
                               prompts.version, _analysis_params(config))
    rid = run_id or run_id_for(stamp)
    trail = store.open_run(rid, clock=clock)

    def emit(event: str, **data):
        if progress is not None:
            progress({"event": event, "run_id": rid, **data})

    def phase_start(phase: str):
        trail.append("system-event", {"kind": "phase-start", "phase": phase})
        emit("phase-start", phase=phase)

    def phase_done(phase: str, **payload):
        trail.append("system-event",
                     {"kind": "phase-complete", "phase": phase, **payload})
        emit("phase-complete", phase=phase, **payload)

    manifest_base = {
        "created_at": (clock or time.time)(),
        "parent_run": parent_run,
        "config": config.to_dict(),
        "model_config": model_config,
        "version_stamp": stamp.to_dict(),
        "prompt_set": prompts.to_dict(),
    }

    trail.put_artifact("corpus", corpus_payload)
    trail.append("system-event", {"kind": "run-start", "run_id": rid})

    segments: list[Segment] = []
    embedded: list[EmbeddedSegment] = []
    clusterset: ClusterSet | None = None
    results: list[ClusterCodingResult] = []
    outcome: CodingRunOutcome | None = None
    theory: TheoryGraph | None = None
    report: MetricReport | None = None
    agent_calls = 0

    try:
        # ---- phase 1: ingestion and segmentation ----
        phase_start("ingestion")
        if "segments" in reuse:
            segments = reuse["segments"]
            trail.append("system-event", {"kind": "phase-reused", "phase": "ingestion"})
        else:
            seg_prompt = prompts.segmentation_prompt.format(
                min_units=config.segment_policy.min_units,
                max_units=config.segment_policy.max_units,
            )
            for doc in sorted(docs, key=lambda d: d.doc_id):
                if config.segmentation_mode == "agent-guided":
                    def on_event(kind, detail):
                        trail.append("system-event", {"kind": kind, **detail})
                    segs = corpus_mod.segment_agent_guided(
                        doc, config.segment_policy, agent, seg_prompt,
                        on_event=on_event)
                else:
                    segs = corpus_mod.segment_rule_based(doc, config.segment_policy)
                for s in segs:
                    if s.over_length:
                        trail.append("system-event", {
                            "kind": "over-length-segment",
                            "seg_id": s.seg_id,
                            "unit_count": s.unit_count,
                        }, references=[s.seg_id])
                segments.extend(segs)
        trail.put_artifact("segments", [s.to_dict() for s in segments])
        phase_done("ingestion", n_segments=len(segments))

        # ---- phase 2: vectorization and clustering ----
        phase_start("clustering")
        if "embedded" in reuse:
            embedded = reuse["embedded"]
            trail.append("system-event", {"kind": "phase-reused", "phase": "embedding"})
        else:
            embedded = embed_batch(segments, embedder, config.batch_size)
        trail.put_artifact("vectors", _vector_records(
            [e.seg_id for e in embedded], embedded, [s.text for s in segments]))

        if "dendrogram" in reuse:
            dendro = reuse["dendrogram"]
            trail.append("system-event", {"kind": "phase-reused", "phase": "hac"})
        else:
            dendro = hac(embedded, config.linkage)
        trail.put_artifact("dendrogram", {
            "linkage": dendro.linkage,
            "seg_ids": list(dendro.seg_ids),
            "merges": [[l, r, d] for l, r, d in dendro.merges],
        })

        threshold = config.similarity_threshold
        if config.candidate_thresholds:
            threshold, threshold_report = adjust_threshold(
                dendro, embedded, list(config.candidate_thresholds),
                default_threshold=config.similarity_threshold)
            trail.put_artifact("threshold_report", {
                "candidates": [dict(r) for r in threshold_report.candidates],
                "best_threshold": threshold,
            })
            trail.append("system-event", {
                "kind": "threshold-adjusted",
                "chosen": threshold,
                "candidates": list(config.candidate_thresholds),
            })
        if "clusterset" in reuse:
            clusterset = reuse["clusterset"]
            trail.append("system-event", {"kind": "phase-reused", "phase": "cut"})
        else:
            clusterset = cut(dendro, threshold)
        trail.put_artifact("clusterset", clusterset.to_dict())
        median = median_cluster_size(clusterset)
        if not 8 <= median <= 12:
            trail.append("system-event", {
                "kind": "cluster-size-advisory",
                "median_size": median,
                "advised_range": [8, 12],
            })
        phase_done("clustering", n_clusters=len(clusterset.clusters),
                   threshold=threshold)

        # ---- phase 3: parallel coding ----
        phase_start("coding")
        outcome = run_all_clusters(
            clusterset, segments, prompts, agent,
            SchedulerConfig(config.max_workers),
            on_task_done=lambda cid, failed: emit(
                "cluster-complete", cluster_id=cid, failed=failed),
        )
        # transcripts buffered per cluster, appended in cluster_id order so
        # the trail is deterministic under concurrency
        for cid in sorted(outcome.call_records):
            for t in outcome.call_records[cid]:
                ref = trail.put_artifact(f"transcript:{cid}:{t['stage']}:{t['attempt']}", t)
                trail.append("prompt-log", {
                    "response_key": t["response_key"],
                    "stage": t["stage"],
                    "attempt": t["attempt"],
                    "agent_id": t["agent_id"],
                    "model_version": t["model_version"],
                    "prompt_version": t["prompt_version"],
                    "prompt": t["prompt"],
                    "transcript_artifact": ref,
                }, references=[cid])
                trail.append("reasoning-trace", {
                    "response_key": t["response_key"],
                    "reasoning": t["reasoning"],
                    "trace_partial": t["trace_partial"],
                }, references=[cid])
                agent_calls += 1
        for r in outcome.results:
            trail.append("cluster-theory", r.to_dict(), references=[r.cluster_id])
            trail.append("cluster-audit", {
                "cluster_id": r.cluster_id,
                "n_codes": len(r.open_codes),
                "n_relations": len(r.axial_relationships),
                "core_category": r.core_category.label,
            }, references=[r.cluster_id])
        for cid, err in sorted(outcome.failures.items()):
            trail.append("system-event", {
                "kind": "cluster-failed", "cluster_id": cid, "error": err,
            }, references=[cid])
        results = outcome.results
        trail.put_artifact("coding_results", [r.to_dict() for r in results])
        if not results:
            raise _PhaseFailed("coding", RunStateError(
                f"all {len(outcome.failures)} clusters failed"))
        phase_done("coding", n_results=len(results),
                   n_failed=len(outcome.failures))

        # ---- phase 4: integration and theory building ----
        phase_start("integration")
        code_vectors = embed_codes(results, embedder)
        uids = sorted(code_vectors)
        uid_texts = {}
        for r in results:
            for c in r.open_codes:
                uid_texts[code_uid(r.cluster_id, c.code_id)] = code_text(
                    c.label, c.definition)
        trail.put_artifact("code_vectors", [
            {
                "ref_id": uid,
                "provider_id": embedder.provider_id,
                "model_version": embedder.model_version,
                "d": int(code_vectors[uid].shape[0]),
                "values": [float(x) for x in code_vectors[uid]],
                "text_key": ReplayEmbedder.text_key(uid_texts[uid]),
            }
            for uid in uids
        ])
        index = build_concept_index(results, code_vectors, config.align_threshold)
        trail.put_artifact("concept_index", index.to_dict())
        relations = lifted_relations(results, index)
        ranking = centrality(index, relations)
        tensions = contrast(results, index)

        def integration_event(kind, detail):
            trail.append("system-event", {"kind": kind, **detail})

        theory = hierarchical_integration(index, results, ranking, tensions,
                                          top_k=config.top_k_core,
                                          on_event=integration_event)
        trail.put_artifact("theory", theory.to_dict())
        trail.put_artifact("theory_dot", {"dot": theory.export_dot()})
        phase_done("integration", n_concepts=len(index.concepts),
                   n_edges=len(theory.edges), n_tensions=len(tensions))

        # ---- metrics ----
        phase_start("metrics")
        all_seg_ids = [s.seg_id for s in segments]
        coverage = coverage_rate(results, all_seg_ids)
        redundancy = redundancy_rate([code_vectors[u] for u in uids],
                                     config.dup_threshold)
        member_counts = {c.cluster_id: len(c.seg_ids) for c in clusterset.clusters}
        batches = []
        for r in results:  # processing order: canonical cluster_id order
            touched = {c.concept_id for c in index.concepts
                       if r.cluster_id in c.cluster_ids}
            batches.append((member_counts[r.cluster_id], touched))
        saturation = saturation_curve(batches, config.saturation_window,
                                      config.saturation_epsilon)

        quality: QualityScores | None = None
        if panel:
            eval_records: list = []
            quality = evaluate_theory(
                render_blind(theory), panel,
                Rubric(temperature=config.evaluation_temperature),
                recorder=eval_records)
            for t in eval_records:
                ref = trail.put_artifact(
                    f"transcript:evaluation:{t['agent_id']}:{t['attempt']}", t)
                trail.append("prompt-log", {
                    "response_key": t["response_key"],
                    "stage": "evaluate",
                    "attempt": t["attempt"],
                    "agent_id": t["agent_id"],
                    "model_version": t["model_version"],
                    "prompt_version": t["prompt_version"],
                    "prompt": t["prompt"],
                    "transcript_artifact": ref,
                })
                agent_calls += 1

        rates = config.cost_rates
        ledger = CostLedger((
            CostLine("human-labor", "review and refinement hours",
                     rates["human_hours"], rates["human_hourly"]),
            CostLine("api", "agent and evaluator calls",
                     float(agent_calls), rates["api_per_call"]),
            CostLine("infrastructure", "compute and storage",
                     1.0, rates["infrastructure_flat"]),
            CostLine("license", "software licenses",
                     1.0, rates["license_flat"]),
        ))
        report = MetricReport(
            coverage=coverage,
            redundancy=redundancy,
            saturation=saturation,
            n_segments=len(segments),
            n_codes=len(uids),
            n_concepts=len(index.concepts),
            n_clusters=len(clusterset.clusters),
            quality=quality,
            cost=ledger,
        )
        trail.put_artifact("metrics", report.to_dict())
        phase_done("metrics", coverage=coverage, redundancy=redundancy)

        status = "partial" if outcome.failures else "complete"
    except _PhaseFailed as pf:
        trail.append("system-event", {
            "kind": "phase-failed", "phase": pf.phase, "error": str(pf.cause),
        })
        status = "failed"
    except GtflowError as exc:
        trail.append("system-event", {"kind": "phase-failed", "error": str(exc)})
        status = "failed"

    tele = None
    if outcome is not None and outcome.task_timings:
        tele = compute_telemetry(outcome.task_timings)
    manifest = trail.seal(status, {
        **manifest_base,
        "failed_clusters": sorted(outcome.failures) if outcome else [],
        "telemetry": tele.to_dict() if tele else None,
        "n_agent_calls": agent_calls,
    })
    emit("run-sealed", status=status)
    return AnalysisRun(
        run_id=rid,
        status=status,
        stamp=stamp,
        store_root=str(store.root),
        manifest=manifest,
        parent_run=parent_run,
        segments=segments or None,
        embedded=embedded or None,
        clusterset=clusterset,
        results=results or None,
        theory=theory,
        metrics=report,
    )


# --- loading stored phase outputs ------------------------------------------------

def load_segments(store: RunStore, run_id: str) -> list[Segment]:
    return [Segment.from_dict(d) for d in store.artifact(run_id, "segments")]


def load_embedded(store: RunStore, run_id: str) -> list[EmbeddedSegment]:
    return [
        EmbeddedSegment(
            seg_id=rec["ref_id"],
            vector=np.asarray(rec["values"], dtype=np.float64),
            provider_id=rec["provider_id"],
            model_version=rec["model_version"],
        )
        for rec in store.artifact(run_id, "vectors")
    ]


def load_clusterset(store: RunStore, run_id: str) -> ClusterSet:
    from .clustering import ClusterQuality

    d = store.artifact(run_id, "clusterset")
    return ClusterSet(
        clusters=tuple(
            Cluster(c["cluster_id"], tuple(c["seg_ids"]),
                    np.asarray(c["centroid"], dtype=np.float64))
            for c in d["clusters"]
        ),
        threshold_used=d["threshold_used"],
        linkage=d["linkage"],
        quality=ClusterQuality(
            silhouette=d["quality"]["silhouette"],
            davies_bouldin=d["quality"]["davies_bouldin"],
            sizes=tuple(d["quality"]["sizes"]),
        ),
    )


def load_dendrogram(store: RunStore, run_id: str,
                    embedded: list[EmbeddedSegment]) -> Dendrogram:
    d = store.artifact(run_id, "dendrogram")
    return Dendrogram(
        seg_ids=tuple(d["seg_ids"]),
        vectors=np.stack([e.vector for e in embedded]),
        merges=tuple((int(l), int(r), float(x)) for l, r, x in d["merges"]),
        linkage=d["linkage"],
    )


def load_results(store: RunStore, run_id: str) -> list[ClusterCodingResult]:
    return [validate_result(d) for d in store.artifact(run_id, "coding_results")]


def load_corpus_docs(store: RunStore, run_id: str) -> list[Document]:
    return [
        Document(
            doc_id=d["doc_id"],
            text=d["text"],
            source_kind=d["source_kind"],
            metadata=dict(d["metadata"]),
            annotations=corpus_mod.extract_annotations(d["text"]),
        )
        for d in store.artifact(run_id, "corpus")
    ]


# --- iteration ---------------------------------------------------------------------

# What a change invalidates; anything downstream of the earliest affected
# phase is recomputed, everything upstream is reused byte-identically.
_PHASE_OF_PARAM = {
    "segment_policy": "ingestion",
    "segmentation_mode": "ingestion",
    "dimension": "embedding",
    "embed_seed": "embedding",
    "batch_size": "embedding",
    "linkage": "hac",
    "similarity_threshold": "cut",
    "candidate_thresholds": "cut",
    "max_workers": "coding",
    "align_threshold": "integration",
    "dup_threshold": "metrics",
    "saturation_window": "metrics",
    "saturation_epsilon": "metrics",
    "top_k_core": "integration",
    "evaluation_temperature": "metrics",
    "cost_rates": "metrics",
}
_PHASE_ORDER = ("ingestion", "embedding", "hac", "cut", "coding",
                "integration", "metrics")


def iterate(store: RunStore, parent_run_id: str, embedder: EmbeddingProvider,
            agent: Agent, refined_prompts: PromptSet | None = None,
            changed: dict | None = None, panel: list[Agent] | None = None,
            docs: list[Document] | None = None, clock=None,
            progress=None) -> AnalysisRun:
    """Re-run from the earliest phase affected by the refinement; reused
    artifacts are byte-identical to the parent's."""
    parent = store.manifest(parent_run_id)
    if parent.get("status") not in ("complete", "partial"):
        raise RunStateError(f"parent run {parent_run_id} is not sealed complete")
    parent_prompts = PromptSet.from_dict(parent["prompt_set"])
    parent_config = RunConfig.from_dict(parent["config"])

    changed = dict(changed or {})
    prompts = refined_prompts or parent_prompts
    if refined_prompts is not None:
        if refined_prompts.parent_version != parent_prompts.version:
            raise ConfigRangeError(
                f"refined prompts parent_version {refined_prompts.parent_version} "
                f"!= parent run prompt version {parent_prompts.version}"
            )
    prompts_changed = prompts.texts() != parent_prompts.texts()
    if not prompts_changed and not changed:
        raise NoOpRefinementError(
            "refinement is identical to the parent run's prompts and parameters"
        )

    config = replace_config(parent_config, changed)
    config.validate()

    earliest = "coding" if prompts_changed else "metrics"
    for param in changed:
        phase = _PHASE_OF_PARAM.get(param, "ingestion")
        if _PHASE_ORDER.index(phase) < _PHASE_ORDER.index(earliest):
            earliest = phase

    reuse: dict = {}
    docs = docs if docs is not None else load_corpus_docs(store, parent_run_id)
    idx = _PHASE_ORDER.index(earliest)
    if idx > _PHASE_ORDER.index("ingestion"):
        reuse["segments"] = load_segments(store, parent_run_id)
    if idx > _PHASE_ORDER.index("embedding"):
        reuse["embedded"] = load_embedded(store, parent_run_id)
    if idx > _PHASE_ORDER.index("hac"):
        reuse["dendrogram"] = load_dendrogram(store, parent_run_id,
                                              reuse["embedded"])
    if idx > _PHASE_ORDER.index("cut"):
        reuse["clusterset"] = load_clusterset(store, parent_run_id)

    return run(config, docs, embedder, agent, store, prompts=prompts,
               panel=panel, parent_run=parent_run_id, clock=clock,
               progress=progress, reuse=reuse)


def replace_config(config: RunConfig, changed: dict) -> RunConfig:
    known = set(RunConfig().to_dict())
    unknown = set(changed) - known
    if unknown:
        raise ConfigRangeError(f"unknown config parameters: {sorted(unknown)}")
    merged = config.to_dict()
    for k, v in changed.items():
        if k == "segment_policy":
            merged[k] = {**merged[k], **v}
        else:
            merged[k] = v
    return RunConfig.from_dict(merged)


def iteration_depth(store: RunStore, run_id: str) -> int:
    depth = 0
    current = run_id
    while True:
        parent = store.manifest(current).get("parent_run")
        if parent is None:
            return depth
        depth += 1
        current = parent


# --- replay -----------------------------------------------------------------------

def replay(store: RunStore, run_id: str, target_store: RunStore,
           changed: dict | None = None, clock=None) -> AnalysisRun:
    """Re-execute a stored run through replay providers.

    With no parameter changes the result is byte-identical (wall time
    aside). Missing transcripts or vectors raise ReplayImpossibleError
    before any divergence can happen.
    """
    manifest = store.manifest(run_id)
    if manifest.get("status") not in ("complete", "partial"):
        raise RunStateError(f"run {run_id} is not sealed complete")
    config = RunConfig.from_dict(manifest["config"])
    if changed:
        config = replace_config(config, changed)
    prompts = PromptSet.from_dict(manifest["prompt_set"])
    docs = load_corpus_docs(store, run_id)

    vec_records = dict(replay_vector_records(store, run_id))
    try:
        code_vecs = store.artifact(run_id, "code_vectors")
    except NotFoundError:
        code_vecs = []
    for rec in code_vecs:
        vec_records[rec["text_key"]] = rec["values"]
    emb_meta = manifest["model_config"]["embedding"]
    embedder = ReplayEmbedder(
        {k: np.asarray(v, dtype=np.float64) for k, v in vec_records.items()},
        dimension=emb_meta["dimension"],
        provider_id=emb_meta["provider_id"],
        model_version=emb_meta["model_version"],
    )

    transcripts = collect_transcripts(store, run_id)
    from .agents import AgentHandle

    am = manifest["model_config"]["agent"]
    agent = ReplayAgent(
        [t for t in transcripts if t["stage"] != "evaluate"],
        handle=AgentHandle(am["agent_id"], am["kind"], am["model_version"],
                           dict(am["parameters"])),
    )
    panel = None
    eval_ts = [t for t in transcripts if t["stage"] == "evaluate"]
    if eval_ts:
        panel = []
        for pm in manifest["model_config"]["panel"]:
            mine = [t for t in eval_ts if t["agent_id"] == pm["agent_id"]]
            panel.append(ReplayAgent(
                mine,
                handle=AgentHandle(pm["agent_id"], pm["kind"],
                                   pm["model_version"], dict(pm["parameters"])),
            ))
    return run(config, docs, embedder, agent, target_store, prompts=prompts,
               panel=panel, parent_run=manifest.get("parent_run"), clock=clock)
