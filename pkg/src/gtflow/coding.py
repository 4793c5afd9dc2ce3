"""Three-stage coding (open, axial, selective) executed per cluster through
the agent interface, with full structural validation of the outputs.

Each stage's output is fed into the next stage's context as structured
JSON, never free prose. A malformed reply earns exactly one repair
reprompt; a second malformed reply fails the stage with the raw transcript
preserved for the audit trail.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .agents import Agent
from .clustering import Cluster, ClusterSet
from .corpus import Segment
from .errors import (
    InsufficientInputError,
    SchemaValidationError,
    StageFailureError,
    TransportError,
)

RELATION_KINDS = ("causal", "contextual", "intervening", "consequence")
STAGES = ("open", "axial", "selective")


@dataclass(frozen=True)
class PromptSet:
    """Versioned instruction texts. Immutable once created; refinement
    produces a new version linked to its parent."""

    segmentation_prompt: str
    open_prompt: str
    axial_prompt: str
    selective_prompt: str
    integration_prompt: str
    version: int = 1
    parent_version: int | None = None

    def refine(self, **edits: str) -> "PromptSet":
        unknown = set(edits) - {f"{n}_prompt" for n in
                                ("segmentation", "open", "axial", "selective", "integration")}
        if unknown:
            raise KeyError(f"unknown prompt fields: {sorted(unknown)}")
        return replace(self, version=self.version + 1, parent_version=self.version,
                       **edits)

    def texts(self) -> dict[str, str]:
        return {
            "segmentation_prompt": self.segmentation_prompt,
            "open_prompt": self.open_prompt,
            "axial_prompt": self.axial_prompt,
            "selective_prompt": self.selective_prompt,
            "integration_prompt": self.integration_prompt,
        }

    def to_dict(self) -> dict:
        return {**self.texts(), "version": self.version,
                "parent_version": self.parent_version}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptSet":
        return cls(**d)


def default_prompts() -> PromptSet:
    """Neutral starting prompts; refinements are supplied by the reviewer."""
    return PromptSet(
        segmentation_prompt=(
            "Split the document into self-contained units, each expressing one "
            "complete thought or experience, sized between {min_units} and "
            "{max_units} analysis units. Do not break inside a sentence, keep "
            "a speaker's turn together when it fits, and keep the units in "
            "original order. Reply with JSON only: "
            '{{"spans": [[start, end], ...]}} using character offsets.'
        ),
        open_prompt=(
            "Read the segments below and name the recurring concepts you see. "
            "For each concept give a short label, a one-sentence definition, "
            "and the ids of the segments that evidence it. Reply with JSON "
            'only: {"open_codes": [{"code_id": "...", "label": "...", '
            '"definition": "...", "evidence_seg_ids": ["..."]}]}.'
        ),
        axial_prompt=(
            "Relate the concepts listed in the context. Allowed relation "
            "kinds: causal, contextual, intervening, consequence. Only relate "
            "concepts from the list, and give a short rationale for each "
            'relation. Reply with JSON only: {"axial_relationships": '
            '[{"from_code": "...", "to_code": "...", "relation_kind": "...", '
            '"rationale": "..."}]}.'
        ),
        selective_prompt=(
            "Choose the single category that best integrates and explains the "
            "concepts and relations in the context. Give its label, "
            "definition, properties, and dimensional range, plus the segment "
            "ids that ground it. Reply with JSON only: {\"core_category\": "
            '{"label": "...", "definition": "...", "properties": ["..."], '
            '"dimensional_range": ["..."]}, "supporting_evidence": ["..."]}.'
        ),
        integration_prompt=(
            "Review the cross-cluster concept index and describe how the "
            "cluster-level categories relate, preserving tensions rather than "
            "collapsing them."
        ),
    )


@dataclass(frozen=True)
class OpenCode:
    code_id: str
    label: str
    definition: str
    evidence_seg_ids: tuple[str, ...]


@dataclass(frozen=True)
class AxialRelationship:
    from_code: str
    to_code: str
    relation_kind: str
    rationale: str = ""


@dataclass(frozen=True)
class CoreCategory:
    label: str
    definition: str
    properties: tuple[str, ...] = ()
    dimensional_range: tuple[str, ...] = ()


@dataclass(frozen=True)
class ClusterCodingResult:
    cluster_id: str
    open_codes: tuple[OpenCode, ...]
    axial_relationships: tuple[AxialRelationship, ...]
    core_category: CoreCategory
    supporting_evidence: tuple[str, ...]
    reasoning_trace: str = ""
    agent_id: str = ""
    prompt_version: int = 0

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "open_codes": [
                {
                    "code_id": c.code_id,
                    "label": c.label,
                    "definition": c.definition,
                    "evidence_seg_ids": list(c.evidence_seg_ids),
                }
                for c in self.open_codes
            ],
            "axial_relationships": [
                {
                    "from_code": r.from_code,
                    "to_code": r.to_code,
                    "relation_kind": r.relation_kind,
                    "rationale": r.rationale,
                }
                for r in self.axial_relationships
            ],
            "core_category": {
                "label": self.core_category.label,
                "definition": self.core_category.definition,
                "properties": list(self.core_category.properties),
                "dimensional_range": list(self.core_category.dimensional_range),
            },
            "supporting_evidence": list(self.supporting_evidence),
            "reasoning_trace": self.reasoning_trace,
            "agent_id": self.agent_id,
            "prompt_version": self.prompt_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterCodingResult":
        return validate_result(d)


# --- validation ---------------------------------------------------------------

def validation_errors(candidate, cluster_members: set[str] | None = None) -> list[str]:
    """Every violation in the candidate structure, not just the first.

    Accepts arbitrary input without raising. cluster_members, when given,
    enables the referential checks that evidence ids stay within the
    cluster.
    """
    problems: list[str] = []
    if not isinstance(candidate, dict):
        return [f"result must be an object, got {type(candidate).__name__}"]

    cluster_id = candidate.get("cluster_id")
    if not isinstance(cluster_id, str) or not cluster_id:
        problems.append("cluster_id: missing or empty")

    def check_evidence(ids, where):
        if not isinstance(ids, list) or not ids:
            problems.append(f"{where}: evidence list missing or empty")
            return
        for s in ids:
            if not isinstance(s, str):
                problems.append(f"{where}: evidence id {s!r} is not a string")
            elif cluster_members is not None and s not in cluster_members:
                problems.append(f"{where}: evidence id {s!r} outside the cluster")

    code_ids: set[str] = set()
    codes = candidate.get("open_codes")
    if not isinstance(codes, list):
        problems.append("open_codes: missing or not a list")
        codes = []
    for i, c in enumerate(codes):
        if not isinstance(c, dict):
            problems.append(f"open_codes[{i}]: not an object")
            continue
        cid = c.get("code_id")
        if not isinstance(cid, str) or not cid:
            problems.append(f"open_codes[{i}]: code_id missing or empty")
        elif cid in code_ids:
            problems.append(f"open_codes[{i}]: duplicate code_id {cid!r}")
        else:
            code_ids.add(cid)
        if not isinstance(c.get("label"), str) or not c.get("label"):
            problems.append(f"open_codes[{i}]: label missing or empty")
        if not isinstance(c.get("definition"), str):
            problems.append(f"open_codes[{i}]: definition missing")
        check_evidence(c.get("evidence_seg_ids"), f"open_codes[{i}]")

    rels = candidate.get("axial_relationships")
    if not isinstance(rels, list):
        problems.append("axial_relationships: missing or not a list")
        rels = []
    for i, r in enumerate(rels):
        if not isinstance(r, dict):
            problems.append(f"axial_relationships[{i}]: not an object")
            continue
        frm, to = r.get("from_code"), r.get("to_code")
        kind = r.get("relation_kind")
        if kind not in RELATION_KINDS:
            problems.append(
                f"axial_relationships[{i}]: illegal relation_kind {kind!r} "
                f"(allowed: {', '.join(RELATION_KINDS)})"
            )
        if frm == to:
            problems.append(f"axial_relationships[{i}]: from_code equals to_code")
        for side, val in (("from_code", frm), ("to_code", to)):
            if not isinstance(val, str) or not val:
                problems.append(f"axial_relationships[{i}]: {side} missing")
            elif val not in code_ids:
                problems.append(
                    f"axial_relationships[{i}]: {side} {val!r} does not name an open code"
                )

    core = candidate.get("core_category")
    if not isinstance(core, dict):
        problems.append("core_category: missing or not an object")
    else:
        if not isinstance(core.get("label"), str) or not core.get("label"):
            problems.append("core_category: label missing or empty")
        if not isinstance(core.get("definition"), str):
            problems.append("core_category: definition missing")
        for key in ("properties", "dimensional_range"):
            val = core.get(key, [])
            if not isinstance(val, list) or not all(isinstance(x, str) for x in val):
                problems.append(f"core_category: {key} must be a list of strings")
        if not codes:
            problems.append("core_category: present without grounding open codes")

    check_evidence(candidate.get("supporting_evidence"), "supporting_evidence")
    return problems


def validate_result(candidate, cluster_members: set[str] | None = None) -> ClusterCodingResult:
    """Validate and construct; raises SchemaValidationError listing every
    violation when the candidate does not conform."""
    problems = validation_errors(candidate, cluster_members)
    if problems:
        raise SchemaValidationError(problems)
    core = candidate["core_category"]
    return ClusterCodingResult(
        cluster_id=candidate["cluster_id"],
        open_codes=tuple(
            OpenCode(c["code_id"], c["label"], c["definition"],
                     tuple(c["evidence_seg_ids"]))
            for c in candidate["open_codes"]
        ),
        axial_relationships=tuple(
            AxialRelationship(r["from_code"], r["to_code"], r["relation_kind"],
                              r.get("rationale", ""))
            for r in candidate["axial_relationships"]
        ),
        core_category=CoreCategory(
            core["label"], core["definition"],
            tuple(core.get("properties", [])),
            tuple(core.get("dimensional_range", [])),
        ),
        supporting_evidence=tuple(candidate["supporting_evidence"]),
        reasoning_trace=candidate.get("reasoning_trace", ""),
        agent_id=candidate.get("agent_id", ""),
        prompt_version=candidate.get("prompt_version", 0),
    )


# --- stage execution ----------------------------------------------------------

_REPAIR_SUFFIX = (
    "\n\nYour previous reply could not be parsed as the required JSON shape. "
    "Reply again with only the JSON object described above, no prose."
)

_STAGE_SHAPE = {
    "open": ("open_codes", list),
    "axial": ("axial_relationships", list),
    "selective": ("core_category", dict),
}


def _parse_stage(stage: str, output: str):
    try:
        data = json.loads(output)
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict):
        return None
    key, typ = _STAGE_SHAPE[stage]
    if not isinstance(data.get(key), typ):
        return None
    return data


def code_cluster(cluster: Cluster, segments: list[Segment], prompts: PromptSet,
                 agent: Agent, recorder: list | None = None) -> ClusterCodingResult:
    """Run the three coding stages for one cluster.

    Every agent call is appended to recorder as a transcript dict (prompt,
    context key, output, reasoning, attempt) so the caller can audit it.
    """
    if not cluster.seg_ids:
        raise InsufficientInputError(f"cluster {cluster.cluster_id} is empty")
    by_id = {s.seg_id: s for s in segments}
    members = [by_id[sid] for sid in cluster.seg_ids]
    seg_block = json.dumps(
        [{"seg_id": s.seg_id, "text": s.text} for s in members],
        ensure_ascii=False, sort_keys=True,
    )

    def run_stage(stage: str, prompt: str, context: dict):
        reasoning_parts = []
        for attempt in (1, 2):
            p = prompt if attempt == 1 else prompt + _REPAIR_SUFFIX
            reply = agent.call(p, context)
            if recorder is not None:
                recorder.append({
                    "stage": stage,
                    "response_key": context["response_key"],
                    "attempt": attempt,
                    "prompt": p,
                    "output": reply.output,
                    "reasoning": reply.reasoning,
                    "trace_partial": reply.trace_partial,
                    "agent_id": agent.handle.agent_id,
                    "model_version": agent.handle.model_version,
                    "prompt_version": prompts.version,
                })
            reasoning_parts.append(reply.reasoning)
            data = _parse_stage(stage, reply.output)
            if data is not None:
                return data, "\n".join(x for x in reasoning_parts if x)
        raise StageFailureError(
            f"{stage} stage output malformed after repair reprompt "
            f"(cluster {cluster.cluster_id})", stage, reply.output
        )

    base = {"cluster_id": cluster.cluster_id, "segments": seg_block}
    trace = []

    open_data, r = run_stage("open", prompts.open_prompt, {
        **base, "response_key": f"{cluster.cluster_id}.open",
    })
    trace.append(r)

    axial_data, r = run_stage("axial", prompts.axial_prompt, {
        **base,
        "response_key": f"{cluster.cluster_id}.axial",
        "open_codes": json.dumps(open_data["open_codes"], ensure_ascii=False,
                                 sort_keys=True),
    })
    trace.append(r)

    selective_data, r = run_stage("selective", prompts.selective_prompt, {
        **base,
        "response_key": f"{cluster.cluster_id}.selective",
        "open_codes": json.dumps(open_data["open_codes"], ensure_ascii=False,
                                 sort_keys=True),
        "axial_relationships": json.dumps(axial_data["axial_relationships"],
                                          ensure_ascii=False, sort_keys=True),
    })
    trace.append(r)

    candidate = {
        "cluster_id": cluster.cluster_id,
        "open_codes": open_data["open_codes"],
        "axial_relationships": axial_data["axial_relationships"],
        "core_category": selective_data["core_category"],
        "supporting_evidence": selective_data.get("supporting_evidence", []),
        "reasoning_trace": "\n".join(x for x in trace if x),
        "agent_id": agent.handle.agent_id,
        "prompt_version": prompts.version,
    }
    return validate_result(candidate, set(cluster.seg_ids))


# --- parallel execution -------------------------------------------------------

@dataclass(frozen=True)
class SchedulerConfig:
    max_workers: int = 10


@dataclass(frozen=True)
class TaskTiming:
    cluster_id: str
    worker: str
    started_s: float
    ended_s: float

    @property
    def duration_s(self) -> float:
        return self.ended_s - self.started_s


@dataclass
class CodingRunOutcome:
    """Aggregate of a cluster-coding pass; failures stay isolated."""

    results: list[ClusterCodingResult]
    failures: dict[str, str]
    task_timings: list[TaskTiming]
    call_records: dict[str, list]  # cluster_id -> transcript dicts

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def run_all_clusters(clusterset: ClusterSet, segments: list[Segment],
                     prompts: PromptSet, agent: Agent,
                     scheduler: SchedulerConfig | None = None,
                     on_task_done=None) -> CodingRunOutcome:
    """Code every cluster, concurrently up to max_workers.

    Results come back ordered by cluster_id regardless of completion order;
    a failing cluster is reported in failures while the rest complete.
    on_task_done(cluster_id, failed) fires as each cluster finishes.
    """
    if not clusterset.clusters:
        raise InsufficientInputError("no clusters to code")
    scheduler = scheduler or SchedulerConfig()

    results: dict[str, ClusterCodingResult] = {}
    failures: dict[str, str] = {}
    timings: list[TaskTiming] = []
    records: dict[str, list] = {c.cluster_id: [] for c in clusterset.clusters}
    lock = threading.Lock()

    def task(cluster: Cluster):
        started = time.perf_counter()
        worker = threading.current_thread().name.rsplit("_", 1)[-1]
        failed = False
        try:
            res = code_cluster(cluster, segments, prompts, agent,
                               recorder=records[cluster.cluster_id])
            with lock:
                results[cluster.cluster_id] = res
        except (TransportError, StageFailureError, SchemaValidationError) as exc:
            failed = True
            with lock:
                failures[cluster.cluster_id] = f"{type(exc).__name__}: {exc}"
        finally:
            ended = time.perf_counter()
            with lock:
                timings.append(TaskTiming(cluster.cluster_id, f"w{worker}",
                                          started, ended))
            if on_task_done is not None:
                on_task_done(cluster.cluster_id, failed)

    with ThreadPoolExecutor(max_workers=scheduler.max_workers) as pool:
        list(pool.map(task, clusterset.clusters))

    ordered = [results[cid] for cid in sorted(results)]
    timings.sort(key=lambda t: t.cluster_id)
    return CodingRunOutcome(ordered, failures, timings, records)
