"""gtflow: a grounded-theory analysis engine.

Segments documents into semantic units, embeds and clusters them, runs
three-stage coding through parallel agents, integrates cluster results into
a theory graph, computes quality and reliability metrics, and records an
append-only, replayable audit trail. A CLI and an HTTP service expose the
pipeline and the human-in-the-loop iteration protocol.
"""

from .agents import Agent, AgentHandle, AgentReply, CallableAgent, ReplayAgent, ScriptedAgent
from .clustering import ClusterSet, Dendrogram, adjust_threshold, cut, davies_bouldin, hac, silhouette
from .coding import (
    ClusterCodingResult,
    PromptSet,
    SchedulerConfig,
    code_cluster,
    default_prompts,
    run_all_clusters,
    validate_result,
)
from .corpus import Document, Segment, SegmentPolicy, ingest, load_corpus, segment_rule_based
from .embedding import (
    EmbeddedSegment,
    EmbeddingProvider,
    HashingEmbedder,
    RemoteEmbedder,
    ReplayEmbedder,
    cosine_similarity,
    embed_batch,
)
from .integration import ConceptIndex, TheoryGraph, build_concept_index, centrality, contrast, hierarchical_integration
from .metrics import (
    CostLedger,
    CostLine,
    MetricReport,
    QualityScores,
    Rubric,
    cohen_kappa,
    coverage_rate,
    evaluate_theory,
    jaccard,
    krippendorff_alpha,
    redundancy_rate,
    roi,
    saturation_curve,
)
from .audit import RunStore, VersionStamp, runs_equivalent, trace_lineage
from .pipeline import AnalysisRun, ParallelTelemetry, RunConfig, iterate, replay, run, telemetry

__version__ = "0.1.0"
