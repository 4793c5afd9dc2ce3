// View-model builders. Every value comes from an API payload; nothing is
// recomputed client side (numbers pass through verbatim).

import { ApiClient } from "./api.js";
import type {
  ClusterPanelResponse,
  ClusterSetResponse,
  LineageResponse,
  MetricsResponse,
  PromptSet,
  RunSummary,
  SessionState,
  TheoryResponse,
} from "./types.js";

export interface LineageTreeNode {
  run: RunSummary;
  children: LineageTreeNode[];
}

export function buildLineageTree(runs: RunSummary[]): LineageTreeNode[] {
  const nodes = new Map<string, LineageTreeNode>(
    runs.map((r) => [r.run_id, { run: r, children: [] }]),
  );
  const roots: LineageTreeNode[] = [];
  for (const node of nodes.values()) {
    const parent = node.run.parent_run ? nodes.get(node.run.parent_run) : undefined;
    if (parent) parent.children.push(node);
    else roots.push(node);
  }
  const sortRec = (list: LineageTreeNode[]) => {
    list.sort((a, b) => a.run.run_id.localeCompare(b.run.run_id));
    list.forEach((n) => sortRec(n.children));
  };
  sortRec(roots);
  return roots;
}

export function flattenLineage(roots: LineageTreeNode[]): { runId: string; depth: number }[] {
  const out: { runId: string; depth: number }[] = [];
  const walk = (node: LineageTreeNode, depth: number) => {
    out.push({ runId: node.run.run_id, depth });
    node.children.forEach((c) => walk(c, depth + 1));
  };
  roots.forEach((r) => walk(r, 0));
  return out;
}

export interface MemberView {
  segId: string;
  text: string;
  cited: boolean; // highlighted as evidence for some code or the category
  citedBy: string[];
}

export interface ClusterPanelView {
  clusterId: string;
  failed: boolean;
  notFound: boolean;
  tensionBadge: boolean;
  members: MemberView[];
  codes: { codeId: string; label: string; definition: string; evidence: string[] }[];
  relations: { from: string; to: string; kind: string; rationale: string }[];
  core: { label: string; definition: string; properties: string[]; range: string[] } | null;
  reasoning: string;
  transcriptRefs: string[];
}

export function buildClusterPanel(
  resp: ClusterPanelResponse,
  theory: TheoryResponse | null,
): ClusterPanelView {
  const citedBy = new Map<string, string[]>();
  const result = resp.result;
  if (result) {
    for (const code of result.open_codes) {
      for (const sid of code.evidence_seg_ids) {
        citedBy.set(sid, [...(citedBy.get(sid) ?? []), code.code_id]);
      }
    }
    for (const sid of result.supporting_evidence) {
      if (!citedBy.has(sid)) citedBy.set(sid, []);
      citedBy.get(sid)!.push("core_category");
    }
  }
  const clusterId = resp.cluster.cluster_id;
  const tensionBadge = Boolean(
    theory?.contrasts.some((t) => t.sides.some((s) => s.cluster_id === clusterId)),
  );
  return {
    clusterId,
    failed: resp.failed,
    notFound: false,
    tensionBadge,
    members: resp.segments.map((s) => ({
      segId: s.seg_id,
      text: s.text,
      cited: citedBy.has(s.seg_id),
      citedBy: citedBy.get(s.seg_id) ?? [],
    })),
    codes:
      result?.open_codes.map((c) => ({
        codeId: c.code_id,
        label: c.label,
        definition: c.definition,
        evidence: c.evidence_seg_ids,
      })) ?? [],
    relations:
      result?.axial_relationships.map((r) => ({
        from: r.from_code,
        to: r.to_code,
        kind: r.relation_kind,
        rationale: r.rationale,
      })) ?? [],
    core: result
      ? {
          label: result.core_category.label,
          definition: result.core_category.definition,
          properties: result.core_category.properties,
          range: result.core_category.dimensional_range,
        }
      : null,
    reasoning: result?.reasoning_trace ?? "",
    transcriptRefs: resp.transcripts.map((t) => t.transcript_artifact),
  };
}

export const EDGE_COLORS: Record<string, string> = {
  causal: "#d9484b",
  consequence: "#e08a20",
  contextual: "#4da6ff",
  intervening: "#b48eff",
  subsumes: "#3fb950",
  integrates: "#6b7a8d",
  contrast: "#f2c14e",
};

export interface TheoryView {
  nodes: { id: string; label: string; kind: string }[];
  edges: {
    src: string;
    dst: string;
    kind: string;
    color: string;
    tension: boolean;
    evidence: string[];
  }[];
  tensionPairs: Set<string>;
  coreCandidates: [string, number][];
}

export function buildTheoryView(theory: TheoryResponse): TheoryView {
  const tensionPairs = new Set<string>();
  for (const t of theory.contrasts) {
    const pair = t.concept_ids.slice(-2).sort();
    tensionPairs.add(pair.join("|"));
  }
  return {
    nodes: theory.nodes.map((n) => ({ id: n.node_id, label: n.label, kind: n.kind })),
    edges: theory.edges.map((e) => {
      const pairKey = [e.src, e.dst].sort().join("|");
      return {
        src: e.src,
        dst: e.dst,
        kind: e.kind,
        color: EDGE_COLORS[e.kind] ?? "#d4dae3",
        tension: e.kind === "contrast" || tensionPairs.has(pairKey),
        evidence: e.evidence_seg_ids,
      };
    }),
    tensionPairs,
    coreCandidates: theory.core_candidates,
  };
}

export interface MetricsView {
  rows: { name: string; value: string }[];
  quality: { evaluator: string; composite: string }[];
  panelMean: string | null;
  saturation: [number, number][];
}

// Fidelity rule: numbers are stringified from the payload untouched, never
// rounded or recomputed.
export function buildMetricsView(metrics: MetricsResponse): MetricsView {
  const rows = [
    { name: "coverage_rate", value: String(metrics.coverage_rate) },
    { name: "redundancy_rate", value: String(metrics.redundancy_rate) },
    { name: "n_segments", value: String(metrics.n_segments) },
    { name: "n_clusters", value: String(metrics.n_clusters) },
    { name: "n_codes", value: String(metrics.n_codes) },
    { name: "n_concepts", value: String(metrics.n_concepts) },
    { name: "saturated", value: String(metrics.saturation.saturated) },
  ];
  return {
    rows,
    quality: metrics.quality
      ? Object.entries(metrics.quality.composites).map(([evaluator, composite]) => ({
          evaluator,
          composite: String(composite),
        }))
      : [],
    panelMean: metrics.quality ? String(metrics.quality.panel_mean) : null,
    saturation: metrics.saturation.series,
  };
}

export interface AppState {
  sessionId: string;
  session: SessionState;
  runs: RunSummary[];
  lineage: LineageResponse | null;
  activeRun: string | null;
  clusters: ClusterSetResponse | null;
  theory: TheoryResponse | null;
  metrics: MetricsResponse | null;
  prompts: PromptSet | null;
  parentPrompts: PromptSet | null;
}

// Statelessness: the whole view reconstructs from the API alone; a browser
// reload calls exactly this.
export async function reconstruct(api: ApiClient, sessionId: string): Promise<AppState> {
  const session = await api.getSession(sessionId);
  const runs = await api.listRuns();
  const activeRun =
    session.active_run ?? (runs.length ? runs[runs.length - 1].run_id : null);
  if (!activeRun) {
    return {
      sessionId,
      session,
      runs,
      lineage: null,
      activeRun: null,
      clusters: null,
      theory: null,
      metrics: null,
      prompts: null,
      parentPrompts: null,
    };
  }
  const [lineage, clusters, theory, metrics, prompts] = await Promise.all([
    api.getLineage(activeRun),
    api.getClusters(activeRun),
    api.getTheory(activeRun),
    api.getMetrics(activeRun),
    api.getPrompts(activeRun),
  ]);
  const me = lineage.runs.find((r) => r.run_id === activeRun);
  const parentPrompts = me?.parent_run ? await api.getPrompts(me.parent_run) : null;
  return {
    sessionId,
    session,
    runs,
    lineage,
    activeRun,
    clusters,
    theory,
    metrics,
    prompts,
    parentPrompts,
  };
}
