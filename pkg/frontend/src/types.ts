// Payload shapes of the /v1 API. The UI renders these verbatim and never
// computes analysis values itself.

export interface RunSummary {
  run_id: string;
  status: string;
  parent_run: string | null;
  created_at: number | null;
  prompt_version: number | null;
}

export interface LineageResponse {
  root: string;
  runs: RunSummary[];
}

export interface Segment {
  seg_id: string;
  doc_id: string;
  text: string;
  unit_count: number;
  annotations: { start: number; end: number; kind: string; label: string }[];
  over_length: boolean;
}

export interface OpenCode {
  code_id: string;
  label: string;
  definition: string;
  evidence_seg_ids: string[];
}

export interface AxialRelationship {
  from_code: string;
  to_code: string;
  relation_kind: string;
  rationale: string;
}

export interface CodingResult {
  cluster_id: string;
  open_codes: OpenCode[];
  axial_relationships: AxialRelationship[];
  core_category: {
    label: string;
    definition: string;
    properties: string[];
    dimensional_range: string[];
  };
  supporting_evidence: string[];
  reasoning_trace: string;
  agent_id: string;
  prompt_version: number;
}

export interface ClusterPanelResponse {
  cluster: { cluster_id: string; seg_ids: string[] };
  segments: Segment[];
  result: CodingResult | null;
  failed: boolean;
  transcripts: { response_key: string; transcript_artifact: string }[];
}

export interface ClusterSetResponse {
  threshold_used: number;
  linkage: string;
  clusters: { cluster_id: string; seg_ids: string[] }[];
  quality: {
    silhouette: number | null;
    davies_bouldin: number | null;
    sizes: number[];
  };
}

export interface TheoryEdge {
  src: string;
  dst: string;
  kind: string;
  evidence_seg_ids: string[];
  via_code_uids: string[];
  cluster_ids: string[];
}

export interface TheoryNode {
  node_id: string;
  kind: string;
  label: string;
  definition: string;
  cluster_ids: string[];
}

export interface Tension {
  kind: string;
  concept_ids: string[];
  sides: {
    cluster_id: string;
    from_concept: string;
    to_concept: string;
    relation_kind: string;
    evidence_seg_ids: string[];
  }[];
}

export interface TheoryResponse {
  nodes: TheoryNode[];
  edges: TheoryEdge[];
  core_candidates: [string, number][];
  contrasts: Tension[];
}

export interface MetricsResponse {
  coverage_rate: number;
  redundancy_rate: number;
  n_segments: number;
  n_codes: number;
  n_concepts: number;
  n_clusters: number;
  saturation: {
    series: [number, number][];
    saturated: boolean;
    saturated_at_batch: number | null;
  };
  quality: {
    per_evaluator: Record<string, Record<string, number>>;
    composites: Record<string, number>;
    panel_mean: number;
    inter_evaluator_alpha: number;
  } | null;
  cost: {
    lines: {
      kind: string;
      description: string;
      quantity: number;
      unit_cost: number;
      total: number;
    }[];
    total: number;
  } | null;
}

export interface PromptSet {
  segmentation_prompt: string;
  open_prompt: string;
  axial_prompt: string;
  selective_prompt: string;
  integration_prompt: string;
  version: number;
  parent_version: number | null;
}

export interface SessionState {
  session_id: string;
  active_run: string | null;
  pending_intervention_point: string;
  refinement_draft: {
    prompt_edits: Record<string, string>;
    params: Record<string, unknown>;
  } | null;
  busy: boolean;
}

export interface ProgressEvent {
  event: string;
  run_id: string;
  [key: string]: unknown;
}
