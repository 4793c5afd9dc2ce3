// Thin typed client for the /v1 API. Every view reads through this module;
// nothing here transforms values beyond JSON decoding.

import type {
  ClusterPanelResponse,
  ClusterSetResponse,
  CodingResult,
  LineageResponse,
  MetricsResponse,
  PromptSet,
  RunSummary,
  SessionState,
  TheoryResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }

  get isConflict(): boolean {
    return this.status === 409;
  }

  get isNotFound(): boolean {
    return this.status === 404;
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1${path}`, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body ?? {}),
    });
  }

  listRuns(): Promise<RunSummary[]> {
    return this.request("/runs");
  }

  getLineage(runId: string): Promise<LineageResponse> {
    return this.request(`/runs/${runId}/lineage`);
  }

  getClusters(runId: string): Promise<ClusterSetResponse> {
    return this.request(`/runs/${runId}/clusters`);
  }

  getCluster(runId: string, clusterId: string): Promise<ClusterPanelResponse> {
    return this.request(`/runs/${runId}/clusters/${clusterId}`);
  }

  getResults(runId: string): Promise<CodingResult[]> {
    return this.request(`/runs/${runId}/results`);
  }

  getTheory(runId: string): Promise<TheoryResponse> {
    return this.request(`/runs/${runId}/theory`);
  }

  getMetrics(runId: string): Promise<MetricsResponse> {
    return this.request(`/runs/${runId}/metrics`);
  }

  getPrompts(runId: string): Promise<PromptSet> {
    return this.request(`/runs/${runId}/prompts`);
  }

  getSession(sessionId: string): Promise<SessionState> {
    return this.request(`/sessions/${sessionId}`);
  }

  updateSession(sessionId: string, body: Partial<SessionState>): Promise<SessionState> {
    return this.request(`/sessions/${sessionId}`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  submitRefinement(
    sessionId: string,
    promptEdits: Record<string, string>,
    params: Record<string, unknown>,
  ): Promise<SessionState> {
    return this.post(`/sessions/${sessionId}/refinement`, {
      prompt_edits: promptEdits,
      params,
    });
  }

  triggerIterate(sessionId: string): Promise<{ run_id: string; status: string }> {
    return this.post(`/sessions/${sessionId}/iterate`, {});
  }

  eventsUrl(runId: string): string {
    return `${this.baseUrl}/v1/runs/${runId}/events`;
  }
}
