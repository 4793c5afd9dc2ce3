// DOM glue: routing, actions, and the live progress feed. All analysis
// values arrive from the API; this file only wires them to the page.

import { ApiClient, ApiError } from "./api.js";
import { promptSetDiff } from "./diff.js";
import {
  AppState,
  buildClusterPanel,
  buildLineageTree,
  buildMetricsView,
  buildTheoryView,
  reconstruct,
} from "./state.js";
import {
  renderClusterPanel,
  renderLineage,
  renderMetrics,
  renderProgress,
  renderPromptDiff,
  renderTheorySvg,
  esc,
} from "./render.js";

const SESSION_ID = "review";

interface UiRefs {
  lineage: HTMLElement;
  cluster: HTMLElement;
  theory: HTMLElement;
  metrics: HTMLElement;
  prompts: HTMLElement;
  progress: HTMLElement;
  banner: HTMLElement;
  editor: HTMLTextAreaElement;
  editorField: HTMLSelectElement;
  threshold: HTMLInputElement;
  thresholdValue: HTMLElement;
  regenerate: HTMLButtonElement;
  intervention: HTMLSelectElement;
}

function refs(): UiRefs {
  const get = (id: string) => document.getElementById(id)!;
  return {
    lineage: get("lineage"),
    cluster: get("cluster"),
    theory: get("theory"),
    metrics: get("metrics"),
    prompts: get("prompts"),
    progress: get("progress"),
    banner: get("banner"),
    editor: get("editor") as HTMLTextAreaElement,
    editorField: get("editor-field") as HTMLSelectElement,
    threshold: get("threshold") as HTMLInputElement,
    thresholdValue: get("threshold-value"),
    regenerate: get("regenerate") as HTMLButtonElement,
    intervention: get("intervention") as HTMLSelectElement,
  };
}

class App {
  private api = new ApiClient("");
  private state: AppState | null = null;
  private ui = refs();
  private events: { event: string; [k: string]: unknown }[] = [];
  private selectedCluster: string | null = null;

  async start(): Promise<void> {
    // a full reload reconstructs everything from the API alone
    this.state = await reconstruct(this.api, SESSION_ID);
    if (this.state.activeRun && !this.state.session.active_run) {
      await this.api.updateSession(SESSION_ID, {
        active_run: this.state.activeRun,
      } as never);
      this.state = await reconstruct(this.api, SESSION_ID);
    }
    this.renderAll();
    this.wire();
  }

  private banner(text: string, kind: "error" | "info" = "info"): void {
    this.ui.banner.innerHTML = text
      ? `<div class="banner ${kind}">${esc(text)}</div>`
      : "";
  }

  private renderAll(): void {
    const s = this.state;
    if (!s) return;
    this.ui.lineage.innerHTML = renderLineage(
      buildLineageTree(s.lineage?.runs ?? s.runs),
      s.activeRun,
    );
    if (s.theory) {
      this.ui.theory.innerHTML = renderTheorySvg(buildTheoryView(s.theory));
    }
    if (s.metrics) {
      this.ui.metrics.innerHTML = renderMetrics(buildMetricsView(s.metrics));
    }
    if (s.prompts) {
      const parent = s.parentPrompts ?? s.prompts;
      this.ui.prompts.innerHTML = renderPromptDiff(
        promptSetDiff(
          parent as unknown as Record<string, unknown>,
          s.prompts as unknown as Record<string, unknown>,
        ),
      );
      const field = this.ui.editorField.value as keyof typeof s.prompts;
      this.ui.editor.value = String(s.prompts[field] ?? "");
    }
    const threshold = s.clusters?.threshold_used;
    if (threshold !== undefined) {
      this.ui.threshold.value = String(threshold);
      this.ui.thresholdValue.textContent = String(threshold);
    }
    if (this.selectedCluster) void this.showCluster(this.selectedCluster);
    this.ui.progress.innerHTML = renderProgress(this.events);
  }

  private wire(): void {
    this.ui.lineage.addEventListener("click", (ev) => {
      const row = (ev.target as HTMLElement).closest<HTMLElement>("[data-run]");
      if (row?.dataset.run) void this.activateRun(row.dataset.run);
    });
    this.ui.theory.addEventListener("click", (ev) => {
      const g = (ev.target as HTMLElement).closest<HTMLElement>("[data-node]");
      if (!g) return;
    });
    document.getElementById("clusters")!.addEventListener("click", (ev) => {
      const el = (ev.target as HTMLElement).closest<HTMLElement>("[data-cluster]");
      if (el?.dataset.cluster) void this.showCluster(el.dataset.cluster);
    });
    this.ui.threshold.addEventListener("input", () => {
      this.ui.thresholdValue.textContent = this.ui.threshold.value;
    });
    this.ui.editorField.addEventListener("change", () => {
      const s = this.state;
      if (!s?.prompts) return;
      const field = this.ui.editorField.value as keyof typeof s.prompts;
      this.ui.editor.value = String(s.prompts[field] ?? "");
    });
    this.ui.intervention.addEventListener("change", () => {
      void this.api.updateSession(SESSION_ID, {
        pending_intervention_point: this.ui.intervention.value,
      } as never);
    });
    this.ui.regenerate.addEventListener("click", () => void this.regenerate());
  }

  private async activateRun(runId: string): Promise<void> {
    await this.api.updateSession(SESSION_ID, { active_run: runId } as never);
    this.state = await reconstruct(this.api, SESSION_ID);
    this.renderAll();
    this.renderClusterList();
  }

  private renderClusterList(): void {
    const list = document.getElementById("clusters")!;
    const clusters = this.state?.clusters?.clusters ?? [];
    list.innerHTML = clusters
      .map(
        (c) =>
          `<li data-cluster="${esc(c.cluster_id)}">${esc(c.cluster_id)} ` +
          `<span class="size">${c.seg_ids.length}</span></li>`,
      )
      .join("");
  }

  private async showCluster(clusterId: string): Promise<void> {
    const s = this.state;
    if (!s?.activeRun) return;
    this.selectedCluster = clusterId;
    try {
      const panel = await this.api.getCluster(s.activeRun, clusterId);
      this.ui.cluster.innerHTML = renderClusterPanel(
        buildClusterPanel(panel, s.theory),
      );
    } catch (err) {
      if (err instanceof ApiError && err.isNotFound) {
        this.ui.cluster.innerHTML = `<div class="banner not-found">cluster ${esc(clusterId)} not found</div>`;
        return;
      }
      throw err;
    }
  }

  private async regenerate(): Promise<void> {
    const s = this.state;
    if (!s?.prompts || !s.activeRun) return;
    const field = this.ui.editorField.value;
    const edited = this.ui.editor.value;
    const promptEdits: Record<string, string> = {};
    const current = (s.prompts as unknown as Record<string, string>)[field];
    if (edited !== current) promptEdits[field] = edited;
    const params: Record<string, unknown> = {};
    const threshold = Number(this.ui.threshold.value);
    if (threshold !== s.clusters?.threshold_used) {
      params["similarity_threshold"] = threshold;
    }
    this.banner("");
    try {
      await this.api.submitRefinement(SESSION_ID, promptEdits, params);
      const { run_id } = await this.api.triggerIterate(SESSION_ID);
      this.followEvents(run_id);
      this.state = await reconstruct(this.api, SESSION_ID);
      this.renderAll();
      this.renderClusterList();
      this.banner(`regenerated into ${run_id}`, "info");
    } catch (err) {
      if (err instanceof ApiError) {
        // non-destructive: edits stay in the editor
        this.banner(err.message, "error");
        return;
      }
      throw err;
    }
  }

  private followEvents(runId: string): void {
    const source = new EventSource(this.api.eventsUrl(runId));
    source.onmessage = (msg) => {
      const event = JSON.parse(msg.data);
      this.events.push(event);
      this.ui.progress.innerHTML = renderProgress(this.events.slice(-40));
      if (event.event === "run-sealed") source.close();
    };
    source.onerror = () => source.close();
  }
}

if (typeof document !== "undefined" && document.getElementById("lineage")) {
  const app = new App();
  void app.start().then(() => {
    (app as unknown as { renderClusterList: () => void }).renderClusterList();
  });
}

export { App };
