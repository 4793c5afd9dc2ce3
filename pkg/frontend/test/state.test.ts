import { describe, expect, it } from "vitest";

import {
  buildClusterPanel,
  buildLineageTree,
  buildMetricsView,
  buildTheoryView,
  flattenLineage,
} from "../src/state.js";
import { renderClusterPanel, renderLineage, renderMetrics } from "../src/render.js";
import type {
  ClusterPanelResponse,
  MetricsResponse,
  RunSummary,
  TheoryResponse,
} from "../src/types.js";
import { fixture, META } from "./fake_backend.js";

describe("buildLineageTree", () => {
  const runs: RunSummary[] = [
    { run_id: "run-a", status: "complete", parent_run: null, created_at: 1, prompt_version: 1 },
    { run_id: "run-b", status: "complete", parent_run: "run-a", created_at: 2, prompt_version: 2 },
    { run_id: "run-c", status: "partial", parent_run: "run-a", created_at: 3, prompt_version: 3 },
  ];

  it("nests children under parents with depths", () => {
    const roots = buildLineageTree(runs);
    expect(roots).toHaveLength(1);
    expect(roots[0].children.map((c) => c.run.run_id)).toEqual(["run-b", "run-c"]);
    expect(flattenLineage(roots)).toEqual([
      { runId: "run-a", depth: 0 },
      { runId: "run-b", depth: 1 },
      { runId: "run-c", depth: 1 },
    ]);
  });

  it("renders rows with status classes and active marker", () => {
    const html = renderLineage(buildLineageTree(runs), "run-b");
    expect(html).toContain('data-run="run-a"');
    expect(html).toContain("lineage-row active");
    expect(html).toContain("run-status partial");
  });
});

describe("buildClusterPanel", () => {
  const panel = fixture<ClusterPanelResponse>("cluster_C001");
  const theory = fixture<TheoryResponse>("theory");

  it("shows the real golden codes with evidence highlighting", () => {
    const view = buildClusterPanel(panel, theory);
    expect(view.clusterId).toBe("C001");
    expect(view.codes.map((c) => c.label)).toEqual(["freedom", "pressure"]);
    expect(view.members.every((m) => m.cited)).toBe(true);
    expect(view.relations).toHaveLength(1);
    expect(view.core?.label).toContain("freedom");
    const html = renderClusterPanel(view);
    expect(html).toContain("C001");
    expect(html).toContain("freedom");
    expect(html).toContain('class="segment cited"');
  });

  it("raises the tension badge when the cluster sits in a contrast", () => {
    const view = buildClusterPanel(panel, theory);
    expect(view.tensionBadge).toBe(true);
    expect(renderClusterPanel(view)).toContain("badge tension");
  });

  it("renders the failure surface with transcript links", () => {
    const failed: ClusterPanelResponse = {
      ...panel,
      result: null,
      failed: true,
      transcripts: [
        { response_key: "C001.open", transcript_artifact: "sha256-abc.json" },
      ],
    };
    const html = renderClusterPanel(buildClusterPanel(failed, theory));
    expect(html).toContain("coding failed");
    expect(html).toContain("sha256-abc.json");
  });

  it("not-found banner", () => {
    const view = buildClusterPanel(panel, theory);
    const html = renderClusterPanel({ ...view, notFound: true });
    expect(html).toContain("not found");
  });
});

describe("buildTheoryView", () => {
  const theory = fixture<TheoryResponse>("theory");

  it("colors edges by kind and flags tension pairs", () => {
    const view = buildTheoryView(theory);
    const kinds = new Set(view.edges.map((e) => e.kind));
    expect(kinds.has("causal")).toBe(true);
    expect(kinds.has("contrast")).toBe(true);
    const contrastEdge = view.edges.find((e) => e.kind === "contrast")!;
    expect(contrastEdge.tension).toBe(true);
    const causalTension = view.edges.filter(
      (e) => e.kind === "causal" && e.tension,
    );
    expect(causalTension.length).toBeGreaterThan(0); // bifurcated branches
  });

  it("keeps both directions of the direction conflict", () => {
    const view = buildTheoryView(theory);
    const causal = view.edges.filter((e) => e.kind === "causal");
    const pairs = new Set(causal.map((e) => `${e.src}->${e.dst}`));
    const hasBoth = [...pairs].some((p) => {
      const [a, b] = p.split("->");
      return pairs.has(`${b}->${a}`);
    });
    expect(hasBoth).toBe(true);
  });
});

describe("buildMetricsView fidelity", () => {
  it("passes numbers through verbatim, never reformatted", () => {
    const metrics = fixture<MetricsResponse>("metrics");
    const view = buildMetricsView(metrics);
    const coverage = view.rows.find((r) => r.name === "coverage_rate")!;
    expect(coverage.value).toBe(String(metrics.coverage_rate));
    const html = renderMetrics(view);
    expect(html).toContain(String(metrics.coverage_rate));
    expect(html).toContain(String(metrics.redundancy_rate));
  });

  it("holds quality composites exactly as served", () => {
    const metrics = fixture<MetricsResponse>("metrics");
    if (!metrics.quality) return;
    const view = buildMetricsView(metrics);
    for (const q of view.quality) {
      expect(q.composite).toBe(String(metrics.quality.composites[q.evaluator]));
    }
  });
});
