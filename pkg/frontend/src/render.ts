// HTML/SVG string renderers for the view models. Pure functions so tests
// can assert on markup without a DOM.

import type { DiffOp, SideBySideRow } from "./diff.js";
import { forceLayout } from "./layout.js";
import type {
  ClusterPanelView,
  LineageTreeNode,
  MetricsView,
  TheoryView,
} from "./state.js";
import { flattenLineage } from "./state.js";

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderLineage(roots: LineageTreeNode[], activeRun: string | null): string {
  const byId = new Map<string, LineageTreeNode>();
  const collect = (n: LineageTreeNode) => {
    byId.set(n.run.run_id, n);
    n.children.forEach(collect);
  };
  roots.forEach(collect);
  const rows = flattenLineage(roots)
    .map(({ runId, depth }) => {
      const node = byId.get(runId)!;
      const active = runId === activeRun ? " active" : "";
      const version = node.run.prompt_version ?? "?";
      return (
        `<li class="lineage-row${active}" data-run="${esc(runId)}" ` +
        `style="margin-left:${depth * 16}px">` +
        `<span class="run-id">${esc(runId)}</span>` +
        `<span class="run-status ${esc(node.run.status)}">${esc(node.run.status)}</span>` +
        `<span class="prompt-version">p${version}</span></li>`
      );
    })
    .join("");
  return `<ul class="lineage">${rows}</ul>`;
}

export function renderClusterPanel(view: ClusterPanelView): string {
  if (view.notFound) {
    return `<div class="banner not-found">cluster not found</div>`;
  }
  const badge = view.tensionBadge
    ? `<span class="badge tension">tension</span>`
    : "";
  if (view.failed) {
    const refs = view.transcriptRefs
      .map((r) => `<a class="transcript-link" href="#artifact/${esc(r)}">${esc(r)}</a>`)
      .join(" ");
    return (
      `<div class="cluster-panel failed"><h2>${esc(view.clusterId)} ${badge}</h2>` +
      `<div class="banner failure">coding failed for this cluster</div>` +
      `<div class="transcripts">raw transcripts: ${refs}</div></div>`
    );
  }
  const members = view.members
    .map(
      (m) =>
        `<li class="segment${m.cited ? " cited" : ""}" data-seg="${esc(m.segId)}">` +
        `<span class="seg-id">${esc(m.segId)}</span> ${esc(m.text)}` +
        (m.cited ? `<span class="cited-by">${esc(m.citedBy.join(", "))}</span>` : "") +
        `</li>`,
    )
    .join("");
  const codes = view.codes
    .map(
      (c) =>
        `<li class="code" data-code="${esc(c.codeId)}"><b>${esc(c.label)}</b> ` +
        `${esc(c.definition)} <span class="evidence">[${esc(c.evidence.join(", "))}]</span></li>`,
    )
    .join("");
  const relations = view.relations
    .map(
      (r) =>
        `<li class="relation ${esc(r.kind)}">${esc(r.from)} → ${esc(r.to)} ` +
        `<i>(${esc(r.kind)})</i> ${esc(r.rationale)}</li>`,
    )
    .join("");
  const core = view.core
    ? `<div class="core-category"><b>${esc(view.core.label)}</b> ${esc(view.core.definition)}` +
      ` <span class="properties">${esc(view.core.properties.join(", "))}</span>` +
      ` <span class="range">${esc(view.core.range.join(" ↔ "))}</span></div>`
    : "";
  return (
    `<div class="cluster-panel"><h2>${esc(view.clusterId)} ${badge}</h2>` +
    `<h3>members</h3><ul class="members">${members}</ul>` +
    `<h3>open codes</h3><ul class="codes">${codes}</ul>` +
    `<h3>axial relations</h3><ul class="relations">${relations}</ul>` +
    `<h3>core category</h3>${core}` +
    `<details class="reasoning"><summary>reasoning trace</summary>` +
    `<pre>${esc(view.reasoning)}</pre></details></div>`
  );
}

export function renderTheorySvg(
  view: TheoryView,
  width = 800,
  height = 600,
  seed = 42,
): string {
  const layout = forceLayout(
    view.nodes.map((n) => n.id),
    view.edges.map((e) => [e.src, e.dst] as [string, string]),
    { width, height, seed },
  );
  const edges = view.edges
    .map((e) => {
      const a = layout.get(e.src)!;
      const b = layout.get(e.dst)!;
      const cls = `edge ${e.kind}${e.tension ? " tension" : ""}`;
      const dash = e.tension ? ` stroke-dasharray="6 3"` : "";
      return (
        `<line class="${cls}" x1="${a.x.toFixed(1)}" y1="${a.y.toFixed(1)}" ` +
        `x2="${b.x.toFixed(1)}" y2="${b.y.toFixed(1)}" stroke="${e.color}"${dash}>` +
        `<title>${esc(e.kind)}: ${esc(e.evidence.join(", "))}</title></line>`
      );
    })
    .join("");
  const nodes = view.nodes
    .map((n) => {
      const p = layout.get(n.id)!;
      const shape =
        n.kind === "core-category"
          ? `<rect x="${(p.x - 10).toFixed(1)}" y="${(p.y - 10).toFixed(1)}" width="20" height="20" class="node core-category"/>`
          : `<circle cx="${p.x.toFixed(1)}" cy="${p.y.toFixed(1)}" r="10" class="node concept"/>`;
      return (
        `<g class="node-group" data-node="${esc(n.id)}">${shape}` +
        `<text x="${p.x.toFixed(1)}" y="${(p.y - 14).toFixed(1)}">${esc(n.label)}</text></g>`
      );
    })
    .join("");
  return `<svg viewBox="0 0 ${width} ${height}" class="theory-graph">${edges}${nodes}</svg>`;
}

export function renderMetrics(view: MetricsView): string {
  const rows = view.rows
    .map(
      (r) =>
        `<tr><td>${esc(r.name)}</td><td class="value">${esc(r.value)}</td></tr>`,
    )
    .join("");
  const quality = view.quality
    .map(
      (q) =>
        `<tr><td>${esc(q.evaluator)}</td><td class="value">${esc(q.composite)}</td></tr>`,
    )
    .join("");
  const panel =
    view.panelMean === null
      ? ""
      : `<tr><td>panel mean</td><td class="value">${esc(view.panelMean)}</td></tr>`;
  return (
    `<table class="metrics">${rows}</table>` +
    `<table class="quality">${quality}${panel}</table>`
  );
}

function renderOps(ops: DiffOp[], side: "left" | "right"): string {
  return ops
    .filter((o) => (side === "left" ? o.kind !== "add" : o.kind !== "del"))
    .map((o) => {
      if (o.kind === "same") return esc(o.text);
      const cls = o.kind === "add" ? "added" : "removed";
      return `<mark class="${cls}">${esc(o.text)}</mark>`;
    })
    .join(" ");
}

export function renderPromptDiff(rows: SideBySideRow[]): string {
  const body = rows
    .map(
      (row) =>
        `<tr class="prompt-row${row.changed ? " changed" : ""}" data-field="${esc(row.field)}">` +
        `<th>${esc(row.field)}</th>` +
        `<td class="before">${renderOps(row.ops, "left")}</td>` +
        `<td class="after">${renderOps(row.ops, "right")}</td></tr>`,
    )
    .join("");
  return `<table class="prompt-diff"><thead><tr><th></th><th>parent</th><th>current</th></tr></thead><tbody>${body}</tbody></table>`;
}

export function renderProgress(events: { event: string; [k: string]: unknown }[]): string {
  const items = events
    .map((e) => {
      const extra = Object.entries(e)
        .filter(([k]) => k !== "event" && k !== "run_id")
        .map(([k, v]) => `${k}=${String(v)}`)
        .join(" ");
      return `<li class="progress-event ${esc(e.event)}">${esc(e.event)} ${esc(extra)}</li>`;
    })
    .join("");
  return `<ul class="progress">${items}</ul>`;
}
