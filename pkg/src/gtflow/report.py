"""Report rendering: console tables, delimited files, and figures.

The metrics report path writes tab-separated tables next to PNG figures
(saturation curve, cluster sizes, worker load, threshold sweep, cost
breakdown) into one output directory.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .audit import RunStore  # noqa: E402


def _write_tsv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t")
        writer.writerow(header)
        writer.writerows(rows)


def format_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[str(x) for x in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_run_report(store: RunStore, run_id: str, out_dir) -> dict:
    """Write delimited tables and figures for a sealed run.

    Returns {"tables": [...], "figures": [...], "console": str}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = store.manifest(run_id)
    metrics = store.artifact(run_id, "metrics")
    clusterset = store.artifact(run_id, "clusterset")
    tables: list[str] = []
    figures: list[str] = []
    console: list[str] = [f"run {run_id} [{manifest['status']}]"]

    # --- summary table ---
    summary_rows = [
        ["coverage_rate", f"{metrics['coverage_rate']:.4f}"],
        ["redundancy_rate", f"{metrics['redundancy_rate']:.4f}"],
        ["n_segments", metrics["n_segments"]],
        ["n_clusters", metrics["n_clusters"]],
        ["n_codes", metrics["n_codes"]],
        ["n_concepts", metrics["n_concepts"]],
        ["saturated", metrics["saturation"]["saturated"]],
        ["silhouette", clusterset["quality"]["silhouette"]],
        ["davies_bouldin", clusterset["quality"]["davies_bouldin"]],
    ]
    path = out / "summary.tsv"
    _write_tsv(path, ["metric", "value"], summary_rows)
    tables.append(str(path))
    console.append(format_table(["metric", "value"], summary_rows))

    # --- quality scores ---
    if metrics.get("quality"):
        q = metrics["quality"]
        dims = sorted(next(iter(q["per_evaluator"].values())))
        rows = []
        for aid in sorted(q["per_evaluator"]):
            scores = q["per_evaluator"][aid]
            rows.append([aid] + [f"{scores[d]:.3f}" for d in dims]
                        + [f"{q['composites'][aid]:.3f}"])
        rows.append(["panel-mean"] + ["" for _ in dims] + [f"{q['panel_mean']:.3f}"])
        header = ["evaluator"] + dims + ["composite"]
        path = out / "quality.tsv"
        _write_tsv(path, header, rows)
        tables.append(str(path))
        console.append(format_table(header, rows))
        console.append(f"inter-evaluator alpha: {q['inter_evaluator_alpha']:.3f}")

    # --- cost ledger ---
    if metrics.get("cost"):
        rows = [
            [l["kind"], l["description"], l["quantity"], l["unit_cost"],
             f"{l['total']:.2f}"]
            for l in metrics["cost"]["lines"]
        ]
        rows.append(["total", "", "", "", f"{metrics['cost']['total']:.2f}"])
        header = ["kind", "description", "quantity", "unit_cost", "total"]
        path = out / "cost.tsv"
        _write_tsv(path, header, rows)
        tables.append(str(path))
        console.append(format_table(header, rows))

    # --- cluster table ---
    rows = [
        [c["cluster_id"], len(c["seg_ids"]), " ".join(c["seg_ids"][:4])]
        for c in clusterset["clusters"]
    ]
    path = out / "clusters.tsv"
    _write_tsv(path, ["cluster_id", "size", "first_members"], rows)
    tables.append(str(path))

    # --- saturation series table ---
    series = metrics["saturation"]["series"]
    path = out / "saturation.tsv"
    _write_tsv(path, ["segments_processed", "distinct_concepts"],
               [list(p) for p in series])
    tables.append(str(path))

    # --- figures ---
    if series:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.step([p[0] for p in series], [p[1] for p in series], where="post",
                marker="o")
        ax.set_xlabel("segments processed")
        ax.set_ylabel("distinct concepts")
        ax.set_title("saturation curve")
        fig.tight_layout()
        fpath = out / "saturation.png"
        fig.savefig(fpath, dpi=120)
        plt.close(fig)
        figures.append(str(fpath))

    sizes = clusterset["quality"]["sizes"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(1, len(sizes) + 1), sizes)
    ax.axhspan(8, 12, alpha=0.15, color="green")
    ax.set_xlabel("cluster")
    ax.set_ylabel("members")
    ax.set_title("cluster sizes (advised band 8-12)")
    fig.tight_layout()
    fpath = out / "cluster_sizes.png"
    fig.savefig(fpath, dpi=120)
    plt.close(fig)
    figures.append(str(fpath))

    tele = manifest.get("telemetry")
    if tele and tele.get("per_worker_busy_s"):
        workers = sorted(tele["per_worker_busy_s"])
        busy = [tele["per_worker_busy_s"][w] for w in workers]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(workers, busy)
        ax.set_xlabel("worker")
        ax.set_ylabel("busy seconds")
        ax.set_title(
            f"worker load (balance {tele['load_balancing_coefficient']:.2f}, "
            f"speedup {tele['speedup']:.1f}x)"
        )
        fig.tight_layout()
        fpath = out / "worker_load.png"
        fig.savefig(fpath, dpi=120)
        plt.close(fig)
        figures.append(str(fpath))

    try:
        sweep = store.artifact(run_id, "threshold_report")
    except Exception:
        sweep = None
    if sweep:
        cands = [r for r in sweep["candidates"] if r["silhouette"] is not None]
        if cands:
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot([r["threshold"] for r in cands],
                    [r["silhouette"] for r in cands], marker="o")
            ax.axvline(sweep["best_threshold"], linestyle="--", color="red")
            ax.set_xlabel("similarity threshold")
            ax.set_ylabel("silhouette")
            ax.set_title("threshold sweep")
            fig.tight_layout()
            fpath = out / "threshold_sweep.png"
            fig.savefig(fpath, dpi=120)
            plt.close(fig)
            figures.append(str(fpath))

    if metrics.get("cost"):
        by_kind = {k: v for k, v in metrics["cost"]["by_kind"].items() if v > 0}
        if by_kind:
            fig, ax = plt.subplots(figsize=(5, 5))
            ax.pie(by_kind.values(), labels=list(by_kind),
                   autopct=lambda p: f"{p:.0f}%")
            ax.set_title(f"cost breakdown (total {metrics['cost']['total']:.2f})")
            fig.tight_layout()
            fpath = out / "cost_breakdown.png"
            fig.savefig(fpath, dpi=120)
            plt.close(fig)
            figures.append(str(fpath))

    dot = store.artifact(run_id, "theory_dot")["dot"]
    dot_path = out / "theory.dot"
    dot_path.write_text(dot, encoding="utf-8")
    tables.append(str(dot_path))

    return {"tables": tables, "figures": figures, "console": "\n\n".join(console)}
