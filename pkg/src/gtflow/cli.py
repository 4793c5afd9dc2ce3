"""Command-line interface.

Subcommands: ingest, run, iterate, replay, metrics, export, trace,
compare-runs, serve. --json switches to single-line machine-readable
output; errors print one machine-parseable line on stderr. Exit status 0
only for complete runs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .agents import OfflineCodingAgent, RemoteChatAgent, ScriptedAgent
from .audit import RunStore, runs_equivalent, trace_lineage
from .coding import PromptSet, default_prompts
from .corpus import SegmentPolicy, load_corpus, segment_rule_based
from .embedding import HashingEmbedder, RemoteEmbedder
from .errors import GtflowError
from .pipeline import RunConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def build_embedder(spec: dict, config: RunConfig):
    kind = spec.get("kind", "hashing")
    if kind == "hashing":
        return HashingEmbedder(dimension=config.dimension, seed=config.embed_seed)
    if kind == "remote":
        return RemoteEmbedder(
            endpoint=spec["endpoint"],
            model=spec["model"],
            dimension=config.dimension,
            api_key=spec.get("api_key"),
        )
    raise GtflowError(f"unknown embedding provider kind {kind!r}")


def build_agent(spec: dict, config: RunConfig):
    kind = spec.get("kind", "offline")
    if kind == "offline":
        return OfflineCodingAgent(parameters=spec.get("parameters"))
    if kind == "scripted-mock":
        return ScriptedAgent.from_dir(spec["dir"],
                                      agent_id=spec.get("agent_id", "scripted-mock"))
    if kind == "remote-llm":
        return RemoteChatAgent(
            endpoint=spec["endpoint"],
            model=spec["model"],
            agent_id=spec.get("agent_id", "remote-llm"),
            temperature=spec.get("temperature", 0.0),
            api_key=spec.get("api_key"),
        )
    raise GtflowError(f"unknown agent kind {kind!r}")


def build_panel(specs: list[dict] | None, config: RunConfig):
    if not specs:
        return None
    panel = []
    for spec in specs:
        kind = spec.get("kind", "offline")
        params = {"temperature": config.evaluation_temperature,
                  **spec.get("parameters", {})}
        if kind == "offline":
            panel.append(OfflineCodingAgent(
                agent_id=spec.get("agent_id", "offline-evaluator"),
                parameters=params))
        elif kind == "scripted-mock":
            agent = ScriptedAgent.from_dir(
                spec["dir"], agent_id=spec.get("agent_id", "evaluator"))
            agent.handle.parameters.update(params)
            panel.append(agent)
        elif kind == "remote-llm":
            panel.append(RemoteChatAgent(
                endpoint=spec["endpoint"], model=spec["model"],
                agent_id=spec.get("agent_id", "remote-evaluator"),
                temperature=params["temperature"],
                api_key=spec.get("api_key")))
        else:
            raise GtflowError(f"unknown evaluator kind {kind!r}")
    return panel


def load_config_file(path) -> tuple[RunConfig, dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    config = RunConfig.from_dict(data.get("config", {}))
    config.validate()
    return config, data


def _emit(args, payload: dict, text: str):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def cmd_ingest(args) -> int:
    docs = load_corpus(args.corpus)
    policy = SegmentPolicy(min_units=args.min_units, max_units=args.max_units)
    segments = []
    for doc in sorted(docs, key=lambda d: d.doc_id):
        segments.extend(segment_rule_based(doc, policy))
    if args.out:
        Path(args.out).write_text(
            json.dumps([s.to_dict() for s in segments], ensure_ascii=False,
                       sort_keys=True, indent=1),
            encoding="utf-8")
    _emit(args, {"documents": len(docs), "segments": len(segments),
                 "out": args.out},
          f"{len(docs)} documents -> {len(segments)} segments"
          + (f" -> {args.out}" if args.out else ""))
    return EXIT_OK


def cmd_run(args) -> int:
    config, data = load_config_file(args.config)
    docs = load_corpus(args.corpus)
    store = RunStore(args.store)
    embedder = build_embedder(data.get("embedding_provider", {}), config)
    agent = build_agent(data.get("agent", {}), config)
    panel = build_panel(data.get("panel"), config)
    prompts = (PromptSet.from_dict(data["prompts"]) if data.get("prompts")
               else default_prompts())
    result = pipeline.run(config, docs, embedder, agent, store,
                          prompts=prompts, panel=panel)
    _emit(args, {"run_id": result.run_id, "status": result.status,
                 "store": str(store.root)},
          f"run {result.run_id}: {result.status} (store {store.root})")
    return EXIT_OK if result.status == "complete" else EXIT_PARTIAL


def cmd_iterate(args) -> int:
    store = RunStore(args.store)
    parent = store.manifest(args.run)
    config = RunConfig.from_dict(parent["config"])
    provider_spec, agent_spec, panel_spec = {}, {}, None
    if args.config:
        _, data = load_config_file(args.config)
        provider_spec = data.get("embedding_provider", {})
        agent_spec = data.get("agent", {})
        panel_spec = data.get("panel")
    refined = None
    if args.prompts:
        refined = PromptSet.from_dict(
            json.loads(Path(args.prompts).read_text(encoding="utf-8")))
    changed = {}
    for item in args.set or []:
        key, _, raw = item.partition("=")
        try:
            changed[key] = json.loads(raw)
        except json.JSONDecodeError:
            changed[key] = raw
    embedder = build_embedder(provider_spec, config)
    agent = build_agent(agent_spec, config)
    panel = build_panel(panel_spec, config)
    result = pipeline.iterate(store, args.run, embedder, agent,
                              refined_prompts=refined, changed=changed,
                              panel=panel)
    _emit(args, {"run_id": result.run_id, "status": result.status,
                 "parent_run": args.run},
          f"iterated {args.run} -> {result.run_id}: {result.status}")
    return EXIT_OK if result.status == "complete" else EXIT_PARTIAL


def cmd_replay(args) -> int:
    store = RunStore(args.store)
    target = RunStore(args.target)
    result = pipeline.replay(store, args.run, target)
    ok, diffs = runs_equivalent(store.run_dir(args.run),
                                target.run_dir(result.run_id))
    _emit(args, {"run_id": result.run_id, "status": result.status,
                 "byte_identical": ok, "diffs": diffs},
          f"replayed {args.run}: {result.status}, byte-identical={ok}")
    if result.status != "complete":
        return EXIT_PARTIAL
    return EXIT_OK if ok else EXIT_ERROR


def cmd_metrics(args) -> int:
    from .report import render_run_report

    store = RunStore(args.store)
    rendered = render_run_report(store, args.run, args.out_dir)
    _emit(args, {"run_id": args.run, "tables": rendered["tables"],
                 "figures": rendered["figures"]},
          rendered["console"]
          + f"\n\nwrote {len(rendered['tables'])} tables and "
            f"{len(rendered['figures'])} figures to {args.out_dir}")
    return EXIT_OK


def cmd_export(args) -> int:
    store = RunStore(args.store)
    out = store.export_archive(args.run, args.out)
    _emit(args, {"run_id": args.run, "archive": str(out)},
          f"exported {args.run} -> {out}")
    return EXIT_OK


def cmd_trace(args) -> int:
    store = RunStore(args.store)
    chain = trace_lineage(store, args.run, args.claim)
    _emit(args, {"claim": args.claim, "chain": chain},
          " -> ".join(f"{l['kind']}:{l['id']}" for l in chain))
    return EXIT_OK


def cmd_compare(args) -> int:
    ok, diffs = runs_equivalent(args.dir_a, args.dir_b)
    _emit(args, {"equivalent": ok, "diffs": diffs},
          "equivalent" if ok else "differ:\n" + "\n".join(diffs))
    return EXIT_OK if ok else EXIT_ERROR


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.store)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gtflow",
        description="Grounded-theory analysis pipeline",
    )
    parser.add_argument("--json", action="store_true",
                        help="machine-readable single-line JSON output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="segment a corpus without running analysis")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-units", type=int, default=50)
    p.add_argument("--max-units", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("run", help="execute the full pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--store", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("iterate", help="refine prompts/parameters and re-run")
    p.add_argument("--store", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--config")
    p.add_argument("--prompts", help="JSON file with the refined prompt set")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override, value parsed as JSON")
    p.set_defaults(fn=cmd_iterate)

    p = sub.add_parser("replay", help="re-execute a run from its audit trail")
    p.add_argument("--store", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--target", required=True)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("metrics", help="render report tables and figures")
    p.add_argument("--store", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("export", help="bundle a run directory into an archive")
    p.add_argument("--store", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("trace", help="walk a claim back to its segments")
    p.add_argument("--store", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--claim", required=True)
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("compare-runs", help="compare two run directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except GtflowError as exc:
        print(f"error:{exc.code}:{exc}", file=sys.stderr)
        return EXIT_CONFIG if exc.code == "config-range" else EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error:not-found:{exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
