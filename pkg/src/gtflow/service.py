"""HTTP service: run artifacts, HITL sessions, refinement, iteration, and
progress streaming under /v1.

Single-tenant and local-first. Read endpoints are side-effect free; every
state-changing request appends exactly one record to the session trail.
Sessions persist on disk so a reloaded client reconstructs its state from
the API alone.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import HTMLResponse, StreamingResponse

from . import pipeline
from .agents import OfflineCodingAgent
from .audit import RunStore, canonical_json, trace_lineage
from .coding import PromptSet
from .embedding import HashingEmbedder
from .errors import (
    ConfigRangeError,
    GtflowError,
    LineageGapError,
    NoOpRefinementError,
    NotFoundError,
    RunStateError,
)
from .pipeline import RunConfig

INTERVENTION_POINTS = (
    "pre-processing-guidance",
    "cluster-interpretation",
    "relationship-validation",
    "theory-refinement",
    "none",
)


class SessionBox:
    """Disk-backed session state plus its own append-only audit trail."""

    def __init__(self, root: Path, session_id: str):
        self.dir = root / "_sessions" / session_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self.session_id = session_id
        self._state_path = self.dir / "state.json"
        self._trail_path = self.dir / "records.ndjson"
        self._lock = threading.Lock()

    def load(self) -> dict:
        if self._state_path.exists():
            return json.loads(self._state_path.read_text(encoding="utf-8"))
        return {
            "session_id": self.session_id,
            "active_run": None,
            "pending_intervention_point": "none",
            "refinement_draft": None,
            "busy": False,
        }

    def save(self, state: dict) -> None:
        self._state_path.write_text(
            json.dumps(state, sort_keys=True, ensure_ascii=False, indent=1),
            encoding="utf-8")

    def audit(self, action: str, payload: dict) -> None:
        rec = {"ts": time.time(), "action": action, "payload": payload}
        with self._lock, open(self._trail_path, "a", encoding="utf-8") as f:
            f.write(canonical_json(rec) + "\n")

    def records(self) -> list[dict]:
        if not self._trail_path.exists():
            return []
        return [json.loads(l) for l in
                self._trail_path.read_text(encoding="utf-8").splitlines() if l]


class EventHub:
    """Per-run progress event buffers with live subscriber queues."""

    def __init__(self):
        self._buffers: dict[str, list[dict]] = {}
        self._queues: dict[str, list[queue.Queue]] = {}
        self._lock = threading.Lock()

    def publish(self, event: dict) -> None:
        rid = event.get("run_id", "?")
        with self._lock:
            self._buffers.setdefault(rid, []).append(event)
            for q in self._queues.get(rid, []):
                q.put(event)

    def subscribe(self, run_id: str) -> tuple[list[dict], queue.Queue]:
        q: queue.Queue = queue.Queue()
        with self._lock:
            backlog = list(self._buffers.get(run_id, []))
            self._queues.setdefault(run_id, []).append(q)
        return backlog, q

    def unsubscribe(self, run_id: str, q: queue.Queue) -> None:
        with self._lock:
            if q in self._queues.get(run_id, []):
                self._queues[run_id].remove(q)


def create_app(store_root, embedder=None, agent=None, panel=None) -> FastAPI:
    """Build the service against a run store.

    embedder/agent/panel are what iterate() uses for regenerated runs; the
    defaults give a fully offline deterministic stack.
    """
    store = RunStore(store_root)
    hub = EventHub()
    app = FastAPI(title="gtflow", version="0.1.0")
    app.state.store = store
    app.state.hub = hub

    def get_session(session_id: str) -> SessionBox:
        return SessionBox(store.root, session_id)

    def err(exc: GtflowError) -> HTTPException:
        if isinstance(exc, (NotFoundError, LineageGapError)):
            return HTTPException(404, f"{exc.code}: {exc}")
        if isinstance(exc, (RunStateError, NoOpRefinementError)):
            return HTTPException(409, f"{exc.code}: {exc}")
        if isinstance(exc, ConfigRangeError):
            return HTTPException(422, f"{exc.code}: {exc}")
        return HTTPException(500, f"{exc.code}: {exc}")

    # ---- read endpoints -------------------------------------------------

    @app.get("/v1/runs")
    def list_runs():
        out = []
        for rid in store.list_runs():
            m = store.manifest(rid)
            out.append({
                "run_id": rid,
                "status": m["status"],
                "parent_run": m.get("parent_run"),
                "created_at": m.get("created_at"),
                "prompt_version": m.get("prompt_set", {}).get("version"),
            })
        return out

    @app.get("/v1/runs/{run_id}")
    def get_run(run_id: str):
        try:
            return store.manifest(run_id)
        except GtflowError as exc:
            raise err(exc)

    def artifact_endpoint(name: str):
        def handler(run_id: str):
            try:
                return store.artifact(run_id, name)
            except GtflowError as exc:
                raise err(exc)
        return handler

    app.get("/v1/runs/{run_id}/segments")(artifact_endpoint("segments"))
    app.get("/v1/runs/{run_id}/clusters")(artifact_endpoint("clusterset"))
    app.get("/v1/runs/{run_id}/results")(artifact_endpoint("coding_results"))
    app.get("/v1/runs/{run_id}/theory")(artifact_endpoint("theory"))
    app.get("/v1/runs/{run_id}/metrics")(artifact_endpoint("metrics"))
    app.get("/v1/runs/{run_id}/concepts")(artifact_endpoint("concept_index"))

    @app.get("/v1/runs/{run_id}/clusters/{cluster_id}")
    def get_cluster(run_id: str, cluster_id: str):
        try:
            cs = store.artifact(run_id, "clusterset")
            results = store.artifact(run_id, "coding_results")
            segments = store.artifact(run_id, "segments")
        except GtflowError as exc:
            raise err(exc)
        cluster = next((c for c in cs["clusters"] if c["cluster_id"] == cluster_id),
                       None)
        if cluster is None:
            raise HTTPException(404, f"not-found: cluster {cluster_id}")
        result = next((r for r in results if r["cluster_id"] == cluster_id), None)
        failed = cluster_id in store.manifest(run_id).get("failed_clusters", [])
        members = [s for s in segments if s["seg_id"] in set(cluster["seg_ids"])]
        transcripts = [
            rec["payload"] for rec in store.records(run_id, "prompt-log")
            if rec["payload"].get("response_key", "").startswith(f"{cluster_id}.")
        ]
        return {
            "cluster": {k: v for k, v in cluster.items() if k != "centroid"},
            "segments": members,
            "result": result,
            "failed": failed,
            "transcripts": transcripts,
        }

    @app.get("/v1/runs/{run_id}/audit")
    def get_audit(run_id: str, category: str | None = None,
                  offset: int = 0, limit: int = 200):
        try:
            records = store.records(run_id, category)
        except GtflowError as exc:
            raise err(exc)
        return {"total": len(records),
                "records": records[offset:offset + limit]}

    @app.get("/v1/runs/{run_id}/lineage")
    def get_lineage(run_id: str):
        try:
            store.manifest(run_id)
        except GtflowError as exc:
            raise err(exc)
        runs = {rid: store.manifest(rid) for rid in store.list_runs()}
        # walk to the root, then collect the whole family tree
        root = run_id
        while runs[root].get("parent_run") in runs:
            root = runs[root]["parent_run"]
        tree = []
        for rid, m in sorted(runs.items()):
            tree.append({
                "run_id": rid,
                "parent_run": m.get("parent_run"),
                "status": m["status"],
                "prompt_version": m.get("prompt_set", {}).get("version"),
            })
        family = {root}
        changed = True
        while changed:
            changed = False
            for node in tree:
                if node["run_id"] in family:
                    continue
                if node["parent_run"] in family:
                    family.add(node["run_id"])
                    changed = True
        return {"root": root,
                "runs": [n for n in tree if n["run_id"] in family]}

    @app.get("/v1/runs/{run_id}/prompts")
    def get_prompts(run_id: str):
        try:
            return store.manifest(run_id)["prompt_set"]
        except GtflowError as exc:
            raise err(exc)

    @app.get("/v1/runs/{run_id}/trace/{claim:path}")
    def get_trace(run_id: str, claim: str):
        try:
            return {"claim": claim, "chain": trace_lineage(store, run_id, claim)}
        except GtflowError as exc:
            raise err(exc)

    # ---- sessions and HITL ----------------------------------------------

    @app.get("/v1/sessions/{session_id}")
    def get_session_state(session_id: str):
        return get_session(session_id).load()

    @app.put("/v1/sessions/{session_id}")
    def put_session_state(session_id: str, body: dict):
        box = get_session(session_id)
        state = box.load()
        if "active_run" in body:
            rid = body["active_run"]
            if rid is not None:
                try:
                    store.manifest(rid)
                except GtflowError as exc:
                    raise err(exc)
            state["active_run"] = rid
        if "pending_intervention_point" in body:
            point = body["pending_intervention_point"]
            if point not in INTERVENTION_POINTS:
                raise HTTPException(422, f"config-range: unknown intervention point {point!r}")
            state["pending_intervention_point"] = point
        box.save(state)
        box.audit("session-updated", {k: body[k] for k in sorted(body)})
        return state

    @app.post("/v1/sessions/{session_id}/refinement")
    def post_refinement(session_id: str, body: dict):
        box = get_session(session_id)
        state = box.load()
        if state["pending_intervention_point"] in (None, "none"):
            raise HTTPException(
                409, "run-state: no pending intervention point in this session")
        if state["active_run"] is None:
            raise HTTPException(409, "run-state: session has no active run")
        draft = {
            "prompt_edits": body.get("prompt_edits", {}),
            "params": body.get("params", {}),
        }
        state["refinement_draft"] = draft
        box.save(state)
        box.audit("refinement-submitted", draft)
        return state

    @app.post("/v1/sessions/{session_id}/iterate")
    def post_iterate(session_id: str):
        box = get_session(session_id)
        state = box.load()
        if state.get("busy"):
            raise HTTPException(409, "run-state: session already has an active run")
        if state["active_run"] is None:
            raise HTTPException(409, "run-state: session has no active run")
        draft = state.get("refinement_draft")
        if not draft:
            raise HTTPException(409, "run-state: no refinement draft submitted")

        parent_id = state["active_run"]
        try:
            parent = store.manifest(parent_id)
        except GtflowError as exc:
            raise err(exc)
        parent_config = RunConfig.from_dict(parent["config"])
        parent_prompts = PromptSet.from_dict(parent["prompt_set"])
        refined = None
        if draft["prompt_edits"]:
            refined = parent_prompts.refine(**draft["prompt_edits"])

        live_embedder = embedder or HashingEmbedder(
            dimension=parent_config.dimension, seed=parent_config.embed_seed)
        live_agent = agent or OfflineCodingAgent()
        state["busy"] = True
        box.save(state)
        try:
            child = pipeline.iterate(
                store, parent_id, live_embedder, live_agent,
                refined_prompts=refined, changed=draft["params"],
                panel=panel, progress=hub.publish)
        except GtflowError as exc:
            raise err(exc)
        finally:
            state["busy"] = False
            box.save(state)
        state.update({
            "active_run": child.run_id,
            "pending_intervention_point": "none",
            "refinement_draft": None,
        })
        box.save(state)
        box.audit("iterate-triggered", {
            "parent_run": parent_id, "child_run": child.run_id,
        })
        return {"session": state, "run_id": child.run_id,
                "status": child.status}

    @app.get("/v1/sessions/{session_id}/audit")
    def get_session_audit(session_id: str):
        return {"records": get_session(session_id).records()}

    # ---- progress stream -------------------------------------------------

    @app.get("/v1/runs/{run_id}/events")
    def get_events(run_id: str, request: Request):
        backlog, q = hub.subscribe(run_id)

        def sealed() -> bool:
            try:
                return store.manifest(run_id)["status"] in (
                    "complete", "partial", "failed")
            except GtflowError:
                return False

        def stream():
            try:
                for event in backlog:
                    yield f"data: {canonical_json(event)}\n\n"
                if backlog and backlog[-1].get("event") == "run-sealed":
                    return
                if not backlog and sealed():
                    yield ("data: " + canonical_json(
                        {"event": "run-sealed", "run_id": run_id}) + "\n\n")
                    return
                while True:
                    try:
                        event = q.get(timeout=5.0)
                    except queue.Empty:
                        if sealed():
                            return
                        yield ": keep-alive\n\n"
                        continue
                    yield f"data: {canonical_json(event)}\n\n"
                    if event.get("event") == "run-sealed":
                        return
            finally:
                hub.unsubscribe(run_id, q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    # ---- static dashboard -------------------------------------------------

    ui_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"

    @app.get("/ui", response_class=HTMLResponse)
    def ui_index():
        index = ui_dir / "index.html"
        if not index.exists():
            raise HTTPException(404, "dashboard not built (run npm run build in frontend/)")
        return index.read_text(encoding="utf-8")

    @app.get("/ui/{path:path}")
    def ui_asset(path: str):
        from fastapi.responses import FileResponse

        target = (ui_dir / path).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            raise HTTPException(404, "not found")
        return FileResponse(target)

    return app
