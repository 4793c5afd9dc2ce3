"""Append-only run store: audit records, content-addressed artifacts, and
four-axis version stamps.

One directory per run: a manifest, a newline-delimited record log, and
artifact files named by content hash. Nothing in artifacts/ carries wall
time, so replays can be compared byte-for-byte; timestamps live only in the
record log and manifest and are normalized by runs_equivalent().
"""

from __future__ import annotations

import hashlib
import json
import os
import tarfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    AuditWriteError,
    LineageGapError,
    NotFoundError,
    ReplayImpossibleError,
    RunStateError,
)

AUDIT_CATEGORIES = (
    "cluster-theory",
    "cluster-audit",
    "prompt-log",
    "reasoning-trace",
    "system-event",
)

# Keys whose values derive from wall time; normalized in comparison mode.
TIMING_KEYS = {"ts", "created_at", "sealed_at", "telemetry"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class VersionStamp:
    data_version: str
    model_version: str
    prompt_version: str
    analysis_version: str

    def to_dict(self) -> dict:
        return {
            "data_version": self.data_version,
            "model_version": self.model_version,
            "prompt_version": self.prompt_version,
            "analysis_version": self.analysis_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VersionStamp":
        return cls(d["data_version"], d["model_version"], d["prompt_version"],
                   d["analysis_version"])


def make_version_stamp(corpus_payload, model_config: dict, prompt_texts: dict,
                       prompt_counter: int, analysis_params: dict) -> VersionStamp:
    """Content-addressed stamp; any change to data, model config, prompts,
    or analysis parameters forces a new analysis_version."""
    dv = content_hash(corpus_payload)
    mv = content_hash(model_config)
    pv = f"{prompt_counter}-{content_hash(prompt_texts)[:12]}"
    av = content_hash({"data": dv, "model": mv, "prompt": pv,
                       "params": analysis_params})
    return VersionStamp(dv, mv, pv, av)


def run_id_for(stamp: VersionStamp) -> str:
    return f"run-{stamp.analysis_version[:12]}"


class RunTrail:
    """An open run: serialized record appends plus artifact staging.

    Appends are durable (flush + fsync) before returning; record ids are
    strictly increasing and assigned under a single writer lock.
    """

    def __init__(self, directory: Path, run_id: str, clock=None):
        self.dir = directory
        self.run_id = run_id
        self._clock = clock or time.time
        self._lock = threading.Lock()
        self._next_id = 1
        self._sealed = False
        self._artifacts: dict[str, str] = {}
        (self.dir / "artifacts").mkdir(parents=True, exist_ok=True)
        self._records_path = self.dir / "records.ndjson"
        self._fh = open(self._records_path, "a", encoding="utf-8")

    def append(self, category: str, payload, references=()) -> int:
        if category not in AUDIT_CATEGORIES:
            raise AuditWriteError(f"unknown audit category {category!r}")
        if self._sealed:
            raise RunStateError(f"run {self.run_id} is sealed")
        with self._lock:
            rec = {
                "record_id": self._next_id,
                "ts": self._clock(),
                "category": category,
                "payload": payload,
                "references": list(references),
            }
            try:
                self._fh.write(canonical_json(rec) + "\n")
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except OSError as exc:
                raise AuditWriteError(f"audit append failed: {exc}") from exc
            self._next_id += 1
            return rec["record_id"]

    def put_artifact(self, name: str, obj) -> str:
        """Store an artifact under its content hash; returns the hash name."""
        if self._sealed:
            raise RunStateError(f"run {self.run_id} is sealed")
        text = canonical_json(obj)
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        fname = f"sha256-{digest}.json"
        path = self.dir / "artifacts" / fname
        if not path.exists():
            path.write_text(text, encoding="utf-8")
        with self._lock:
            self._artifacts[name] = fname
        return fname

    def record_count(self) -> int:
        return self._next_id - 1

    def seal(self, status: str, manifest_extra: dict) -> dict:
        if self._sealed:
            raise RunStateError(f"run {self.run_id} already sealed")
        self._sealed = True
        self._fh.close()
        manifest = {
            "run_id": self.run_id,
            "status": status,
            "sealed_at": self._clock(),
            "artifacts": dict(sorted(self._artifacts.items())),
            **manifest_extra,
        }
        (self.dir / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=1),
            encoding="utf-8",
        )
        return manifest


class RunStore:
    """Directory of runs; read side plus run creation."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def open_run(self, run_id: str, clock=None) -> RunTrail:
        directory = self.root / run_id
        if (directory / "manifest.json").exists():
            raise RunStateError(f"run {run_id} already exists in this store")
        return RunTrail(directory, run_id, clock=clock)

    def list_runs(self) -> list[str]:
        return sorted(
            p.name for p in self.root.iterdir()
            if p.is_dir() and (p / "manifest.json").exists()
        )

    def run_dir(self, run_id: str) -> Path:
        d = self.root / run_id
        if not (d / "manifest.json").exists():
            raise NotFoundError(f"run {run_id} not found")
        return d

    def manifest(self, run_id: str) -> dict:
        return json.loads((self.run_dir(run_id) / "manifest.json").read_text(encoding="utf-8"))

    def records(self, run_id: str, category: str | None = None) -> list[dict]:
        out = []
        with open(self.run_dir(run_id) / "records.ndjson", encoding="utf-8") as f:
            for line in f:
                rec = json.loads(line)
                if category is None or rec["category"] == category:
                    out.append(rec)
        return out

    def artifact(self, run_id: str, name: str):
        manifest = self.manifest(run_id)
        fname = manifest["artifacts"].get(name)
        if fname is None:
            raise NotFoundError(f"run {run_id} has no artifact {name!r}")
        path = self.run_dir(run_id) / "artifacts" / fname
        if not path.exists():
            raise LineageGapError(
                f"artifact file {fname} missing for {name!r}", missing_link=name
            )
        return json.loads(path.read_text(encoding="utf-8"))

    def artifact_by_hash(self, run_id: str, fname: str):
        path = self.run_dir(run_id) / "artifacts" / fname
        if not path.exists():
            raise NotFoundError(f"artifact {fname} not found in run {run_id}")
        return json.loads(path.read_text(encoding="utf-8"))

    def export_archive(self, run_id: str, out_path) -> Path:
        """Bundle one run directory into a shareable .tar.gz."""
        src = self.run_dir(run_id)
        out = Path(out_path)
        with tarfile.open(out, "w:gz") as tar:
            tar.add(src, arcname=run_id)
        return out


# --- lineage ------------------------------------------------------------------

def trace_lineage(store: RunStore, run_id: str, claim: str) -> list[dict]:
    """Walk a claim back to segment ids.

    Claim forms: a code uid "C001/oc1", a concept id "K001", or an edge key
    "src->dst:kind". Fails loudly with the missing link when any hop cannot
    be resolved.
    """
    manifest = store.manifest(run_id)
    if manifest.get("status") not in ("complete", "partial"):
        raise RunStateError(f"run {run_id} is not sealed complete")
    segments = {s["seg_id"] for s in store.artifact(run_id, "segments")}
    results = store.artifact(run_id, "coding_results")
    code_evidence: dict[str, list[str]] = {}
    for r in results:
        for c in r["open_codes"]:
            code_evidence[f"{r['cluster_id']}/{c['code_id']}"] = c["evidence_seg_ids"]

    chain: list[dict] = []

    def resolve_code(uid: str):
        if uid not in code_evidence:
            raise LineageGapError(f"code {uid} not present in coding results",
                                  missing_link=uid)
        chain.append({"kind": "code", "id": uid})
        evidence = code_evidence[uid]
        if not evidence:
            raise LineageGapError(f"code {uid} has no evidence", missing_link=uid)
        for sid in evidence:
            if sid not in segments:
                raise LineageGapError(f"segment {sid} missing from the run",
                                      missing_link=sid)
            chain.append({"kind": "segment", "id": sid})

    if "->" in claim:
        theory = store.artifact(run_id, "theory")
        src, rest = claim.split("->", 1)
        dst, kind = rest.rsplit(":", 1)
        match = [e for e in theory["edges"]
                 if e["src"] == src and e["dst"] == dst and e["kind"] == kind]
        if not match:
            raise LineageGapError(f"edge {claim} not in the theory graph",
                                  missing_link=claim)
        edge = match[0]
        chain.append({"kind": "edge", "id": claim})
        if not edge["via_code_uids"]:
            raise LineageGapError(f"edge {claim} carries no code references",
                                  missing_link=claim)
        for uid in edge["via_code_uids"]:
            resolve_code(uid)
    elif claim.startswith("K"):
        theory = store.artifact(run_id, "theory")
        index = store.artifact(run_id, "concept_index")
        match = [c for c in index["concepts"] if c["concept_id"] == claim]
        if not match:
            raise LineageGapError(f"concept {claim} not in the index",
                                  missing_link=claim)
        chain.append({"kind": "concept", "id": claim})
        for uid in match[0]["member_code_uids"]:
            resolve_code(uid)
    else:
        resolve_code(claim)

    if not any(link["kind"] == "segment" for link in chain):
        raise LineageGapError(f"claim {claim} does not reach any segment",
                              missing_link=claim)
    return chain


# --- replay support --------------------------------------------------------------

def collect_transcripts(store: RunStore, run_id: str) -> list[dict]:
    """Load every recorded agent transcript; missing artifact files make the
    run unreplayable and are listed."""
    transcripts = []
    missing = []
    for rec in store.records(run_id, category="prompt-log"):
        ref = rec["payload"].get("transcript_artifact")
        if ref is None:
            missing.append(f"record {rec['record_id']} has no transcript reference")
            continue
        try:
            transcripts.append(store.artifact_by_hash(run_id, ref))
        except NotFoundError:
            missing.append(ref)
    if missing:
        raise ReplayImpossibleError(
            f"{len(missing)} transcript pieces missing from run {run_id}", missing
        )
    return transcripts


def replay_vector_records(store: RunStore, run_id: str) -> dict:
    """text_key -> vector mapping recovered from the vectors artifact."""
    rows = store.artifact(run_id, "vectors")
    out = {}
    for rec in rows:
        if "text_key" not in rec:
            raise ReplayImpossibleError(
                "vector records lack text keys; replay impossible",
                [rec.get("seg_id", "?")],
            )
        out[rec["text_key"]] = rec["values"]
    return out


# --- comparison --------------------------------------------------------------------

def _normalize(obj):
    if isinstance(obj, dict):
        return {
            k: ("<timing>" if k in TIMING_KEYS else _normalize(v))
            for k, v in obj.items()
        }
    if isinstance(obj, list):
        return [_normalize(x) for x in obj]
    return obj


def runs_equivalent(dir_a, dir_b) -> tuple[bool, list[str]]:
    """Byte-compare two run directories with wall-time fields normalized."""
    a, b = Path(dir_a), Path(dir_b)
    files_a = {p.relative_to(a).as_posix() for p in a.rglob("*") if p.is_file()}
    files_b = {p.relative_to(b).as_posix() for p in b.rglob("*") if p.is_file()}
    diffs = []
    for name in sorted(files_a ^ files_b):
        diffs.append(f"only in one run: {name}")
    for name in sorted(files_a & files_b):
        pa, pb = a / name, b / name
        if name.endswith(".ndjson"):
            la = [canonical_json(_normalize(json.loads(l)))
                  for l in pa.read_text(encoding="utf-8").splitlines() if l]
            lb = [canonical_json(_normalize(json.loads(l)))
                  for l in pb.read_text(encoding="utf-8").splitlines() if l]
            if la != lb:
                diffs.append(f"record log differs: {name}")
        elif name.endswith(".json"):
            ja = canonical_json(_normalize(json.loads(pa.read_text(encoding="utf-8"))))
            jb = canonical_json(_normalize(json.loads(pb.read_text(encoding="utf-8"))))
            if ja != jb:
                diffs.append(f"json differs: {name}")
        else:
            if pa.read_bytes() != pb.read_bytes():
                diffs.append(f"bytes differ: {name}")
    return (not diffs, diffs)
