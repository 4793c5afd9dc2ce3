"""Agent abstraction: one call shape for remote models, scripted mocks, and
replay.

An agent maps (prompt text, context blocks) to (output text, reasoning
text). Scripted mocks look up responses by the caller-supplied
context["response_key"]; replay agents serve transcripts recorded in a
prior run and refuse to diverge silently.
"""

from __future__ import annotations

import json
import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ReplayImpossibleError, TransportError

AGENT_KINDS = ("remote-llm", "scripted-mock", "replay")


@dataclass(frozen=True)
class AgentHandle:
    agent_id: str
    kind: str
    model_version: str
    parameters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "kind": self.kind,
            "model_version": self.model_version,
            "parameters": dict(self.parameters),
        }


@dataclass(frozen=True)
class AgentReply:
    output: str
    reasoning: str = ""
    trace_partial: bool = False


class Agent(ABC):
    """Single-operation interface so remote models, scripted mocks, and
    replay stay interchangeable."""

    handle: AgentHandle

    @abstractmethod
    def call(self, prompt: str, context: dict) -> AgentReply:
        """Run one agent invocation. Raises TransportError on failure."""


class ScriptedAgent(Agent):
    """Returns canned replies keyed by context["response_key"].

    Responses may be given in memory or as a directory of JSON files named
    ``<response_key>.json`` with {"output": ..., "reasoning": ...}. A key
    may map to a list of replies, consumed in order (used to script repair
    reprompts).
    """

    def __init__(self, responses: dict | None = None,
                 agent_id: str = "scripted-mock", model_version: str = "mock-1",
                 parameters: dict | None = None):
        self.handle = AgentHandle(agent_id, "scripted-mock", model_version,
                                  dict(parameters or {}))
        self._responses: dict[str, list] = {}
        for key, value in (responses or {}).items():
            self._responses[key] = list(value) if isinstance(value, list) else [value]
        self._cursor: dict[str, int] = {}

    @classmethod
    def from_dir(cls, path, agent_id: str = "scripted-mock",
                 model_version: str = "mock-1") -> "ScriptedAgent":
        responses = {}
        for f in sorted(Path(path).glob("*.json")):
            data = json.loads(f.read_text(encoding="utf-8"))
            responses[f.stem] = data
        return cls(responses, agent_id=agent_id, model_version=model_version)

    def call(self, prompt: str, context: dict) -> AgentReply:
        key = context.get("response_key", "")
        if key not in self._responses:
            raise TransportError(f"no scripted response for key {key!r}")
        replies = self._responses[key]
        i = min(self._cursor.get(key, 0), len(replies) - 1)
        self._cursor[key] = i + 1
        rep = replies[i]
        if isinstance(rep, dict):
            return AgentReply(output=rep.get("output", ""),
                              reasoning=rep.get("reasoning", ""))
        return AgentReply(output=str(rep))


class CallableAgent(Agent):
    """Wraps a plain function(prompt, context) -> (output, reasoning).

    Test plumbing for mocks that need delays, failures, or computed output.
    """

    def __init__(self, fn, agent_id: str = "callable-mock",
                 model_version: str = "mock-1", latency_s: float = 0.0,
                 parameters: dict | None = None):
        self.handle = AgentHandle(agent_id, "scripted-mock", model_version,
                                  dict(parameters or {}))
        self._fn = fn
        self.latency_s = latency_s

    def call(self, prompt: str, context: dict) -> AgentReply:
        if self.latency_s:
            time.sleep(self.latency_s)
        result = self._fn(prompt, context)
        if isinstance(result, AgentReply):
            return result
        output, reasoning = result
        return AgentReply(output=output, reasoning=reasoning)


class ReplayAgent(Agent):
    """Serves transcripts recorded in a prior run.

    Transcripts are keyed by (response_key, per-key sequence). The recorded
    prompt must match the incoming prompt exactly; a mismatch means the
    configuration diverged from the recorded run and replay is impossible.
    """

    def __init__(self, transcripts: list[dict], handle: AgentHandle | None = None):
        self.handle = handle or AgentHandle("replay", "replay", "replay-1")
        self._by_key: dict[str, list[dict]] = {}
        for t in transcripts:
            self._by_key.setdefault(t["response_key"], []).append(t)
        self._cursor: dict[str, int] = {}

    def call(self, prompt: str, context: dict) -> AgentReply:
        key = context.get("response_key", "")
        queue = self._by_key.get(key, [])
        i = self._cursor.get(key, 0)
        if i >= len(queue):
            raise ReplayImpossibleError(
                f"no recorded transcript for {key!r} (call #{i + 1})", [key]
            )
        rec = queue[i]
        self._cursor[key] = i + 1
        if rec["prompt"] != prompt:
            raise ReplayImpossibleError(
                f"prompt for {key!r} diverges from the recorded transcript", [key]
            )
        return AgentReply(output=rec["output"], reasoning=rec.get("reasoning", ""),
                          trace_partial=rec.get("trace_partial", False))


_TOKEN_SPLIT = re.compile(r"[^\W_]+", re.UNICODE)


class OfflineCodingAgent(Agent):
    """Deterministic scripted mock that synthesizes plausible coding output
    from its context.

    A pure function of the request: open codes from the dominant tokens of
    segment pairs, axial relations chaining the codes (direction alternates
    with cluster parity, which surfaces cross-cluster tensions), a core
    category from the most frequent token, and fixed-seed evaluator scores.
    Lets the full pipeline run offline, mirroring what HashingEmbedder does
    for vectors.
    """

    def __init__(self, agent_id: str = "offline-coder",
                 model_version: str = "offline-1",
                 parameters: dict | None = None, latency_s: float = 0.0):
        self.handle = AgentHandle(agent_id, "scripted-mock", model_version,
                                  dict(parameters or {}))
        self.latency_s = latency_s

    @staticmethod
    def _top_tokens(texts: list[str], k: int = 2,
                    exclude: set[str] | None = None) -> list[str]:
        from collections import Counter

        counts: Counter = Counter()
        for t in texts:
            for tok in _TOKEN_SPLIT.findall(t.lower()):
                if len(tok) >= 4:
                    counts[tok] += 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        picked = [tok for tok, _ in ranked if not exclude or tok not in exclude]
        if not picked:
            picked = [tok for tok, _ in ranked]
        return picked[:k] or ["theme"]

    def call(self, prompt: str, context: dict) -> AgentReply:
        if self.latency_s:
            time.sleep(self.latency_s)
        key = context.get("response_key", "")
        if key.endswith(".open"):
            return self._open(context)
        if key.endswith(".axial"):
            return self._axial(context)
        if key.endswith(".selective"):
            return self._selective(context)
        if key.startswith("evaluation."):
            return self._evaluate(prompt)
        raise TransportError(f"offline agent cannot serve key {key!r}")

    @staticmethod
    def _background(segments: list[dict]) -> set[str]:
        # tokens present in every segment carry no contrast within the cluster
        per_seg = [
            {t for t in _TOKEN_SPLIT.findall(s["text"].lower()) if len(t) >= 4}
            for s in segments
        ]
        return set.intersection(*per_seg) if len(per_seg) > 1 else set()

    def _open(self, context: dict) -> AgentReply:
        segments = json.loads(context["segments"])
        background = self._background(segments)
        codes = []
        used: set[str] = set()
        for i in range(0, len(segments), 2):
            group = segments[i:i + 2]
            top = self._top_tokens([s["text"] for s in group], k=4,
                                   exclude=background)
            label = next((t for t in top if t not in used), top[0])
            used.add(label)
            codes.append({
                "code_id": f"oc{i // 2 + 1}",
                "label": label,
                "definition": f"Accounts centered on {label}.",
                "evidence_seg_ids": [s["seg_id"] for s in group],
            })
        return AgentReply(
            output=json.dumps({"open_codes": codes}, sort_keys=True),
            reasoning=f"grouped {len(segments)} segments into {len(codes)} codes",
        )

    def _axial(self, context: dict) -> AgentReply:
        codes = json.loads(context["open_codes"])
        cluster = context.get("cluster_id", "C000")
        parity = int("".join(ch for ch in cluster if ch.isdigit()) or 0) % 2
        kinds = ("causal", "consequence", "contextual", "intervening")
        rels = []
        for i in range(len(codes) - 1):
            a, b = codes[i]["code_id"], codes[i + 1]["code_id"]
            if parity:
                a, b = b, a
            rels.append({
                "from_code": a,
                "to_code": b,
                "relation_kind": kinds[i % len(kinds)],
                "rationale": f"{a} patterns precede {b} in these accounts",
            })
        return AgentReply(
            output=json.dumps({"axial_relationships": rels}, sort_keys=True),
            reasoning=f"chained {len(codes)} codes with parity {parity}",
        )

    def _selective(self, context: dict) -> AgentReply:
        codes = json.loads(context["open_codes"])
        labels = [c["label"] for c in codes]
        top = self._top_tokens([" ".join(labels)], k=2)
        evidence = sorted({sid for c in codes for sid in c["evidence_seg_ids"]})
        core = {
            "label": f"{top[0]} adaptation",
            "definition": f"How {top[0]} organizes the cluster's accounts.",
            "properties": top,
            "dimensional_range": ["emerging", "established"],
        }
        return AgentReply(
            output=json.dumps({"core_category": core,
                               "supporting_evidence": evidence}, sort_keys=True),
            reasoning=f"selected {core['label']} over {len(codes)} codes",
        )

    def _evaluate(self, prompt: str) -> AgentReply:
        import hashlib

        dims = ("theoretical_coherence", "empirical_grounding", "innovation",
                "practical_value", "depth_of_insight", "contextual_sensitivity")
        scores = {}
        for d in dims:
            h = hashlib.sha256(f"{self.handle.agent_id}:{d}".encode()).digest()
            scores[d] = round(0.70 + (h[0] / 255) * 0.25, 3)
        return AgentReply(output=json.dumps({"scores": scores}, sort_keys=True),
                          reasoning="rubric applied")


class RemoteChatAgent(Agent):
    """HTTP chat-style agent client.

    POSTs {"model", "temperature", "messages": [{"role", "content"}]} and
    reads choices[0].message.content; a "reasoning" field is captured when
    the provider exposes one, otherwise the trace is marked partial.
    """

    def __init__(self, endpoint: str, model: str, agent_id: str = "remote-llm",
                 temperature: float = 0.0, api_key: str | None = None,
                 max_attempts: int = 3, backoff_s: float = 0.5, client=None):
        import httpx

        self.handle = AgentHandle(agent_id, "remote-llm", model,
                                  {"temperature": temperature})
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(headers=headers, timeout=120.0)

    def call(self, prompt: str, context: dict) -> AgentReply:
        import httpx

        blocks = [f"## {k}\n{v}" for k, v in context.items()
                  if k != "response_key" and isinstance(v, str)]
        content = prompt if not blocks else prompt + "\n\n" + "\n\n".join(blocks)
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": content}],
        }
        last_error = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(self.endpoint, json=body)
                resp.raise_for_status()
                msg = resp.json()["choices"][0]["message"]
            except (httpx.HTTPError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last_error = exc
                continue
            reasoning = msg.get("reasoning", "")
            return AgentReply(output=msg.get("content", ""), reasoning=reasoning,
                              trace_partial=not reasoning)
        raise TransportError(f"agent service unreachable: {last_error}")
