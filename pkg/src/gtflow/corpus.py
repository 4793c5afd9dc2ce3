"""Document ingestion and semantic segmentation.

Documents are ingested verbatim; bracketed markers like ``[laughs]`` become
paralinguistic annotations and are never deleted by segmentation. Rule-based
segmentation greedily packs sentences (and whole speaker turns, when they
fit) into units sized by an analysis-unit count that works for both
space-delimited and CJK scripts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

from .errors import EmptyInputError, ConfigRangeError, TransportError

SOURCE_KINDS = ("interview-transcript", "field-note", "generic")
ANNOTATION_KINDS = ("paralinguistic", "speaker-turn", "emphasis")

# Terminal punctuation for sentence boundaries, western + CJK.
_TERMINAL = ".!?\u2026\u3002\uff01\uff1f"
_CLOSERS = "\"')\u201d\u2019\uff09\u300d\u300f"
_SENTENCE_END = re.compile(rf"[{_TERMINAL}][{_CLOSERS}]*")
_BRACKET = re.compile(r"\[([^\[\]]+)\]")
_SPEAKER = re.compile(r"^[ \t]*([^\s:\uff1a\[\]]{1,24})[:\uff1a][ \t]", re.MULTILINE)
_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return (
        0x4E00 <= code <= 0x9FFF
        or 0x3400 <= code <= 0x4DBF
        or 0xF900 <= code <= 0xFAFF
        or 0x3040 <= code <= 0x30FF
    )


@dataclass(frozen=True)
class Annotation:
    """A marked span of a document: [start, end) character offsets."""

    start: int
    end: int
    kind: str
    label: str

    def __post_init__(self):
        if self.kind not in ANNOTATION_KINDS:
            raise ConfigRangeError(f"unknown annotation kind: {self.kind}")
        if not (0 <= self.start < self.end):
            raise ConfigRangeError(f"bad annotation span [{self.start}, {self.end})")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    source_kind: str = "generic"
    metadata: dict[str, str] = field(default_factory=dict)
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyInputError(f"document {self.doc_id!r} has no text")
        if self.source_kind not in SOURCE_KINDS:
            raise ConfigRangeError(f"unknown source kind: {self.source_kind}")


@dataclass(frozen=True)
class SegmentPolicy:
    """Size bounds in analysis units.

    A unit is one word token for space-delimited scripts; runs of CJK
    characters count as len(run) / cjk_chars_per_unit units.
    """

    min_units: int = 50
    max_units: int = 200
    cjk_chars_per_unit: float = 1.7

    def __post_init__(self):
        if not self.min_units < self.max_units:
            raise ConfigRangeError(
                f"min_units ({self.min_units}) must be < max_units ({self.max_units})"
            )
        if self.cjk_chars_per_unit <= 0:
            raise ConfigRangeError("cjk_chars_per_unit must be positive")


@dataclass(frozen=True)
class Segment:
    seg_id: str
    doc_id: str
    start: int
    end: int
    text: str
    unit_count: int
    prev_id: str | None = None
    next_id: str | None = None
    annotations: tuple[Annotation, ...] = ()
    over_length: bool = False

    def to_dict(self) -> dict:
        return {
            "seg_id": self.seg_id,
            "doc_id": self.doc_id,
            "start": self.start,
            "end": self.end,
            "text": self.text,
            "unit_count": self.unit_count,
            "prev_id": self.prev_id,
            "next_id": self.next_id,
            "annotations": [
                {"start": a.start, "end": a.end, "kind": a.kind, "label": a.label}
                for a in self.annotations
            ],
            "over_length": self.over_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        return cls(
            seg_id=d["seg_id"],
            doc_id=d["doc_id"],
            start=d["start"],
            end=d["end"],
            text=d["text"],
            unit_count=d["unit_count"],
            prev_id=d.get("prev_id"),
            next_id=d.get("next_id"),
            annotations=tuple(Annotation(**a) for a in d.get("annotations", [])),
            over_length=d.get("over_length", False),
        )


def unit_count(text: str) -> float:
    """Analysis units in a piece of text (fractional for CJK runs)."""
    return _unit_count(text, SegmentPolicy().cjk_chars_per_unit)


def _unit_count(text: str, cjk_chars_per_unit: float) -> float:
    units = 0.0
    for tok in _WORD.findall(text):
        cjk_chars = sum(1 for ch in tok if _is_cjk(ch))
        other = len(tok) - cjk_chars
        if cjk_chars:
            units += cjk_chars / cjk_chars_per_unit
        if other:
            units += 1.0
    return units


def extract_annotations(text: str) -> tuple[Annotation, ...]:
    """Bracketed markers become paralinguistic annotations; line-leading
    ``Name:`` markers become speaker-turn annotations."""
    found = [
        Annotation(m.start(), m.end(), "paralinguistic", m.group(1).strip())
        for m in _BRACKET.finditer(text)
    ]
    found += [
        Annotation(m.start(1), m.end(1) + 1, "speaker-turn", m.group(1))
        for m in _SPEAKER.finditer(text)
    ]
    return tuple(sorted(found, key=lambda a: (a.start, a.end)))


def ingest(raw_text: str, metadata: dict[str, str] | None = None,
           doc_id: str = "doc", source_kind: str = "generic") -> Document:
    """Build a Document, preserving the original text verbatim."""
    if not raw_text or not raw_text.strip():
        raise EmptyInputError("document text is empty")
    return Document(
        doc_id=doc_id,
        text=raw_text,
        source_kind=source_kind,
        metadata=dict(metadata or {}),
        annotations=extract_annotations(raw_text),
    )


# --- sentence and turn detection -------------------------------------------

@dataclass(frozen=True)
class _Sentence:
    start: int  # raw region start (tiles the document)
    end: int
    trim_start: int
    trim_end: int
    units: float
    turn: int  # index of the speaker turn this sentence belongs to


def _sentence_regions(doc: Document, policy: SegmentPolicy) -> list[_Sentence]:
    text = doc.text
    cuts = {0, len(text)}
    for m in _SENTENCE_END.finditer(text):
        end = m.end()
        # trailing bracketed markers bind to the sentence they follow
        while True:
            rest = text[end:]
            stripped = rest.lstrip(" \t")
            if stripped.startswith("["):
                close = rest.find("]", len(rest) - len(stripped))
                if close == -1:
                    break
                end += close + 1
            else:
                break
        cuts.add(end)
    turn_starts = sorted(m.start() for m in _SPEAKER.finditer(text))
    cuts.update(turn_starts)
    ordered = sorted(cuts)
    sentences = []
    for a, b in zip(ordered, ordered[1:]):
        chunk = text[a:b]
        if not chunk.strip():
            continue
        ts = a + len(chunk) - len(chunk.lstrip())
        te = a + len(chunk.rstrip())
        turn = sum(1 for t in turn_starts if t <= a)
        sentences.append(_Sentence(a, b, ts, te,
                                   _unit_count(chunk, policy.cjk_chars_per_unit), turn))
    return sentences


def segment_rule_based(doc: Document, policy: SegmentPolicy) -> list[Segment]:
    """Deterministic greedy packing of sentences into policy-sized segments.

    Never splits inside a sentence and never splits a speaker turn that fits
    within max_units. A single sentence longer than max_units is emitted as
    its own segment, flagged over_length. The final segment of a document
    may fall below min_units.
    """
    sentences = _sentence_regions(doc, policy)
    if not sentences:
        raise EmptyInputError(f"document {doc.doc_id!r} has no sentences")

    # blocks: whole turns when they fit in max_units, else their sentences
    by_turn: dict[int, list[_Sentence]] = {}
    for s in sentences:
        by_turn.setdefault(s.turn, []).append(s)
    blocks: list[list[_Sentence]] = []
    for turn in sorted(by_turn):
        group = by_turn[turn]
        if sum(s.units for s in group) <= policy.max_units:
            blocks.append(group)
        else:
            blocks.extend([s] for s in group)

    packed: list[tuple[list[_Sentence], bool]] = []  # (sentences, over_length)
    current: list[_Sentence] = []

    def units_of(block):
        return sum(s.units for s in block)

    for block in blocks:
        cur = units_of(current)
        blk = units_of(block)
        if blk > policy.max_units:
            # over-length single sentence; absorb an under-min prefix rather
            # than emit a mid-document segment below min_units
            if current and cur >= policy.min_units:
                packed.append((current, False))
                current = []
            current.extend(block)
            packed.append((current, True))
            current = []
        elif current and cur + blk > policy.max_units and cur >= policy.min_units:
            packed.append((current, False))
            current = list(block)
        else:
            current.extend(block)
            if units_of(current) > policy.max_units:
                packed.append((current, True))
                current = []
    if current:
        packed.append((current, False))

    segments: list[Segment] = []
    for idx, (group, over) in enumerate(packed):
        seg_id = f"{doc.doc_id}:s{idx:04d}"
        start, end = group[0].trim_start, group[-1].trim_end
        region = (group[0].start, group[-1].end)
        anns = tuple(a for a in doc.annotations if region[0] <= a.start < region[1])
        frac = units_of(group)
        segments.append(Segment(
            seg_id=seg_id,
            doc_id=doc.doc_id,
            start=start,
            end=end,
            text=doc.text[start:end],
            unit_count=max(1, round(frac)),
            annotations=anns,
            over_length=over,
        ))
    return _link(segments)


def _link(segments: list[Segment]) -> list[Segment]:
    linked = []
    for i, seg in enumerate(segments):
        linked.append(replace(
            seg,
            prev_id=segments[i - 1].seg_id if i > 0 else None,
            next_id=segments[i + 1].seg_id if i < len(segments) - 1 else None,
        ))
    return linked


# --- agent-guided segmentation ----------------------------------------------

def validate_proposal(doc: Document, policy: SegmentPolicy,
                      spans: list[tuple[int, int]]) -> list[str]:
    """Check a proposed span list against the segment invariants.

    Returns a list of violations; empty means acceptable.
    """
    problems = []
    n = len(doc.text)
    if not spans:
        return ["no spans proposed"]
    prev_end = None
    for i, span in enumerate(spans):
        try:
            start, end = int(span[0]), int(span[1])
        except (TypeError, ValueError, IndexError):
            problems.append(f"span {i}: not a [start, end) pair")
            continue
        if not (0 <= start < end <= n):
            problems.append(f"span {i}: [{start}, {end}) out of range for length {n}")
            continue
        if prev_end is not None and start < prev_end:
            problems.append(f"span {i}: overlaps or reorders previous span ending at {prev_end}")
        if not doc.text[start:end].strip():
            problems.append(f"span {i}: whitespace-only")
        prev_end = max(prev_end or 0, end)
    if problems:
        return problems

    covered = [False] * n
    for start, end in spans:
        for k in range(int(start), int(end)):
            covered[k] = True
    missed = [k for k, ch in enumerate(doc.text) if not ch.isspace() and not covered[k]]
    if missed:
        problems.append(f"{len(missed)} non-whitespace characters uncovered (first at {missed[0]})")

    counts = [_unit_count(doc.text[int(s):int(e)], policy.cjk_chars_per_unit)
              for s, e in spans]
    for i, c in enumerate(counts):
        if c > policy.max_units and not _single_sentence(doc.text[int(spans[i][0]):int(spans[i][1])]):
            problems.append(f"span {i}: {c:.0f} units exceeds max {policy.max_units}")
        if c < policy.min_units and i < len(spans) - 1:
            problems.append(f"span {i}: {c:.0f} units below min {policy.min_units} and not final")
    return problems


def _single_sentence(text: str) -> bool:
    hits = [m for m in _SENTENCE_END.finditer(text.rstrip())]
    return len(hits) <= 1


def segmentation_context(doc: Document, policy: SegmentPolicy) -> dict:
    return {
        "response_key": f"{doc.doc_id}.segmentation",
        "doc_id": doc.doc_id,
        "text": doc.text,
        "min_units": policy.min_units,
        "max_units": policy.max_units,
    }


def segment_agent_guided(doc: Document, policy: SegmentPolicy, agent,
                         prompt: str, on_event=None) -> list[Segment]:
    """Ask an agent to propose segment boundaries; validate or fall back.

    The agent must reply with JSON {"spans": [[start, end], ...]}. Any
    transport failure, malformed reply, or invariant violation falls back to
    segment_rule_based and reports the event through on_event.
    """
    def event(kind, detail):
        if on_event is not None:
            on_event(kind, {"doc_id": doc.doc_id, **detail})

    try:
        reply = agent.call(prompt, segmentation_context(doc, policy))
    except TransportError as exc:
        event("agent-transport-failed", {"error": str(exc)})
        return segment_rule_based(doc, policy)

    try:
        parsed = json.loads(reply.output)
        spans = [(int(s[0]), int(s[1])) for s in parsed["spans"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
        event("proposal-rejected", {"violations": [f"unparseable proposal: {exc}"]})
        return segment_rule_based(doc, policy)

    problems = validate_proposal(doc, policy, spans)
    if problems:
        event("proposal-rejected", {"violations": problems})
        return segment_rule_based(doc, policy)

    segments = []
    for idx, (start, end) in enumerate(spans):
        chunk = doc.text[start:end]
        ts = start + len(chunk) - len(chunk.lstrip())
        te = start + len(chunk.rstrip())
        nxt = spans[idx + 1][0] if idx + 1 < len(spans) else len(doc.text)
        anns = tuple(a for a in doc.annotations if start <= a.start < nxt)
        frac = _unit_count(chunk, policy.cjk_chars_per_unit)
        segments.append(Segment(
            seg_id=f"{doc.doc_id}:s{idx:04d}",
            doc_id=doc.doc_id,
            start=ts,
            end=te,
            text=doc.text[ts:te],
            unit_count=max(1, round(frac)),
            annotations=anns,
            over_length=frac > policy.max_units,
        ))
    return _link(segments)


# --- corpus loading ----------------------------------------------------------

def load_corpus(path) -> list[Document]:
    """Load documents from a directory of UTF-8 .txt files or a JSON manifest.

    Manifest schema: {"documents": [{"doc_id", "text" | "path",
    "source_kind"?, "metadata"?}, ...]}; relative paths resolve against the
    manifest's directory.
    """
    from pathlib import Path

    p = Path(path)
    docs: list[Document] = []
    if p.is_dir():
        for f in sorted(p.glob("*.txt")):
            docs.append(ingest(f.read_text(encoding="utf-8"), doc_id=f.stem,
                               source_kind="generic"))
    else:
        manifest = json.loads(p.read_text(encoding="utf-8"))
        for entry in manifest["documents"]:
            text = entry.get("text")
            if text is None:
                text = (p.parent / entry["path"]).read_text(encoding="utf-8")
            docs.append(ingest(
                text,
                metadata=entry.get("metadata"),
                doc_id=entry["doc_id"],
                source_kind=entry.get("source_kind", "generic"),
            ))
    if not docs:
        raise EmptyInputError(f"no documents found at {path}")
    seen = set()
    for d in docs:
        if d.doc_id in seen:
            raise ConfigRangeError(f"duplicate doc_id {d.doc_id!r} in corpus")
        seen.add(d.doc_id)
    return docs
