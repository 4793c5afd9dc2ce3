"""Shared fixtures: the golden 3-document corpus and provider builders."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gtflow.agents import OfflineCodingAgent
from gtflow.corpus import ingest
from gtflow.embedding import HashingEmbedder
from gtflow.pipeline import RunConfig
from gtflow.corpus import SegmentPolicy

# Three interviews with one dominant setting each (guitar / kitchen /
# garden) so segments cluster per document, while the themes (freedom,
# pressure, community) recur across documents and align into shared
# concepts. Direction-conflict and divergent-pathway tensions emerge from
# the offline agent's deterministic coding.
GOLDEN_DOCS = {
    "alpha": (
        "P: Guitar practice, guitar scales, guitar drills: guitar tone fills "
        "guitar rooms with guitar sound, so freedom comes, freedom stays, "
        "freedom sings. [laughs]\n"
        "P: Guitar mornings, guitar chords, guitar tuning: guitar strings "
        "ring guitar bright in guitar hands, while freedom grows, freedom "
        "settles, freedom holds.\n"
        "P: Guitar recitals, guitar judges, guitar stakes: guitar nerves "
        "strain guitar focus before guitar shows, since pressure mounts, "
        "pressure builds, pressure bites.\n"
        "P: Guitar deadlines, guitar exams, guitar drills again: guitar "
        "weeks wear guitar calluses into guitar skin, as pressure lingers, "
        "pressure hums, pressure follows."
    ),
    "beta": (
        "I: Kitchen shifts, kitchen prep, kitchen orders: kitchen heat warms "
        "kitchen steel across kitchen lines, so freedom appears, freedom "
        "simmers, freedom plates. [sighs]\n"
        "I: Kitchen crews, kitchen knives, kitchen boards: kitchen rhythm "
        "keeps kitchen pace through kitchen rush, while freedom expands, "
        "freedom calms, freedom breathes.\n"
        "I: Kitchen tickets, kitchen timers, kitchen calls: kitchen queues "
        "jam kitchen passes during kitchen peaks, since pressure spikes, "
        "pressure stacks, pressure shouts.\n"
        "I: Kitchen cleanup, kitchen mops, kitchen steam: kitchen nights "
        "drain kitchen legs after kitchen doubles, as pressure remains, "
        "pressure trails, pressure weighs."
    ),
    "gamma": (
        "P: Garden weekends, garden beds, garden tools: garden rows line "
        "garden plots under garden sun, so community gathers, community "
        "plants, community waters.\n"
        "P: Garden gates, garden paths, garden sheds: garden walls open "
        "garden space for garden guests, while community grows, community "
        "shares, community celebrates.\n"
        "P: Garden winters, garden frost, garden rest: garden soil sleeps "
        "below garden mulch through garden cold, yet freedom returns, "
        "freedom wanders, freedom plans.\n"
        "P: Garden springs, garden blooms, garden seeds: garden light wakes "
        "garden shoots along garden fences, and freedom spreads, freedom "
        "hums, freedom steadies."
    ),
}


def golden_config(**overrides) -> RunConfig:
    base = dict(
        segment_policy=SegmentPolicy(min_units=8, max_units=30),
        dimension=256,
        embed_seed=7,
        similarity_threshold=0.52,
        max_workers=4,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def golden_docs():
    return [
        ingest(text, doc_id=doc_id, source_kind="interview-transcript")
        for doc_id, text in sorted(GOLDEN_DOCS.items())
    ]


@pytest.fixture
def golden_embedder():
    return HashingEmbedder(dimension=256, seed=7)


@pytest.fixture
def golden_agent():
    return OfflineCodingAgent()


@pytest.fixture
def golden_panel():
    return [
        OfflineCodingAgent(agent_id=f"evaluator-{i}",
                           parameters={"temperature": 0.3})
        for i in range(3)
    ]


def write_golden_corpus(directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for doc_id, text in GOLDEN_DOCS.items():
        (directory / f"{doc_id}.txt").write_text(text, encoding="utf-8")
    return directory
