"""Pipeline orchestration: phases, audit counts, iteration, replay,
telemetry."""

import json
import math
import time

import pytest

from conftest import golden_config
from gtflow.agents import CallableAgent, OfflineCodingAgent
from gtflow.audit import RunStore, runs_equivalent
from gtflow.coding import TaskTiming
from gtflow.errors import (
    ConfigRangeError,
    EmptyInputError,
    NoOpRefinementError,
    ReplayImpossibleError,
    RunStateError,
    UndefinedTelemetryError,
)
from gtflow.pipeline import (
    RunConfig,
    compute_telemetry,
    iterate,
    iteration_depth,
    replay,
    run,
    telemetry,
)


def golden_run(tmp_path, docs, embedder, agent, panel=None, name="store",
               **config_overrides):
    store = RunStore(tmp_path / name)
    result = run(golden_config(**config_overrides), docs, embedder, agent,
                 store, panel=panel)
    return store, result


class TestRun:
    def test_complete_run_with_nonempty_theory(self, tmp_path, golden_docs,
                                               golden_embedder, golden_agent):
        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent)
        assert result.status == "complete"
        assert result.theory is not None
        assert result.theory.edges
        assert result.theory.contrasts
        assert len(result.clusterset.clusters) == 3
        manifest = store.manifest(result.run_id)
        assert manifest["status"] == "complete"
        for name in ("corpus", "segments", "vectors", "dendrogram",
                     "clusterset", "coding_results", "code_vectors",
                     "concept_index", "theory", "metrics"):
            assert name in manifest["artifacts"], name

    def test_empty_corpus_no_run_created(self, tmp_path, golden_embedder,
                                         golden_agent):
        store = RunStore(tmp_path / "store")
        with pytest.raises(EmptyInputError):
            run(golden_config(), [], golden_embedder, golden_agent, store)
        assert store.list_runs() == []

    def test_invalid_threshold_rejected_before_run(self, tmp_path, golden_docs,
                                                   golden_embedder, golden_agent):
        store = RunStore(tmp_path / "store")
        with pytest.raises(ConfigRangeError):
            run(golden_config(similarity_threshold=1.5), golden_docs,
                golden_embedder, golden_agent, store)
        assert store.list_runs() == []

    def test_failing_cluster_isolates_to_partial_run(self, tmp_path, golden_docs,
                                                     golden_embedder):
        inner = OfflineCodingAgent()

        def flaky(prompt, context):
            if context["response_key"].startswith("C002."):
                from gtflow.errors import TransportError
                raise TransportError("agent died")
            return inner.call(prompt, context)

        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   CallableAgent(flaky))
        assert result.status == "partial"
        manifest = store.manifest(result.run_id)
        assert manifest["failed_clusters"] == ["C002"]
        assert result.metrics is not None  # metrics over completed clusters
        assert {r.cluster_id for r in result.results} == {"C001", "C003"}

    def test_prompt_log_count_equals_agent_calls(self, tmp_path, golden_docs,
                                                 golden_embedder, golden_agent,
                                                 golden_panel):
        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent, panel=golden_panel)
        prompt_logs = store.records(result.run_id, "prompt-log")
        # 3 clusters x 3 stages + 3 evaluators, no repairs needed
        assert len(prompt_logs) == 12
        assert store.manifest(result.run_id)["n_agent_calls"] == 12
        traces = store.records(result.run_id, "reasoning-trace")
        assert len(traces) == 9  # coding calls carry reasoning records

    def test_cluster_theory_records_match_results(self, tmp_path, golden_docs,
                                                  golden_embedder, golden_agent):
        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent)
        theories = store.records(result.run_id, "cluster-theory")
        assert len(theories) == len(result.results)
        audits = store.records(result.run_id, "cluster-audit")
        assert len(audits) == len(result.results)

    def test_quality_scores_attached_with_panel(self, tmp_path, golden_docs,
                                                golden_embedder, golden_agent,
                                                golden_panel):
        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent, panel=golden_panel)
        assert result.metrics.quality is not None
        assert len(result.metrics.quality.composites) == 3
        assert 0.0 <= result.metrics.quality.panel_mean <= 1.0

    def test_progress_events_stream(self, tmp_path, golden_docs,
                                    golden_embedder, golden_agent):
        events = []
        store = RunStore(tmp_path / "store")
        run(golden_config(), golden_docs, golden_embedder, golden_agent,
            store, progress=events.append)
        names = [e["event"] for e in events]
        assert names[0] == "phase-start"
        assert names[-1] == "run-sealed"
        assert names.count("cluster-complete") == 3

    def test_agent_guided_mode_falls_back_with_audit(self, tmp_path, golden_docs,
                                                     golden_embedder,
                                                     golden_agent):
        # the offline agent refuses segmentation keys, so every document
        # falls back to rule-based with an audited transport event
        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent,
                                   segmentation_mode="agent-guided")
        assert result.status == "complete"
        events = [r["payload"] for r in store.records(result.run_id, "system-event")]
        fallbacks = [e for e in events if e.get("kind") == "agent-transport-failed"]
        assert len(fallbacks) == 3
        rule_store, rule_result = golden_run(tmp_path, golden_docs,
                                             golden_embedder, golden_agent,
                                             name="rule")
        assert (store.manifest(result.run_id)["artifacts"]["segments"]
                == rule_store.manifest(rule_result.run_id)["artifacts"]["segments"])

    def test_agent_guided_acceptance_of_valid_proposal(self, tmp_path,
                                                       golden_docs,
                                                       golden_embedder):
        import json as _json

        from gtflow.corpus import SegmentPolicy, segment_rule_based

        inner = OfflineCodingAgent()
        policy = SegmentPolicy(min_units=8, max_units=30)
        expected = {d.doc_id: segment_rule_based(d, policy) for d in golden_docs}

        def echo_or_code(prompt, context):
            key = context.get("response_key", "")
            if key.endswith(".segmentation"):
                segs = expected[context["doc_id"]]
                return _json.dumps(
                    {"spans": [[s.start, s.end] for s in segs]}), "echo"
            return inner.call(prompt, context)

        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   CallableAgent(echo_or_code),
                                   segmentation_mode="agent-guided")
        assert result.status == "complete"
        events = [r["payload"].get("kind")
                  for r in store.records(result.run_id, "system-event")]
        assert "proposal-rejected" not in events
        assert "agent-transport-failed" not in events

    def test_cluster_size_advisory_recorded(self, tmp_path, golden_docs,
                                            golden_embedder, golden_agent):
        # golden clusters have 4 members each, outside the advised 8-12 band
        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent)
        advisories = [r["payload"] for r in
                      store.records(result.run_id, "system-event")
                      if r["payload"].get("kind") == "cluster-size-advisory"]
        assert len(advisories) == 1
        assert advisories[0]["median_size"] == 4.0

    def test_run_id_deterministic_for_same_inputs(self, tmp_path, golden_docs,
                                                  golden_embedder, golden_agent):
        _, r1 = golden_run(tmp_path, golden_docs, golden_embedder,
                           golden_agent, name="a")
        _, r2 = golden_run(tmp_path, golden_docs, golden_embedder,
                           golden_agent, name="b")
        assert r1.run_id == r2.run_id

    def test_end_to_end_determinism(self, tmp_path, golden_docs,
                                    golden_embedder, golden_agent):
        sa, ra = golden_run(tmp_path, golden_docs, golden_embedder,
                            golden_agent, name="a")
        sb, rb = golden_run(tmp_path, golden_docs, golden_embedder,
                            golden_agent, name="b")
        ok, diffs = runs_equivalent(sa.run_dir(ra.run_id), sb.run_dir(rb.run_id))
        assert ok, diffs


class TestIterate:
    def test_prompt_only_reuses_clusters_byte_identically(self, tmp_path,
                                                          golden_docs,
                                                          golden_embedder,
                                                          golden_agent):
        store, parent = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent)
        from gtflow.coding import PromptSet

        prompts = PromptSet.from_dict(store.manifest(parent.run_id)["prompt_set"])
        refined = prompts.refine(
            open_prompt=prompts.open_prompt + " Attend to tensions.")
        child = iterate(store, parent.run_id, golden_embedder, golden_agent,
                        refined_prompts=refined)
        assert child.parent_run == parent.run_id
        assert child.run_id != parent.run_id
        pm = store.manifest(parent.run_id)
        cm = store.manifest(child.run_id)
        for name in ("segments", "vectors", "clusterset", "dendrogram"):
            assert pm["artifacts"][name] == cm["artifacts"][name], name
        assert cm["prompt_set"]["version"] == 2
        assert cm["prompt_set"]["parent_version"] == 1
        reused = [r["payload"]["phase"] for r in
                  store.records(child.run_id, "system-event")
                  if r["payload"].get("kind") == "phase-reused"]
        assert set(reused) == {"ingestion", "embedding", "hac", "cut"}

    def test_threshold_change_reclusters_but_keeps_segments(self, tmp_path,
                                                            golden_docs,
                                                            golden_embedder,
                                                            golden_agent):
        store, parent = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent)
        child = iterate(store, parent.run_id, golden_embedder, golden_agent,
                        changed={"similarity_threshold": 0.30})
        pm = store.manifest(parent.run_id)
        cm = store.manifest(child.run_id)
        assert pm["artifacts"]["segments"] == cm["artifacts"]["segments"]
        assert pm["artifacts"]["vectors"] == cm["artifacts"]["vectors"]
        assert pm["artifacts"]["dendrogram"] == cm["artifacts"]["dendrogram"]
        assert pm["artifacts"]["clusterset"] != cm["artifacts"]["clusterset"]
        assert (cm["version_stamp"]["analysis_version"]
                != pm["version_stamp"]["analysis_version"])
        assert (cm["version_stamp"]["data_version"]
                == pm["version_stamp"]["data_version"])

    def test_noop_refinement_rejected(self, tmp_path, golden_docs,
                                      golden_embedder, golden_agent):
        store, parent = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent)
        with pytest.raises(NoOpRefinementError):
            iterate(store, parent.run_id, golden_embedder, golden_agent)

    def test_wrong_parent_version_rejected(self, tmp_path, golden_docs,
                                           golden_embedder, golden_agent):
        from gtflow.coding import default_prompts

        store, parent = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent)
        stray = default_prompts().refine(open_prompt="x").refine(open_prompt="y")
        with pytest.raises(ConfigRangeError):
            iterate(store, parent.run_id, golden_embedder, golden_agent,
                    refined_prompts=stray)

    def test_unsealed_parent_rejected(self, tmp_path, golden_docs,
                                      golden_embedder, golden_agent):
        store = RunStore(tmp_path / "store")
        trail = store.open_run("run-open")
        trail.append("system-event", {"kind": "x"})
        # not sealed: no manifest yet
        with pytest.raises(Exception):
            iterate(store, "run-open", golden_embedder, golden_agent,
                    changed={"similarity_threshold": 0.3})

    def test_two_refinements_build_lineage_of_three(self, tmp_path, golden_docs,
                                                    golden_embedder,
                                                    golden_agent):
        from gtflow.coding import PromptSet

        store, parent = golden_run(tmp_path, golden_docs, golden_embedder,
                                   golden_agent)
        p1 = PromptSet.from_dict(store.manifest(parent.run_id)["prompt_set"])
        child = iterate(store, parent.run_id, golden_embedder, golden_agent,
                        refined_prompts=p1.refine(open_prompt=p1.open_prompt + " v2"))
        p2 = PromptSet.from_dict(store.manifest(child.run_id)["prompt_set"])
        grand = iterate(store, child.run_id, golden_embedder, golden_agent,
                        refined_prompts=p2.refine(open_prompt=p2.open_prompt + " v3"))
        assert iteration_depth(store, grand.run_id) == 2
        assert iteration_depth(store, child.run_id) == 1
        assert iteration_depth(store, parent.run_id) == 0
        assert store.manifest(grand.run_id)["prompt_set"]["version"] == 3


class TestReplay:
    def test_replay_reproduces_byte_identical_run(self, tmp_path, golden_docs,
                                                  golden_embedder, golden_agent,
                                                  golden_panel):
        store, original = golden_run(tmp_path, golden_docs, golden_embedder,
                                     golden_agent, panel=golden_panel)
        target = RunStore(tmp_path / "replayed")
        redone = replay(store, original.run_id, target)
        assert redone.run_id == original.run_id
        assert redone.status == "complete"
        ok, diffs = runs_equivalent(store.run_dir(original.run_id),
                                    target.run_dir(redone.run_id))
        assert ok, diffs

    def test_artifacts_byte_identical(self, tmp_path, golden_docs,
                                      golden_embedder, golden_agent):
        store, original = golden_run(tmp_path, golden_docs, golden_embedder,
                                     golden_agent)
        target = RunStore(tmp_path / "replayed")
        redone = replay(store, original.run_id, target)
        src = store.run_dir(original.run_id) / "artifacts"
        dst = target.run_dir(redone.run_id) / "artifacts"
        assert sorted(p.name for p in src.iterdir()) == sorted(
            p.name for p in dst.iterdir())
        for p in src.iterdir():
            assert (dst / p.name).read_bytes() == p.read_bytes()

    def test_removed_transcript_is_replay_impossible(self, tmp_path,
                                                     golden_docs,
                                                     golden_embedder,
                                                     golden_agent):
        store, original = golden_run(tmp_path, golden_docs, golden_embedder,
                                     golden_agent)
        ref = store.records(original.run_id, "prompt-log")[0]["payload"][
            "transcript_artifact"]
        (store.run_dir(original.run_id) / "artifacts" / ref).unlink()
        target = RunStore(tmp_path / "replayed")
        with pytest.raises(ReplayImpossibleError) as err:
            replay(store, original.run_id, target)
        assert ref in err.value.missing
        assert target.list_runs() == []  # never silent divergence

    def test_replay_with_threshold_change_isolates_version_axis(self, tmp_path,
                                                                golden_docs,
                                                                golden_embedder,
                                                                golden_agent):
        store, original = golden_run(tmp_path, golden_docs, golden_embedder,
                                     golden_agent)
        target = RunStore(tmp_path / "changed")
        # 0.60 keeps the same memberships on this fixture, so recorded
        # transcripts still serve; the analysis version must still move
        redone = replay(store, original.run_id, target,
                        changed={"similarity_threshold": 0.60})
        om = store.manifest(original.run_id)
        rm = target.manifest(redone.run_id)
        assert rm["version_stamp"]["analysis_version"] != om["version_stamp"][
            "analysis_version"]
        assert rm["version_stamp"]["data_version"] == om["version_stamp"][
            "data_version"]
        assert rm["artifacts"]["segments"] == om["artifacts"]["segments"]
        assert rm["artifacts"]["clusterset"] != om["artifacts"]["clusterset"]


class TestTelemetry:
    def timings(self, durations, workers):
        out = []
        t = 0.0
        for i, (d, w) in enumerate(zip(durations, workers)):
            out.append(TaskTiming(f"C{i:03d}", w, 0.0, d))
        return out

    def test_equal_tasks_perfect_balance(self):
        tele = compute_telemetry(self.timings([2.0] * 4, ["w0", "w1", "w2", "w3"]))
        assert tele.load_balancing_coefficient == 1.0

    def test_three_to_one_ratio(self):
        tele = compute_telemetry(self.timings([3.0, 1.0], ["w0", "w1"]))
        assert tele.load_balancing_coefficient == pytest.approx(1 / 3, abs=1e-12)

    def test_sync_overhead_floor(self):
        # wall equals max busy: zero overhead
        rows = [TaskTiming("C000", "w0", 0.0, 3.0),
                TaskTiming("C001", "w1", 0.0, 1.0)]
        tele = compute_telemetry(rows)
        assert tele.sync_overhead_fraction == 0.0
        assert tele.speedup == pytest.approx(4.0 / 3.0)

    def test_constructed_coefficient_reproduced(self):
        # 10 workers, one task each; durations drawn for coefficient 0.9
        durations = [0.45] * 9 + [0.50]
        rows = [TaskTiming(f"C{i:03d}", f"w{i}", 0.0, d)
                for i, d in enumerate(durations)]
        tele = compute_telemetry(rows)
        assert tele.load_balancing_coefficient == pytest.approx(0.9, abs=1e-9)

    def test_zero_tasks_undefined(self):
        with pytest.raises(UndefinedTelemetryError):
            compute_telemetry([])

    def test_speedup_bounded_by_workers(self, tmp_path, golden_docs,
                                        golden_embedder):
        agent = OfflineCodingAgent(latency_s=0.01)
        store, result = golden_run(tmp_path, golden_docs, golden_embedder,
                                   agent, max_workers=4)
        tele = telemetry(result)
        assert tele.speedup <= 4.0 + 1e-9
        assert 0.0 <= tele.load_balancing_coefficient <= 1.0
        assert 0.0 <= tele.sync_overhead_fraction <= 1.0
        assert tele.n_tasks == 3
