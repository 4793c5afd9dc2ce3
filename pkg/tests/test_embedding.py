"""Embedding providers, cosine kernel, and the vector cache format."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gtflow.corpus import SegmentPolicy, ingest, segment_rule_based
from gtflow.embedding import (
    EmbeddedSegment,
    HashingEmbedder,
    RemoteEmbedder,
    ReplayEmbedder,
    cosine_similarity,
    embed_batch,
    read_vector_cache,
    write_vector_cache,
)
from gtflow.errors import (
    DimensionMismatchError,
    EmptyInputError,
    ReplayImpossibleError,
    TransportError,
    ZeroVectorError,
)


def seg(i, text):
    doc = ingest(text + ".", doc_id=f"d{i}")
    return segment_rule_based(doc, SegmentPolicy(1, 500))[0]


class TestCosine:
    def test_identity(self):
        u = np.array([0.3, 0.4, 0.5])
        assert cosine_similarity(u, u) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_hand_computed(self):
        v = np.array([1.0, 1.0]) / math.sqrt(2)
        assert cosine_similarity([1.0, 0.0], v) == pytest.approx(
            0.7071067811865475, abs=1e-12)

    def test_zero_vector_error(self):
        with pytest.raises(ZeroVectorError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])

    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
           st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    def test_symmetry_and_bounds(self, u, v):
        if np.linalg.norm(u) == 0.0 or np.linalg.norm(v) == 0.0:
            return
        s1 = cosine_similarity(u, v)
        s2 = cosine_similarity(v, u)
        assert s1 == s2
        assert -1.0 <= s1 <= 1.0


class TestHashingEmbedder:
    def test_purity(self):
        e = HashingEmbedder(dimension=64, seed=3)
        a = e.embed_text("alpha beta gamma")
        b = e.embed_text("alpha beta gamma")
        assert np.array_equal(a, b)

    def test_identity_similarity(self):
        e = HashingEmbedder(dimension=64, seed=3)
        assert cosine_similarity(e.embed_text("alpha beta gamma"),
                                 e.embed_text("alpha beta gamma")) == 1.0

    def test_shared_tokens_rank_higher(self):
        e = HashingEmbedder(dimension=128, seed=3)
        base = e.embed_text("alpha beta")
        same = cosine_similarity(base, e.embed_text("alpha beta"))
        other = cosine_similarity(base, e.embed_text("delta epsilon"))
        assert same > other

    def test_unit_norm(self):
        e = HashingEmbedder(dimension=32, seed=9)
        for text in ("one", "one two three", "许多中文字符在这里"):
            assert abs(np.linalg.norm(e.embed_text(text)) - 1.0) < 1e-9

    def test_seed_changes_vectors(self):
        a = HashingEmbedder(dimension=64, seed=1).embed_text("alpha beta")
        b = HashingEmbedder(dimension=64, seed=2).embed_text("alpha beta")
        assert not np.array_equal(a, b)

    def test_empty_text_error(self):
        with pytest.raises(EmptyInputError):
            HashingEmbedder(dimension=16).embed_text("   ")


class TestEmbedBatch:
    def test_determinism_and_provenance(self):
        e = HashingEmbedder(dimension=64, seed=5)
        segs = [seg(i, f"text number {i}") for i in range(2)]
        a = embed_batch(segs, e)
        b = embed_batch(segs, e)
        assert len(a) == 2
        for x, y in zip(a, b):
            assert np.array_equal(x.vector, y.vector)
            assert x.provider_id == "hashing-local"
            assert x.model_version == e.model_version

    def test_order_preserved_across_batches(self):
        # corpus sized to the reported open-code scale
        e = HashingEmbedder(dimension=32, seed=5)
        segs = [seg(i, f"unique token u{i} appears here") for i in range(268)]
        out = embed_batch(segs, e, batch_size=64)
        assert len(out) == 268
        for s, emb in zip(segs, out):
            assert emb.seg_id == s.seg_id
            assert np.array_equal(emb.vector, e.embed_text(s.text))

    def test_dimension_mismatch_is_hard_error(self):
        class Weird(HashingEmbedder):
            def embed_texts(self, texts):
                inner = HashingEmbedder(dimension=768, seed=1)
                return inner.embed_texts(texts)

        provider = Weird(dimension=1536, seed=1)
        with pytest.raises(DimensionMismatchError):
            embed_batch([seg(0, "hello world")], provider)

    def test_transport_error_carries_failed_ids(self):
        class Flaky(HashingEmbedder):
            def embed_texts(self, texts):
                raise TransportError("boom")

        segs = [seg(i, f"text {i}") for i in range(3)]
        with pytest.raises(TransportError) as err:
            embed_batch(segs, Flaky(dimension=16), batch_size=2)
        assert err.value.failed_ids == [s.seg_id for s in segs[:2]]

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            embed_batch([], HashingEmbedder(dimension=16))


class TestRemoteEmbedder:
    def make_client(self, handler):
        import httpx

        return httpx.Client(transport=httpx.MockTransport(handler))

    def test_happy_path(self):
        import httpx

        def handler(request):
            body = json.loads(request.content)
            data = [{"embedding": [1.0, 0.0, 0.0]} for _ in body["input"]]
            return httpx.Response(200, json={"data": data})

        provider = RemoteEmbedder("http://embed/v1", "test-model", dimension=3,
                                  client=self.make_client(handler))
        vecs = provider.embed_texts(["a", "b"])
        assert len(vecs) == 2
        assert np.allclose(vecs[0], [1.0, 0.0, 0.0])

    def test_dimension_mismatch(self):
        import httpx

        def handler(request):
            return httpx.Response(200, json={
                "data": [{"embedding": [0.6, 0.8]}]})

        provider = RemoteEmbedder("http://embed/v1", "test-model",
                                  dimension=1536,
                                  client=self.make_client(handler))
        with pytest.raises(DimensionMismatchError):
            provider.embed_texts(["a"])

    def test_retries_then_transport_error(self):
        import httpx

        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(500)

        provider = RemoteEmbedder("http://embed/v1", "m", dimension=3,
                                  max_attempts=3, backoff_s=0.0,
                                  client=self.make_client(handler))
        with pytest.raises(TransportError):
            provider.embed_texts(["a"])
        assert calls["n"] == 3


class TestVectorCache:
    def test_bit_exact_round_trip(self, tmp_path):
        e = HashingEmbedder(dimension=48, seed=11)
        segs = [seg(i, f"some text {i} with tokens") for i in range(5)]
        embedded = embed_batch(segs, e)
        path = tmp_path / "vectors.ndjson"
        write_vector_cache(path, embedded, {s.seg_id: s.text for s in segs})
        loaded = read_vector_cache(path)
        assert len(loaded) == 5
        for a, b in zip(embedded, loaded):
            assert a.seg_id == b.seg_id
            assert a.provider_id == b.provider_id
            assert a.model_version == b.model_version
            assert a.vector.tobytes() == b.vector.tobytes()

    def test_replay_provider(self, tmp_path):
        e = HashingEmbedder(dimension=16, seed=2)
        texts = ["first text", "second text"]
        records = {ReplayEmbedder.text_key(t): e.embed_text(t) for t in texts}
        rep = ReplayEmbedder(records, 16, e.provider_id, e.model_version)
        out = rep.embed_texts(texts)
        assert np.array_equal(out[0], e.embed_text(texts[0]))
        with pytest.raises(ReplayImpossibleError):
            rep.embed_texts(["unseen text"])

    def test_norm_invariant_enforced(self):
        with pytest.raises(ZeroVectorError):
            EmbeddedSegment("s", np.array([1.0, 1.0]), "p", "m")
