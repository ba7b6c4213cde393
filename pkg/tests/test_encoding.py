from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lasca.encoding import (
    EncoderSpec,
    SemanticEmbedding,
    batch_encode,
    build_encoder,
    encode,
    fuse,
    load_embedding_store,
    text_digest,
)
from lasca.errors import (
    BackendUnavailableError,
    EmbeddingLookupError,
    SchemaError,
)

SPEC = EncoderSpec(name="hashing-test", dim=64)


def reference_hash_vector(text: str, dim: int) -> np.ndarray:
    """Independent recomputation of the token-multiset embedding."""
    out = np.zeros(dim)
    for token in text.lower().split():
        h = int.from_bytes(
            hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big"
        )
        out[(h >> 1) % dim] += 1.0 if h & 1 == 0 else -1.0
    norm = np.linalg.norm(out)
    return out / norm if norm > 0 else out


def test_known_encoder_dims_enforced():
    EncoderSpec(name="all-MiniLM-L12-v2", dim=384)
    EncoderSpec(name="all-mpnet-base-v2", dim=768)
    with pytest.raises(ValueError):
        EncoderSpec(name="all-MiniLM-L12-v2", dim=768)
    with pytest.raises(ValueError):
        EncoderSpec(name="multi-qa-mpnet-base-dot-v1", dim=384)


def test_spec_validation():
    with pytest.raises(ValueError):
        EncoderSpec(name="x", dim=0)
    with pytest.raises(ValueError):
        EncoderSpec(name="x", backend="bogus")
    with pytest.raises(ValueError):
        EncoderSpec(name="x", pooling="max")


def test_hashing_deterministic_across_calls_and_instances():
    text = "facial: no salient cues <|endoftext|>"
    a = build_encoder(SPEC).encode(text)
    b = build_encoder(SPEC).encode(text)
    assert np.array_equal(a.vector, b.vector)
    assert a.source_text_hash == text_digest(text)


def test_hashing_matches_reference_and_separates_texts():
    enc = build_encoder(SPEC)
    t1 = "audio: Acoustic markers indicate high arousal energy. <|endoftext|>"
    t2 = "audio: Acoustic markers indicate dominant low tone. <|endoftext|>"
    v1 = enc.encode(t1).vector
    v2 = enc.encode(t2).vector
    assert np.allclose(v1, reference_hash_vector(t1, SPEC.dim))
    assert np.allclose(v2, reference_hash_vector(t2, SPEC.dim))
    assert not np.array_equal(v1, v2)


def test_memo_cache_returns_same_object():
    enc = build_encoder(SPEC)
    assert enc.encode("some text") is enc.encode("some text")


def test_empty_text_rejected():
    enc = build_encoder(SPEC)
    with pytest.raises(ValueError):
        enc.encode("")
    with pytest.raises(ValueError):
        enc.encode("   ")


@given(st.lists(st.text(alphabet="abcdefgh", min_size=1, max_size=6), min_size=1, max_size=12))
@settings(max_examples=100, deadline=None)
def test_unit_norm_and_order_invariance(tokens):
    enc = build_encoder(SPEC)
    text = " ".join(tokens)
    v = enc.encode(text).vector
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    shuffled = " ".join(reversed(tokens))
    assert np.allclose(v, enc.encode(shuffled).vector)


def test_token_multiplicity_changes_vector():
    enc = build_encoder(SPEC)
    assert not np.array_equal(
        enc.encode("cue cue other").vector, enc.encode("cue other").vector
    )


def test_frozen_contract_survives_training():
    from lasca.learner import HeadConfig, init_head, train
    from lasca.preference import PreferencePair

    enc = build_encoder(SPEC)
    before = enc.encode("stable text").vector.copy()
    rng = np.random.default_rng(0)
    pairs = [
        PreferencePair(0, 1, "valence", int(i % 2), rng.normal(size=8))
        for i in range(16)
    ]
    cfg = HeadConfig(input_dim=8, seed=1, max_epochs=3)
    train(init_head(cfg), pairs, cfg)
    assert np.array_equal(before, enc.encode("stable text").vector)


def _write_store(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


def test_precomputed_roundtrip_and_miss(tmp_path):
    store = tmp_path / "store.jsonl"
    text = "facial: no salient cues <|endoftext|>"
    vec = list(np.linspace(-1, 1, 768))
    _write_store(
        store, [{"text": text, "model": "all-mpnet-base-v2", "dim": 768, "vector": vec}]
    )
    spec = EncoderSpec(name="all-mpnet-base-v2", dim=768, backend="precomputed")
    enc = build_encoder(spec, store_path=store)
    got = enc.encode(text)
    assert got.vector.shape == (768,)
    assert np.array_equal(got.vector, np.asarray(vec))
    with pytest.raises(EmbeddingLookupError) as err:
        enc.encode("unseen text")
    assert text_digest("unseen text") in str(err.value)


def test_precomputed_store_validation(tmp_path):
    store = tmp_path / "bad_dim.jsonl"
    _write_store(store, [{"text": "t", "model": "m", "dim": 3, "vector": [1.0, 2.0]}])
    with pytest.raises(SchemaError, match="dim"):
        load_embedding_store(store)

    store2 = tmp_path / "wrong_model.jsonl"
    _write_store(store2, [{"text": "t", "model": "other", "dim": 2, "vector": [1.0, 2.0]}])
    with pytest.raises(SchemaError, match="model"):
        load_embedding_store(store2, expect_model="mine")

    store3 = tmp_path / "wrong_size.jsonl"
    _write_store(store3, [{"text": "t", "model": "m", "dim": 2, "vector": [1.0, 2.0]}])
    with pytest.raises(SchemaError, match="encoder dim"):
        load_embedding_store(store3, expect_dim=5)


def test_external_backend_unavailable(tmp_path):
    spec = EncoderSpec(name="x", dim=8, backend="external")
    with pytest.raises(BackendUnavailableError):
        build_encoder(spec, model_path=tmp_path / "missing_model")


def test_fuse_dimensions():
    emb = SemanticEmbedding(
        vector=np.linspace(0, 1, 768), source_text_hash="h"
    )
    z = fuse(np.zeros(58), emb)
    assert z.z.shape == (826,)
    assert z.d_features == 58 and z.d_semantic == 768
    z2 = fuse(np.zeros(15), emb)
    assert z2.z.shape == (783,)


def test_fuse_recovers_both_parts():
    emb = SemanticEmbedding(vector=np.array([1.0, -2.0, 3.0]), source_text_hash="h")
    x = np.array([0.25, 0.75])
    z = fuse(x, emb)
    assert np.array_equal(z.feature_part(), x)
    assert np.array_equal(z.semantic_part(), emb.vector)


def test_fuse_zero_feature_block():
    emb = SemanticEmbedding(vector=np.array([0.5, 0.5]), source_text_hash="h")
    z = fuse(np.zeros(3), emb)
    assert np.array_equal(z.z[:3], np.zeros(3))
    assert np.array_equal(z.z[3:], emb.vector)


def test_fuse_rejects_nonfinite():
    emb = SemanticEmbedding(vector=np.array([1.0]), source_text_hash="h")
    with pytest.raises(ValueError):
        fuse(np.array([np.nan]), emb)


def test_batch_encode():
    enc = build_encoder(SPEC)
    assert batch_encode(enc, []) == []
    out = batch_encode(enc, ["a b", "c", "a b"])
    assert len(out) == 3
    assert np.array_equal(out[0].vector, out[2].vector)
    assert not np.array_equal(out[0].vector, out[1].vector)


def test_batch_encode_reports_failing_index():
    enc = build_encoder(SPEC)
    with pytest.raises(ValueError, match="batch item 1"):
        batch_encode(enc, ["fine", "", "also fine"])


def test_embedding_vector_is_readonly():
    enc = build_encoder(SPEC)
    emb = enc.encode("readonly check")
    with pytest.raises(ValueError):
        emb.vector[0] = 9.9


def test_batch_encode_five_frequent_prompts_from_store(tmp_path):
    """The five most frequent multimodal prompts, served from a store."""
    from lasca import PACKAGED_LEXICONS
    from lasca.lexicon import SalienceMask, compose_multimodal, compose_template, load_lexicon

    facial = load_lexicon(PACKAGED_LEXICONS["facial"])
    audio = load_lexicon(PACKAGED_LEXICONS["audio"])
    audio_part = compose_template(
        SalienceMask(tuple(1 if f == "mfcc_0" else 0 for f in audio.features), 0.5),
        audio.features,
        audio,
    )
    active_sets = [
        {"Face_eyeBlinkLeft", "Face_eyeBlinkRight", "Face_eyeLookDownLeft",
         "Face_eyeLookDownRight", "Face_eyeSquintLeft", "Face_eyeSquintRight"},
        {"Face_browDownLeft", "Face_browDownRight", "Face_eyeBlinkLeft",
         "Face_eyeBlinkRight", "Face_eyeLookDownLeft", "Face_eyeLookDownRight",
         "Face_eyeSquintLeft", "Face_eyeSquintRight"},
        {"Face_browInnerUp", "Face_browOuterUpLeft", "Face_browOuterUpRight",
         "Face_eyeLookDownLeft", "Face_eyeLookDownRight"},
        {"Face_browInnerUp", "Face_browOuterUpLeft", "Face_browOuterUpRight"},
        {"Face_browInnerUp", "Face_browOuterUpLeft", "Face_browOuterUpRight",
         "Face_eyeBlinkLeft", "Face_eyeBlinkRight", "Face_eyeLookDownLeft",
         "Face_eyeLookDownRight", "Face_eyeSquintLeft", "Face_eyeSquintRight"},
    ]
    templates = []
    for active in active_sets:
        mask = SalienceMask(
            tuple(1 if f in active else 0 for f in facial.features), 0.5
        )
        templates.append(
            compose_multimodal(compose_template(mask, facial.features, facial), audio_part)
        )
    rng = np.random.default_rng(0)
    vectors = [rng.normal(size=768) for _ in templates]
    store = tmp_path / "store.jsonl"
    _write_store(
        store,
        [
            {"text": t.text, "model": "all-mpnet-base-v2", "dim": 768, "vector": list(v)}
            for t, v in zip(templates, vectors)
        ],
    )
    spec = EncoderSpec(name="all-mpnet-base-v2", dim=768, backend="precomputed")
    enc = build_encoder(spec, store_path=store)
    out = batch_encode(enc, templates)
    assert len(out) == 5
    for emb, want in zip(out, vectors):
        assert np.array_equal(emb.vector, np.asarray(want))


def test_memo_cache_safe_under_concurrent_encoding():
    from concurrent.futures import ThreadPoolExecutor

    enc = build_encoder(SPEC)
    texts = [f"shared text {i % 5}" for i in range(200)]
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(enc.encode, texts))
    baseline = {t: enc.encode(t).vector for t in set(texts)}
    for text, emb in zip(texts, results):
        assert np.array_equal(emb.vector, baseline[text])
