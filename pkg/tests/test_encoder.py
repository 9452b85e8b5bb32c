"""Tests for the stub encoder, embedding store, and description provider."""
import json

import numpy as np
import pytest

from lgp.encoder import (
    DescriptionProvider,
    EmbeddingStore,
    RemoteEndpoint,
    StoreEncoder,
    StubEncoder,
    hash_embedding,
    load_description_cache,
    load_store,
    offline_description,
    save_description_cache,
    write_store,
)
from lgp.errors import FormatError, InvalidArgumentError, LookupMissError, RemoteError, ShapeError
from lgp.prompts import preset_templates, render_query, render_support

D, M = 8, 3


@pytest.fixture
def templates():
    return preset_templates(mask_count=M)


@pytest.fixture
def stub():
    return StubEncoder(d=D, m=M, seed=11)


# ---------------------------------------------------------------------------
# stub encoder
# ---------------------------------------------------------------------------


def test_stub_encode_shape_and_determinism(templates, stub):
    p = render_support(templates, "friendly staff", "service")
    h1 = stub.encode(p)
    h2 = stub.encode(p)
    assert h1.shape == (M, D)
    assert np.array_equal(h1, h2)
    other = StubEncoder(d=D, m=M, seed=11)
    assert np.array_equal(h1, other.encode(p))


def test_stub_encode_zero_params_empty_context(templates):
    stub = StubEncoder(d=D, m=M, seed=3)
    stub.mask_tokens[:] = 0.0
    # a prompt whose only tokens are the mask slots
    from lgp.prompts import PromptTemplateSet, render_query as rq

    ts = PromptTemplateSet("{x}{MASK}{L}", "{x}{MASK}", "{c}", M)
    p = rq(ts, "x")
    p = p.__class__(
        tokens=p.tokens[1:], mask_positions=tuple(i - 1 for i in p.mask_positions),
        kind=p.kind, canonical_text=p.canonical_text, key=p.key,
    )
    assert p.context_tokens() == []
    assert np.array_equal(stub.encode(p), np.zeros((M, D)))


def test_stub_encode_mask_count_mismatch(templates):
    stub = StubEncoder(d=D, m=2, seed=0)
    p = render_query(templates, "nice view")  # 3 mask slots
    with pytest.raises(ShapeError):
        stub.encode(p)


def test_stub_mask_row_perturbation_is_local(templates, stub):
    p = render_query(templates, "nice view")
    before = stub.encode(p)
    delta = 0.125
    stub.mask_tokens[1, 4] += delta
    after = stub.encode(p)
    diff = after - before
    expected = np.zeros_like(diff)
    expected[1, 4] = delta
    assert np.allclose(diff, expected, atol=1e-15)


def test_stub_linearity_in_mask_tokens(templates):
    p = render_query(preset_templates(mask_count=M), "short walk to the beach")
    a, b = 0.3, -1.7
    s1 = StubEncoder(d=D, m=M, seed=5)
    s2 = StubEncoder(d=D, m=M, seed=7)
    combo = StubEncoder(d=D, m=M, seed=5)
    combo.mask_tokens = a * s1.mask_tokens + b * s2.mask_tokens
    # context fixed (same seed for token table as s1)
    s2._hash_cache = s1._hash_cache
    s2.seed = 5
    lhs = combo.encode(p)
    ctx = s1.encode(p) - s1.mask_tokens
    rhs = a * s1.mask_tokens + b * s2.mask_tokens + ctx
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_stub_grad_one_hot(templates, stub):
    p = render_query(templates, "nice view")
    g = np.zeros((M, D))
    g[0, 5] = 1.0
    grads = stub.grad(p, g)
    assert np.array_equal(grads.mask_tokens, g)
    assert grads.token_table == {}  # fixed token state


def test_stub_grad_learnable_token_table(templates):
    stub = StubEncoder(d=D, m=M, seed=2, token_state="learnable")
    p = render_support(templates, "great great pizza", "food")
    g = np.ones((M, D))
    grads = stub.grad(p, g)
    ctx = p.context_tokens()
    n = len(ctx)
    # "great" appears twice, so its gradient is twice the single-count share
    np.testing.assert_allclose(grads.token_table["great"], 2.0 / n * g.sum(axis=0))
    np.testing.assert_allclose(grads.token_table["pizza"], 1.0 / n * g.sum(axis=0))


def test_stub_grad_shape_mismatch(templates, stub):
    p = render_query(templates, "nice view")
    with pytest.raises(ShapeError):
        stub.grad(p, np.zeros((M + 1, D)))


def test_stub_grad_matches_finite_differences(templates):
    """Central finite differences through a nonlinear scalar loss, rel err <= 1e-6."""
    rng = np.random.default_rng(99)
    stub = StubEncoder(d=D, m=M, seed=31, token_state="learnable")
    p = render_support(templates, "the soup arrived cold", "food_quality")
    w = rng.normal(size=(M, D))

    def loss():
        return float(np.sum(np.tanh(stub.encode(p)) * w))

    h = stub.encode(p)
    dL_dh = w * (1.0 - np.tanh(h) ** 2)
    grads = stub.grad(p, dL_dh)

    step = 1e-6

    def check(analytic, bump):
        for idx in np.ndindex(analytic.shape):
            bump(idx, step)
            up = loss()
            bump(idx, -2 * step)
            down = loss()
            bump(idx, step)
            fd = (up - down) / (2 * step)
            a = analytic[idx]
            denom = max(abs(a), abs(fd), 1e-8)
            assert abs(a - fd) / denom <= 1e-6

    check(grads.mask_tokens, lambda idx, s: stub.mask_tokens.__setitem__(idx, stub.mask_tokens[idx] + s))

    for token, g_tok in grads.token_table.items():
        vec = stub.trainable_token(token)

        def bump_tok(idx, s, vec=vec):
            vec[idx] += s

        check(g_tok, bump_tok)


def test_stub_grad_empty_context_has_no_token_grads():
    stub = StubEncoder(d=D, m=1, seed=0, token_state="learnable")
    from lgp.prompts import RenderedPrompt

    p = RenderedPrompt(tokens=("[mask_1]",), mask_positions=(0,), kind="query",
                       canonical_text="[MASK_1]", key="0" * 64)
    grads = stub.grad(p, np.ones((1, D)))
    assert grads.token_table == {}


def test_hash_embedding_deterministic_and_scaled():
    a = hash_embedding(7, "token", "pizza", 64)
    b = hash_embedding(7, "token", "pizza", 64)
    c = hash_embedding(8, "token", "pizza", 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.max(np.abs(a)) <= 0.5 / 8.0 + 1e-12


# ---------------------------------------------------------------------------
# embedding store
# ---------------------------------------------------------------------------


def _toy_records(keys, rng):
    return [(k, rng.normal(size=(M, D))) for k in keys]


def test_store_write_read_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    records = _toy_records(["k1", "k2"], rng)
    path = tmp_path / "embed.jsonl"
    write_store(path, D, M, "unit-test", records)
    store = load_store(path)
    assert store.d == D and store.m == M and store.encoder_name == "unit-test"
    for key, h in records:
        got = store.lookup(key)
        # written at f32 precision
        assert np.max(np.abs(got - h)) <= np.max(np.abs(h)) * 2**-23 + 1e-12
        assert np.array_equal(got, h.astype(np.float32).astype(np.float64))


def test_store_lookup_miss(tmp_path):
    path = tmp_path / "embed.jsonl"
    write_store(path, D, M, "unit-test", _toy_records(["k1"], np.random.default_rng(0)))
    store = load_store(path)
    with pytest.raises(LookupMissError) as err:
        store.lookup("missing-key")
    assert "missing-key" in str(err.value)


def test_store_rejects_mixed_d(tmp_path):
    path = tmp_path / "embed.jsonl"
    header = {"format": "lgp-embed", "version": 1, "d": D, "m": M, "encoder": "x"}
    bad = {"key": "k", "h": [[0.0] * (D + 1)] * M}
    path.write_text(json.dumps(header) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(FormatError):
        load_store(path)


def test_store_rejects_bad_header(tmp_path):
    path = tmp_path / "embed.jsonl"
    path.write_text(json.dumps({"format": "other", "version": 1, "d": D, "m": M}) + "\n")
    with pytest.raises(FormatError):
        load_store(path)


def test_store_rejects_duplicate_key(tmp_path):
    path = tmp_path / "embed.jsonl"
    rng = np.random.default_rng(0)
    write_store(path, D, M, "x", _toy_records(["k", "k"], rng))
    with pytest.raises(FormatError):
        load_store(path)


def test_store_encoder_serves_and_misses(templates, tmp_path):
    p = render_query(templates, "lovely patio")
    rng = np.random.default_rng(5)
    h = rng.normal(size=(M, D))
    path = tmp_path / "embed.jsonl"
    write_store(path, D, M, "x", [(p.key, h)])
    enc = StoreEncoder(load_store(path))
    assert enc.encode(p).shape == (M, D)
    q = render_query(templates, "terrible parking")
    with pytest.raises(LookupMissError) as err:
        enc.encode(q)
    assert q.key in err.value.keys


# ---------------------------------------------------------------------------
# description provider
# ---------------------------------------------------------------------------

PAPER_BREAD_DESCRIPTION = (
    "Bread is a staple food made by baking a dough of flour and water, typically "
    "described based on its type (such as whole wheat, white bread), size (such as "
    "one loaf, one slice), texture (such as soft or hard), ingredients (such as "
    "containing kernels or seeds), and flavor (such as sweet or salty)."
)


def test_provider_serves_primed_cache_verbatim(templates):
    provider = DescriptionProvider(templates, cache={"food_food_bread": PAPER_BREAD_DESCRIPTION})
    text = provider.get("food_food_bread")
    assert text.startswith("Bread is a staple food made by baking")
    assert text == PAPER_BREAD_DESCRIPTION


def test_provider_offline_template(templates):
    provider = DescriptionProvider(templates)
    assert provider.get("price") == "Category price: opinions concerning price."
    assert offline_description("food_portion") == (
        "Category food portion: opinions concerning food portion."
    )


def test_provider_cache_write_once(templates):
    provider = DescriptionProvider(templates)
    first = provider.get("room_service")
    provider.cache["room_service"] = first  # no-op; already cached
    assert provider.get("room_service") == first
    assert provider.remote_requests == 0


def test_provider_remote_fetch_and_cache(templates, monkeypatch):
    calls = []

    class FakeResponse:
        status_code = 200
        text = ""

        def json(self):
            return {"choices": [{"message": {"content": "Price covers perceived value."}}]}

    def fake_post(url, json=None, headers=None, timeout=None):
        calls.append((url, json))
        return FakeResponse()

    import requests

    monkeypatch.setattr(requests, "post", fake_post)
    ep = RemoteEndpoint(url="http://localhost:9/v1/chat", model="test-model")
    provider = DescriptionProvider(templates, mode="remote", endpoint=ep)
    text = provider.get("price")
    assert text == "Price covers perceived value."
    assert provider.get("price") == text
    assert len(calls) == 1  # second call served from cache
    assert calls[0][1]["messages"][0]["content"] == (
        "Provide a comprehensive description of price."
    )
    assert calls[0][1]["temperature"] == 0.0


def test_provider_remote_http_error(templates, monkeypatch):
    class FakeResponse:
        status_code = 500
        text = "boom"

        def json(self):
            return {}

    import requests

    monkeypatch.setattr(requests, "post", lambda *a, **k: FakeResponse())
    ep = RemoteEndpoint(url="http://localhost:9/v1/chat", model="test-model")
    provider = DescriptionProvider(templates, mode="remote", endpoint=ep)
    with pytest.raises(RemoteError) as err:
        provider.get("price")
    assert "500" in str(err.value)


def test_provider_remote_empty_reply_rejected(templates, monkeypatch):
    class FakeResponse:
        status_code = 200
        text = ""

        def json(self):
            return {"choices": [{"message": {"content": "  "}}]}

    import requests

    monkeypatch.setattr(requests, "post", lambda *a, **k: FakeResponse())
    ep = RemoteEndpoint(url="http://localhost:9/v1/chat", model="test-model")
    provider = DescriptionProvider(templates, mode="remote", endpoint=ep)
    with pytest.raises(RemoteError):
        provider.get("price")


def test_provider_rejects_bad_mode(templates):
    with pytest.raises(InvalidArgumentError):
        DescriptionProvider(templates, mode="telepathy")
    with pytest.raises(InvalidArgumentError):
        DescriptionProvider(templates, mode="remote")


def test_description_cache_file_roundtrip(tmp_path, templates):
    cache = {"price": "About price.", "service": "About service."}
    path = tmp_path / "cache.jsonl"
    save_description_cache(path, cache)
    assert load_description_cache(path) == cache


def test_description_cache_rejects_bad_line(tmp_path):
    path = tmp_path / "cache.jsonl"
    path.write_text('{"label": "a", "description": "b"}\nnot json\n')
    with pytest.raises(FormatError) as err:
        load_description_cache(path)
    assert ":2" in str(err.value)
