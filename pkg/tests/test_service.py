import pytest
from fastapi.testclient import TestClient

from harp.service import app
from harp.trace import parse_trace


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def ckpt_path(tmp_path_factory, client):
    path = tmp_path_factory.mktemp("ckpts") / "toy.harp"
    resp = client.post(
        "/toy-checkpoint",
        json={
            "vocab_size": 259,
            "d_model": 32,
            "n_layers": 2,
            "n_heads": 4,
            "d_ff": 64,
            "max_seq_len": 64,
            "seed": 0,
            "out_path": str(path),
        },
    )
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["path"] == str(path)
    assert len(body["sha256"]) == 64
    assert body["n_parameters"] > 0
    return str(path)


def generate_payload(ckpt_path, **overrides):
    payload = {
        "checkpoint": ckpt_path,
        "prompt": "Hello service",
        "decode": {"method": "greedy", "max_new_tokens": 6},
        "harp": {"mode": "on"},
        "seed": 3,
        "include_trace": True,
    }
    payload.update(overrides)
    return payload


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_generate_returns_text_and_trace(client, ckpt_path):
    resp = client.post("/generate", json=generate_payload(ckpt_path))
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["generated_tokens"] == len(body["token_ids"])
    trace = parse_trace(body["trace_jsonl"])
    assert len(trace.steps) == body["generated_tokens"]
    assert trace.summary.total_forward_passes == body["total_forward_passes"]


def test_generate_is_deterministic(client, ckpt_path):
    a = client.post("/generate", json=generate_payload(ckpt_path)).json()
    b = client.post("/generate", json=generate_payload(ckpt_path)).json()
    assert a["token_ids"] == b["token_ids"]
    assert a["text"] == b["text"]


def test_generate_gate_off_equals_high_threshold(client, ckpt_path):
    off = client.post(
        "/generate", json=generate_payload(ckpt_path, harp={"mode": "off"})
    ).json()
    high = client.post(
        "/generate",
        json=generate_payload(ckpt_path, harp={"mode": "on", "theta": 9.0}),
    ).json()
    assert off["token_ids"] == high["token_ids"]
    assert high["reframed_steps"] == 0


def test_generate_missing_checkpoint_404(client):
    resp = client.post("/generate", json=generate_payload("/nonexistent/x.harp"))
    assert resp.status_code == 404


def test_generate_invalid_options_422(client, ckpt_path):
    resp = client.post(
        "/generate",
        json=generate_payload(ckpt_path, decode={"method": "greedy", "temperature": 0.0}),
    )
    assert resp.status_code == 422  # pydantic validation


def test_generate_beam_with_harp_400(client, ckpt_path):
    resp = client.post(
        "/generate",
        json=generate_payload(
            ckpt_path, decode={"method": "beam", "max_new_tokens": 4}
        ),
    )
    assert resp.status_code == 400
    assert "beam" in resp.json()["detail"]


def test_bench_endpoint(client, ckpt_path):
    resp = client.post(
        "/bench",
        json={
            "checkpoint": ckpt_path,
            "prompts": ["one fish", "two fish"],
            "arms": ["vanilla-greedy", "harp-always"],
            "decode": {"method": "greedy", "max_new_tokens": 6},
            "seed": 1,
        },
    )
    assert resp.status_code == 200, resp.text
    arms = resp.json()["arms"]
    assert arms["vanilla-greedy"]["relative_cost"]["forward_passes"] == 1.0
    assert arms["harp-always"]["relative_cost"]["forward_passes"] == 2.0


def test_sweep_endpoint(client, ckpt_path):
    resp = client.post(
        "/sweep-theta",
        json={
            "checkpoint": ckpt_path,
            "prompts": ["one fish"],
            "thetas": [1.0, 9.0],
            "decode": {"method": "greedy", "max_new_tokens": 5},
        },
    )
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert [r["theta"] for r in body["rows"]] == [1.0, 9.0]
    assert body["rows"][-1]["reframe_fraction"] == 0.0
    assert body["csv"].startswith("theta,reframe_fraction")


def test_trace_render_endpoint(client, ckpt_path):
    gen = client.post("/generate", json=generate_payload(ckpt_path)).json()
    for fmt in ("ansi", "html"):
        resp = client.post(
            "/trace/render", json={"trace_jsonl": gen["trace_jsonl"], "format": fmt}
        )
        assert resp.status_code == 200, resp.text
        assert isinstance(resp.json()["rendered"], str)


def test_trace_render_rejects_garbage(client):
    resp = client.post("/trace/render", json={"trace_jsonl": "nope", "format": "ansi"})
    assert resp.status_code == 400


def test_generate_with_oversized_vocab_still_renders_text(client, tmp_path_factory):
    path = tmp_path_factory.mktemp("wide") / "wide.harp"
    resp = client.post(
        "/toy-checkpoint",
        json={
            "vocab_size": 300,
            "d_model": 32,
            "n_layers": 1,
            "n_heads": 4,
            "d_ff": 64,
            "max_seq_len": 64,
            "seed": 1,
            "out_path": str(path),
        },
    )
    assert resp.status_code == 200
    body = client.post(
        "/generate",
        json=generate_payload(str(path), include_trace=False, seed=0),
    ).json()
    assert body["generated_tokens"] == len(body["token_ids"])
    assert isinstance(body["text"], str) and body["text"]
