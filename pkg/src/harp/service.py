"""FastAPI service wrapping the engine.

Handlers are plain functions over the pydantic models in `schemas`; the
HTTP layer only maps exceptions to status codes. Loaded checkpoints are
cached by path and invalidated when the file changes on disk.
"""

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException

from . import __version__, tokenizer
from .bench import run_bench, sweep_rows_to_csv, sweep_theta
from .checkpoint_io import (
    CheckpointError,
    checkpoint_sha256,
    load_checkpoint,
    save_checkpoint,
)
from .decoding import DecodeConfig, decode
from .harp_pass import HarpConfig
from .model import Checkpoint, TransformerConfig, iter_tensors, toy_checkpoint
from .schemas import (
    ArmReport,
    BenchRequest,
    BenchResponse,
    DecodeOptions,
    GenerateRequest,
    GenerateResponse,
    HarpOptions,
    HealthResponse,
    SweepRequest,
    SweepResponse,
    SweepRow,
    ToyCheckpointRequest,
    ToyCheckpointResponse,
    TraceRenderRequest,
    TraceRenderResponse,
)
from .trace import TraceParseError, parse_trace, render_trace

_cache_lock = threading.Lock()
_checkpoint_cache: dict[str, tuple[int, int, Checkpoint, str]] = {}


def get_checkpoint(path: str) -> tuple[Checkpoint, str]:
    """Load (and memoize) a checkpoint plus its content hash."""
    p = Path(path)
    stat = p.stat()
    key = str(p.resolve())
    with _cache_lock:
        hit = _checkpoint_cache.get(key)
        if hit is not None and hit[0] == stat.st_mtime_ns and hit[1] == stat.st_size:
            return hit[2], hit[3]
    ckpt = load_checkpoint(p)
    sha = checkpoint_sha256(ckpt)
    with _cache_lock:
        _checkpoint_cache[key] = (stat.st_mtime_ns, stat.st_size, ckpt, sha)
    return ckpt, sha


def harp_config_from(options: HarpOptions) -> HarpConfig | None:
    if options.mode == "off":
        return None
    return HarpConfig(
        theta=options.theta,
        delta=options.delta,
        beta=options.beta,
        max_reframe_steps=options.max_reframes,
        noise=options.noise,
        neftune_alpha=options.neftune_alpha,
        gate="entropy" if options.mode == "on" else "always",
    )


def decode_config_from(
    options: DecodeOptions, seed: int, harp: HarpConfig | None
) -> DecodeConfig:
    return DecodeConfig(
        method=options.method,
        max_new_tokens=options.max_new_tokens,
        temperature=options.temperature,
        top_p=options.top_p,
        beams=options.beams,
        top_k=options.top_k,
        length_penalty=options.length_penalty,
        seed=seed,
        harp=harp,
    )


def handle_generate(req: GenerateRequest) -> GenerateResponse:
    ckpt, sha = get_checkpoint(req.checkpoint)
    cfg = decode_config_from(req.decode, req.seed, harp_config_from(req.harp))
    prompt = tokenizer.encode(req.prompt, add_bos=True)
    generated, trace = decode(
        prompt,
        ckpt,
        cfg,
        use_cache=req.cache,
        generation=req.generation_id,
        ckpt_sha=sha,
    )
    # checkpoints may declare a vocab beyond the byte tokenizer's 259 ids;
    # fall back to per-token placeholders instead of failing the response
    if all(t < tokenizer.VOCAB_SIZE for t in generated):
        text = tokenizer.decode(generated)
    else:
        text = "".join(tokenizer.token_text(t) for t in generated)
    return GenerateResponse(
        text=text,
        token_ids=generated,
        generated_tokens=len(generated),
        total_forward_passes=trace.summary.total_forward_passes,
        reframed_steps=sum(1 for s in trace.steps if s.reframed),
        trace_jsonl=trace.to_jsonl() if req.include_trace else None,
    )


def handle_bench(req: BenchRequest) -> BenchResponse:
    ckpt, _ = get_checkpoint(req.checkpoint)
    harp = harp_config_from(req.harp.model_copy(update={"mode": "on"}))
    base = decode_config_from(req.decode, req.seed, None)
    report, _ = run_bench(ckpt, req.prompts, req.arms, base, harp, use_cache=req.cache)
    return BenchResponse(
        checkpoint_sha256=report.checkpoint_sha256,
        seed=report.seed,
        cache_mode=report.cache_mode,
        prompt_count=report.prompt_count,
        arms={name: ArmReport(**arm) for name, arm in report.arms.items()},
    )


def handle_sweep(req: SweepRequest) -> SweepResponse:
    ckpt, _ = get_checkpoint(req.checkpoint)
    harp = harp_config_from(req.harp.model_copy(update={"mode": "on"}))
    base = decode_config_from(req.decode, req.seed, None)
    rows = sweep_theta(ckpt, req.prompts, req.thetas, base, harp, use_cache=req.cache)
    return SweepResponse(
        rows=[SweepRow(**row) for row in rows], csv=sweep_rows_to_csv(rows)
    )


def handle_make_toy(req: ToyCheckpointRequest) -> ToyCheckpointResponse:
    config = TransformerConfig(
        vocab_size=req.vocab_size,
        d_model=req.d_model,
        n_layers=req.n_layers,
        n_heads=req.n_heads,
        d_ff=req.d_ff,
        max_seq_len=req.max_seq_len,
    )
    ckpt = toy_checkpoint(config, req.seed)
    save_checkpoint(ckpt, req.out_path)
    n_params = sum(int(arr.size) for _, arr, _ in iter_tensors(ckpt))
    return ToyCheckpointResponse(
        path=req.out_path, sha256=checkpoint_sha256(ckpt), n_parameters=n_params
    )


def handle_trace_render(req: TraceRenderRequest) -> TraceRenderResponse:
    trace = parse_trace(req.trace_jsonl)
    return TraceRenderResponse(rendered=render_trace(trace, req.format))


def create_app() -> FastAPI:
    app = FastAPI(title="harp-engine", version=__version__)

    def _wrap(fn, req):
        try:
            return fn(req)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (ValueError, CheckpointError, TraceParseError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest) -> GenerateResponse:
        return _wrap(handle_generate, req)

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest) -> BenchResponse:
        return _wrap(handle_bench, req)

    @app.post("/sweep-theta", response_model=SweepResponse)
    def sweep(req: SweepRequest) -> SweepResponse:
        return _wrap(handle_sweep, req)

    @app.post("/toy-checkpoint", response_model=ToyCheckpointResponse)
    def make_toy(req: ToyCheckpointRequest) -> ToyCheckpointResponse:
        return _wrap(handle_make_toy, req)

    @app.post("/trace/render", response_model=TraceRenderResponse)
    def trace_render(req: TraceRenderRequest) -> TraceRenderResponse:
        return _wrap(handle_trace_render, req)

    return app


app = create_app()
