"""Request/response models for the HTTP service.

The CLI builds these same models and calls the service handlers in
process, so the two surfaces cannot drift apart.
"""

from pydantic import BaseModel, Field

MAX_SEED = 2**64 - 1

from .harp_pass import DEFAULT_BETA, DEFAULT_DELTA, DEFAULT_NEFTUNE_ALPHA, DEFAULT_THETA


class HarpOptions(BaseModel):
    mode: str = Field(default="off", pattern="^(off|on|always)$")
    theta: float = Field(default=DEFAULT_THETA, ge=0.0)
    delta: float = Field(default=DEFAULT_DELTA, ge=0.0, le=1.0)
    beta: float = Field(default=DEFAULT_BETA, ge=0.0, le=1.0)
    max_reframes: int = Field(default=1, ge=0)
    noise: str = Field(default="dropout", pattern="^(dropout|neftune)$")
    neftune_alpha: float = Field(default=DEFAULT_NEFTUNE_ALPHA, gt=0.0)


class DecodeOptions(BaseModel):
    method: str = Field(default="greedy", pattern="^(greedy|nucleus|beam)$")
    max_new_tokens: int = Field(default=32, ge=1)
    temperature: float = Field(default=0.6, gt=0.0)
    top_p: float = Field(default=0.9, gt=0.0, le=1.0)
    beams: int = Field(default=3, ge=1)
    top_k: int = Field(default=5, ge=1)
    length_penalty: float = Field(default=0.6, ge=0.0)


class GenerateRequest(BaseModel):
    checkpoint: str
    prompt: str
    decode: DecodeOptions = DecodeOptions()
    harp: HarpOptions = HarpOptions()
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    cache: bool = False
    include_trace: bool = False
    generation_id: int = Field(default=0, ge=0)


class GenerateResponse(BaseModel):
    text: str
    token_ids: list[int]
    generated_tokens: int
    total_forward_passes: int
    reframed_steps: int
    trace_jsonl: str | None = None


class BenchRequest(BaseModel):
    checkpoint: str
    prompts: list[str]
    arms: list[str] = ["vanilla-greedy", "harp-greedy"]
    decode: DecodeOptions = DecodeOptions()
    harp: HarpOptions = HarpOptions()
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    cache: bool = False


class ArmReport(BaseModel):
    baseline: str
    total_forward_passes: int
    total_steps: int
    wall_seconds: float
    generated_length: int
    mean_output_length: float
    reframe_fraction: float
    passes_per_token: float
    relative_cost: dict[str, float]
    mean_output_length_ratio: float


class BenchResponse(BaseModel):
    checkpoint_sha256: str
    seed: int
    cache_mode: str
    prompt_count: int
    arms: dict[str, ArmReport]


class SweepRequest(BaseModel):
    checkpoint: str
    prompts: list[str]
    thetas: list[float]
    decode: DecodeOptions = DecodeOptions()
    harp: HarpOptions = HarpOptions()
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    cache: bool = False


class SweepRow(BaseModel):
    theta: float
    reframe_fraction: float
    forward_pass_ratio: float
    wall_ratio: float


class SweepResponse(BaseModel):
    rows: list[SweepRow]
    csv: str


class ToyCheckpointRequest(BaseModel):
    vocab_size: int = Field(default=259, ge=2)
    d_model: int = Field(default=64, ge=1)
    n_layers: int = Field(default=4, ge=1)
    n_heads: int = Field(default=4, ge=1)
    d_ff: int = Field(default=256, ge=1)
    max_seq_len: int = Field(default=256, ge=1)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    out_path: str


class ToyCheckpointResponse(BaseModel):
    path: str
    sha256: str
    n_parameters: int


class TraceRenderRequest(BaseModel):
    trace_jsonl: str
    format: str = Field(default="ansi", pattern="^(ansi|html)$")


class TraceRenderResponse(BaseModel):
    rendered: str


class HealthResponse(BaseModel):
    status: str
    version: str
