"""Greedy, nucleus, and beam-search decoders.

Greedy and nucleus route every step through the gated forward pass
(`harp_step`); a disabled configuration degenerates to the vanilla pass
bit-exactly. Beam search runs without gating and ranks hypotheses by
length-normalized cumulative log-probability.

All decoders are deterministic functions of (checkpoint, prompt, config,
seed).
"""

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tokenizer
from .checkpoint_io import checkpoint_sha256
from .harp_pass import HarpConfig, harp_step
from .model import Checkpoint, KVCache, next_token_logits
from .rng import RandomSource
from .tensor_ops import shannon_entropy, softmax
from .trace import DecodeTrace, TraceHeader, TraceStep, TraceSummary

METHODS = ("greedy", "nucleus", "beam")


@dataclass(frozen=True)
class DecodeConfig:
    method: str = "greedy"
    max_new_tokens: int = 32
    eos_token: int = tokenizer.EOS_ID
    temperature: float = 0.6
    top_p: float = 0.9
    beams: int = 3
    top_k: int = 5
    length_penalty: float = 0.6
    seed: int = 0
    harp: HarpConfig | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.beams < 1 or self.top_k < 1:
            raise ValueError("beams and top_k must be >= 1")
        if self.length_penalty < 0.0:
            raise ValueError(f"length penalty must be >= 0, got {self.length_penalty}")
        if self.method == "beam" and self.harp is not None:
            raise ValueError("beam search does not support the reframed forward pass")


def length_penalty_factor(length: int, alpha: float) -> float:
    """((5 + length) / 6) ** alpha; length counts generated tokens."""
    return ((5.0 + length) / 6.0) ** alpha


def greedy_pick(logits: np.ndarray) -> int:
    """Argmax with ties broken toward the lowest token id."""
    return int(np.argmax(logits))


def log_softmax64(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    x = x - x.max()
    return x - np.log(np.exp(x).sum())


def nucleus_sample(
    logits: np.ndarray, temperature: float, top_p: float, rng: np.random.Generator
) -> int:
    """Temperature-scaled top-p sampling.

    Pipeline: divide by temperature, softmax, sort descending (ties by
    ascending id), keep the smallest prefix whose cumulative probability
    reaches top_p (the first token is always kept), renormalize, then draw
    one uniform variate and invert the CDF over the kept set.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if not 0.0 < top_p <= 1.0:
        raise ValueError("top_p must be in (0, 1]")
    x = np.asarray(logits, dtype=np.float64) / temperature
    x = x - x.max()
    probs = np.exp(x)
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    sorted_probs = probs[order]
    csum = np.cumsum(sorted_probs)
    cut = int(np.searchsorted(csum, top_p, side="left"))
    cut = min(cut, len(order) - 1)
    kept = order[: cut + 1]
    q = sorted_probs[: cut + 1]
    q = q / q.sum()
    u = rng.random()
    idx = min(int(np.searchsorted(np.cumsum(q), u, side="right")), len(kept) - 1)
    return int(kept[idx])


def nucleus_kept_set(logits: np.ndarray, temperature: float, top_p: float) -> np.ndarray:
    """Token ids of the truncation set, in sampling order (for inspection)."""
    x = np.asarray(logits, dtype=np.float64) / temperature
    x = x - x.max()
    probs = np.exp(x)
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    cut = min(int(np.searchsorted(csum, top_p, side="left")), len(order) - 1)
    return order[: cut + 1]


def _config_dicts(cfg: DecodeConfig) -> tuple[dict, dict | None]:
    d = asdict(cfg)
    harp = d.pop("harp")
    return d, harp


def _make_header(
    ckpt_sha: str, cfg: DecodeConfig, use_cache: bool
) -> TraceHeader:
    decode_dict, harp_dict = _config_dicts(cfg)
    return TraceHeader(
        checkpoint_sha256=ckpt_sha,
        method=cfg.method,
        decode_config=decode_dict,
        harp_config=harp_dict,
        seed=cfg.seed,
        cache_mode="on" if use_cache else "off",
    )


def _check_context(prompt: list[int], ckpt: Checkpoint, cfg: DecodeConfig) -> None:
    if len(prompt) == 0:
        raise ValueError("prompt must be non-empty")
    if len(prompt) + cfg.max_new_tokens > ckpt.config.max_seq_len:
        raise ValueError(
            f"prompt ({len(prompt)}) plus max_new_tokens ({cfg.max_new_tokens}) "
            f"exceeds max_seq_len {ckpt.config.max_seq_len}"
        )


def _decode_stepwise(
    prompt: list[int],
    ckpt: Checkpoint,
    cfg: DecodeConfig,
    use_cache: bool,
    generation: int,
    ckpt_sha: str | None,
) -> tuple[list[int], DecodeTrace]:
    _check_context(prompt, ckpt, cfg)
    harp_cfg = cfg.harp if cfg.harp is not None else HarpConfig(gate="never")
    rng = RandomSource(cfg.seed, generation)
    sampler = rng.sampler() if cfg.method == "nucleus" else None
    cache = KVCache.empty(ckpt.config) if use_cache else None
    sha = ckpt_sha if ckpt_sha is not None else checkpoint_sha256(ckpt)

    tokens = list(prompt)
    generated: list[int] = []
    steps: list[TraceStep] = []
    total_passes = 0
    run_start = time.perf_counter_ns()
    for i in range(cfg.max_new_tokens):
        t0 = time.perf_counter_ns()
        outcome = harp_step(tokens, ckpt, harp_cfg, rng, i, cache)
        if cfg.method == "nucleus":
            tok = nucleus_sample(outcome.final_logits, cfg.temperature, cfg.top_p, sampler)
        else:
            tok = greedy_pick(outcome.final_logits)
        wall = time.perf_counter_ns() - t0
        total_passes += outcome.forward_passes
        pre = None
        if outcome.reframe_count > 0:
            pre = {
                "id": outcome.pre_reframe_top1,
                "text": tokenizer.token_text(outcome.pre_reframe_top1),
            }
        steps.append(
            TraceStep(
                step_index=i,
                token_id=tok,
                token_text=tokenizer.token_text(tok),
                entropy_bits=outcome.entropy_bits,
                reframed=outcome.reframe_count > 0,
                reframe_count=outcome.reframe_count,
                forward_passes=outcome.forward_passes,
                wall_ns=wall,
                pre_reframe_top1=pre,
            )
        )
        generated.append(tok)
        tokens.append(tok)
        if tok == cfg.eos_token:
            break

    trace = DecodeTrace(
        header=_make_header(sha, cfg, use_cache),
        steps=steps,
        summary=TraceSummary(
            total_forward_passes=total_passes,
            generated_tokens=len(generated),
            wall_ns_total=time.perf_counter_ns() - run_start,
        ),
    )
    return generated, trace


def decode_greedy(
    prompt: list[int],
    ckpt: Checkpoint,
    cfg: DecodeConfig,
    *,
    use_cache: bool = False,
    generation: int = 0,
    ckpt_sha: str | None = None,
) -> tuple[list[int], DecodeTrace]:
    if cfg.method != "greedy":
        raise ValueError(f"decode_greedy called with method {cfg.method!r}")
    return _decode_stepwise(prompt, ckpt, cfg, use_cache, generation, ckpt_sha)


def decode_nucleus(
    prompt: list[int],
    ckpt: Checkpoint,
    cfg: DecodeConfig,
    *,
    use_cache: bool = False,
    generation: int = 0,
    ckpt_sha: str | None = None,
) -> tuple[list[int], DecodeTrace]:
    if cfg.method != "nucleus":
        raise ValueError(f"decode_nucleus called with method {cfg.method!r}")
    return _decode_stepwise(prompt, ckpt, cfg, use_cache, generation, ckpt_sha)


@dataclass
class Hypothesis:
    """One beam-search hypothesis over generated tokens only."""

    tokens: list[int]
    cum_logprob: float
    finished: bool
    entropies: list[float]
    last_logits: np.ndarray | None = None
    cache: KVCache | None = None

    def score(self, alpha: float) -> float:
        return self.cum_logprob / length_penalty_factor(max(len(self.tokens), 1), alpha)


def _beam_rank_key(state: Hypothesis, alpha: float) -> tuple:
    # deterministic total order: score desc, then lexicographic tokens
    return (-state.score(alpha), state.tokens)


def decode_beam(
    prompt: list[int],
    ckpt: Checkpoint,
    cfg: DecodeConfig,
    *,
    use_cache: bool = False,
    generation: int = 0,
    ckpt_sha: str | None = None,
) -> tuple[list[int], DecodeTrace]:
    """Beam search over length-normalized cumulative log-probability.

    Each live hypothesis is expanded by its top_k tokens; all candidates
    plus previously finished hypotheses are re-ranked by
    cum_logprob / ((5 + len) / 6) ** alpha and the best `beams` survive.
    Finished hypotheses are frozen. The search stops at the token cap or
    as soon as no live hypothesis can still beat the best finished score
    (a live score is bounded by cum_logprob at the maximal penalty).
    """
    if cfg.method != "beam":
        raise ValueError(f"decode_beam called with method {cfg.method!r}")
    if cfg.harp is not None:
        raise ValueError("beam search does not support the reframed forward pass")
    _check_context(prompt, ckpt, cfg)
    sha = ckpt_sha if ckpt_sha is not None else checkpoint_sha256(ckpt)
    alpha = cfg.length_penalty

    run_start = time.perf_counter_ns()
    cache0 = KVCache.empty(ckpt.config) if use_cache else None
    root_logits = next_token_logits(list(prompt), ckpt, cache0)
    total_passes = 1

    live = [Hypothesis([], 0.0, False, [], root_logits, cache0)]
    finished: list[Hypothesis] = []
    iter_walls: list[int] = []

    for _ in range(cfg.max_new_tokens):
        t0 = time.perf_counter_ns()
        pool: list[Hypothesis] = list(finished)
        expansions: list[tuple[Hypothesis, Hypothesis]] = []  # (candidate, parent)
        for hyp in live:
            logp = log_softmax64(hyp.last_logits)
            ent = shannon_entropy(softmax(hyp.last_logits))
            order = np.argsort(-logp, kind="stable")[: cfg.top_k]
            for tok in order:
                tok = int(tok)
                cand_tokens = hyp.tokens + [tok]
                cand = Hypothesis(
                    tokens=cand_tokens,
                    cum_logprob=hyp.cum_logprob + float(logp[tok]),
                    finished=tok == cfg.eos_token or len(cand_tokens) >= cfg.max_new_tokens,
                    entropies=hyp.entropies + [float(ent)],
                )
                pool.append(cand)
                expansions.append((cand, hyp))
        parents = {id(c): p for c, p in expansions}

        pool.sort(key=lambda s: _beam_rank_key(s, alpha))
        beam = pool[: cfg.beams]
        finished = [s for s in beam if s.finished]
        live_next = [s for s in beam if not s.finished]
        iter_walls.append(time.perf_counter_ns() - t0)
        if not live_next:
            live = []
            break

        if finished:
            best_done = max(s.score(alpha) for s in finished)
            max_lp = length_penalty_factor(cfg.max_new_tokens, alpha)
            optimistic = max(s.cum_logprob / max_lp for s in live_next)
            if optimistic <= best_done:
                live = live_next
                break

        t1 = time.perf_counter_ns()
        for cand in live_next:
            parent = parents[id(cand)]
            cand.cache = parent.cache.fork() if use_cache else None
            cand.last_logits = next_token_logits(
                list(prompt) + cand.tokens, ckpt, cand.cache
            )
            total_passes += 1
        iter_walls[-1] += time.perf_counter_ns() - t1
        live = live_next

    pool = finished if finished else live
    winner = min(pool, key=lambda s: _beam_rank_key(s, alpha))

    steps = []
    for i, tok in enumerate(winner.tokens):
        steps.append(
            TraceStep(
                step_index=i,
                token_id=tok,
                token_text=tokenizer.token_text(tok),
                entropy_bits=winner.entropies[i],
                reframed=False,
                reframe_count=0,
                forward_passes=1,
                wall_ns=iter_walls[i] if i < len(iter_walls) else 0,
            )
        )
    trace = DecodeTrace(
        header=_make_header(sha, cfg, use_cache),
        steps=steps,
        summary=TraceSummary(
            total_forward_passes=total_passes,
            generated_tokens=len(winner.tokens),
            wall_ns_total=time.perf_counter_ns() - run_start,
        ),
    )
    return list(winner.tokens), trace


def decode(
    prompt: list[int],
    ckpt: Checkpoint,
    cfg: DecodeConfig,
    *,
    use_cache: bool = False,
    generation: int = 0,
    ckpt_sha: str | None = None,
) -> tuple[list[int], DecodeTrace]:
    """Dispatch on cfg.method."""
    fn = {"greedy": decode_greedy, "nucleus": decode_nucleus, "beam": decode_beam}[cfg.method]
    return fn(
        prompt, ckpt, cfg, use_cache=use_cache, generation=generation, ckpt_sha=ckpt_sha
    )
