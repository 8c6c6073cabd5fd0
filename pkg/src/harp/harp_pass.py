"""Hesitation-aware reframed forward pass.

One decode step works in four stages: run the standard forward pass, score
the next-token distribution's Shannon entropy, and, while the gate fires,
perturb the token embeddings, rerun the stack on the perturbed view, and
blend the two logit vectors with weight beta on the running logits.

The perturbed rerun always recomputes the full sequence and never touches
the KV cache: a perturbation changes every position, so cached keys/values
do not apply to it. Only the initial pass extends the cache. Repeated
blending multiplies the original logits' weight by beta per reframe, so
after k reframes they carry weight beta**k.
"""

from dataclasses import dataclass, field

import numpy as np

from .model import Checkpoint, KVCache, embed, forward_rest, next_token_logits
from .rng import RandomSource
from .tensor_ops import combine_logits, dropout_mask, shannon_entropy, softmax, uniform_noise

GATES = ("entropy", "always", "never")
NOISE_KINDS = ("dropout", "neftune")

DEFAULT_THETA = 1.0
DEFAULT_DELTA = 0.20
DEFAULT_BETA = 0.5
DEFAULT_NEFTUNE_ALPHA = 5.0


@dataclass(frozen=True)
class HarpConfig:
    """Gate, perturbation, and blending hyperparameters.

    theta is an entropy threshold in bits (the gate fires on strictly
    greater entropy); delta is the embedding dropout rate; beta weights the
    original logits in the blend. `scaled_dropout` optionally rescales kept
    entries by 1/(1-delta); the shipped behavior leaves them untouched.
    """

    theta: float = DEFAULT_THETA
    delta: float = DEFAULT_DELTA
    beta: float = DEFAULT_BETA
    max_reframe_steps: int = 1
    noise: str = "dropout"
    neftune_alpha: float = DEFAULT_NEFTUNE_ALPHA
    gate: str = "entropy"
    scaled_dropout: bool = False

    def __post_init__(self) -> None:
        if self.gate not in GATES:
            raise ValueError(f"gate must be one of {GATES}, got {self.gate!r}")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}, got {self.noise!r}")
        if self.gate == "entropy" and self.theta < 0.0:
            raise ValueError(f"entropy threshold must be >= 0, got {self.theta}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"dropout rate must be in [0, 1], got {self.delta}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"combination weight must be in [0, 1], got {self.beta}")
        if self.max_reframe_steps < 0:
            raise ValueError("max_reframe_steps must be >= 0")
        if self.noise == "neftune" and self.neftune_alpha <= 0.0:
            raise ValueError(f"neftune alpha must be positive, got {self.neftune_alpha}")


@dataclass
class StepOutcome:
    """What one decode step produced and how much it hesitated."""

    final_logits: np.ndarray
    entropy_bits: float  # entropy of the initial pass
    reframe_count: int
    pre_reframe_top1: int | None  # argmax before any reframe; set iff reframed
    entropies_after_each_reframe: list[float] = field(default_factory=list)

    @property
    def forward_passes(self) -> int:
        return 1 + self.reframe_count


def should_reframe(p: np.ndarray, cfg: HarpConfig) -> bool:
    """Gate decision for a next-token distribution."""
    if cfg.gate == "always":
        return True
    if cfg.gate == "never":
        return False
    return shannon_entropy(p) > cfg.theta


def perturb(e: np.ndarray, cfg: HarpConfig, rng: np.random.Generator) -> np.ndarray:
    """Alternate view of the embeddings: elementwise dropout or added noise."""
    rows, cols = e.shape
    if cfg.noise == "dropout":
        mask = dropout_mask(rows, cols, cfg.delta, rng)
        out = e * mask
        if cfg.scaled_dropout and cfg.delta < 1.0:
            out = (out.astype(np.float64) / (1.0 - cfg.delta)).astype(np.float32)
        return out
    return e + uniform_noise(rows, cols, cfg.neftune_alpha, rng)


def harp_step(
    tokens: list[int],
    ckpt: Checkpoint,
    cfg: HarpConfig,
    rng: RandomSource,
    step_index: int,
    cache: KVCache | None = None,
) -> StepOutcome:
    """One forward step with hesitation-gated reframing.

    The initial pass is cache-eligible and its cache update is kept; the
    gate is then re-evaluated on the softmax of the running (blended)
    logits until it stops firing or `max_reframe_steps` is reached. Each
    reframe draws a fresh perturbation from the (generation, step, reframe)
    substream.
    """
    e: np.ndarray | None = None
    if cache is not None:
        logits = next_token_logits(tokens, ckpt, cache)
    else:
        e = embed(tokens, ckpt)
        logits = forward_rest(e, ckpt, None)[-1]

    initial_entropy = shannon_entropy(softmax(logits))
    pre_top1: int | None = None
    entropies: list[float] = []
    reframes = 0
    while reframes < cfg.max_reframe_steps and should_reframe(softmax(logits), cfg):
        if reframes == 0:
            pre_top1 = int(np.argmax(logits))
        if e is None:
            e = embed(tokens, ckpt)
        perturbed = perturb(e, cfg, rng.perturbation(step_index, reframes))
        reframed_logits = forward_rest(perturbed, ckpt, None)[-1]
        logits = combine_logits(logits, reframed_logits, cfg.beta)
        reframes += 1
        entropies.append(shannon_entropy(softmax(logits)))

    return StepOutcome(
        final_logits=logits,
        entropy_bits=initial_entropy,
        reframe_count=reframes,
        pre_reframe_top1=pre_top1,
        entropies_after_each_reframe=entropies,
    )


__all__ = [
    "HarpConfig",
    "StepOutcome",
    "harp_step",
    "perturb",
    "should_reframe",
]
