"""Entropy-gated reframed forward-pass inference engine."""

__version__ = "0.1.0"

from .decoding import DecodeConfig, decode, decode_beam, decode_greedy, decode_nucleus
from .harp_pass import HarpConfig, StepOutcome, harp_step, perturb, should_reframe
from .model import (
    Checkpoint,
    KVCache,
    TransformerConfig,
    embed,
    forward_rest,
    next_token_logits,
    toy_checkpoint,
)
from .rng import RandomSource
from .tensor_ops import (
    combine_logits,
    dropout_mask,
    matmul,
    shannon_entropy,
    softmax,
    uniform_noise,
)

__all__ = [
    "__version__",
    "Checkpoint",
    "DecodeConfig",
    "HarpConfig",
    "KVCache",
    "RandomSource",
    "StepOutcome",
    "TransformerConfig",
    "combine_logits",
    "decode",
    "decode_beam",
    "decode_greedy",
    "decode_nucleus",
    "dropout_mask",
    "embed",
    "forward_rest",
    "harp_step",
    "matmul",
    "next_token_logits",
    "perturb",
    "shannon_entropy",
    "should_reframe",
    "softmax",
    "toy_checkpoint",
    "uniform_noise",
]
