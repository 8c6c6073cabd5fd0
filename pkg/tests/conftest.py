import numpy as np
import pytest

from harp.model import TransformerConfig, toy_checkpoint

# Small dims keep unit tests fast; acceptance uses the full reference size.
SMALL = TransformerConfig(
    vocab_size=259, d_model=32, n_layers=2, n_heads=4, d_ff=64, max_seq_len=64
)
REFERENCE = TransformerConfig(
    vocab_size=259, d_model=64, n_layers=4, n_heads=4, d_ff=256, max_seq_len=256
)


def sharpened_checkpoint(config: TransformerConfig, seed: int, scale: float = 40.0):
    """Toy checkpoint with the LM head scaled up so next-token entropies
    spread over a few bits instead of hugging log2(vocab)."""
    ckpt = toy_checkpoint(config, seed)
    ckpt.lm_head = (ckpt.lm_head * scale).astype(np.float32)
    return ckpt


@pytest.fixture(scope="session")
def small_ckpt():
    return toy_checkpoint(SMALL, seed=0)


@pytest.fixture(scope="session")
def sharp_ckpt():
    return sharpened_checkpoint(SMALL, seed=0)


@pytest.fixture(scope="session")
def reference_ckpt():
    return sharpened_checkpoint(REFERENCE, seed=0)
