"""Minimal pre-norm decoder-only transformer with an incremental KV cache.

The forward pass is split into an embedding lookup (`embed`) and the rest
of the network (`forward_rest`) so callers can perturb the token embeddings
before running the stack. Learned absolute positional embeddings are added
inside `forward_rest`, which keeps token order intact when the embeddings
are perturbed.

Weights live in float32; matrix products, layernorm statistics, attention
softmax and GELU run with float64 accumulation before narrowing back.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

_LN_EPS = 1e-5
_INIT_STD = 0.02


class CacheMismatchError(Exception):
    """The KV cache was built from a different token prefix."""


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    max_seq_len: int

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerWeights:
    ln1_scale: np.ndarray  # [d]
    ln1_shift: np.ndarray  # [d]
    wq: np.ndarray  # [d, d]
    wk: np.ndarray  # [d, d]
    wv: np.ndarray  # [d, d]
    wo: np.ndarray  # [d, d]
    ln2_scale: np.ndarray  # [d]
    ln2_shift: np.ndarray  # [d]
    w1: np.ndarray  # [d, d_ff]
    b1: np.ndarray  # [d_ff]
    w2: np.ndarray  # [d_ff, d]
    b2: np.ndarray  # [d]


# (field name, shape template) for one layer, in serialization order.
LAYER_FIELDS = (
    ("ln1_scale", ("d",)),
    ("ln1_shift", ("d",)),
    ("wq", ("d", "d")),
    ("wk", ("d", "d")),
    ("wv", ("d", "d")),
    ("wo", ("d", "d")),
    ("ln2_scale", ("d",)),
    ("ln2_shift", ("d",)),
    ("w1", ("d", "d_ff")),
    ("b1", ("d_ff",)),
    ("w2", ("d_ff", "d")),
    ("b2", ("d",)),
)


@dataclass
class Checkpoint:
    config: TransformerConfig
    token_embedding: np.ndarray  # [V, d]
    positional_embedding: np.ndarray  # [max_seq_len, d]
    layers: list[LayerWeights]
    final_ln_scale: np.ndarray  # [d]
    final_ln_shift: np.ndarray  # [d]
    lm_head: np.ndarray  # [d, V]

    def validate(self) -> None:
        """Raise ValueError unless every tensor matches the config shapes."""
        for name, arr, shape in iter_tensors(self):
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if arr.dtype != np.float32:
                raise ValueError(f"{name}: expected float32, got {arr.dtype}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: contains non-finite entries")


def _resolve_shape(template: tuple, cfg: TransformerConfig) -> tuple[int, ...]:
    dims = {"V": cfg.vocab_size, "d": cfg.d_model, "d_ff": cfg.d_ff, "S": cfg.max_seq_len}
    return tuple(dims[t] for t in template)


def tensor_layout(cfg: TransformerConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) for every tensor, in the on-disk serialization order."""
    layout = [
        ("token_embedding", _resolve_shape(("V", "d"), cfg)),
        ("positional_embedding", _resolve_shape(("S", "d"), cfg)),
    ]
    for i in range(cfg.n_layers):
        for name, template in LAYER_FIELDS:
            layout.append((f"layer{i}.{name}", _resolve_shape(template, cfg)))
    layout.append(("final_ln_scale", _resolve_shape(("d",), cfg)))
    layout.append(("final_ln_shift", _resolve_shape(("d",), cfg)))
    layout.append(("lm_head", _resolve_shape(("d", "V"), cfg)))
    return layout


def iter_tensors(ckpt: Checkpoint):
    """Yield (name, array, expected_shape) in serialization order."""
    cfg = ckpt.config
    yield "token_embedding", ckpt.token_embedding, _resolve_shape(("V", "d"), cfg)
    yield "positional_embedding", ckpt.positional_embedding, _resolve_shape(("S", "d"), cfg)
    for i, layer in enumerate(ckpt.layers):
        for name, template in LAYER_FIELDS:
            yield f"layer{i}.{name}", getattr(layer, name), _resolve_shape(template, cfg)
    yield "final_ln_scale", ckpt.final_ln_scale, _resolve_shape(("d",), cfg)
    yield "final_ln_shift", ckpt.final_ln_shift, _resolve_shape(("d",), cfg)
    yield "lm_head", ckpt.lm_head, _resolve_shape(("d", "V"), cfg)


def toy_checkpoint(config: TransformerConfig, seed: int) -> Checkpoint:
    """Seeded Gaussian(0, 0.02) weights; layernorm scale 1, shift 0, biases 0.

    Tensors are drawn in serialization order from one generator, so equal
    (config, seed) pairs give bit-identical checkpoints.
    """
    rng = np.random.default_rng(seed)

    def gauss(*shape: int) -> np.ndarray:
        return rng.normal(0.0, _INIT_STD, size=shape).astype(np.float32)

    d, dff = config.d_model, config.d_ff
    token_emb = gauss(config.vocab_size, d)
    pos_emb = gauss(config.max_seq_len, d)
    layers = []
    for _ in range(config.n_layers):
        layers.append(
            LayerWeights(
                ln1_scale=np.ones(d, dtype=np.float32),
                ln1_shift=np.zeros(d, dtype=np.float32),
                wq=gauss(d, d),
                wk=gauss(d, d),
                wv=gauss(d, d),
                wo=gauss(d, d),
                ln2_scale=np.ones(d, dtype=np.float32),
                ln2_shift=np.zeros(d, dtype=np.float32),
                w1=gauss(d, dff),
                b1=np.zeros(dff, dtype=np.float32),
                w2=gauss(dff, d),
                b2=np.zeros(d, dtype=np.float32),
            )
        )
    ckpt = Checkpoint(
        config=config,
        token_embedding=token_emb,
        positional_embedding=pos_emb,
        layers=layers,
        final_ln_scale=np.ones(d, dtype=np.float32),
        final_ln_shift=np.zeros(d, dtype=np.float32),
        lm_head=gauss(d, config.vocab_size),
    )
    ckpt.validate()
    return ckpt


def prefix_fingerprint(tokens: list[int]) -> bytes:
    """Order-sensitive hash of a token prefix, used to guard the KV cache."""
    h = hashlib.blake2b(digest_size=16)
    h.update(np.asarray(tokens, dtype=np.uint32).tobytes())
    return h.digest()


@dataclass
class KVCache:
    """Per-layer cached keys/values for a decoded prefix.

    Owned by exactly one generation at a time. `fingerprint` pins the token
    prefix the cache was built from; callers must re-verify it before
    reusing the cache for a new sequence.
    """

    keys: list[np.ndarray] = field(default_factory=list)  # per layer [H, t, d_head]
    values: list[np.ndarray] = field(default_factory=list)
    cached_len: int = 0
    fingerprint: bytes = b""

    @classmethod
    def empty(cls, config: TransformerConfig) -> "KVCache":
        shape = (config.n_heads, 0, config.d_head)
        return cls(
            keys=[np.zeros(shape, dtype=np.float32) for _ in range(config.n_layers)],
            values=[np.zeros(shape, dtype=np.float32) for _ in range(config.n_layers)],
            cached_len=0,
            fingerprint=prefix_fingerprint([]),
        )

    def fork(self) -> "KVCache":
        """Independent copy; used when beam hypotheses share a prefix."""
        return KVCache(
            keys=[k.copy() for k in self.keys],
            values=[v.copy() for v in self.values],
            cached_len=self.cached_len,
            fingerprint=self.fingerprint,
        )


def _layernorm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    normed = (x64 - mean) / np.sqrt(var + _LN_EPS)
    return (normed * scale.astype(np.float64) + shift.astype(np.float64)).astype(np.float32)


def _gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation, the GPT-2 convention
    x64 = x.astype(np.float64)
    inner = math.sqrt(2.0 / math.pi) * (x64 + 0.044715 * x64**3)
    return (0.5 * x64 * (1.0 + np.tanh(inner))).astype(np.float32)


def _project(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (x.astype(np.float64) @ w.astype(np.float64)).astype(np.float32)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    # [t, d] -> [H, t, d_head]
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _attention(
    q: np.ndarray,  # [H, m, d_head] queries for new rows
    k: np.ndarray,  # [H, t, d_head] keys for the full prefix
    v: np.ndarray,  # [H, t, d_head]
    start: int,  # absolute position of the first query row
) -> np.ndarray:
    n_heads, m, d_head = q.shape
    t = k.shape[1]
    scores = np.einsum("hmd,htd->hmt", q.astype(np.float64), k.astype(np.float64))
    scores /= math.sqrt(d_head)
    # causal mask: query at absolute position start+r sees keys 0..start+r
    key_pos = np.arange(t)
    query_pos = start + np.arange(m)
    scores = np.where(key_pos[None, None, :] > query_pos[None, :, None], -np.inf, scores)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = np.einsum("hmt,htd->hmd", weights, v.astype(np.float64))
    # [H, m, d_head] -> [m, d]
    return ctx.transpose(1, 0, 2).reshape(m, n_heads * d_head).astype(np.float32)


def embed(tokens: list[int], ckpt: Checkpoint) -> np.ndarray:
    """Token-embedding rows only; positions are added inside forward_rest."""
    cfg = ckpt.config
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token sequence must be non-empty")
    if ids.size > cfg.max_seq_len:
        raise ValueError(f"sequence length {ids.size} exceeds max_seq_len {cfg.max_seq_len}")
    if np.any(ids < 0) or np.any(ids >= cfg.vocab_size):
        raise ValueError(f"token id outside vocabulary of size {cfg.vocab_size}")
    return ckpt.token_embedding[ids].copy()


def forward_rest(
    e: np.ndarray, ckpt: Checkpoint, cache: KVCache | None = None
) -> np.ndarray:
    """Run everything after the embedding lookup.

    Adds positional embeddings, applies the pre-norm attention/MLP stack
    under a causal mask, and projects through the LM head. Without a cache
    the returned logits cover all n positions. With a cache only positions
    past `cache.cached_len` are computed (and their keys/values appended);
    the returned logits cover exactly those new rows. The caller owns the
    fingerprint contract; see `next_token_logits`.
    """
    cfg = ckpt.config
    if e.ndim != 2 or e.shape[1] != cfg.d_model:
        raise ValueError(f"embeddings must be [n, {cfg.d_model}], got {e.shape}")
    n = e.shape[0]
    if n > cfg.max_seq_len:
        raise ValueError(f"sequence length {n} exceeds max_seq_len {cfg.max_seq_len}")

    start = 0
    if cache is not None:
        if cache.cached_len >= n:
            raise ValueError(
                f"cache already covers {cache.cached_len} positions, sequence has {n}"
            )
        start = cache.cached_len

    # new keys/values are committed to the cache only after the whole pass
    # succeeds, so a failure cannot leave it half-updated
    new_keys: list[np.ndarray] = []
    new_values: list[np.ndarray] = []

    h = e[start:n].astype(np.float32) + ckpt.positional_embedding[start:n]
    for li, layer in enumerate(checkpoint_layers(ckpt)):
        x = _layernorm(h, layer.ln1_scale, layer.ln1_shift)
        q = _split_heads(_project(x, layer.wq), cfg.n_heads)
        k_new = _split_heads(_project(x, layer.wk), cfg.n_heads)
        v_new = _split_heads(_project(x, layer.wv), cfg.n_heads)
        if cache is not None:
            k_full = np.concatenate([cache.keys[li], k_new], axis=1)
            v_full = np.concatenate([cache.values[li], v_new], axis=1)
            new_keys.append(k_full)
            new_values.append(v_full)
        else:
            k_full, v_full = k_new, v_new
        attn = _project(_attention(q, k_full, v_full, start), layer.wo)
        h = h + attn
        x = _layernorm(h, layer.ln2_scale, layer.ln2_shift)
        u = _project(x, layer.w1) + layer.b1
        h = h + (_project(_gelu(u), layer.w2) + layer.b2)

    h = _layernorm(h, ckpt.final_ln_scale, ckpt.final_ln_shift)
    logits = _project(h, ckpt.lm_head)
    if cache is not None:
        cache.keys = new_keys
        cache.values = new_values
        cache.cached_len = n
    return logits


def checkpoint_layers(ckpt: Checkpoint) -> list[LayerWeights]:
    if len(ckpt.layers) != ckpt.config.n_layers:
        raise ValueError(
            f"checkpoint has {len(ckpt.layers)} layers, config says {ckpt.config.n_layers}"
        )
    return ckpt.layers


def next_token_logits(
    tokens: list[int], ckpt: Checkpoint, cache: KVCache | None = None
) -> np.ndarray:
    """Last-position logits for the sequence, reusing the cache when valid.

    Verifies the cache fingerprint against the claimed prefix before use
    and stamps the cache with the new prefix afterwards.
    """
    if cache is not None and cache.cached_len > 0:
        claimed = prefix_fingerprint(list(tokens[: cache.cached_len]))
        if claimed != cache.fingerprint:
            raise CacheMismatchError(
                "cache fingerprint does not match the token prefix; "
                "recompute without the cache"
            )
    e = embed(tokens, ckpt)
    logits = forward_rest(e, ckpt, cache)
    if cache is not None:
        cache.fingerprint = prefix_fingerprint(list(tokens))
    return logits[-1]
