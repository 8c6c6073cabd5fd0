"""Dense float32 linear algebra and the probability/noise primitives.

Values are stored as float32 and every reduction (matrix products, softmax
normalization, entropy sums) accumulates in float64 before narrowing back,
so results are deterministic and portable at desk scale.
"""

import math

import numpy as np

Matrix = np.ndarray  # 2-D float32, row-major
Vector = np.ndarray  # 1-D float32


def _check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with float64 accumulation, narrowed to float32."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    out = (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    _check_finite(out, "matmul result")
    return out


def softmax(logits: Vector) -> Vector:
    """Max-shifted softmax over a logit vector, returned as float32 probs."""
    x = np.asarray(logits, dtype=np.float32)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("softmax expects a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input contains non-finite entries")
    shifted = x.astype(np.float64) - float(x.max())
    exp = np.exp(shifted)
    return (exp / exp.sum()).astype(np.float32)


def shannon_entropy(p: Vector) -> float:
    """Entropy in bits, -sum(p * log2 p) with the 0*log2(0) = 0 convention.

    The input is renormalized by its float64 sum before summation and the
    result is clamped to the mathematically valid range [0, log2(len(p))].
    """
    probs = np.asarray(p, dtype=np.float32)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("entropy expects a non-empty 1-D distribution")
    q = probs.astype(np.float64)
    if np.any(q < 0.0) or np.any(q > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    total = q.sum()
    if abs(total - 1.0) > 1e-5:
        raise ValueError(f"probabilities sum to {total}, expected 1 within 1e-5")
    q = q / total
    nz = q[q > 0.0]
    ent = -float(np.sum(nz * np.log2(nz)))
    return min(max(ent, 0.0), math.log2(probs.size))


def dropout_mask(rows: int, cols: int, delta: float, rng: np.random.Generator) -> Matrix:
    """I.i.d. Bernoulli {0,1} mask: each entry is 0 with probability delta.

    Unscaled: kept entries stay 1 (no 1/(1-delta) inversion).
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1], got {delta}")
    if rows < 1 or cols < 1:
        raise ValueError("mask dimensions must be >= 1")
    keep = rng.random((rows, cols)) >= delta
    return keep.astype(np.float32)


def uniform_noise(rows: int, cols: int, alpha: float, rng: np.random.Generator) -> Matrix:
    """Uniform [-1, 1] noise scaled by alpha / sqrt(rows * cols).

    rows is the sequence length and cols the embedding dimension, so the
    per-entry magnitude shrinks with both.
    """
    if alpha <= 0.0:
        raise ValueError(f"noise scale must be positive, got {alpha}")
    if rows < 1 or cols < 1:
        raise ValueError("noise dimensions must be >= 1")
    scale = alpha / math.sqrt(rows * cols)
    raw = rng.uniform(-1.0, 1.0, size=(rows, cols))
    return (raw * scale).astype(np.float32)


def combine_logits(original: Vector, reframed: Vector, beta: float) -> Vector:
    """Convex blend beta*original + (1-beta)*reframed, elementwise."""
    a = np.asarray(original, dtype=np.float32)
    b = np.asarray(reframed, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"combination weight must be in [0, 1], got {beta}")
    if beta == 1.0:
        return a.copy()
    if beta == 0.0:
        return b.copy()
    out64 = beta * a.astype(np.float64) + (1.0 - beta) * b.astype(np.float64)
    return out64.astype(np.float32)
