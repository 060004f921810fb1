"""Dense float64 kernels shared by the whole package.

Everything operates on plain numpy arrays in row-major layout and float64
precision. All functions are pure; init_matrix only advances the generator
handed to it, so callers own all randomness.
"""
from __future__ import annotations

import numpy as np

Array = np.ndarray


def as_vector(x, name: str = "x") -> Array:
    """Coerce to a 1-d float64 array, rejecting anything else."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {v.shape}")
    return v


def sigmoid(x: Array) -> Array:
    """Elementwise logistic function, safe at large |x|.

    Split evaluation keeps the exponent argument non-positive so inputs like
    +-1000 saturate without overflow warnings.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_act(x: Array) -> Array:
    """Elementwise hyperbolic tangent."""
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(z: Array) -> Array:
    """Softmax with max subtraction so huge logits cannot overflow.

    Output entries are strictly positive and sum to 1 up to roundoff, and the
    result is invariant to adding a constant to every logit.
    """
    z = as_vector(z, "z")
    if z.size == 0:
        raise ValueError("softmax: empty logit vector")
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def affine(W: Array, x: Array, b: Array) -> Array:
    """Return W @ x + b with explicit shape validation.

    Mismatches raise ValueError naming the offending operand together with
    expected and actual sizes, since silent broadcasting here would corrupt
    every downstream gate computation.
    """
    W = np.asarray(W, dtype=np.float64)
    x = as_vector(x, "x")
    b = as_vector(b, "b")
    if W.ndim != 2:
        raise ValueError(f"affine: W must be a matrix, got shape {W.shape}")
    if W.shape[1] != x.shape[0]:
        raise ValueError(
            f"affine: W expects input of length {W.shape[1]}, x has length {x.shape[0]}"
        )
    if W.shape[0] != b.shape[0]:
        raise ValueError(
            f"affine: W produces output of length {W.shape[0]}, b has length {b.shape[0]}"
        )
    return W @ x + b


def init_matrix(rows: int, cols: int, scale: float, rng: np.random.Generator) -> Array:
    """Draw a rows x cols matrix with i.i.d. Uniform[-scale, scale] entries."""
    if rows <= 0 or cols <= 0:
        raise ValueError(f"init_matrix: dimensions must be positive, got {rows}x{cols}")
    if scale <= 0:
        raise ValueError(f"init_matrix: scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, size=(rows, cols))
