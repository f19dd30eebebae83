"""Causal dimension-wise attention for decoding.

Position k may only use tokens at positions n <= k (inclusive diagonal: a
token sees itself, otherwise position 0 would have nothing to attend to).
The masked score tensor stacks one d x d score matrix per position,

    S3[i, j, k] = sum_n Q[n, i] * K[n, j] * M[n, k],

where M is the upper-triangular mask M[n, k] = 1 for n <= k.  Because slice
k differs from slice k-1 by exactly the outer product q_k k_k^T, the whole
tensor is a running prefix sum and can be evaluated in O(N d^2) instead of
the O(N^2 d^2) the literal sum costs.

Two evaluations are provided: a four-index-loop literal form that serves as
the correctness oracle, and a streaming form built on prefix sums.  The
output contraction applies a shared d x d filter exactly as in the encoder:

    O[i, j] = sum_m W[j, m] * S3[j, m, i] * V[i, m].
"""

from __future__ import annotations

import numpy as np

from .opcount import TALLY
from .tensor import cum_outer


def causal_mask(n: int) -> np.ndarray:
    """Upper-triangular mask with inclusive diagonal: M[n, k] = 1 iff n <= k."""
    if n < 1:
        raise ValueError("sequence length must be >= 1")
    idx = np.arange(n)
    return (idx[:, None] <= idx[None, :]).astype(np.float64)


def _check_pair(q, k):
    if q.shape != k.shape:
        raise ValueError(f"Q/K shapes differ: {q.shape} vs {k.shape}")
    if q.ndim != 2:
        raise ValueError(f"expected N x d matrices, got order {q.ndim}")


def masked_score_naive(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Literal four-index evaluation of the masked score tensor (d x d x N).

    Every term including the masked-off ones is multiplied out, which is the
    point: this is the slow, obviously-correct oracle the streaming form is
    checked against.
    """
    _check_pair(q, k)
    n, d = q.shape
    m = causal_mask(n)
    if TALLY.active:
        TALLY.add("masked_scores_naive", 2 * d * d * n * n, d * d * n * (n - 1))
    out = np.zeros((d, d, n))
    for i in range(d):
        qi = q[:, i]
        for j in range(d):
            qk = qi * k[:, j]
            for kk in range(n):
                acc = 0.0
                for nn in range(n):
                    acc += qk[nn] * m[nn, kk]
                out[i, j, kk] = acc
    return out


def masked_score_streaming(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Prefix-sum evaluation of the masked score tensor; O(N d^2) total."""
    _check_pair(q, k)
    return np.ascontiguousarray(cum_outer(q, k).transpose(1, 2, 0))


def masked_kr_tensor(s3: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Broadcast product of per-position score slices with rows of V.

    X[i, j, k] = S3[j, k, i] * V[i, k]: slice i of the score tensor (sliced
    by its last index) is scaled columnwise by token i's value row.
    """
    if s3.ndim != 3 or v.ndim != 2:
        raise ValueError(f"expected order-3 scores and N x d values, got {s3.shape}, {v.shape}")
    d, d2, n = s3.shape
    if d != d2 or v.shape != (n, d):
        raise ValueError(f"extent mismatch: scores {s3.shape} vs values {v.shape}")
    if TALLY.active:
        TALLY.elemwise_mul("masked_kr", n * d * d)
    return s3.transpose(2, 0, 1) * v[:, None, :]


def position_scales(n: int) -> np.ndarray:
    """Optional per-position scale 1/sqrt(i+1), compensating shorter prefixes."""
    return 1.0 / np.sqrt(np.arange(1, n + 1, dtype=np.float64))


def masked_output(q, k, v, w, mode: str = "streaming", scale_positions: bool = False):
    """Causal dimension-wise attention output O[i, j] = sum_m W[j,m] S3[j,m,i] V[i,m].

    mode="naive" composes the literal oracle pieces; mode="streaming" keeps a
    running d x d prefix state G_i = sum_{n<=i} q_n k_n^T (evaluated as one
    cumulative scan) and emits row i as (W * G_i) @ V[i, :].  Both agree to
    floating-point accumulation order.

    scale_positions multiplies row i by 1/sqrt(i+1); early rows sum fewer
    prefix terms, and this keeps their magnitude comparable.  Off by default.
    """
    _check_pair(q, k)
    n, d = q.shape
    if v.shape != (n, d):
        raise ValueError(f"V shape {v.shape} does not match Q/K {q.shape}")
    if w.shape != (d, d):
        raise ValueError(f"filter must be {d}x{d}, got {w.shape}")
    if mode == "naive":
        x = masked_kr_tensor(masked_score_naive(q, k), v)
        if TALLY.active:
            TALLY.add("masked_conv", n * d * d, n * d * (d - 1))
        out = np.zeros((n, d))
        for i in range(n):
            for j in range(d):
                acc = 0.0
                for m in range(d):
                    acc += w[j, m] * x[i, j, m]
                out[i, j] = acc
    elif mode == "streaming":
        g = cum_outer(q, k)
        if TALLY.active:
            TALLY.add("masked_mix", 2 * n * d * d, n * d * (d - 1))
        out = np.einsum("jm,ijm,im->ij", w, g, v)
    else:
        raise ValueError(f"unknown mode {mode!r}, expected 'naive' or 'streaming'")
    if scale_positions:
        out = out * position_scales(n)[:, None]
    return out


def masked_output_vectorized_naive(q, k, v, w):
    """Literal masked sum evaluated with library kernels, still O(N^2 d^2).

    Used only for benchmarking, where comparing a C-speed quadratic kernel
    against the C-speed linear one is the fair contest; the loop oracle above
    stays the correctness reference.
    """
    _check_pair(q, k)
    n, d = q.shape
    m = causal_mask(n)
    if TALLY.active:
        TALLY.add("masked_scores_naive", 2 * d * d * n * n, d * d * n * (n - 1))
        TALLY.elemwise_mul("masked_kr", n * d * d)
        TALLY.add("masked_conv", n * d * d, n * d * (d - 1))
    s3 = np.einsum("ni,nj,nk->ijk", q, k, m)
    return np.einsum("jm,jmi,im->ij", w, s3, v)
