"""Dense tensor kernels used everywhere else in the package.

Tensors are plain numpy arrays: C-contiguous (row-major, last index fastest),
real valued, order 1 to 3, dtype float64 by default.  float32 is accepted for
training and benchmarking; every verification suite runs in float64.

The random generator is Philox (counter-based, 4x64), which numpy guarantees
to produce the same stream for the same seed on every platform.
"""

from __future__ import annotations

import numpy as np

from .opcount import TALLY

F32 = np.float32
F64 = np.float64

_PRECISIONS = {"f32": F32, "f64": F64}


def as_tensor(data, precision="f64") -> np.ndarray:
    """Copy `data` into a contiguous row-major array of the given precision."""
    if precision not in _PRECISIONS:
        raise ValueError(f"unknown precision {precision!r}, expected 'f32' or 'f64'")
    arr = np.ascontiguousarray(data, dtype=_PRECISIONS[precision])
    if arr.ndim < 1 or arr.ndim > 3:
        raise ValueError(f"tensor order must be 1..3, got shape {arr.shape}")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    """Seeded Philox generator; identical seed gives an identical stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def derived_rng(seed: int, *stream) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, *stream) integers.

    Used for per-parameter init and per-step batch/mask randomness so that
    streams do not depend on the order in which other streams were consumed.
    """
    entropy = (int(seed),) + tuple(int(s) & 0xFFFFFFFF for s in stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def matmul(a: np.ndarray, b: np.ndarray, component: str = "matmul") -> np.ndarray:
    """Matrix product with a descriptive shape error and cost tally."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects matrices, got orders {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul inner extents differ: ({a.shape[0]}x{a.shape[1]}) @ "
            f"({b.shape[0]}x{b.shape[1]})"
        )
    if a.dtype != b.dtype:
        raise ValueError(f"matmul precision mismatch: {a.dtype} vs {b.dtype}")
    if TALLY.active:
        TALLY.matmul(component, a.shape[0], a.shape[1], b.shape[1])
    return a @ b


def softmax_axis(m: np.ndarray, axis: str) -> np.ndarray:
    """Numerically stable softmax along rows or columns of a matrix.

    axis="rows_over_k" normalizes each row (index k runs over columns);
    axis="cols_over_j" normalizes each column (index j runs over rows).
    The maximum is always subtracted before exponentiation.
    """
    if m.ndim != 2:
        raise ValueError(f"softmax_axis expects a matrix, got order {m.ndim}")
    if axis == "rows_over_k":
        ax = m.ndim - 1
    elif axis == "cols_over_j":
        ax = m.ndim - 2
    else:
        raise ValueError(f"unknown softmax axis {axis!r}")
    shifted = m - np.max(m, axis=ax, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=ax, keepdims=True)


def cum_outer(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Prefix sums of per-token outer products.

    out[t, i, j] = sum_{n <= t} q[n, i] * k[n, j], computed in one pass so the
    cost is linear in the number of tokens.
    """
    if q.shape != k.shape:
        raise ValueError(f"cum_outer shape mismatch: {q.shape} vs {k.shape}")
    if q.ndim != 2:
        raise ValueError(f"cum_outer expects N x d matrices, got order {q.ndim}")
    n, d = q.shape
    if TALLY.active:
        TALLY.add("cum_outer", n * d * d, (n - 1) * d * d)
    outers = q[:, :, None] * k[:, None, :]
    return np.cumsum(outers, axis=0)


def rand_init(shape, scheme: str, rng: np.random.Generator, sigma: float = 0.02) -> np.ndarray:
    """Seeded parameter init: 'xavier_uniform' or 'normal' (with sigma).

    Xavier bound is sqrt(6 / (fan_in + fan_out)) over the first/last extents.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 1 or any(s < 1 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    if scheme == "xavier_uniform":
        fan_in = shape[0]
        fan_out = shape[-1] if len(shape) > 1 else shape[0]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)
    if scheme == "normal":
        if sigma == 0.0:
            return np.zeros(shape)
        return rng.normal(0.0, sigma, size=shape)
    raise ValueError(f"unknown init scheme {scheme!r}")


def assert_finite(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise FloatingPointError(f"{what}: {bad} non-finite values")
