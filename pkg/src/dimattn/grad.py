"""Reverse-mode rules for every op the training loop composes.

No graph autodiff: the op set is small and closed, so each op is a
(forward, backward) pair.  Forward returns the output plus a TapeNode
holding whatever the backward rule needs; backward maps an upstream
cotangent to per-input gradients.  `fd_check` closes the loop with central
finite differences against the scalarizing loss sum(output).

Attention ops accept either a single sequence [N, d] or a batch [B, N, d];
parameter gradients are summed over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class TapeNode:
    op: str
    saved: dict
    out_shape: tuple


def _node(op, out, **saved):
    return TapeNode(op=op, saved=saved, out_shape=tuple(np.shape(out)))


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------

def identity_fwd(x):
    return x, _node("identity", x)


def identity_bwd(node, u):
    return {"x": u}


def add_fwd(x, y):
    out = x + y
    return out, _node("add", out)


def add_bwd(node, u):
    return {"x": u, "y": u}


def matmul_fwd(a, b):
    out = a @ b
    return out, _node("matmul", out, a=a, b=b)


def matmul_bwd(node, u):
    a, b = node.saved["a"], node.saved["b"]
    return {"a": u @ b.T, "b": a.T @ u}


def linear_fwd(x, w, b=None):
    """x[..., m] @ w[m, n] (+ b), leading axes flattened for the product."""
    out = x @ w
    if b is not None:
        out = out + b
    return out, _node("linear", out, x=x, w=w, has_bias=b is not None)


def linear_bwd(node, u):
    x, w = node.saved["x"], node.saved["w"]
    x2 = x.reshape(-1, x.shape[-1])
    u2 = u.reshape(-1, u.shape[-1])
    grads = {"x": u @ w.T, "w": x2.T @ u2}
    if node.saved["has_bias"]:
        grads["b"] = u2.sum(axis=0)
    return grads


def relu_fwd(x):
    out = np.maximum(x, 0.0)
    return out, _node("relu", out, mask=x > 0.0)


def relu_bwd(node, u):
    return {"x": u * node.saved["mask"]}


def embed_fwd(table, ids):
    out = table[ids]
    return out, _node("embed", out, ids=ids, vocab=table.shape[0])


def embed_bwd(node, u):
    ids = node.saved["ids"]
    width = u.shape[-1]
    dtable = np.zeros((node.saved["vocab"], width), dtype=u.dtype)
    np.add.at(dtable, np.asarray(ids).reshape(-1), u.reshape(-1, width))
    return {"table": dtable}


def dropout_fwd(x, rate, rng):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = x * keep * scale
    return out, _node("dropout", out, keep=keep, scale=scale)


def dropout_bwd(node, u):
    return {"x": u * node.saved["keep"] * node.saved["scale"]}


def layer_norm_fwd(x, gamma, beta, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + beta
    return out, _node("layer_norm", out, xhat=xhat, inv_std=inv_std, gamma=gamma)


def layer_norm_bwd(node, u):
    xhat, inv_std, gamma = (node.saved[k] for k in ("xhat", "inv_std", "gamma"))
    dxhat = u * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    axes = tuple(range(u.ndim - 1))
    return {
        "x": dx,
        "gamma": (u * xhat).sum(axis=axes),
        "beta": u.sum(axis=axes),
    }


def softmax_rows_fwd(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    return p, _node("softmax_rows", p, p=p)


def softmax_rows_bwd(node, u):
    p = node.saved["p"]
    return {"x": p * (u - (u * p).sum(axis=-1, keepdims=True))}


# ---------------------------------------------------------------------------
# attention ops
# ---------------------------------------------------------------------------

def _batched(*arrays):
    """Promote [N, d] inputs to [1, N, d]; report whether promotion happened."""
    if arrays[0].ndim == 2:
        return [a[None] for a in arrays], True
    return list(arrays), False


def _norm_fwd(s, mode):
    """Normalize score matrices [B, d, d]; returns (f(S), state for backward).

    The scale_inv_sqrt_N branch lives at the call site, which knows N.
    """
    if mode == "none":
        return s, None
    if mode == "softmax_rows_over_k":
        shifted = s - s.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=-1, keepdims=True)
        return p, p
    if mode == "softmax_cols_over_j":
        shifted = s - s.max(axis=-2, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=-2, keepdims=True)
        return p, p
    raise ValueError(f"unknown norm mode {mode!r}")


def _norm_bwd(dp, mode, p, n):
    if mode == "none":
        return dp
    if mode == "scale_inv_sqrt_N":
        return dp / math.sqrt(n)
    if mode == "softmax_rows_over_k":
        return p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    if mode == "softmax_cols_over_j":
        return p * (dp - (dp * p).sum(axis=-2, keepdims=True))
    raise ValueError(f"unknown norm mode {mode!r}")


def token_attention_fwd(q, k, v, causal=False, key_pad=None):
    """Softmax attention over keys; key_pad marks keys excluded from every query."""
    (qb, kb, vb), squeezed = _batched(q, k, v)
    n, d = qb.shape[-2:]
    scale = 1.0 / math.sqrt(d)
    scores = np.einsum("bnd,bmd->bnm", qb, kb) * scale
    if causal:
        idx = np.arange(n)
        scores = np.where(idx[None, :, None] >= idx[None, None, :], scores, -np.inf)
    if key_pad is not None:
        pad = np.asarray(key_pad, dtype=bool)
        if pad.ndim == 1:
            pad = pad[None]
        scores = np.where(pad[:, None, :], -np.inf, scores)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = np.einsum("bnm,bmd->bnd", p, vb)
    if squeezed:
        out = out[0]
    return out, _node("token_attention", out, p=p, q=qb, k=kb, v=vb,
                      scale=scale, squeezed=squeezed)


def token_attention_bwd(node, u):
    s = node.saved
    ub = u[None] if s["squeezed"] else u
    p, q, k, v, scale = s["p"], s["q"], s["k"], s["v"], s["scale"]
    dv = np.einsum("bnm,bnd->bmd", p, ub)
    dp = np.einsum("bnd,bmd->bnm", ub, v)
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dq = np.einsum("bnm,bmd->bnd", ds, k) * scale
    dk = np.einsum("bnm,bnd->bmd", ds, q) * scale
    if s["squeezed"]:
        dq, dk, dv = dq[0], dk[0], dv[0]
    return {"q": dq, "k": dk, "v": dv}


def dim_attention_fwd(q, k, v, w, mode="none"):
    """Factored dimension-wise attention O = V @ (W * f(S))^T with S = Q^T K."""
    out, node = dim_attention_multi_fwd(q, k, v, w[None], mode=mode)
    node.op = "dim_attention"
    return out, node


def dim_attention_bwd(node, u):
    grads = dim_attention_multi_bwd(node, u)
    grads["w"] = grads.pop("ws")[0]
    return grads


def dim_attention_multi_fwd(q, k, v, ws, mode="none"):
    """c filters sharing one normalized score matrix; outputs concatenated.

    Output layout is [..., N, c*d] with filter f occupying columns
    [f*d, (f+1)*d).
    """
    (qb, kb, vb), squeezed = _batched(q, k, v)
    n, d = qb.shape[-2:]
    s = np.einsum("bni,bnj->bij", qb, kb)
    if mode == "scale_inv_sqrt_N":
        fs, p = s / math.sqrt(n), None
    else:
        fs, p = _norm_fwd(s, mode)
    a = ws[None, :, :, :] * fs[:, None, :, :]
    o4 = np.einsum("bnm,bcjm->bcnj", vb, a)
    c = ws.shape[0]
    out = o4.transpose(0, 2, 1, 3).reshape(qb.shape[0], n, c * d)
    if squeezed:
        out = out[0]
    return out, _node("dim_attention_multi", out, q=qb, k=kb, v=vb, ws=ws,
                      a=a, fs=fs, p=p, mode=mode, squeezed=squeezed)


def dim_attention_multi_bwd(node, u):
    s = node.saved
    q, k, v, ws, a = s["q"], s["k"], s["v"], s["ws"], s["a"]
    b, n, d = q.shape
    c = ws.shape[0]
    ub = u[None] if s["squeezed"] else u
    u4 = ub.reshape(b, n, c, d).transpose(0, 2, 1, 3)
    dv = np.einsum("bcnj,bcjm->bnm", u4, a)
    da = np.einsum("bcnj,bnm->bcjm", u4, v)
    dws = np.einsum("bjm,bcjm->cjm", s["fs"], da)
    dfs = np.einsum("cjm,bcjm->bjm", ws, da)
    ds = _norm_bwd(dfs, s["mode"], s["p"], n)
    dq = np.einsum("bij,bnj->bni", ds, k)
    dk = np.einsum("bij,bni->bnj", ds, q)
    if s["squeezed"]:
        dq, dk, dv = dq[0], dk[0], dv[0]
    return {"q": dq, "k": dk, "v": dv, "ws": dws}


def masked_attention_fwd(q, k, v, w, scale_positions=False):
    out, node = masked_attention_multi_fwd(q, k, v, w[None],
                                           scale_positions=scale_positions)
    node.op = "masked_attention"
    return out, node


def masked_attention_bwd(node, u):
    grads = masked_attention_multi_bwd(node, u)
    grads["w"] = grads.pop("ws")[0]
    return grads


def masked_attention_multi_fwd(q, k, v, ws, scale_positions=False):
    """Causal dimension-wise attention via the prefix-sum scan, c filters.

    The running state G_i = sum_{n<=i} q_n k_n^T is the cumulative sum of
    per-token outer products; row i of filter f is (W_f * G_i) @ V[i, :].
    """
    (qb, kb, vb), squeezed = _batched(q, k, v)
    b, n, d = qb.shape
    cum = np.cumsum(qb[:, :, :, None] * kb[:, :, None, :], axis=1)
    o4 = np.einsum("cjm,bijm,bim->bcij", ws, cum, vb)
    scales = None
    if scale_positions:
        scales = 1.0 / np.sqrt(np.arange(1, n + 1, dtype=qb.dtype))
        o4 = o4 * scales[None, None, :, None]
    c = ws.shape[0]
    out = o4.transpose(0, 2, 1, 3).reshape(b, n, c * d)
    if squeezed:
        out = out[0]
    return out, _node("masked_attention_multi", out, q=qb, k=kb, v=vb, ws=ws,
                      cum=cum, scales=scales, squeezed=squeezed)


def masked_attention_multi_bwd(node, u):
    s = node.saved
    q, k, v, ws, cum = s["q"], s["k"], s["v"], s["ws"], s["cum"]
    b, n, d = q.shape
    c = ws.shape[0]
    ub = u[None] if s["squeezed"] else u
    u4 = ub.reshape(b, n, c, d).transpose(0, 2, 1, 3)
    if s["scales"] is not None:
        u4 = u4 * s["scales"][None, None, :, None]
    dv = np.einsum("bcij,cjm,bijm->bim", u4, ws, cum)
    dws = np.einsum("bcij,bijm,bim->cjm", u4, cum, v)
    dcum = np.einsum("bcij,cjm,bim->bijm", u4, ws, v)
    # d(outer_n) collects every position i >= n: a reversed cumulative sum.
    douter = np.flip(np.cumsum(np.flip(dcum, axis=1), axis=1), axis=1)
    dq = np.einsum("bnjm,bnm->bnj", douter, k)
    dk = np.einsum("bnjm,bnj->bnm", douter, q)
    if s["squeezed"]:
        dq, dk, dv = dq[0], dk[0], dv[0]
    return {"q": dq, "k": dk, "v": dv, "ws": dws}


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy_masked_fwd(logits, targets, mask):
    """Mean negative log softmax probability of `targets` over masked positions.

    Targets outside the mask may carry ignore markers (e.g. -1); they are
    clamped to 0 internally and contribute nothing.
    """
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("empty mask set: no positions contribute to the loss")
    safe_targets = np.where(mask, np.asarray(targets), 0)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, safe_targets[..., None], axis=-1)[..., 0]
    loss = -float(picked[mask].sum()) / count
    return loss, _node("cross_entropy_masked", loss, logp=logp, targets=safe_targets,
                       mask=mask, count=count)


def cross_entropy_masked_bwd(node, u):
    s = node.saved
    p = np.exp(s["logp"])
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, np.asarray(s["targets"])[..., None], 1.0, axis=-1)
    dlogits = (p - onehot) * s["mask"][..., None] / s["count"]
    return {"logits": dlogits * u}


# ---------------------------------------------------------------------------
# dispatch and the finite-difference oracle
# ---------------------------------------------------------------------------

FORWARDS = {
    "identity": identity_fwd,
    "add": add_fwd,
    "matmul": matmul_fwd,
    "linear": linear_fwd,
    "relu": relu_fwd,
    "embed": embed_fwd,
    "dropout": dropout_fwd,
    "layer_norm": layer_norm_fwd,
    "softmax_rows": softmax_rows_fwd,
    "token_attention": token_attention_fwd,
    "dim_attention": dim_attention_fwd,
    "dim_attention_multi": dim_attention_multi_fwd,
    "masked_attention": masked_attention_fwd,
    "masked_attention_multi": masked_attention_multi_fwd,
    "cross_entropy_masked": cross_entropy_masked_fwd,
}

BACKWARDS = {
    "identity": identity_bwd,
    "add": add_bwd,
    "matmul": matmul_bwd,
    "linear": linear_bwd,
    "relu": relu_bwd,
    "embed": embed_bwd,
    "dropout": dropout_bwd,
    "layer_norm": layer_norm_bwd,
    "softmax_rows": softmax_rows_bwd,
    "token_attention": token_attention_bwd,
    "dim_attention": dim_attention_bwd,
    "dim_attention_multi": dim_attention_multi_bwd,
    "masked_attention": masked_attention_bwd,
    "masked_attention_multi": masked_attention_multi_bwd,
    "cross_entropy_masked": cross_entropy_masked_bwd,
}


def backward(node: TapeNode, upstream) -> dict:
    """Dispatch to the op's backward rule; upstream must match the output."""
    if node.op not in BACKWARDS:
        raise ValueError(f"unknown op id {node.op!r}")
    if tuple(np.shape(upstream)) != node.out_shape:
        raise ValueError(
            f"upstream shape {np.shape(upstream)} does not match output "
            f"{node.out_shape} of op {node.op!r}"
        )
    return BACKWARDS[node.op](node, upstream)


def fd_check(op: str, inputs: dict, h: float = 1e-5, attrs: dict | None = None) -> float:
    """Max relative error of analytic vs central-difference gradients.

    The scalarizing loss is the sum of the op's outputs.  Relative error per
    coordinate is |a - n| / max(|a|, |n|, 1e-8).  Inputs must be float64.
    """
    attrs = attrs or {}
    for name, arr in inputs.items():
        if np.asarray(arr).dtype != np.float64:
            raise ValueError(f"fd_check requires float64 inputs, {name} is "
                             f"{np.asarray(arr).dtype}")
    if op not in FORWARDS:
        raise ValueError(f"unknown op id {op!r}")

    def loss(vals):
        out, _ = FORWARDS[op](**vals, **attrs)
        return float(np.sum(out))

    out, node = FORWARDS[op](**inputs, **attrs)
    upstream = np.ones_like(out) if np.ndim(out) else 1.0
    analytic = backward(node, upstream)

    worst = 0.0
    for name in inputs:
        base = inputs[name]
        a_grad = analytic[name]
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            bumped = dict(inputs)
            plus = base.copy()
            plus[idx] += h
            bumped[name] = plus
            f_plus = loss(bumped)
            minus = base.copy()
            minus[idx] -= h
            bumped[name] = minus
            f_minus = loss(bumped)
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(a_grad[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
