"""Encoder/decoder blocks, losses, Adam, and the training step.

Architecture follows the original post-layer-norm transformer layout; only
the attention sublayer differs between the two families:

    x   = embed(ids) + positions
    for each layer:
        x = LN1(x + dropout(attention(x)))
        x = LN2(x + dropout(ffn(x)))
    logits = x @ embedding^T          (weight-tied head by default)

attention is either multi-head token attention or grouped multi-filter
dimension-wise attention; the decoder uses the causal variants (prefix-sum
streaming for dimension-wise).  Parameters live in a flat name -> array
dict; every parameter is initialized from its own Philox stream keyed by
(seed, crc32(name)) so models that share non-attention parameters get
identical values for them regardless of attention kind.

The backward pass is written out explicitly: forward stores per-layer tape
nodes and `backward_from_cache` walks them in reverse.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import grad
from .tensor import derived_rng, rand_init

_STREAM_DROPOUT = 0xD0


@dataclass
class BlockConfig:
    """Shape of the model; `attention` is "token" or "dim"."""

    vocab_size: int
    d_model: int = 64
    layers: int = 2
    attention: str = "dim"
    heads: int = 4            # token kind
    groups: int = 1           # dim kind
    convs: int = 8            # dim kind: filters per group
    head_dim: int = 0         # dim kind; 0 means d_model // (groups * convs)
    ffn_width: int = 256
    norm_mode: str = "softmax_rows_over_k"
    n_max: int = 100
    precision: str = "f64"
    dropout: float = 0.1
    tie_embeddings: bool = True
    learned_positions: bool = False
    scale_positions: bool = False

    def __post_init__(self):
        if self.attention not in ("token", "dim"):
            raise ValueError(f"attention kind must be 'token' or 'dim', got {self.attention!r}")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.attention == "token":
            if self.d_model % self.heads != 0:
                raise ValueError(
                    f"d_model {self.d_model} not divisible by heads {self.heads}"
                )
        else:
            if self.head_dim == 0:
                gc = self.groups * self.convs
                if self.d_model % gc != 0:
                    raise ValueError(
                        f"d_model {self.d_model} not divisible by groups*convs {gc}; "
                        "set head_dim explicitly"
                    )
                self.head_dim = self.d_model // gc

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    steps: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup: int = 400
    clip: float = 1.0
    eval_interval: int = 100

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        for name in ("batch_size", "steps", "warmup", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.eps <= 0 or self.clip <= 0:
            raise ValueError("lr must be >= 0; eps and clip must be > 0")


def sinusoidal_positions(n_max: int, d_model: int) -> np.ndarray:
    pos = np.arange(n_max, dtype=np.float64)[:, None]
    idx = np.arange(0, d_model, 2, dtype=np.float64)
    div = np.exp(-math.log(10000.0) * idx / d_model)
    pe = np.zeros((n_max, d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d_model // 2])
    return pe


def _param_specs(config: BlockConfig):
    """Ordered (name, shape, init) triples; init is xavier/normal/ones/zeros."""
    dm, ffn = config.d_model, config.ffn_width
    specs = [("embed", (config.vocab_size, dm), "embed")]
    if config.learned_positions:
        specs.append(("pos", (config.n_max, dm), "normal"))
    if not config.tie_embeddings:
        specs.append(("head", (config.vocab_size, dm), "embed"))
    for i in range(config.layers):
        p = f"l{i}."
        if config.attention == "token":
            specs += [
                (p + "attn.wq", (dm, dm), "xavier"),
                (p + "attn.wk", (dm, dm), "xavier"),
                (p + "attn.wv", (dm, dm), "xavier"),
                (p + "attn.wo", (dm, dm), "xavier"),
            ]
        else:
            d = config.head_dim
            for g in range(config.groups):
                specs += [
                    (p + f"attn.wq{g}", (dm, d), "xavier"),
                    (p + f"attn.wk{g}", (dm, d), "xavier"),
                    (p + f"attn.wv{g}", (dm, d), "xavier"),
                    (p + f"attn.filters{g}", (config.convs, d, d), "xavier"),
                ]
            specs.append((p + "attn.wo", (config.groups * config.convs * d, dm), "xavier"))
        specs += [
            (p + "ln1.gamma", (dm,), "ones"),
            (p + "ln1.beta", (dm,), "zeros"),
            (p + "ffn.w1", (dm, ffn), "xavier"),
            (p + "ffn.b1", (ffn,), "zeros"),
            (p + "ffn.w2", (ffn, dm), "xavier"),
            (p + "ffn.b2", (dm,), "zeros"),
            (p + "ln2.gamma", (dm,), "ones"),
            (p + "ln2.beta", (dm,), "zeros"),
        ]
    return specs


def init_params(config: BlockConfig, seed: int) -> dict:
    params = {}
    for name, shape, kind in _param_specs(config):
        rng = derived_rng(seed, zlib.crc32(name.encode()))
        if kind == "xavier":
            if len(shape) == 3:
                arr = np.stack([rand_init(shape[1:], "xavier_uniform", rng)
                                for _ in range(shape[0])])
            else:
                arr = rand_init(shape, "xavier_uniform", rng)
        elif kind == "normal":
            arr = rand_init(shape, "normal", rng, sigma=0.02)
        elif kind == "embed":
            # the forward pass scales embeddings by sqrt(d_model), so rows
            # come out at unit scale next to the O(1) positional encodings
            arr = rand_init(shape, "normal", rng, sigma=1.0 / math.sqrt(config.d_model))
        elif kind == "ones":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = arr.astype(config.dtype)
    return params


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _split_heads(x, h):
    b, n, hd = x.shape
    d = hd // h
    return x.reshape(b, n, h, d).transpose(0, 2, 1, 3).reshape(b * h, n, d)


def _merge_heads(x, b, h):
    bh, n, d = x.shape
    return x.reshape(b, h, n, d).transpose(0, 2, 1, 3).reshape(b, n, h * d)


def forward(params, ids, config: BlockConfig, decoder=False, train=False,
            drop_rng=None, pad=None, zero_attention=False):
    """Run the model; returns (logits, cache) with cache holding the tape.

    ids is an int array [N] or [B, N]; pad is an optional bool array of the
    same shape marking padding positions (excluded from attention).
    """
    ids = np.asarray(ids)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
        if pad is not None:
            pad = np.asarray(pad)[None]
    b, n = ids.shape
    if n > config.n_max:
        raise ValueError(f"sequence length {n} exceeds n_max {config.n_max}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError(
            f"token id out of range [0, {config.vocab_size}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    use_dropout = train and config.dropout > 0.0
    if use_dropout and drop_rng is None:
        raise ValueError("training with dropout requires a dropout rng")

    cache = {"config": config, "ids": ids, "single": single, "pad": pad,
             "zero_attention": zero_attention, "layers": []}

    emb, emb_node = grad.embed_fwd(params["embed"], ids)
    emb_scale = math.sqrt(config.d_model)
    if config.learned_positions:
        pos = params["pos"][:n]
    else:
        pos = sinusoidal_positions(config.n_max, config.d_model)[:n].astype(config.dtype)
    x = emb * emb_scale + pos
    cache["embed_node"] = emb_node
    cache["emb_scale"] = emb_scale
    cache["n"] = n

    keep = None
    if pad is not None:
        keep = (~np.asarray(pad, dtype=bool)).astype(x.dtype)

    for i in range(config.layers):
        p = f"l{i}."
        lc = {"prefix": p}
        if zero_attention:
            a = np.zeros_like(x)
            lc["attn"] = None
        elif config.attention == "token":
            q, lc["nq"] = grad.linear_fwd(x, params[p + "attn.wq"])
            k, lc["nk"] = grad.linear_fwd(x, params[p + "attn.wk"])
            v, lc["nv"] = grad.linear_fwd(x, params[p + "attn.wv"])
            h = config.heads
            qh, kh, vh = _split_heads(q, h), _split_heads(k, h), _split_heads(v, h)
            key_pad = None if pad is None else np.repeat(pad, h, axis=0)
            o, lc["nattn"] = grad.token_attention_fwd(qh, kh, vh, causal=decoder,
                                                      key_pad=key_pad)
            merged = _merge_heads(o, b, h)
            a, lc["no"] = grad.linear_fwd(merged, params[p + "attn.wo"])
            lc["attn"] = "token"
        else:
            outs, groups = [], []
            for g in range(config.groups):
                gc = {}
                q, gc["nq"] = grad.linear_fwd(x, params[p + f"attn.wq{g}"])
                k, gc["nk"] = grad.linear_fwd(x, params[p + f"attn.wk{g}"])
                v, gc["nv"] = grad.linear_fwd(x, params[p + f"attn.wv{g}"])
                if keep is not None:
                    q = q * keep[:, :, None]
                    k = k * keep[:, :, None]
                ws = params[p + f"attn.filters{g}"]
                if decoder:
                    o, gc["nattn"] = grad.masked_attention_multi_fwd(
                        q, k, v, ws, scale_positions=config.scale_positions)
                else:
                    o, gc["nattn"] = grad.dim_attention_multi_fwd(
                        q, k, v, ws, mode=config.norm_mode)
                outs.append(o)
                groups.append(gc)
            concat = np.concatenate(outs, axis=2) if len(outs) > 1 else outs[0]
            a, lc["no"] = grad.linear_fwd(concat, params[p + "attn.wo"])
            lc["attn"] = "dim"
            lc["groups"] = groups
        if use_dropout and not zero_attention:
            a, lc["ndrop1"] = grad.dropout_fwd(a, config.dropout, drop_rng)
        x1, lc["nln1"] = grad.layer_norm_fwd(x + a, params[p + "ln1.gamma"],
                                             params[p + "ln1.beta"])

        h1, lc["nff1"] = grad.linear_fwd(x1, params[p + "ffn.w1"], params[p + "ffn.b1"])
        r, lc["nrelu"] = grad.relu_fwd(h1)
        f, lc["nff2"] = grad.linear_fwd(r, params[p + "ffn.w2"], params[p + "ffn.b2"])
        if use_dropout:
            f, lc["ndrop2"] = grad.dropout_fwd(f, config.dropout, drop_rng)
        x, lc["nln2"] = grad.layer_norm_fwd(x1 + f, params[p + "ln2.gamma"],
                                            params[p + "ln2.beta"])
        cache["layers"].append(lc)

    head = params["embed"] if config.tie_embeddings else params["head"]
    logits = np.einsum("bnd,vd->bnv", x, head)
    cache["x_final"] = x
    cache["head"] = head
    if single:
        return logits[0], cache
    return logits, cache


def encoder_forward(ids, params, config: BlockConfig):
    """Logits for a sequence (or batch) with bidirectional attention."""
    logits, _ = forward(params, ids, config, decoder=False)
    return logits


def decoder_forward(ids, params, config: BlockConfig):
    """Causal logits: row i depends only on tokens at positions <= i."""
    logits, _ = forward(params, ids, config, decoder=True)
    return logits


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward_from_cache(cache, dlogits) -> dict:
    """Accumulate parameter gradients for a forward pass, given d(loss)/d(logits)."""
    config = cache["config"]
    if cache["single"]:
        dlogits = dlogits[None]
    grads = {}

    def acc(name, g):
        if name in grads:
            grads[name] += g
        else:
            grads[name] = g

    head = cache["head"]
    dx = np.einsum("bnv,vd->bnd", dlogits, head)
    dhead = np.einsum("bnv,bnd->vd", dlogits, cache["x_final"])
    acc("embed" if config.tie_embeddings else "head", dhead)

    for lc in reversed(cache["layers"]):
        p = lc["prefix"]
        g2 = grad.layer_norm_bwd(lc["nln2"], dx)
        acc(p + "ln2.gamma", g2["gamma"])
        acc(p + "ln2.beta", g2["beta"])
        dres2 = g2["x"]  # gradient of x1 + f
        df = dres2
        if "ndrop2" in lc:
            df = grad.dropout_bwd(lc["ndrop2"], df)["x"]
        gf2 = grad.linear_bwd(lc["nff2"], df)
        acc(p + "ffn.w2", gf2["w"])
        acc(p + "ffn.b2", gf2["b"])
        dr = grad.relu_bwd(lc["nrelu"], gf2["x"])["x"]
        gf1 = grad.linear_bwd(lc["nff1"], dr)
        acc(p + "ffn.w1", gf1["w"])
        acc(p + "ffn.b1", gf1["b"])
        dx1 = dres2 + gf1["x"]

        g1 = grad.layer_norm_bwd(lc["nln1"], dx1)
        acc(p + "ln1.gamma", g1["gamma"])
        acc(p + "ln1.beta", g1["beta"])
        dres1 = g1["x"]  # gradient of x + a
        dx = dres1.copy()
        if lc["attn"] is None:
            continue
        da = dres1
        if "ndrop1" in lc:
            da = grad.dropout_bwd(lc["ndrop1"], da)["x"]
        go = grad.linear_bwd(lc["no"], da)
        acc(p + "attn.wo", go["w"])
        dconcat = go["x"]
        if lc["attn"] == "token":
            b = cache["ids"].shape[0]
            h = config.heads
            dmerged = _split_heads(dconcat, h)
            ga = grad.token_attention_bwd(lc["nattn"], dmerged)
            dq = _merge_heads(ga["q"], b, h)
            dk = _merge_heads(ga["k"], b, h)
            dv = _merge_heads(ga["v"], b, h)
            for node_key, wname, d in (("nq", "wq", dq), ("nk", "wk", dk), ("nv", "wv", dv)):
                gl = grad.linear_bwd(lc[node_key], d)
                acc(p + "attn." + wname, gl["w"])
                dx += gl["x"]
        else:
            keep = cache["pad"]
            keep = None if keep is None else (~np.asarray(keep, dtype=bool))
            width = config.convs * config.head_dim
            for g, gc in enumerate(lc["groups"]):
                du = dconcat[:, :, g * width:(g + 1) * width]
                ga = grad.masked_attention_multi_bwd(gc["nattn"], du) \
                    if gc["nattn"].op == "masked_attention_multi" \
                    else grad.dim_attention_multi_bwd(gc["nattn"], du)
                acc(p + f"attn.filters{g}", ga["ws"])
                dq, dk, dv = ga["q"], ga["k"], ga["v"]
                if keep is not None:
                    dq = dq * keep[:, :, None]
                    dk = dk * keep[:, :, None]
                for node_key, wname, d in (("nq", f"wq{g}", dq), ("nk", f"wk{g}", dk),
                                           ("nv", f"wv{g}", dv)):
                    gl = grad.linear_bwd(gc[node_key], d)
                    acc(p + "attn." + wname, gl["w"])
                    dx += gl["x"]

    if config.learned_positions:
        dpos = np.zeros((config.n_max, config.d_model), dtype=dx.dtype)
        dpos[: cache["n"]] = dx.sum(axis=0)
        acc("pos", dpos)
    ge = grad.embed_bwd(cache["embed_node"], dx * cache["emb_scale"])
    acc("embed", ge["table"])
    return grads


def mlm_loss(logits, targets, mask_positions) -> float:
    """Mean NLL of the original tokens over masked positions only."""
    loss, _ = grad.cross_entropy_masked_fwd(logits, targets, mask_positions)
    return loss


def loss_and_grads(params, ids, targets, loss_mask, config: BlockConfig,
                   decoder=False, train=False, drop_rng=None, pad=None):
    logits, cache = forward(params, ids, config, decoder=decoder, train=train,
                            drop_rng=drop_rng, pad=pad)
    loss, loss_node = grad.cross_entropy_masked_fwd(logits, targets, loss_mask)
    dlogits = grad.cross_entropy_masked_bwd(loss_node, 1.0)["logits"]
    return loss, backward_from_cache(cache, dlogits)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def lr_schedule(base_lr: float, step: int, warmup: int) -> float:
    """Linear warmup to base_lr, then inverse-sqrt decay (step counts from 1)."""
    return base_lr * min(step / warmup, math.sqrt(warmup / step))


def clip_global_norm(grads: dict, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_update(params: dict, grads: dict, state: AdamState, tc: TrainConfig):
    state.t += 1
    lr = lr_schedule(tc.lr, state.t, tc.warmup)
    bc1 = 1.0 - tc.beta1 ** state.t
    bc2 = 1.0 - tc.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= tc.beta1
        m += (1.0 - tc.beta1) * g
        v *= tc.beta2
        v += (1.0 - tc.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + tc.eps)


def train_step(batch, params, state: AdamState, bc: BlockConfig, tc: TrainConfig,
               step: int, decoder=False) -> float:
    """One optimization step; deterministic given (seed, step).  Returns loss."""
    ids, targets, loss_mask, pad = batch
    drop_rng = derived_rng(tc.seed, _STREAM_DROPOUT, step) if bc.dropout > 0 else None
    loss, grads = loss_and_grads(params, ids, targets, loss_mask, bc,
                                 decoder=decoder, train=True, drop_rng=drop_rng,
                                 pad=pad)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite training loss {loss!r} at step {step}")
    clip_global_norm(grads, tc.clip)
    adam_update(params, grads, state, tc)
    return loss
