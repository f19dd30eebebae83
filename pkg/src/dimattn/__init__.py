"""Dimension-wise attention with linear sequence cost.

Token-wise scaled dot-product attention relates token pairs and costs
O(N^2 d); scoring pairs of embedding dimensions instead (S = Q^T K) costs
O(N d^2) and, combined with a learned per-dimension filter over the
resulting third-order tensor, yields a drop-in attention sublayer.  The
package ships the encoder and causal forms (each with a literal oracle and
a fast factored/streaming path), analytic gradients for training, FLOPs
accounting, scaling benchmarks, and a small masked/causal LM harness.
"""

from .attention import (
    MultiConvParams,
    MultiHeadParams,
    NORM_MODES,
    conv_extract,
    covariance_identity_check,
    dim_attention_factored,
    dim_attention_materialized,
    dim_score,
    explicit_rep,
    implicit_rep,
    kr_tensor,
    multi_conv_block,
    multi_head_baseline,
    normalize_scores,
    token_attention,
)
from .analysis import (
    FlopsReport,
    SweepResult,
    bench_sweep,
    flops_dim_attention,
    flops_masked,
    flops_token_attention,
)
from .masked import (
    causal_mask,
    masked_kr_tensor,
    masked_output,
    masked_score_naive,
    masked_score_streaming,
)
from .model import (
    AdamState,
    BlockConfig,
    TrainConfig,
    decoder_forward,
    encoder_forward,
    init_params,
    mlm_loss,
    train_step,
)
from .tensor import cum_outer, make_rng, matmul, rand_init, softmax_axis

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BlockConfig", "FlopsReport", "MultiConvParams",
    "MultiHeadParams", "NORM_MODES", "SweepResult", "TrainConfig",
    "bench_sweep", "causal_mask", "conv_extract", "covariance_identity_check",
    "cum_outer", "decoder_forward", "dim_attention_factored",
    "dim_attention_materialized", "dim_score", "encoder_forward",
    "explicit_rep", "flops_dim_attention", "flops_masked",
    "flops_token_attention", "implicit_rep", "init_params", "kr_tensor",
    "make_rng", "masked_kr_tensor", "masked_output", "masked_score_naive",
    "masked_score_streaming", "matmul", "mlm_loss", "multi_conv_block",
    "multi_head_baseline", "normalize_scores", "rand_init", "softmax_axis",
    "token_attention", "train_step",
]
