"""Transformer-encoder experts over per-scale patch branches.

Two profiles share one architecture: ``gpm_frozen`` keeps its attention/FFN
backbone fixed (a stand-in for a pretrained language-model backbone, with an
import hook for real weights) and trains only embeddings, positional
encodings, layer norms, and its fusion projection; ``dsm_trainable`` trains
everything. Blocks are pre-norm residual GPT-2 style: x + Attn(LN(x)), then
+ FFN(LN(.)), with a final layer norm after the stack.

Feature matrices at the expert surface follow the [D x N] column-token
convention; attention internals run token-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import (Tensor, add, concat, gelu, layer_norm, matmul, mul,
                       softmax_lastdim, transpose)

LN_EPS = 1e-5


@dataclass
class ExpertProfile:
    """Architecture of one expert and which patch scale it consumes."""

    kind: str = "dsm_trainable"
    scale_index: int = 0
    depth: int = 2
    d_model: int = 64
    heads: int = 4
    d_k: int = 0          # 0 means d_model // heads
    ffn_mult: int = 4
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in ("gpm_frozen", "dsm_trainable"):
            raise ConfigError(f"unknown expert kind {self.kind!r}")
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} must be divisible by heads {self.heads}"
            )
        if self.d_k == 0:
            self.d_k = self.d_model // self.heads
        if self.d_k < 1:
            raise ConfigError(f"d_k must be >= 1, got {self.d_k}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def frozen(self) -> bool:
        return self.kind == "gpm_frozen"


def gpm_profile(scale_index: int = 0, d_model: int = 64, depth: int = 3,
                heads: int = 4, dropout: float = 0.1) -> ExpertProfile:
    return ExpertProfile(kind="gpm_frozen", scale_index=scale_index, depth=depth,
                         d_model=d_model, heads=heads, dropout=dropout)


def dsm_profile(scale_index: int = 0, d_model: int = 64, depth: int = 2,
                heads: int = 4, dropout: float = 0.1) -> ExpertProfile:
    return ExpertProfile(kind="dsm_trainable", scale_index=scale_index, depth=depth,
                         d_model=d_model, heads=heads, dropout=dropout)


def is_backbone_param(local_name: str) -> bool:
    """True for attention/FFN weights, the set a frozen profile excludes from
    the optimizer. Embeddings, positional encodings, and layer norms stay
    trainable."""
    return ".attn." in local_name or ".ffn." in local_name


def init_expert_params(profile: ExpertProfile, patch_len: int, n_patches: int,
                       rng: np.random.Generator) -> dict[str, Tensor]:
    """Seeded parameter tensors for one expert, keyed by local name.

    Weight matrices use 1/sqrt(fan_in) normal init, biases start at zero,
    layer-norm gains at one. Consumption order is fixed so identical seeds
    give identical models.
    """
    d, dk, dh = profile.d_model, profile.d_k, profile.d_head

    def w(shape, fan_in):
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape),
                      requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape), requires_grad=True)

    params: dict[str, Tensor] = {
        "w_p": w((d, patch_len), patch_len),
        "w_pos": Tensor(rng.normal(0.0, 0.02, size=(d, n_patches)), requires_grad=True),
    }
    for layer in range(profile.depth):
        prefix = f"block{layer}"
        params[f"{prefix}.ln1.gamma"] = ones((d,))
        params[f"{prefix}.ln1.beta"] = zeros((d,))
        for h in range(profile.heads):
            params[f"{prefix}.attn.head{h}.wq"] = w((d, dk), d)
            params[f"{prefix}.attn.head{h}.wk"] = w((d, dk), d)
            params[f"{prefix}.attn.head{h}.wv"] = w((d, dh), d)
        params[f"{prefix}.attn.wo"] = w((d, d), d)
        params[f"{prefix}.ln2.gamma"] = ones((d,))
        params[f"{prefix}.ln2.beta"] = zeros((d,))
        hidden = profile.ffn_mult * d
        params[f"{prefix}.ffn.w1"] = w((d, hidden), d)
        params[f"{prefix}.ffn.b1"] = zeros((hidden,))
        params[f"{prefix}.ffn.w2"] = w((hidden, d), hidden)
        params[f"{prefix}.ffn.b2"] = zeros((d,))
    params["ln_f.gamma"] = ones((d,))
    params["ln_f.beta"] = zeros((d,))
    return params


def dropout_tensor(x: Tensor, p: float, rng: np.random.Generator | None,
                   training: bool) -> Tensor:
    """Inverted dropout; identity at eval time or p == 0."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs a random generator")
    mask = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, Tensor(mask))


def embed_patches(patches: Tensor, w_p: Tensor, w_pos: Tensor) -> Tensor:
    """Project patches into latent space and add positions: W_p @ patches + W_pos.

    patches [..., P, N], W_p [D, P], W_pos [D, N] -> [..., D, N].
    """
    if w_p.data.shape[-1] != patches.data.shape[-2]:
        raise ConfigError(
            f"patch embedding shape mismatch: W_p {w_p.data.shape} vs patches "
            f"{patches.data.shape}"
        )
    if w_pos.data.shape[-1] != patches.data.shape[-1] or w_pos.data.shape[-2] != w_p.data.shape[-2]:
        raise ConfigError(
            f"positional encoding shape mismatch: W_pos {w_pos.data.shape} vs "
            f"W_p {w_p.data.shape} and patches {patches.data.shape}"
        )
    return add(matmul(w_p, patches), w_pos)


def _attention_token_major(xt: Tensor, head_weights: list[tuple[Tensor, Tensor, Tensor]],
                           wo: Tensor, dropout: float = 0.0,
                           rng: np.random.Generator | None = None,
                           training: bool = False) -> Tensor:
    """Scaled dot-product attention over [..., N, D] tokens.

    Per head: Q = x Wq, K = x Wk, V = x Wv, out = Softmax(QKᵀ/sqrt(d_k)) V;
    heads are concatenated and mixed by the output projection.
    """
    outs = []
    for wq, wk, wv in head_weights:
        q = matmul(xt, wq)
        k = matmul(xt, wk)
        v = matmul(xt, wv)
        scale = 1.0 / math.sqrt(wq.data.shape[-1])
        scores = mul(matmul(q, transpose(k)), scale)
        attn = softmax_lastdim(scores)
        attn = dropout_tensor(attn, dropout, rng, training)
        outs.append(matmul(attn, v))
    merged = outs[0] if len(outs) == 1 else concat(outs, axis=-1)
    return matmul(merged, wo)


def multi_head_attention(x: Tensor, head_weights: list[tuple[Tensor, Tensor, Tensor]],
                         wo: Tensor, dropout: float = 0.0,
                         rng: np.random.Generator | None = None,
                         training: bool = False) -> Tensor:
    """Multi-head attention over a [..., D, N] feature matrix."""
    xt = transpose(x)
    out = _attention_token_major(xt, head_weights, wo, dropout, rng, training)
    return transpose(out)


def _block_head_weights(params: dict[str, Tensor], layer: int,
                        heads: int) -> list[tuple[Tensor, Tensor, Tensor]]:
    prefix = f"block{layer}.attn"
    return [
        (params[f"{prefix}.head{h}.wq"],
         params[f"{prefix}.head{h}.wk"],
         params[f"{prefix}.head{h}.wv"])
        for h in range(heads)
    ]


def encoder_block(x: Tensor, params: dict[str, Tensor], layer: int,
                  profile: ExpertProfile, rng: np.random.Generator | None = None,
                  training: bool = False) -> Tensor:
    """Pre-norm residual block on [..., D, N]: x + Attn(LN(x)), then + FFN(LN(.))."""
    prefix = f"block{layer}"
    xt = transpose(x)
    normed = layer_norm(xt, params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"], LN_EPS)
    attn_out = _attention_token_major(
        normed, _block_head_weights(params, layer, profile.heads),
        params[f"{prefix}.attn.wo"], profile.dropout, rng, training,
    )
    a = add(xt, attn_out)
    normed2 = layer_norm(a, params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"], LN_EPS)
    hidden = gelu(add(matmul(normed2, params[f"{prefix}.ffn.w1"]), params[f"{prefix}.ffn.b1"]))
    ffn_out = add(matmul(hidden, params[f"{prefix}.ffn.w2"]), params[f"{prefix}.ffn.b2"])
    ffn_out = dropout_tensor(ffn_out, profile.dropout, rng, training)
    return transpose(add(a, ffn_out))


def run_expert(patches: Tensor, params: dict[str, Tensor], profile: ExpertProfile,
               rng: np.random.Generator | None = None,
               training: bool = False) -> Tensor:
    """Full expert forward: embed, depth x encoder block, final layer norm.

    patches [..., P_j, N_j] -> features [..., D, N_j].
    """
    x = embed_patches(patches, params["w_p"], params["w_pos"])
    for layer in range(profile.depth):
        x = encoder_block(x, params, layer, profile, rng, training)
    xt = layer_norm(transpose(x), params["ln_f.gamma"], params["ln_f.beta"], LN_EPS)
    return transpose(xt)
