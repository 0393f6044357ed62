"""Adaptive gating over experts, weighted feature fusion, and the linear head.

The gate is a three-layer MLP (L -> h -> h -> n, GELU between layers,
softmax output) fed the normalized pre-patch window. Expert outputs have
different token counts, so each is flattened and linearly projected into a
shared fusion space before the gate-weighted sum; one shared linear head
then maps the fused vector to the K-step forecast.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError
from .numerics import (Tensor, add, gelu, matmul, mul, narrow, reshape,
                       softmax_lastdim, transpose)
from .preprocess import NormStats, denormalize


def init_gate_params(lookback: int, hidden: int, n_experts: int,
                     rng: np.random.Generator) -> dict[str, Tensor]:
    def w(shape, fan_in):
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape),
                      requires_grad=True)

    return {
        "w1": w((lookback, hidden), lookback),
        "b1": Tensor(np.zeros(hidden), requires_grad=True),
        "w2": w((hidden, hidden), hidden),
        "b2": Tensor(np.zeros(hidden), requires_grad=True),
        "w3": w((hidden, n_experts), hidden),
        "b3": Tensor(np.zeros(n_experts), requires_grad=True),
    }


def init_fusion_proj(d_model: int, n_patches: int, fusion_dim: int,
                     rng: np.random.Generator) -> Tensor:
    """Bias-free projection [H_f x (D*N_j)] taking one expert into fusion space."""
    fan_in = d_model * n_patches
    return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fusion_dim, fan_in)),
                  requires_grad=True)


def init_head_params(fusion_dim: int, horizon: int,
                     rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "weight": Tensor(rng.normal(0.0, 1.0 / math.sqrt(fusion_dim),
                                    size=(horizon, fusion_dim)), requires_grad=True),
        "bias": Tensor(np.zeros(horizon), requires_grad=True),
    }


def gate_weights(x_norm: Tensor, gate: dict[str, Tensor]) -> Tensor:
    """Softmax expert weights for a normalized window batch [..., L] -> [..., n]."""
    h1 = gelu(add(matmul(x_norm, gate["w1"]), gate["b1"]))
    h2 = gelu(add(matmul(h1, gate["w2"]), gate["b2"]))
    logits = add(matmul(h2, gate["w3"]), gate["b3"])
    return softmax_lastdim(logits)


def project_expert(features: Tensor, proj: Tensor) -> Tensor:
    """Flatten [..., D, N_j] row-major and project into fusion space [..., H_f]."""
    lead = features.data.shape[:-2]
    flat = reshape(features, lead + (features.data.shape[-2] * features.data.shape[-1],))
    if len(lead) == 0:
        return reshape(matmul(proj, reshape(flat, (flat.data.shape[0], 1))),
                       (proj.data.shape[0],))
    return matmul(flat, transpose(proj))


def fuse(expert_features: list[Tensor], gates: Tensor,
         projections: list[Tensor]) -> Tensor:
    """Gate-weighted sum of projected expert features: sum_j g_j * proj_j(E_j).

    expert_features are [..., D, N_j]; gates [..., n]; output [..., H_f].
    """
    n = len(expert_features)
    if len(projections) != n or gates.data.shape[-1] != n:
        raise ContractError(
            f"fuse arity mismatch: {n} expert outputs, {len(projections)} projections, "
            f"{gates.data.shape[-1]} gate weights"
        )
    fused: Tensor | None = None
    for j in range(n):
        term = project_expert(expert_features[j], projections[j])
        gj = narrow(gates, -1, j, 1)
        if term.data.ndim == 1:
            gj = reshape(gj, ())
        weighted = mul(gj, term)
        fused = weighted if fused is None else add(fused, weighted)
    assert fused is not None
    return fused


def apply_head(fused: Tensor, head: dict[str, Tensor]) -> Tensor:
    """Linear head in normalized space: [..., H_f] -> [..., K]."""
    return add(matmul(fused, transpose(head["weight"])), head["bias"])


def predict_head(fused: Tensor, head: dict[str, Tensor], stats: NormStats) -> np.ndarray:
    """Forecast in original units: run the head, then add the window stats back."""
    return denormalize(apply_head(fused, head).data, stats)
