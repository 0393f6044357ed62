"""Model assembly: parameter registry, freeze masks, and the full forward pass.

A ModelState owns every named tensor (expert stacks, fusion projections,
gate MLP, linear head) plus the bookkeeping needed to batch the
channel-independent pipeline: normalize, patch at every scale, run each
expert, gate, fuse, head. The gate can be replaced by fixed weights for
ablations and one-hot equivalence checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fusion
from .errors import ConfigError
from .experts import ExpertProfile, init_expert_params, is_backbone_param, run_expert
from .numerics import Tensor
from .preprocess import (DEFAULT_NORM_EPS, NormStats, PatchSpec,
                         extract_patch_matrix, normalize_batch)


@dataclass
class ModelConfig:
    """Everything that determines parameter shapes and the forward pass."""

    lookback: int
    horizon: int
    patch: PatchSpec
    experts: list[ExpertProfile]
    gate_hidden: int = 64
    fusion_dim: int = 128
    use_gate: bool = True
    norm_eps: float = DEFAULT_NORM_EPS

    def __post_init__(self) -> None:
        if len(self.experts) == 0:
            raise ConfigError("model needs at least one expert")
        if len(self.experts) != self.patch.num_scales:
            raise ConfigError(
                f"{len(self.experts)} experts but {self.patch.num_scales} scale factors; "
                f"these must match"
            )
        self.patch.geometry(self.lookback)  # validates P_j <= L for every scale


@dataclass
class ModelState:
    """Named parameter tensors plus the structure they belong to."""

    config: ModelConfig
    expert_params: list[dict[str, Tensor]]
    projections: list[Tensor]
    gate: dict[str, Tensor] | None
    head: dict[str, Tensor]
    geometry: list[tuple[int, int, int]] = field(default_factory=list)

    def named_parameters(self) -> dict[str, Tensor]:
        """All tensors under stable dotted names (fixed insertion order)."""
        out: dict[str, Tensor] = {}
        for j, params in enumerate(self.expert_params):
            for local, tensor in params.items():
                out[f"expert{j}.{local}"] = tensor
            out[f"expert{j}.proj"] = self.projections[j]
        if self.gate is not None:
            for local, tensor in self.gate.items():
                out[f"gate.{local}"] = tensor
        for local, tensor in self.head.items():
            out[f"head.{local}"] = tensor
        return out

    def trainable_names(self) -> list[str]:
        """Names the optimizer may touch; frozen backbones are excluded."""
        return [name for name, t in self.named_parameters().items() if t.requires_grad]

    def trainable_parameters(self) -> dict[str, Tensor]:
        params = self.named_parameters()
        return {name: params[name] for name in self.trainable_names()}


def build_model(config: ModelConfig, rng: np.random.Generator) -> ModelState:
    """Seeded construction of every parameter tensor, frozen flags applied."""
    geometry = config.patch.geometry(config.lookback)
    expert_params: list[dict[str, Tensor]] = []
    projections: list[Tensor] = []
    for j, profile in enumerate(config.experts):
        patch_len, _, n_patches = geometry[j]
        params = init_expert_params(profile, patch_len, n_patches, rng)
        if profile.frozen:
            for local, tensor in params.items():
                if is_backbone_param(local):
                    tensor.requires_grad = False
        expert_params.append(params)
        projections.append(fusion.init_fusion_proj(profile.d_model, n_patches,
                                                   config.fusion_dim, rng))
    # always draw the gate parameters so the RNG stream (and therefore the
    # head init) is identical with and without the gate; a gateless model
    # must match its gated twin exactly when the gate is degenerate (n=1)
    gate = fusion.init_gate_params(config.lookback, config.gate_hidden,
                                   len(config.experts), rng)
    if not config.use_gate:
        gate = None
    head = fusion.init_head_params(config.fusion_dim, config.horizon, rng)
    return ModelState(config=config, expert_params=expert_params,
                      projections=projections, gate=gate, head=head,
                      geometry=geometry)


@dataclass
class ForwardResult:
    pred_norm: Tensor          # [B, K], normalized space
    gates: Tensor              # [B, n]
    stats: NormStats           # per-window mean/std, [B, 1] arrays

    def predictions(self) -> np.ndarray:
        """Forecasts in original units (stats added back)."""
        return self.pred_norm.data * (self.stats.std + self.stats.eps) + self.stats.mean


def forward(state: ModelState, inputs: np.ndarray, *, training: bool = False,
            rng: np.random.Generator | None = None,
            gate_override: np.ndarray | None = None) -> ForwardResult:
    """Run the full pipeline on a raw [B, L] window batch.

    ``gate_override`` substitutes fixed mixing weights (shape [n] or [B, n])
    for the gate network: uniform 1/n realizes the no-gate ablation, one-hot
    rows realize single-expert selection.
    """
    cfg = state.config
    if inputs.ndim != 2 or inputs.shape[1] != cfg.lookback:
        raise ConfigError(
            f"expected input batch [B, {cfg.lookback}], got {inputs.shape}"
        )
    batch = inputs.shape[0]
    n = len(cfg.experts)
    x_norm, stats = normalize_batch(inputs, cfg.norm_eps)
    x_norm_t = Tensor(x_norm)

    features = []
    for j, profile in enumerate(cfg.experts):
        patch_len, stride, _ = state.geometry[j]
        patches = Tensor(extract_patch_matrix(x_norm, patch_len, stride))
        features.append(run_expert(patches, state.expert_params[j], profile,
                                   rng=rng, training=training))

    if gate_override is not None:
        override = np.asarray(gate_override, dtype=x_norm.dtype)
        gates = Tensor(np.broadcast_to(override, (batch, n)).copy())
    elif state.gate is None:
        gates = Tensor(np.full((batch, n), 1.0 / n, dtype=x_norm.dtype))
    else:
        gates = fusion.gate_weights(x_norm_t, state.gate)

    fused = fusion.fuse(features, gates, state.projections)
    pred_norm = fusion.apply_head(fused, state.head)
    return ForwardResult(pred_norm=pred_norm, gates=gates, stats=stats)


def naive_last_value(inputs_norm: np.ndarray, horizon: int) -> np.ndarray:
    """Baseline forecast: repeat each window's final (normalized) value K times."""
    return np.repeat(inputs_norm[:, -1:], horizon, axis=1)
