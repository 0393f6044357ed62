"""MSE objective, the epoch loop, freeze-aware Adam updates, early stopping.

Channels are folded into the batch dimension (the per-channel loop with
shared weights, batched), so the loss mean over batch entries realizes the
average over the M series. Loss and validation metrics live in normalized
space. Training is single-threaded and bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .checkpoint import Checkpoint, restore_tensors
from .data import RawDataset, SplitSpec, gather_batch, make_windows, split_origins
from .errors import CheckpointShapeError, ConfigError, NumericError, ShapeError
from .experts import ExpertProfile
from .model import ModelConfig, ModelState, build_model, forward
from .numerics import Tensor, no_grad, tmean
from .preprocess import PatchSpec, normalize_batch


@dataclass
class TrainConfig:
    """Everything a training run needs; the model-defining subset is echoed
    into checkpoints and must match when a checkpoint is reloaded."""

    lookback: int
    horizon: int
    patch: PatchSpec
    experts: list[ExpertProfile]
    gate_hidden: int = 64
    fusion_dim: int = 128
    use_gate: bool = True
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 10
    patience: int = 3
    min_delta: float = 0.0
    seed: int = 0
    stride: int = 1
    max_steps: int = 0            # 0 = no cap
    grad_clip: float = 0.0        # 0 = off
    dtype: str = "float64"
    split: SplitSpec = field(default_factory=SplitSpec)

    def __post_init__(self) -> None:
        for name in ("lookback", "horizon", "batch", "epochs", "stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train config {name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.patience < 0 or self.min_delta < 0:
            raise ConfigError("patience and min_delta must be nonnegative")
        if len(self.experts) != self.patch.num_scales:
            raise ConfigError(
                f"{len(self.experts)} experts but {self.patch.num_scales} scale factors"
            )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            lookback=self.lookback, horizon=self.horizon, patch=self.patch,
            experts=self.experts, gate_hidden=self.gate_hidden,
            fusion_dim=self.fusion_dim, use_gate=self.use_gate,
        )

    def to_flat(self) -> dict[str, str]:
        """Flat key=value echo of this config (checkpoint metadata)."""
        out = {
            "train.lookback": str(self.lookback),
            "train.horizon": str(self.horizon),
            "train.lr": repr(self.lr),
            "train.batch": str(self.batch),
            "train.epochs": str(self.epochs),
            "train.patience": str(self.patience),
            "train.min_delta": repr(self.min_delta),
            "train.seed": str(self.seed),
            "train.stride": str(self.stride),
            "train.max_steps": str(self.max_steps),
            "train.grad_clip": repr(self.grad_clip),
            "train.dtype": self.dtype,
            "patch.len": str(self.patch.patch_len),
            "patch.stride": str(self.patch.stride),
            "gate.hidden": str(self.gate_hidden),
            "gate.enabled": "true" if self.use_gate else "false",
            "fusion.dim": str(self.fusion_dim),
            "split.mode": self.split.mode,
            "split.ratios": ",".join(repr(r) for r in self.split.ratios),
            "split.borders": ";".join(f"{a}:{b}" for a, b in self.split.borders),
        }
        for j, (profile, factor) in enumerate(zip(self.experts, self.patch.scale_factors)):
            out[f"expert.{j}.kind"] = profile.kind
            out[f"expert.{j}.scale"] = repr(float(factor))
            out[f"expert.{j}.depth"] = str(profile.depth)
            out[f"expert.{j}.d_model"] = str(profile.d_model)
            out[f"expert.{j}.heads"] = str(profile.heads)
            out[f"expert.{j}.d_k"] = str(profile.d_k)
            out[f"expert.{j}.ffn_mult"] = str(profile.ffn_mult)
            out[f"expert.{j}.dropout"] = repr(profile.dropout)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "TrainConfig":
        """Rebuild a TrainConfig from a checkpoint's config echo."""
        try:
            indices = sorted({
                int(key.split(".")[1]) for key in flat if key.startswith("expert.")
            })
            experts = []
            factors = []
            for j in indices:
                experts.append(ExpertProfile(
                    kind=flat[f"expert.{j}.kind"],
                    scale_index=j,
                    depth=int(flat[f"expert.{j}.depth"]),
                    d_model=int(flat[f"expert.{j}.d_model"]),
                    heads=int(flat[f"expert.{j}.heads"]),
                    d_k=int(flat[f"expert.{j}.d_k"]),
                    ffn_mult=int(flat[f"expert.{j}.ffn_mult"]),
                    dropout=float(flat[f"expert.{j}.dropout"]),
                ))
                factors.append(float(flat[f"expert.{j}.scale"]))
            borders = tuple(
                tuple(int(x) for x in pair.split(":"))
                for pair in flat.get("split.borders", "").split(";") if pair
            )
            split = SplitSpec(
                mode=flat.get("split.mode", "ratio"),
                ratios=tuple(float(r) for r in flat.get("split.ratios", "0.7,0.1,0.2").split(",")),
                borders=borders,  # type: ignore[arg-type]
            )
            return cls(
                lookback=int(flat["train.lookback"]),
                horizon=int(flat["train.horizon"]),
                patch=PatchSpec(int(flat["patch.len"]), int(flat["patch.stride"]), factors),
                experts=experts,
                gate_hidden=int(flat["gate.hidden"]),
                fusion_dim=int(flat["fusion.dim"]),
                use_gate=flat.get("gate.enabled", "true") == "true",
                lr=float(flat.get("train.lr", "1e-3")),
                batch=int(flat.get("train.batch", "32")),
                epochs=int(flat.get("train.epochs", "10")),
                patience=int(flat.get("train.patience", "3")),
                min_delta=float(flat.get("train.min_delta", "0.0")),
                seed=int(flat.get("train.seed", "0")),
                stride=int(flat.get("train.stride", "1")),
                max_steps=int(flat.get("train.max_steps", "0")),
                grad_clip=float(flat.get("train.grad_clip", "0.0")),
                dtype=flat.get("train.dtype", "float64"),
                split=split,
            )
        except (KeyError, ValueError, IndexError) as exc:
            raise ConfigError(f"cannot rebuild train config from checkpoint echo: {exc}") from None


MODEL_KEY_PREFIXES = ("train.lookback", "train.horizon", "train.dtype",
                      "patch.", "expert.", "gate.", "fusion.")


def assert_config_compatible(ckpt_config: dict[str, str], config: TrainConfig) -> None:
    """Loudly reject a checkpoint whose model-defining keys differ from ours."""
    # normalize both sides through TrainConfig so extra echo keys are ignored
    theirs = TrainConfig.from_flat(ckpt_config).to_flat()
    ours = config.to_flat()
    mismatched = []
    keys = {k for k in set(theirs) | set(ours) if k.startswith(MODEL_KEY_PREFIXES)}
    for key in sorted(keys):
        if theirs.get(key) != ours.get(key):
            mismatched.append(
                f"{key}: checkpoint={theirs.get(key)!r} config={ours.get(key)!r}"
            )
    if mismatched:
        raise ConfigError("checkpoint/config mismatch: " + "; ".join(mismatched))


def mse_loss(preds: Tensor, targets, channel_count: int | None = None) -> Tensor:
    """Mean over batch entries and horizon steps of the squared error.

    Channels are already folded into the batch, so this mean realizes the
    average over the M series; ``channel_count`` is accepted for the record.
    """
    targets = targets if isinstance(targets, Tensor) else Tensor(targets)
    if preds.data.shape != targets.data.shape:
        raise ShapeError(
            f"prediction shape {preds.data.shape} does not match target shape "
            f"{targets.data.shape}"
        )
    if channel_count is not None and channel_count < 1:
        raise ConfigError(f"channel count must be positive, got {channel_count}")
    diff = preds - targets
    return tmean(diff * diff)


@dataclass
class EpochStats:
    epoch: int
    steps: int
    train_loss: float
    val_mse: float
    val_mae: float
    seconds: float


def _train_index(dataset: RawDataset, origins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All (channel, origin) pairs for a split, channels folded in."""
    channels = np.repeat(np.arange(dataset.channels, dtype=np.int64), origins.size)
    tiled = np.tile(origins, dataset.channels)
    return channels, tiled


def evaluate_mse_mae(state: ModelState, dataset: RawDataset,
                     channels: np.ndarray, origins: np.ndarray,
                     lookback: int, horizon: int, batch: int = 256) -> tuple[float, float]:
    """Normalized-space MSE/MAE over the given windows, batched, no graph."""
    total_sq = 0.0
    total_abs = 0.0
    count = 0
    with no_grad():
        for start in range(0, channels.size, batch):
            ch = channels[start:start + batch]
            og = origins[start:start + batch]
            inputs, targets = gather_batch(dataset, ch, og, lookback, horizon)
            result = forward(state, inputs, training=False)
            _, stats = normalize_batch(inputs, state.config.norm_eps)
            targets_norm = (targets - stats.mean) / (stats.std + stats.eps)
            err = result.pred_norm.data - targets_norm
            total_sq += float((err * err).sum())
            total_abs += float(np.abs(err).sum())
            count += err.size
    return total_sq / count, total_abs / count


def _snapshot(state: ModelState, opt: numerics.AdamState) -> dict:
    params = state.named_parameters()
    return {
        "tensors": {name: t.data.copy() for name, t in params.items()},
        "m": {name: arr.copy() for name, arr in opt.m.items()},
        "v": {name: arr.copy() for name, arr in opt.v.items()},
        "step": opt.step_count,
    }


def apply_warm_start(state: ModelState, warm_start: dict[str, np.ndarray]) -> None:
    """Copy imported tensors (e.g. a pretrained expert backbone) into the model."""
    params = state.named_parameters()
    for name, values in warm_start.items():
        if name not in params:
            raise ConfigError(f"warm-start tensor {name!r} does not exist in the model")
        if params[name].data.shape != values.shape:
            raise CheckpointShapeError(
                f"warm-start tensor {name!r} has shape {values.shape}, model expects "
                f"{params[name].data.shape}"
            )
        params[name].data = values.astype(params[name].data.dtype)


def train(config: TrainConfig, dataset: RawDataset,
          config_echo: dict[str, str] | None = None,
          warm_start: dict[str, np.ndarray] | None = None,
          log_fn=None) -> tuple[Checkpoint, list[EpochStats], ModelState]:
    """Run the full training loop and return the best-validation checkpoint.

    Per epoch: seeded shuffle of the folded (channel, origin) index, batched
    forward/backward, Adam on the trainable set only, then validation MSE.
    Stops early after ``patience`` consecutive non-improving epochs. NaN loss
    aborts with epoch/batch diagnostics.
    """
    numerics.set_default_dtype(config.dtype)
    dataset.ensure_fits(config.lookback, config.horizon)
    ranges = config.split.resolve(dataset.length)
    # raises the explicit empty-split error before any work happens
    make_windows(dataset, config.split, config.lookback, config.horizon, config.stride)

    seq = np.random.SeedSequence(config.seed)
    init_rng, shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    train_origins = split_origins(ranges[0], config.lookback, config.horizon, config.stride)
    val_origins = split_origins(ranges[1], config.lookback, config.horizon, config.stride)
    train_ch, train_og = _train_index(dataset, train_origins)
    val_ch, val_og = _train_index(dataset, val_origins)

    state = build_model(config.model_config(), init_rng)
    if warm_start:
        apply_warm_start(state, warm_start)
    trainable = state.trainable_parameters()
    opt = numerics.adam_init(trainable, lr=config.lr)

    best_val = float("inf")
    best_epoch = -1
    best_snapshot = None
    bad_epochs = 0
    total_steps = 0
    history: list[EpochStats] = []
    stop = False

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(train_ch.size)
        loss_sum = 0.0
        loss_batches = 0
        for start in range(0, perm.size, config.batch):
            take = perm[start:start + config.batch]
            inputs, targets = gather_batch(dataset, train_ch[take], train_og[take],
                                           config.lookback, config.horizon)
            _, stats = normalize_batch(inputs, state.config.norm_eps)
            targets_norm = (targets - stats.mean) / (stats.std + stats.eps)
            result = forward(state, inputs, training=True, rng=dropout_rng)
            loss = mse_loss(result.pred_norm, targets_norm, dataset.channels)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch {start // config.batch}"
                )
            for t in trainable.values():
                t.zero_grad()
            loss.backward()
            grads = {name: t.grad if t.grad is not None else np.zeros_like(t.data)
                     for name, t in trainable.items()}
            if config.grad_clip > 0:
                norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
                if norm > config.grad_clip:
                    scale = config.grad_clip / norm
                    grads = {name: g * scale for name, g in grads.items()}
            numerics.adam_step(trainable, grads, opt)
            loss_sum += loss_value
            loss_batches += 1
            total_steps += 1
            if config.max_steps and total_steps >= config.max_steps:
                stop = True
                break

        val_mse, val_mae = evaluate_mse_mae(state, dataset, val_ch, val_og,
                                            config.lookback, config.horizon)
        stats_row = EpochStats(
            epoch=epoch, steps=total_steps,
            train_loss=loss_sum / max(1, loss_batches),
            val_mse=val_mse, val_mae=val_mae,
            seconds=time.perf_counter() - t0,
        )
        history.append(stats_row)
        if log_fn is not None:
            log_fn(stats_row)

        if val_mse < best_val - config.min_delta:
            best_val = val_mse
            best_epoch = epoch
            best_snapshot = _snapshot(state, opt)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stop = True
        if stop:
            break

    if best_snapshot is None:
        best_snapshot = _snapshot(state, opt)
        best_epoch = history[-1].epoch if history else 0
        best_val = history[-1].val_mse if history else float("inf")

    # leave the in-memory model at its best-validation weights
    params = state.named_parameters()
    for name, values in best_snapshot["tensors"].items():
        params[name].data = values.copy()

    ckpt = Checkpoint(
        config=dict(config_echo) if config_echo is not None else config.to_flat(),
        tensors=best_snapshot["tensors"],
        opt_m=best_snapshot["m"],
        opt_v=best_snapshot["v"],
        step_count=best_snapshot["step"],
        rng_state={
            "shuffle": shuffle_rng.bit_generator.state,
            "dropout": dropout_rng.bit_generator.state,
        },
        epoch=best_epoch,
        best_val=best_val,
    )
    return ckpt, history, state


def restore_model(ckpt: Checkpoint, config: TrainConfig | None = None) -> tuple[ModelState, TrainConfig]:
    """Build a model from a checkpoint; optional config must match the echo."""
    echo_config = TrainConfig.from_flat(ckpt.config)
    if config is not None:
        assert_config_compatible(ckpt.config, config)
    numerics.set_default_dtype(echo_config.dtype)
    state = build_model(echo_config.model_config(), np.random.default_rng(0))
    restore_tensors(ckpt, state.named_parameters())
    return state, echo_config
