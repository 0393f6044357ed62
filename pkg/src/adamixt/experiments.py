"""Experiment drivers and report emission.

Every emitted CSV keeps the dataset reader's shape: a header row, a string
label in the first column, numeric values in the rest, so reports are
round-trip parseable by the same loader that reads datasets.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import RawDataset, gather_batch, split_origins
from .errors import ConfigError
from .metrics import latency_stats, metric_mse_mae, per_step_mse_mae
from .model import ModelState, forward, naive_last_value
from .numerics import no_grad
from .preprocess import normalize_batch
from .training import EpochStats, TrainConfig, restore_model, train


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ADAMIXT_THREADS", "1")))
    except ValueError:
        return 1


def write_report_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


@dataclass
class SplitEval:
    """Metrics plus gate behaviour for one split."""

    mse: float
    mae: float
    step_mse: np.ndarray
    step_mae: np.ndarray
    gate_mean: np.ndarray
    gate_std: np.ndarray
    naive_mse: float
    naive_mae: float
    gates: np.ndarray            # [W, n] per-window weights
    window_labels: list[str] = field(default_factory=list)


def evaluate_split(state: ModelState, dataset: RawDataset, split_index: int,
                   config: TrainConfig, *, batch: int = 256,
                   raw_space: bool = False) -> SplitEval:
    """Batched forward over every window of one split, metrics plus gates."""
    ranges = config.split.resolve(dataset.length)
    origins = split_origins(ranges[split_index], config.lookback, config.horizon,
                            config.stride)
    channels = np.repeat(np.arange(dataset.channels, dtype=np.int64), origins.size)
    all_origins = np.tile(origins, dataset.channels)

    preds, targs, naive, gates, labels = [], [], [], [], []
    with no_grad():
        for start in range(0, channels.size, batch):
            ch = channels[start:start + batch]
            og = all_origins[start:start + batch]
            inputs, targets = gather_batch(dataset, ch, og, config.lookback, config.horizon)
            x_norm, stats = normalize_batch(inputs, state.config.norm_eps)
            result = forward(state, inputs, training=False)
            targets_norm = (targets - stats.mean) / (stats.std + stats.eps)
            if raw_space:
                preds.append(result.predictions())
                targs.append(targets)
                naive.append(naive_last_value(x_norm, config.horizon) * (stats.std + stats.eps) + stats.mean)
            else:
                preds.append(result.pred_norm.data.copy())
                targs.append(targets_norm)
                naive.append(naive_last_value(x_norm, config.horizon))
            gates.append(result.gates.data.copy())
            labels.extend(f"c{c}:o{o}" for c, o in zip(ch, og))

    pred_arr = np.concatenate(preds)
    targ_arr = np.concatenate(targs)
    naive_arr = np.concatenate(naive)
    gate_arr = np.concatenate(gates)
    mse, mae = metric_mse_mae(pred_arr, targ_arr)
    step_mse, step_mae = per_step_mse_mae(pred_arr, targ_arr)
    naive_mse, naive_mae = metric_mse_mae(naive_arr, targ_arr)
    return SplitEval(mse=mse, mae=mae, step_mse=step_mse, step_mae=step_mae,
                     gate_mean=gate_arr.mean(axis=0), gate_std=gate_arr.std(axis=0),
                     naive_mse=naive_mse, naive_mae=naive_mae, gates=gate_arr,
                     window_labels=labels)


def metrics_rows(split_name: str, ev: SplitEval) -> list[list]:
    rows = [
        [f"{split_name}/mse", ev.mse],
        [f"{split_name}/mae", ev.mae],
        [f"{split_name}/naive_mse", ev.naive_mse],
        [f"{split_name}/naive_mae", ev.naive_mae],
    ]
    rows += [[f"{split_name}/mse_step_{k}", v] for k, v in enumerate(ev.step_mse)]
    rows += [[f"{split_name}/mae_step_{k}", v] for k, v in enumerate(ev.step_mae)]
    rows += [[f"{split_name}/gate_mean_{j}", v] for j, v in enumerate(ev.gate_mean)]
    rows += [[f"{split_name}/gate_std_{j}", v] for j, v in enumerate(ev.gate_std)]
    return rows


def write_history_csv(path: Path, history: list[EpochStats]) -> None:
    write_report_csv(
        path, ["epoch", "steps", "train_loss", "val_mse", "val_mae", "seconds"],
        [[str(h.epoch), h.steps, h.train_loss, h.val_mse, h.val_mae, h.seconds]
         for h in history],
    )


def write_gates_csv(path: Path, split_name: str, ev: SplitEval) -> None:
    n = ev.gates.shape[1]
    header = ["window"] + [f"g{j}" for j in range(n)]
    rows = [[f"{split_name}:{label}"] + list(ev.gates[i])
            for i, label in enumerate(ev.window_labels)]
    write_report_csv(path, header, rows)


def build_warm_start(settings) -> dict[str, np.ndarray]:
    """Resolve per-expert init_checkpoint hooks into a name -> tensor map.

    ``settings`` must be the effective (post-ablation) expert list so the
    target indices match the model being built.
    """
    warm: dict[str, np.ndarray] = {}
    for j, setting in enumerate(settings):
        if not setting.init_checkpoint:
            continue
        source = setting.init_source if setting.init_source >= 0 else j
        imported = load_checkpoint(setting.init_checkpoint)
        prefix = f"expert{source}."
        found = False
        for name, values in imported.tensors.items():
            if name.startswith(prefix) and not name.endswith(".proj"):
                warm[f"expert{j}.{name[len(prefix):]}"] = values
                found = True
        if not found:
            raise ConfigError(
                f"checkpoint {setting.init_checkpoint} has no tensors for expert {source}"
            )
    return warm


@dataclass
class RunResult:
    seed: int
    checkpoint: Checkpoint
    history: list[EpochStats]
    state: ModelState
    val_mse: float
    test: SplitEval
    train_seconds: float


def run_training(exp: ExperimentConfig, dataset: RawDataset, seed: int,
                 log_fn=None) -> RunResult:
    cfg = exp.train_config(seed=seed)
    warm = build_warm_start(exp.resolved_settings())
    # echo must describe exactly the experts the model was built with, so
    # drop the pre-ablation expert keys before merging the effective config
    echo = {k: v for k, v in exp.flat.items() if not k.startswith("expert.")}
    echo.update(cfg.to_flat())
    t0 = time.perf_counter()
    ckpt, history, state = train(cfg, dataset, config_echo=echo,
                                 warm_start=warm or None, log_fn=log_fn)
    seconds = time.perf_counter() - t0
    test = evaluate_split(state, dataset, 2, cfg, raw_space=exp.raw_space_metrics)
    return RunResult(seed=seed, checkpoint=ckpt, history=history, state=state,
                     val_mse=ckpt.best_val if ckpt.best_val is not None else float("nan"),
                     test=test, train_seconds=seconds)


def run_repeats(exp: ExperimentConfig, dataset: RawDataset, seeds: list[int],
                log_fn=None) -> list[RunResult]:
    """Independent runs over a seed list, optionally on a small thread pool."""
    workers = min(_worker_count(), len(seeds))
    if workers <= 1:
        return [run_training(exp, dataset, s, log_fn=log_fn) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_training, exp, dataset, s) for s in seeds]
        return [f.result() for f in futures]


def train_command(exp: ExperimentConfig, log_fn=None) -> list[RunResult]:
    """The `train` subcommand: run, checkpoint, and emit every report file."""
    dataset = exp.build_dataset()
    seeds = [exp.seed + r for r in range(exp.repeats)]
    results = run_repeats(exp, dataset, seeds, log_fn=log_fn)
    out = exp.out_dir
    out.mkdir(parents=True, exist_ok=True)

    if len(results) == 1:
        save_checkpoint(exp.checkpoint_path(), results[0].checkpoint)
        write_history_csv(out / "history.csv", results[0].history)
    else:
        for res in results:
            save_checkpoint(out / f"checkpoint_seed{res.seed}.admx", res.checkpoint)
            write_history_csv(out / f"history_seed{res.seed}.csv", res.history)
        save_checkpoint(exp.checkpoint_path(), results[0].checkpoint)
        write_history_csv(out / "history.csv", results[0].history)

    rows: list[list] = []
    for res in results:
        rows.append([f"seed{res.seed}/val_mse", res.val_mse])
        rows.append([f"seed{res.seed}/train_seconds", res.train_seconds])
        rows += [[f"seed{res.seed}/{label}", value]
                 for label, value in _flatten_eval("test", res.test)]
    rows.append(["mean/val_mse", float(np.mean([r.val_mse for r in results]))])
    rows.append(["mean/test_mse", float(np.mean([r.test.mse for r in results]))])
    rows.append(["mean/test_mae", float(np.mean([r.test.mae for r in results]))])
    rows += metrics_rows("test", results[0].test)
    write_report_csv(out / "metrics.csv", ["metric", "value"], rows)
    write_gates_csv(out / "gates.csv", "test", results[0].test)
    return results


def _flatten_eval(split_name: str, ev: SplitEval) -> list[tuple[str, float]]:
    return [(f"{split_name}_mse", ev.mse), (f"{split_name}_mae", ev.mae),
            (f"{split_name}_naive_mse", ev.naive_mse)]


def eval_command(exp: ExperimentConfig) -> dict[str, SplitEval]:
    """The `eval` subcommand: restore a checkpoint and score every split."""
    ckpt = load_checkpoint(exp.checkpoint_path())
    state, cfg = restore_model(ckpt, exp.train_config())
    dataset = exp.build_dataset()
    out = exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rows: list[list] = []
    evals: dict[str, SplitEval] = {}
    for index, split_name in enumerate(("train", "val", "test")):
        ev = evaluate_split(state, dataset, index, cfg, raw_space=exp.raw_space_metrics)
        evals[split_name] = ev
        rows += metrics_rows(split_name, ev)
    write_report_csv(out / "metrics.csv", ["metric", "value"], rows)
    write_gates_csv(out / "gates.csv", "test", evals["test"])
    return evals


def predict_command(exp: ExperimentConfig) -> Path:
    """The `predict` subcommand: test-split forecasts in original units."""
    ckpt = load_checkpoint(exp.checkpoint_path())
    state, cfg = restore_model(ckpt, exp.train_config())
    dataset = exp.build_dataset()
    ranges = cfg.split.resolve(dataset.length)
    origins = split_origins(ranges[2], cfg.lookback, cfg.horizon, cfg.stride)
    channels = np.repeat(np.arange(dataset.channels, dtype=np.int64), origins.size)
    all_origins = np.tile(origins, dataset.channels)
    rows = []
    with no_grad():
        for start in range(0, channels.size, 256):
            ch = channels[start:start + 256]
            og = all_origins[start:start + 256]
            inputs, _ = gather_batch(dataset, ch, og, cfg.lookback, cfg.horizon)
            result = forward(state, inputs, training=False)
            preds = result.predictions()
            for i in range(ch.size):
                rows.append([f"c{ch[i]}:o{og[i]}"] + list(preds[i]))
    out = exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictions.csv"
    write_report_csv(path, ["window"] + [f"step{k}" for k in range(cfg.horizon)], rows)
    return path


@dataclass
class VariantResult:
    name: str
    per_seed_val_mse: list[float]
    per_seed_test_mse: list[float]
    per_seed_test_mae: list[float]

    @property
    def mean_val_mse(self) -> float:
        return float(np.mean(self.per_seed_val_mse))

    @property
    def mean_test_mse(self) -> float:
        return float(np.mean(self.per_seed_test_mse))

    @property
    def mean_test_mae(self) -> float:
        return float(np.mean(self.per_seed_test_mae))


def _variant_specs(exp: ExperimentConfig) -> list[tuple[str, dict]]:
    kinds = {s.profile.kind for s in exp.experts}
    variants: list[tuple[str, dict]] = [("full", {})]
    if "gpm_frozen" in kinds and "dsm_trainable" in kinds:
        variants.append(("no_gpm", {"no_gpm": True}))
        variants.append(("no_dsm", {"no_dsm": True}))
    variants.append(("no_awgn", {"no_awgn": True}))
    return variants


def run_ablation(exp: ExperimentConfig, log_fn=None) -> list[VariantResult]:
    """Train each ablation variant on the same seed set; report per-variant metrics.

    Variants: full, no_gpm (frozen experts dropped), no_dsm (trainable experts
    dropped), no_awgn (gate replaced by fixed uniform weights).
    """
    dataset = exp.build_dataset()
    seeds = [exp.seed + r for r in range(exp.repeats)]
    results = []
    for name, switches in _variant_specs(exp):
        per_val, per_mse, per_mae = [], [], []
        for seed in seeds:
            cfg = exp.train_config(seed=seed, **switches)
            ckpt, _, state = train(cfg, dataset)
            ev = evaluate_split(state, dataset, 2, cfg)
            per_val.append(ckpt.best_val if ckpt.best_val is not None else float("nan"))
            per_mse.append(ev.mse)
            per_mae.append(ev.mae)
            if log_fn is not None:
                log_fn(f"ablate {name} seed {seed}: val_mse={per_val[-1]:.6f} "
                       f"test_mse={ev.mse:.6f}")
        results.append(VariantResult(name, per_val, per_mse, per_mae))
    out = exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    header = (["variant", "mean_val_mse", "mean_test_mse", "mean_test_mae"]
              + [f"val_mse_seed{s}" for s in seeds])
    rows = [[r.name, r.mean_val_mse, r.mean_test_mse, r.mean_test_mae] + r.per_seed_val_mse
            for r in results]
    write_report_csv(out / "ablation.csv", header, rows)
    return results


def run_scalestudy(exp: ExperimentConfig, factor_sets: list[list[float]] | None = None,
                   log_fn=None) -> list[VariantResult]:
    """Train one model per scale-factor set over the same seeds; emit a table."""
    dataset = exp.build_dataset()
    seeds = [exp.seed + r for r in range(exp.repeats)]
    sets = factor_sets if factor_sets is not None else exp.factor_sets()
    results = []
    for factors in sets:
        label = "|".join(f"f{j}={f:g}" for j, f in enumerate(factors))
        try:
            cfg_probe = exp.train_config(factors_override=factors)
            cfg_probe.patch.geometry(cfg_probe.lookback)
        except ConfigError as exc:
            raise ConfigError(f"scale-factor set {label} rejected: {exc}") from None
        per_val, per_mse, per_mae = [], [], []
        for seed in seeds:
            cfg = exp.train_config(seed=seed, factors_override=factors)
            ckpt, _, state = train(cfg, dataset)
            ev = evaluate_split(state, dataset, 2, cfg)
            per_val.append(ckpt.best_val if ckpt.best_val is not None else float("nan"))
            per_mse.append(ev.mse)
            per_mae.append(ev.mae)
            if log_fn is not None:
                log_fn(f"scalestudy {label} seed {seed}: val_mse={per_val[-1]:.6f}")
        results.append(VariantResult(label, per_val, per_mse, per_mae))
    out = exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    header = (["factors", "mean_val_mse", "mean_test_mse", "mean_test_mae"]
              + [f"val_mse_seed{s}" for s in seeds])
    rows = [[r.name, r.mean_val_mse, r.mean_test_mse, r.mean_test_mae] + r.per_seed_val_mse
            for r in results]
    write_report_csv(out / "scalestudy.csv", header, rows)
    return results


def bench_inference(exp: ExperimentConfig) -> list[dict[str, float]]:
    """Measure per-window forward latency for each configured batch size."""
    ckpt = load_checkpoint(exp.checkpoint_path())
    state, cfg = restore_model(ckpt, exp.train_config())
    dataset = exp.build_dataset()
    ranges = cfg.split.resolve(dataset.length)
    origins = split_origins(ranges[2], cfg.lookback, cfg.horizon, cfg.stride)
    channels = np.repeat(np.arange(dataset.channels, dtype=np.int64), origins.size)
    all_origins = np.tile(origins, dataset.channels)
    batch_sizes, warmup, rounds = exp.bench_params()

    table = []
    rows = []
    for batch in batch_sizes:
        if batch < 1 or channels.size == 0:
            raise ConfigError(f"bench batch size {batch} is unusable")
        take = min(batch, channels.size)
        inputs, _ = gather_batch(dataset, channels[:take], all_origins[:take],
                                 cfg.lookback, cfg.horizon)
        with no_grad():
            for _ in range(warmup):
                forward(state, inputs, training=False)
            per_window = []
            for _ in range(rounds):
                t0 = time.perf_counter()
                forward(state, inputs, training=False)
                per_window.append((time.perf_counter() - t0) / take)
        stats = latency_stats(per_window)
        stats["batch"] = float(batch)
        table.append(stats)
        rows.append([f"batch={batch}", batch, stats["mean_ms"], stats["p50_ms"],
                     stats["p95_ms"], stats["windows_per_s"]])
    out = exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "latency.csv",
                     ["config", "batch", "mean_ms", "p50_ms", "p95_ms", "windows_per_s"],
                     rows)
    return table
