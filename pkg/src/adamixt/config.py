"""Experiment configuration: flat key=value files with section dots.

Values resolve in order: built-in defaults, then the config file, then
repeated ``--set key=value`` overrides, then direct CLI flags
(--seed/--out/--repeats). ``dump-config`` prints the fully resolved map.
Unknown keys are rejected so typos fail fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data import RawDataset, SplitSpec, ett_hourly_split, ett_minute_split, load_csv, synth_multiperiodic
from .errors import ConfigError
from .experts import ExpertProfile
from .preprocess import PatchSpec
from .training import TrainConfig

DEFAULTS: dict[str, str] = {
    "dataset.kind": "synth",
    "dataset.path": "",
    "dataset.name": "",
    "dataset.frequency": "unknown",
    "dataset.strict": "true",
    "dataset.synth.length": "2000",
    "dataset.synth.periods": "24,96",
    "dataset.synth.amplitudes": "1,1",
    "dataset.synth.trend": "0.0",
    "dataset.synth.noise_std": "0.1",
    "dataset.synth.channels": "1",
    "dataset.synth.seed": "0",
    "split.mode": "ratio",
    "split.ratios": "0.7,0.1,0.2",
    "split.borders": "",
    "split.preset": "",
    "train.lookback": "",         # required
    "train.horizon": "",          # required
    "train.lr": "0.001",
    "train.batch": "32",
    "train.epochs": "10",
    "train.patience": "3",
    "train.min_delta": "0.0",
    "train.seed": "0",
    "train.stride": "1",
    "train.max_steps": "0",
    "train.grad_clip": "0.0",
    "train.dtype": "float64",
    "patch.len": "16",
    "patch.stride": "8",
    "gate.hidden": "64",
    "fusion.dim": "128",
    "ablation.no_gpm": "false",
    "ablation.no_dsm": "false",
    "ablation.no_awgn": "false",
    "metrics.raw_space": "false",
    "run.out": "out",
    "run.repeats": "1",
    "run.checkpoint": "",
    "bench.batch_sizes": "1,32",
    "bench.warmup": "3",
    "bench.rounds": "20",
    "scalestudy.factor_sets": "1:0.5;1:1;1:2",
}

EXPERT_FIELDS = ("kind", "scale", "depth", "d_model", "heads", "d_k",
                 "ffn_mult", "dropout", "init_checkpoint", "init_source")

# two-expert pool used when the config defines no expert.* keys at all
DEFAULT_EXPERTS = {
    "expert.0.kind": "gpm_frozen",
    "expert.0.scale": "1.0",
    "expert.1.kind": "dsm_trainable",
    "expert.1.scale": "0.5",
}


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        out[key] = value.strip()
    return out


def _is_known_key(key: str) -> bool:
    if key in DEFAULTS:
        return True
    parts = key.split(".")
    return (len(parts) == 3 and parts[0] == "expert" and parts[1].isdigit()
            and parts[2] in EXPERT_FIELDS)


def _int(flat: dict[str, str], key: str) -> int:
    try:
        return int(flat[key])
    except ValueError:
        raise ConfigError(f"config key {key} expects an integer, got {flat[key]!r}") from None


def _float(flat: dict[str, str], key: str) -> float:
    try:
        return float(flat[key])
    except ValueError:
        raise ConfigError(f"config key {key} expects a number, got {flat[key]!r}") from None


def _bool(flat: dict[str, str], key: str) -> bool:
    value = flat[key].lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key {key} expects true/false, got {flat[key]!r}")


def _float_list(flat: dict[str, str], key: str) -> list[float]:
    try:
        return [float(x) for x in flat[key].split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"config key {key} expects comma-separated numbers, got {flat[key]!r}") from None


def _int_list(flat: dict[str, str], key: str) -> list[int]:
    try:
        return [int(x) for x in flat[key].split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"config key {key} expects comma-separated integers, got {flat[key]!r}") from None


@dataclass
class ExpertSetting:
    """One expert's resolved config row, including the optional import hook."""

    profile: ExpertProfile
    scale: float
    init_checkpoint: str = ""
    init_source: int = -1          # expert index inside the imported checkpoint


@dataclass
class ExperimentConfig:
    """Fully resolved experiment: dataset source, splits, model, run switches."""

    flat: dict[str, str]
    experts: list[ExpertSetting] = field(default_factory=list)

    # -- dataset -----------------------------------------------------------

    def build_dataset(self) -> RawDataset:
        kind = self.flat["dataset.kind"]
        if kind == "csv":
            path = self.flat["dataset.path"]
            if not path:
                raise ConfigError("dataset.kind=csv requires dataset.path")
            return load_csv(path, name=self.flat["dataset.name"] or None,
                            frequency=self.flat["dataset.frequency"],
                            strict=_bool(self.flat, "dataset.strict"))
        if kind == "synth":
            return synth_multiperiodic(
                length=_int(self.flat, "dataset.synth.length"),
                periods=_float_list(self.flat, "dataset.synth.periods"),
                amplitudes=_float_list(self.flat, "dataset.synth.amplitudes"),
                trend_slope=_float(self.flat, "dataset.synth.trend"),
                noise_std=_float(self.flat, "dataset.synth.noise_std"),
                seed=_int(self.flat, "dataset.synth.seed"),
                channels=_int(self.flat, "dataset.synth.channels"),
                name=self.flat["dataset.name"] or "synthetic",
            )
        raise ConfigError(f"dataset.kind must be 'csv' or 'synth', got {kind!r}")

    def split_spec(self) -> SplitSpec:
        preset = self.flat["split.preset"]
        if preset:
            if preset == "etth":
                return ett_hourly_split()
            if preset == "ettm":
                return ett_minute_split()
            raise ConfigError(f"split.preset must be 'etth' or 'ettm', got {preset!r}")
        mode = self.flat["split.mode"]
        if mode == "ratio":
            ratios = _float_list(self.flat, "split.ratios")
            if len(ratios) != 3:
                raise ConfigError(f"split.ratios expects three values, got {ratios}")
            return SplitSpec(mode="ratio", ratios=tuple(ratios))
        if mode == "ett_border":
            text = self.flat["split.borders"]
            try:
                borders = tuple(
                    tuple(int(x) for x in pair.split(":")) for pair in text.split(";") if pair
                )
            except ValueError:
                raise ConfigError(f"split.borders expects 'a:b;b:c;c:d', got {text!r}") from None
            return SplitSpec(mode="ett_border", borders=borders)  # type: ignore[arg-type]
        raise ConfigError(f"split.mode must be 'ratio' or 'ett_border', got {mode!r}")

    # -- model/training ----------------------------------------------------

    def ablation_switches(self) -> tuple[bool, bool, bool]:
        no_gpm = _bool(self.flat, "ablation.no_gpm")
        no_dsm = _bool(self.flat, "ablation.no_dsm")
        no_awgn = _bool(self.flat, "ablation.no_awgn")
        if no_gpm and no_dsm:
            raise ConfigError("ablation.no_gpm and ablation.no_dsm together would "
                              "leave zero experts; rejected")
        return no_gpm, no_dsm, no_awgn

    def resolved_settings(self, *, no_gpm: bool | None = None,
                          no_dsm: bool | None = None,
                          factors_override: list[float] | None = None
                          ) -> list[ExpertSetting]:
        """The effective expert pool after ablation switches and factor
        overrides, indexed as the built model will see it."""
        base_no_gpm, base_no_dsm, _ = self.ablation_switches()
        no_gpm = base_no_gpm if no_gpm is None else no_gpm
        no_dsm = base_no_dsm if no_dsm is None else no_dsm
        if no_gpm and no_dsm:
            raise ConfigError("removing both expert classes would leave zero experts")
        settings = list(self.experts)
        if factors_override is not None:
            if len(factors_override) != len(settings):
                raise ConfigError(
                    f"{len(factors_override)} factors for {len(settings)} experts"
                )
            settings = [ExpertSetting(profile=s.profile, scale=f,
                                      init_checkpoint=s.init_checkpoint,
                                      init_source=s.init_source)
                        for s, f in zip(settings, factors_override)]
        if no_gpm:
            settings = [s for s in settings if not s.profile.frozen]
        if no_dsm:
            settings = [s for s in settings if s.profile.frozen]
        if not settings:
            raise ConfigError("expert pool is empty after applying ablation switches")
        return settings

    def train_config(self, *, no_gpm: bool | None = None, no_dsm: bool | None = None,
                     no_awgn: bool | None = None, seed: int | None = None,
                     factors_override: list[float] | None = None) -> TrainConfig:
        """The effective TrainConfig after applying ablation switches.

        Explicit keyword arguments override the config-file switches, which
        lets the ablation and scale-study drivers derive variants.
        """
        _, _, base_no_awgn = self.ablation_switches()
        no_awgn = base_no_awgn if no_awgn is None else no_awgn
        settings = self.resolved_settings(no_gpm=no_gpm, no_dsm=no_dsm,
                                          factors_override=factors_override)

        profiles = []
        for j, s in enumerate(settings):
            p = s.profile
            profiles.append(ExpertProfile(kind=p.kind, scale_index=j, depth=p.depth,
                                          d_model=p.d_model, heads=p.heads, d_k=p.d_k,
                                          ffn_mult=p.ffn_mult, dropout=p.dropout))
        patch = PatchSpec(_int(self.flat, "patch.len"), _int(self.flat, "patch.stride"),
                          [s.scale for s in settings])
        return TrainConfig(
            lookback=_int(self.flat, "train.lookback"),
            horizon=_int(self.flat, "train.horizon"),
            patch=patch,
            experts=profiles,
            gate_hidden=_int(self.flat, "gate.hidden"),
            fusion_dim=_int(self.flat, "fusion.dim"),
            use_gate=not no_awgn,
            lr=_float(self.flat, "train.lr"),
            batch=_int(self.flat, "train.batch"),
            epochs=_int(self.flat, "train.epochs"),
            patience=_int(self.flat, "train.patience"),
            min_delta=_float(self.flat, "train.min_delta"),
            seed=self.seed if seed is None else seed,
            stride=_int(self.flat, "train.stride"),
            max_steps=_int(self.flat, "train.max_steps"),
            grad_clip=_float(self.flat, "train.grad_clip"),
            dtype=self.flat["train.dtype"],
            split=self.split_spec(),
        )

    # -- run parameters ------------------------------------------------------

    @property
    def seed(self) -> int:
        return _int(self.flat, "train.seed")

    @property
    def repeats(self) -> int:
        return _int(self.flat, "run.repeats")

    @property
    def out_dir(self) -> Path:
        return Path(self.flat["run.out"])

    @property
    def raw_space_metrics(self) -> bool:
        return _bool(self.flat, "metrics.raw_space")

    def checkpoint_path(self) -> Path:
        if self.flat["run.checkpoint"]:
            return Path(self.flat["run.checkpoint"])
        return self.out_dir / "checkpoint.admx"

    def bench_params(self) -> tuple[list[int], int, int]:
        return (_int_list(self.flat, "bench.batch_sizes"),
                _int(self.flat, "bench.warmup"), _int(self.flat, "bench.rounds"))

    def factor_sets(self) -> list[list[float]]:
        text = self.flat["scalestudy.factor_sets"]
        sets = []
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                sets.append([float(x) for x in chunk.split(":")])
            except ValueError:
                raise ConfigError(
                    f"scalestudy.factor_sets expects 'f0:f1;f0:f1;...', got {text!r}"
                ) from None
        if not sets:
            raise ConfigError("scalestudy.factor_sets is empty")
        return sets

    def dump(self) -> str:
        lines = [f"{key} = {self.flat[key]}" for key in sorted(self.flat)]
        return "\n".join(lines) + "\n"


def _resolve_experts(flat: dict[str, str]) -> list[ExpertSetting]:
    indices = sorted({
        int(key.split(".")[1]) for key in flat
        if key.startswith("expert.") and key.split(".")[1].isdigit()
    })
    if indices != list(range(len(indices))):
        raise ConfigError(f"expert indices must be contiguous from 0, got {indices}")
    settings = []
    for j in indices:
        def get(field_name: str, fallback: str) -> str:
            return flat.get(f"expert.{j}.{field_name}", fallback)

        kind = get("kind", "dsm_trainable")
        depth_default = "3" if kind == "gpm_frozen" else "2"
        profile = ExpertProfile(
            kind=kind,
            scale_index=j,
            depth=int(get("depth", depth_default)),
            d_model=int(get("d_model", "64")),
            heads=int(get("heads", "4")),
            d_k=int(get("d_k", "0")),
            ffn_mult=int(get("ffn_mult", "4")),
            dropout=float(get("dropout", "0.1")),
        )
        settings.append(ExpertSetting(
            profile=profile,
            scale=float(get("scale", "1.0")),
            init_checkpoint=get("init_checkpoint", ""),
            init_source=int(get("init_source", "-1")),
        ))
    # normalize the flat map so dump-config shows every resolved expert field
    for j, s in enumerate(settings):
        flat[f"expert.{j}.kind"] = s.profile.kind
        flat[f"expert.{j}.scale"] = repr(s.scale)
        flat[f"expert.{j}.depth"] = str(s.profile.depth)
        flat[f"expert.{j}.d_model"] = str(s.profile.d_model)
        flat[f"expert.{j}.heads"] = str(s.profile.heads)
        flat[f"expert.{j}.d_k"] = str(s.profile.d_k)
        flat[f"expert.{j}.ffn_mult"] = str(s.profile.ffn_mult)
        flat[f"expert.{j}.dropout"] = repr(s.profile.dropout)
        flat[f"expert.{j}.init_checkpoint"] = s.init_checkpoint
        flat[f"expert.{j}.init_source"] = str(s.init_source)
    return settings


def resolve_config(config_path: str | Path | None = None,
                   sets: list[str] | None = None,
                   out: str | None = None, seed: int | None = None,
                   repeats: int | None = None) -> ExperimentConfig:
    """Merge defaults, config file, --set overrides, and CLI flags."""
    flat = dict(DEFAULTS)
    file_map: dict[str, str] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        file_map = parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))
    override_map: dict[str, str] = {}
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        override_map[key.strip()] = value.strip()
    for source in (file_map, override_map):
        for key, value in source.items():
            if not _is_known_key(key):
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = value
    if not any(key.startswith("expert.") for key in flat):
        flat.update(DEFAULT_EXPERTS)
    if out is not None:
        flat["run.out"] = out
    if seed is not None:
        flat["train.seed"] = str(seed)
    if repeats is not None:
        flat["run.repeats"] = str(repeats)
    if not flat["train.lookback"] or not flat["train.horizon"]:
        raise ConfigError("train.lookback and train.horizon must be set explicitly")
    config = ExperimentConfig(flat=flat)
    config.experts = _resolve_experts(flat)
    config.ablation_switches()   # reject impossible switch combinations early
    return config
