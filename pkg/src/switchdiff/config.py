"""Run configuration: strict JSON schema mapped onto dataclasses.

Unknown keys, wrong types and a mismatched ``schema_version`` are rejected
with the dotted path of the offending entry.  Relative paths are resolved
against the directory holding the config file and must exist at load time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from switchdiff.errors import ConfigError

SCHEMA_VERSION = 1


@dataclass
class ScheduleConfig:
    beta_min: float = 0.1
    beta_max: float = 20.0
    num_steps: int = 1000


@dataclass
class ComponentConfig:
    mean: list[float]
    weight: float = 1.0
    cov: list[list[float]] | None = None


def _default_attributes():
    return {
        "0": [ComponentConfig(mean=[-2.0, 0.0])],
        "1": [ComponentConfig(mean=[2.0, 0.0])],
    }


@dataclass
class GmmConfig:
    prior: list[float] = field(default_factory=lambda: [0.5, 0.5])
    attributes: dict[str, list[ComponentConfig]] = field(default_factory=_default_attributes)


@dataclass
class ScoreSourceConfig:
    kind: str = "analytic"
    checkpoint: str | None = None


@dataclass
class GenerateConfig:
    n: int = 10000


@dataclass
class TrainBlock:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    steps: int = 20000
    log_every: int = 100
    n_data: int = 50000


@dataclass
class SamplerConfig:
    strategy: str = "vanilla"
    n: int = 1000
    stride: int = 10
    s: int = 0
    s0: int = 0
    s1: int = 1
    tau: int | None = None
    p: float = 0.6
    blend: str = "score"
    diffusion_scale: float = 1.0
    trajectory_every: int | None = None


@dataclass
class TauSearchConfig:
    s0: int = 0
    s1: int = 1
    batch_size: int = 256
    drive: str = "average"
    stability_batch_sizes: list[int] = field(default_factory=list)
    stability_repeats: int = 8


@dataclass
class SweepConfig:
    taus: list[int] | None = None
    num_points: int = 11
    include_tau_star: bool = False
    n: int = 5000
    n_real: int = 10000


@dataclass
class EvalConfig:
    synthetic_csv: list[str] = field(default_factory=list)
    real_csv: str | None = None
    n_real: int = 10000
    probe: str = "linear"


@dataclass
class PcaConfig:
    n_reference: int = 5000
    target_csv: list[str] = field(default_factory=list)


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "runs/default"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    score_source: ScoreSourceConfig = field(default_factory=ScoreSourceConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    train: TrainBlock = field(default_factory=TrainBlock)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    tausearch: TauSearchConfig = field(default_factory=TauSearchConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    pca: PcaConfig = field(default_factory=PcaConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Content hash of the resolved config; the output directory is excluded."""
        doc = self.to_dict()
        doc.pop("output_dir")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {type(value).__name__}", path)
        (item,) = typing.get_args(tp)
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object, got {type(value).__name__}", path)
        _, item = typing.get_args(tp)
        return {str(k): _coerce(item, v, f"{path}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected true/false", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    raise ConfigError(f"unsupported field type {tp!r}", path)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {type(data).__name__}", path or "<root>")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            sub = f"{path}.{f.name}" if path else f.name
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError("required key missing", f"{path}.{f.name}" if path else f.name)
    return cls(**kwargs)


def _resolve(p: str | None, base: Path, key: str) -> str | None:
    if p is None:
        return None
    full = Path(p) if Path(p).is_absolute() else base / p
    if not full.exists():
        raise ConfigError(f"referenced path does not exist: {full}", key)
    return str(full.resolve())


def parse_config(data: dict, base_dir: Path | str = ".") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", "<root>")
    if "schema_version" not in data:
        raise ConfigError("required key missing", "schema_version")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {data['schema_version']!r} does not match tool schema {SCHEMA_VERSION}",
            "schema_version",
        )
    cfg = _build(RunConfig, data, "")
    base = Path(base_dir)
    cfg.score_source.checkpoint = _resolve(cfg.score_source.checkpoint, base, "score_source.checkpoint")
    cfg.eval.real_csv = _resolve(cfg.eval.real_csv, base, "eval.real_csv")
    cfg.eval.synthetic_csv = [
        _resolve(p, base, f"eval.synthetic_csv[{i}]") for i, p in enumerate(cfg.eval.synthetic_csv)
    ]
    cfg.pca.target_csv = [
        _resolve(p, base, f"pca.target_csv[{i}]") for i, p in enumerate(cfg.pca.target_csv)
    ]
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.score_source.kind not in ("analytic", "trained"):
        raise ConfigError("must be 'analytic' or 'trained'", "score_source.kind")
    if cfg.score_source.kind == "trained" and cfg.score_source.checkpoint is None:
        raise ConfigError("trained score source needs a checkpoint path", "score_source.checkpoint")
    if cfg.sampler.strategy not in ("vanilla", "switched", "mixed", "sde"):
        raise ConfigError("must be one of vanilla, switched, mixed, sde", "sampler.strategy")
    for key in ("s", "s0", "s1"):
        if getattr(cfg.sampler, key) not in (0, 1):
            raise ConfigError("attribute must be 0 or 1", f"sampler.{key}")
    for key in ("s0", "s1"):
        if getattr(cfg.tausearch, key) not in (0, 1):
            raise ConfigError("attribute must be 0 or 1", f"tausearch.{key}")
    if cfg.sampler.n < 0:
        raise ConfigError("must be nonnegative", "sampler.n")
    if cfg.sampler.stride < 1 or cfg.schedule.num_steps % cfg.sampler.stride:
        raise ConfigError("stride must divide schedule.num_steps", "sampler.stride")
    if cfg.tausearch.batch_size < 1:
        raise ConfigError("must be at least 1", "tausearch.batch_size")
    if cfg.eval.probe not in ("linear", "mlp"):
        raise ConfigError("must be 'linear' or 'mlp'", "eval.probe")
    if set(cfg.gmm.attributes) != {"0", "1"}:
        raise ConfigError("attributes '0' and '1' are both required", "gmm.attributes")
    if cfg.sweep.num_points < 2:
        raise ConfigError("must be at least 2", "sweep.num_points")


def load_config(path, seed_override: int | None = None, out_override: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", "--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON ({exc})", "<root>") from None
    cfg = parse_config(data, path.parent)
    if seed_override is not None:
        cfg.seed = seed_override
    if out_override is not None:
        cfg.output_dir = out_override
    return cfg
