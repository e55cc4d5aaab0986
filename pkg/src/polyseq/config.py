"""Run configuration files (TOML, top-level ``format = 1``).

Example::

    format = 1
    run_id = "mini"
    output_dir = "runs/mini"

    [data]
    schema = "mini_schema.toml"
    dataset = "mini.csv"
    pretrain_corpus = "mini_corpus.txt"

    [model]
    d_model = 64
    n_layers = 2
    n_heads = 4

    [pretrain]
    epochs = 30

    [finetune]
    pretrained = "runs/mini/pretrain/best.ckpt"

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from polyseq.errors import ConfigError
from polyseq.model import ModelConfig
from polyseq.training import FinetuneConfig, MaskingPolicy, PretrainConfig

FORMAT_VERSION = 1


@dataclass
class DataConfig:
    schema: str = ""
    dataset: str = ""
    pretrain_corpus: str = ""
    max_length: int = 256
    min_count: int = 1
    augment: bool = True
    # rotations per pretraining line (1 = original only)
    pretrain_augment: int = 1
    skip_bad_rows: bool = False


@dataclass
class SplitConfig:
    kind: str = "kfold"
    k: int = 5
    seed: int = 0
    routes: dict[str, str] = field(default_factory=dict)


@dataclass
class TrainConfig:
    run_id: str = "run"
    output_dir: str = "runs"
    model: dict = field(default_factory=dict)  # ModelConfig fields except vocab_size
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    pretrained: str = ""
    base_dir: Path = field(default_factory=Path.cwd)

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out(self) -> Path:
        return self.path(self.output_dir)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.model)


def _coerce(value, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (sys.version_info >= (3, 10) and origin is getattr(__import__("types"), "UnionType", None)):
        non_none = [a for a in args if a is not type(None)]
        return _coerce(value, non_none[0], key)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(key, f"expected a list of {len(args)} values")
        return tuple(_coerce(v, a, f"{key}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(key, "expected a table")
        return {str(k): _coerce(v, args[1], f"{key}.{k}") for k, v in value.items()}
    if dataclasses.is_dataclass(hint):
        return build_section(hint, value, key)
    return value


def build_section(cls, raw, prefix: str):
    """Instantiate dataclass ``cls`` from a TOML table, naming bad keys."""
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected a table")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in raw.items():
        full = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(full, "unknown key")
        kwargs[key] = _coerce(value, hints[key], full)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix or "<root>", str(exc)) from None


def config_from_dict(raw: dict, base_dir: Path | None = None) -> TrainConfig:
    raw = dict(raw)
    if raw.pop("format", None) != FORMAT_VERSION:
        raise ConfigError("format", f"expected format = {FORMAT_VERSION}")
    model = raw.pop("model", {})
    allowed_model = {f.name for f in dataclasses.fields(ModelConfig)} - {"vocab_size"}
    for key in model:
        if key not in allowed_model:
            raise ConfigError(f"model.{key}", "unknown key")
    # validate model keys now so errors point at the config, not a later run
    build_section(ModelConfig, {"vocab_size": 8, **model}, "model")

    finetune = dict(raw.pop("finetune", {}))
    pretrained = finetune.pop("pretrained", "")
    pretrain = dict(raw.pop("pretrain", {}))
    masking = pretrain.pop("masking", {})
    cfg = build_section(TrainConfig, raw, "")
    cfg.model = model
    cfg.pretrain = build_section(PretrainConfig, pretrain, "pretrain")
    cfg.pretrain.masking = build_section(MaskingPolicy, masking, "pretrain.masking")
    cfg.finetune = build_section(FinetuneConfig, finetune, "finetune")
    if not isinstance(pretrained, str):
        raise ConfigError("finetune.pretrained", "expected a path string")
    cfg.pretrained = pretrained
    if cfg.split.kind not in ("kfold", "holdout"):
        raise ConfigError("split.kind", "must be 'kfold' or 'holdout'")
    if base_dir is not None:
        cfg.base_dir = base_dir
    return cfg


def load_config(path: str | Path) -> TrainConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML: {exc}") from None
    return config_from_dict(raw, path.resolve().parent)
