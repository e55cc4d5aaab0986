"""Dataset schema: which CSV columns hold SMILES, descriptors and labels.

Schema files are TOML with a top-level ``format = 1``.  Column names may
contain ``{i}``, replaced by the 1-based component number.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from polyseq.errors import ConfigError, SchemaError

AUGMENTATION_MODES = ("none", "per_unit", "total", "unlimited")
DESCRIPTOR_KINDS = ("value", "category", "smiles")


@dataclass(frozen=True)
class DescriptorSpec:
    name: str
    column: str
    kind: str = "value"
    decimals: int | None = None
    # globals only: one slot per possible component, padded with NAN
    per_component: bool = False

    @property
    def nan_token(self) -> str:
        return f"NAN_{self.name}"

    def format_value(self, raw: str) -> str:
        raw = raw.strip()
        if self.kind != "value":
            return raw
        value = float(raw)
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError(f"non-finite value {raw!r}")
        if self.decimals is not None:
            return f"{value:.{self.decimals}f}"
        return raw


@dataclass(frozen=True)
class AugmentationSpec:
    mode: str = "none"
    limit: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in AUGMENTATION_MODES:
            raise ConfigError("augmentation.mode", f"must be one of {AUGMENTATION_MODES}")
        if self.mode in ("per_unit", "total") and (self.limit is None or self.limit < 1):
            raise ConfigError("augmentation.limit", f"mode '{self.mode}' needs a positive limit")


@dataclass(frozen=True)
class DatasetSchema:
    name: str
    smiles_column: str = "smiles"
    label_column: str | None = None
    max_components: int = 1
    component_descriptors: tuple[DescriptorSpec, ...] = ()
    global_descriptors: tuple[DescriptorSpec, ...] = ()
    id_column: str | None = None
    split_column: str | None = None
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    extra_tokens: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.max_components < 1:
            raise ConfigError("max_components", "must be >= 1")
        if self.max_components > 1 and "{i}" not in self.smiles_column:
            raise ConfigError("smiles_column", "needs '{i}' when max_components > 1")

    # -- column helpers ------------------------------------------------
    def column(self, template: str, i: int) -> str:
        return template.replace("{i}", str(i + 1))

    def smiles_columns(self) -> list[str]:
        return [self.column(self.smiles_column, i) for i in range(self.max_components)]

    def expanded_globals(self) -> list[tuple[DescriptorSpec, str]]:
        """(spec, column) for every global slot, per-component ones expanded."""
        out = []
        for spec in self.global_descriptors:
            if spec.per_component:
                out += [(spec, self.column(spec.column, i)) for i in range(self.max_components)]
            else:
                out.append((spec, spec.column))
        return out

    def all_descriptors(self) -> list[DescriptorSpec]:
        return list(self.component_descriptors) + list(self.global_descriptors)

    def nan_tokens(self) -> list[str]:
        seen: dict[str, None] = {}
        for spec in self.all_descriptors():
            seen.setdefault(spec.nan_token)
        return list(seen)

    def required_columns(self) -> list[str]:
        cols = list(self.smiles_columns())
        for i in range(self.max_components):
            cols += [self.column(d.column, i) for d in self.component_descriptors]
        cols += [c for _, c in self.expanded_globals()]
        if self.label_column:
            cols.append(self.label_column)
        for extra in (self.id_column, self.split_column):
            if extra:
                cols.append(extra)
        return cols


def _descriptor(raw: dict, where: str) -> DescriptorSpec:
    allowed = {"name", "column", "kind", "decimals", "per_component"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}", "unknown key")
    if "name" not in raw:
        raise ConfigError(f"{where}.name", "missing")
    kind = raw.get("kind", "value")
    if kind not in DESCRIPTOR_KINDS:
        raise ConfigError(f"{where}.kind", f"must be one of {DESCRIPTOR_KINDS}")
    return DescriptorSpec(
        name=raw["name"],
        column=raw.get("column", raw["name"]),
        kind=kind,
        decimals=raw.get("decimals"),
        per_component=bool(raw.get("per_component", False)),
    )


def schema_from_dict(raw: dict) -> DatasetSchema:
    allowed = {
        "format", "name", "smiles_column", "label_column", "max_components",
        "component_descriptors", "global_descriptors", "id_column",
        "split_column", "augmentation", "extra_tokens",
    }
    for key in raw:
        if key not in allowed:
            raise ConfigError(key, "unknown key")
    if raw.get("format") != 1:
        raise ConfigError("format", "expected format = 1")
    if "name" not in raw:
        raise ConfigError("name", "missing")
    aug = raw.get("augmentation", {})
    for key in aug:
        if key not in ("mode", "limit"):
            raise ConfigError(f"augmentation.{key}", "unknown key")
    return DatasetSchema(
        name=raw["name"],
        smiles_column=raw.get("smiles_column", "smiles"),
        label_column=raw.get("label_column"),
        max_components=int(raw.get("max_components", 1)),
        component_descriptors=tuple(
            _descriptor(d, f"component_descriptors[{i}]")
            for i, d in enumerate(raw.get("component_descriptors", []))
        ),
        global_descriptors=tuple(
            _descriptor(d, f"global_descriptors[{i}]")
            for i, d in enumerate(raw.get("global_descriptors", []))
        ),
        id_column=raw.get("id_column"),
        split_column=raw.get("split_column"),
        augmentation=AugmentationSpec(aug.get("mode", "none"), aug.get("limit")),
        extra_tokens=tuple(raw.get("extra_tokens", ())),
    )


def load_schema(path: str | os.PathLike) -> DatasetSchema:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("schema", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("schema", f"invalid TOML: {exc}") from None
    return schema_from_dict(raw)


def check_names(expected: list[str], got: list[str], what: str) -> None:
    if expected != got:
        raise SchemaError(f"{what} descriptors {got} do not match schema order {expected}")
