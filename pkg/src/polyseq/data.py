"""Dataset loading, train/test splitting and training-set augmentation."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from polyseq.errors import DatasetError, EmptySplit, PolyseqError, RowError, SchemaError
from polyseq.io import atomic_write
from polyseq.schema import DatasetSchema
from polyseq.smiles import enumerate_smiles, parse_one, parse_smiles
from polyseq.tokenizer import Descriptor, PolymerComponent, PolymerRecord, assemble_sequence

log = logging.getLogger(__name__)

MISSING = frozenset({"", "nan", "na", "n/a", "none", "null"})


def worker_count() -> int:
    """Worker cap from POLYSEQ_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("POLYSEQ_THREADS", "1")))
    except ValueError:
        return 1


def split_units(smiles: str) -> list[str]:
    """Split on the copolymer separators ``.`` and ``^``, keeping them as items."""
    out: list[str] = []
    current = ""
    for ch in smiles:
        if ch in ".^":
            out += [current, ch]
            current = ""
        else:
            current += ch
    out.append(current)
    return out


def validate_polymer_smiles(smiles: str) -> None:
    for unit in split_units(smiles):
        if unit not in ".^":
            parse_smiles(unit)


# -- loading --------------------------------------------------------------


def _descriptor(spec, raw: str | None) -> Descriptor:
    if raw is None or raw.strip().lower() in MISSING:
        return Descriptor(spec.name, None)
    return Descriptor(spec.name, spec.format_value(raw))


def record_from_row(row: dict[str, str], schema: DatasetSchema, line: int) -> PolymerRecord:
    """Build one record; raises RowError naming the offending column."""
    components = []
    for i, col in enumerate(schema.smiles_columns()):
        smiles = (row.get(col) or "").strip()
        if not smiles:
            continue
        try:
            validate_polymer_smiles(smiles)
        except PolyseqError as exc:
            raise RowError(line, col, f"invalid SMILES {smiles!r}: {exc}") from None
        descs = []
        for spec in schema.component_descriptors:
            column = schema.column(spec.column, i)
            try:
                descs.append(_descriptor(spec, row.get(column)))
            except ValueError as exc:
                raise RowError(line, column, str(exc)) from None
        components.append(PolymerComponent(smiles, tuple(descs)))
    if not components:
        raise RowError(line, schema.smiles_columns()[0], "no SMILES in row")
    globals_ = []
    for spec, column in schema.expanded_globals():
        try:
            globals_.append(_descriptor(spec, row.get(column)))
        except ValueError as exc:
            raise RowError(line, column, str(exc)) from None
    label = None
    if schema.label_column:
        raw = (row.get(schema.label_column) or "").strip()
        try:
            label = float(raw)
        except ValueError:
            raise RowError(line, schema.label_column, f"label {raw!r} is not a number") from None
        if not math.isfinite(label):
            raise RowError(line, schema.label_column, "label is not finite")
    record_id = row.get(schema.id_column, "").strip() if schema.id_column else ""
    split_value = row.get(schema.split_column, "").strip() if schema.split_column else None
    return PolymerRecord(
        components=tuple(components),
        global_descriptors=tuple(globals_),
        label=label,
        record_id=record_id or str(line - 2),
        split_value=split_value,
    )


def load_dataset(
    path: str | os.PathLike, schema: DatasetSchema, skip_bad_rows: bool = False
) -> list[PolymerRecord]:
    """One record per CSV row.

    Bad rows are collected; with ``skip_bad_rows`` they are logged and
    dropped, otherwise a DatasetError listing all of them is raised.
    """
    errors: list[RowError] = []
    records: list[PolymerRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.required_columns() if c not in header]
        if missing:
            raise SchemaError(f"{path}: header lacks columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                records.append(record_from_row(row, schema, line))
            except RowError as exc:
                errors.append(exc)
    if errors:
        if not skip_bad_rows:
            raise DatasetError(errors)
        for e in errors:
            log.warning("skipping %s", e)
    ids = [r.record_id for r in records]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate record ids")
    return records


def record_to_row(record: PolymerRecord, schema: DatasetSchema) -> dict[str, str]:
    row: dict[str, str] = {}
    if schema.id_column:
        row[schema.id_column] = record.record_id
    for i, col in enumerate(schema.smiles_columns()):
        comp = record.components[i] if i < len(record.components) else None
        row[col] = comp.smiles if comp else ""
        for j, spec in enumerate(schema.component_descriptors):
            value = comp.descriptors[j].value if comp else None
            row[schema.column(spec.column, i)] = value or ""
    for (spec, column), d in zip(schema.expanded_globals(), record.global_descriptors):
        row[column] = d.value or ""
    if schema.label_column:
        row[schema.label_column] = "" if record.label is None else repr(record.label)
    if schema.split_column:
        row[schema.split_column] = record.split_value or ""
    return row


def write_dataset(records: Iterable[PolymerRecord], schema: DatasetSchema, path: str | os.PathLike) -> None:
    columns = list(dict.fromkeys(schema.required_columns()))
    with atomic_write(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(record_to_row(r, schema))


# -- splitting ------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    kind: str = "kfold"  # "kfold" | "holdout"
    k: int = 5
    seed: int = 0
    # holdout: split-column value -> "train" | "test"
    routes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("kfold", "holdout"):
            raise ValueError(f"unknown split kind {self.kind!r}")
        if self.kind == "kfold" and self.k < 2:
            raise ValueError("k must be >= 2")


@dataclass(frozen=True)
class Fold:
    index: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def make_splits(records: Sequence[PolymerRecord], plan: SplitPlan) -> list[Fold]:
    """Deterministic folds: seeded shuffle + contiguous slices, or holdout by column."""
    ids = [r.record_id for r in records]
    if plan.kind == "holdout":
        routes = dict(plan.routes)
        train, test = [], []
        for r in records:
            where = routes.get(r.split_value or "")
            if where == "train":
                train.append(r.record_id)
            elif where == "test":
                test.append(r.record_id)
        if not train or not test:
            raise EmptySplit(f"holdout split has {len(train)} train / {len(test)} test records")
        return [Fold(0, tuple(train), tuple(test))]
    if len(ids) < plan.k:
        raise EmptySplit(f"{len(ids)} records cannot fill {plan.k} folds")
    order = np.random.default_rng(plan.seed).permutation(len(ids))
    chunks = np.array_split(order, plan.k)
    folds = []
    for f, chunk in enumerate(chunks):
        test = set(chunk.tolist())
        folds.append(
            Fold(
                f,
                tuple(ids[i] for i in range(len(ids)) if i not in test),
                tuple(ids[i] for i in sorted(test)),
            )
        )
    return folds


def write_split_file(folds: Sequence[Fold], path: str | os.PathLike, kind: str = "kfold") -> None:
    """CSV of record_id and its test fold (k-fold) or train/test split (holdout)."""
    rows = []
    if kind == "holdout":
        rows = [(rid, "train") for rid in folds[0].train_ids] + [(rid, "test") for rid in folds[0].test_ids]
        header = ("record_id", "split")
    else:
        rows = sorted(((rid, str(f.index)) for f in folds for rid in f.test_ids), key=lambda r: r[0])
        header = ("record_id", "fold")
    with atomic_write(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def select(records: Sequence[PolymerRecord], ids: Iterable[str]) -> list[PolymerRecord]:
    by_id = {r.record_id: r for r in records}
    return [by_id[i] for i in ids]


# -- augmentation ---------------------------------------------------------


def _unit_variants(unit: str, limit: int | None, rng: np.random.Generator | None) -> list[str]:
    rotations = [s for s in enumerate_smiles(parse_one(unit)) if s != unit]
    if rng is not None:
        rotations = [rotations[i] for i in rng.permutation(len(rotations))]
    variants = [unit] + rotations
    return variants if limit is None else variants[:limit]


def augment_record(record: PolymerRecord, schema: DatasetSchema, seed: int = 0) -> list[PolymerRecord]:
    """Original record first, then rotation variants under the schema's mode."""
    mode, limit = schema.augmentation.mode, schema.augmentation.limit
    if mode == "none":
        return [record]
    rng = np.random.default_rng([seed, _stable_hash(record.record_id)]) if mode != "unlimited" else None
    try:
        layout = [split_units(c.smiles) for c in record.components]
        slots: list[list[str]] = []
        for units in layout:
            for u in units:
                if u in ".^":
                    slots.append([u])
                else:
                    slots.append(_unit_variants(u, limit if mode == "per_unit" else None, rng))
    except PolyseqError as exc:
        warnings.warn(f"augmentation failed for record {record.record_id}: {exc}")
        return [record]

    combos = itertools.product(*slots)
    out: list[PolymerRecord] = []
    seen: set[str] = set()
    for combo in combos:
        pos = 0
        comps = []
        for c, units in zip(record.components, layout):
            comps.append(replace(c, smiles="".join(combo[pos : pos + len(units)])))
            pos += len(units)
        new = replace(
            record,
            components=tuple(comps),
            record_id=record.record_id if not out else f"{record.record_id}~{len(out)}",
        )
        key = assemble_sequence(new)
        if key in seen:
            continue
        seen.add(key)
        out.append(new if out else record)
        if mode == "total" and len(out) >= limit:  # type: ignore[operator]
            break
    return out


def _stable_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def _augment_one(args):
    record, schema, seed = args
    return augment_record(record, schema, seed)


def augment_train(
    records: Sequence[PolymerRecord], schema: DatasetSchema, seed: int = 0
) -> list[PolymerRecord]:
    """Expand training records by SMILES rotation; call only on the train split."""
    jobs = [(r, schema, seed) for r in records]
    workers = min(worker_count(), max(1, len(jobs)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            expanded = list(pool.map(_augment_one, jobs, chunksize=16))
    else:
        expanded = [_augment_one(j) for j in jobs]
    return [r for group in expanded for r in group]


def assembled_overlap(
    a: Iterable[PolymerRecord], b: Iterable[PolymerRecord], schema: DatasetSchema | None = None
) -> set[str]:
    """Assembled sequences present in both record collections."""
    return {assemble_sequence(r, schema) for r in a} & {assemble_sequence(r, schema) for r in b}


def read_sequences(path: str | os.PathLike) -> list[str]:
    """Non-empty lines of a plain text file of assembled sequences."""
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
