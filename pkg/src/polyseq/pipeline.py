"""Pretrain, finetune and evaluate runs driven by a :class:`TrainConfig`.

Output layout under ``config.output_dir``::

    pretrain/vocab.txt  pretrain/epoch_NNN.ckpt  pretrain/best.ckpt
    pretrain/train.log  pretrain/history.csv
    finetune/splits.csv  finetune/fold_K.ckpt  finetune/fold_K.log
    finetune/metrics.csv  finetune/history.csv
    eval/metrics.csv
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from polyseq.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from polyseq.config import TrainConfig
from polyseq.data import (
    Fold,
    SplitPlan,
    augment_train,
    load_dataset,
    make_splits,
    read_sequences,
    select,
    split_units,
    write_split_file,
)
from polyseq.errors import CheckpointError, ConfigError
from polyseq.io import atomic_write
from polyseq.model import ModelConfig, ParamStore
from polyseq.optim import AdamWState
from polyseq.schema import DatasetSchema, load_schema
from polyseq.smiles import enumerate_smiles, parse_one
from polyseq.tokenizer import PolymerRecord, Vocabulary, assemble_sequence, build_vocab, encode, tokenize
from polyseq.training import (
    EncodedSet,
    EpochRecord,
    Metrics,
    StepLog,
    evaluate,
    finetune,
    mean_metrics,
    predict,
    pretrain,
    write_metrics_csv,
)

log = logging.getLogger(__name__)


@dataclass
class FoldOutcome:
    fold: int
    metrics: Metrics
    best_epoch: int
    checkpoint: Path


# -- encoding -------------------------------------------------------------


def encode_sequences(
    sequences: Sequence[str], vocab: Vocabulary, max_length: int, labels: Sequence[float] | None = None,
    schema: DatasetSchema | None = None,
) -> EncodedSet:
    enc = [encode(tokenize(s, schema), vocab, max_length) for s in sequences]
    return EncodedSet(
        np.array([e.ids for e in enc], dtype=np.int64).reshape(len(enc), max_length),
        np.array([e.attention_mask for e in enc], dtype=np.int64).reshape(len(enc), max_length),
        None if labels is None else np.asarray(labels, dtype=np.float64),
    )


def encode_records(
    records: Sequence[PolymerRecord], schema: DatasetSchema, vocab: Vocabulary, max_length: int
) -> EncodedSet:
    seqs = [assemble_sequence(r, schema) for r in records]
    return encode_sequences(seqs, vocab, max_length, [r.label for r in records], schema)


def _moment_tensors(state: AdamWState | None) -> dict[str, np.ndarray]:
    if state is None:
        return {}
    out = {f"optim.m.{k}": a for k, a in state.m.items()}
    out.update({f"optim.v.{k}": a for k, a in state.v.items()})
    return out


def _checkpoint(kind: str, model_cfg: ModelConfig, vocab: Vocabulary, params: ParamStore | dict,
                opt: AdamWState | None, **extra) -> Checkpoint:
    state = params.state() if isinstance(params, ParamStore) else params
    meta = {
        "kind": kind,
        "model_config": model_cfg.to_dict(),
        "vocab": list(vocab.id_to_token),
        "optimizer_step": 0 if opt is None else opt.step,
        **extra,
    }
    return Checkpoint(meta, {**state, **_moment_tensors(opt)})


def checkpoint_model(ckpt: Checkpoint) -> tuple[ModelConfig, Vocabulary]:
    try:
        return ModelConfig(**ckpt.meta["model_config"]), Vocabulary(tuple(ckpt.meta["vocab"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint metadata is incomplete: {exc}") from None


def load_model(path: str | Path) -> tuple[Checkpoint, ModelConfig, Vocabulary, ParamStore]:
    """Checkpoint plus ready-to-run parameters (no optimizer moments)."""
    from polyseq.tensor import Tensor

    ckpt = load_checkpoint(path)
    model_cfg, vocab = checkpoint_model(ckpt)
    params = ParamStore()
    for name, arr in ckpt.params().items():
        params[name] = Tensor(arr)
    return ckpt, model_cfg, vocab, params


# -- pretraining ----------------------------------------------------------


def _rotations(line: str, n: int, rng: np.random.Generator) -> list[str]:
    """Up to ``n`` distinct rotations of a plain SMILES line, original first."""
    if n <= 1 or any(c in line for c in "$|"):
        return [line]
    slots = []
    for unit in split_units(line):
        if unit in ".^":
            slots.append([unit])
            continue
        rot = [s for s in enumerate_smiles(parse_one(unit)) if s != unit]
        slots.append([unit] + [rot[i] for i in rng.permutation(len(rot))])
    out, seen = [], set()
    for combo in itertools.product(*slots):
        s = "".join(combo)
        if s not in seen:
            seen.add(s)
            out.append(s)
        if len(out) >= n:
            break
    return out


def pretrain_corpus(cfg: TrainConfig, schema: DatasetSchema | None) -> list[str]:
    """Assembled pretraining sequences (CSV via the schema, or one sequence per line)."""
    if not cfg.data.pretrain_corpus:
        raise ConfigError("data.pretrain_corpus", "required for pretraining")
    path = cfg.path(cfg.data.pretrain_corpus)
    if path.suffix.lower() == ".csv":
        if schema is None:
            raise ConfigError("data.schema", "a CSV pretraining corpus needs a schema")
        lines = [assemble_sequence(r, schema) for r in load_dataset(path, schema, cfg.data.skip_bad_rows)]
    else:
        if not path.is_file():
            raise ConfigError("data.pretrain_corpus", f"file not found: {path}")
        lines = read_sequences(path)
    rng = np.random.default_rng([cfg.pretrain.seed, 31])
    return [s for line in lines for s in _rotations(line, cfg.data.pretrain_augment, rng)]


def _schema(cfg: TrainConfig, required: bool) -> DatasetSchema | None:
    if not cfg.data.schema:
        if required:
            raise ConfigError("data.schema", "required")
        return None
    path = cfg.path(cfg.data.schema)
    if not path.is_file():
        raise ConfigError("data.schema", f"file not found: {path}")
    return load_schema(path)


def run_pretrain(cfg: TrainConfig) -> Path:
    """MLM pretraining; returns the path of the best-validation checkpoint."""
    schema = _schema(cfg, required=False)
    sequences = pretrain_corpus(cfg, schema)
    tokens = [tokenize(s, schema) for s in sequences]
    vocab = build_vocab(tokens, cfg.data.min_count, schema.nan_tokens() if schema else ())
    max_length = cfg.data.max_length
    data = encode_sequences(sequences, vocab, max_length, schema=schema)
    model_cfg = cfg.model_config(len(vocab))
    if model_cfg.max_length < max_length:
        raise ConfigError("model.max_length", f"must be >= data.max_length ({max_length})")

    out = cfg.out / "pretrain"
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    meta = {"run_id": cfg.run_id, "max_length": max_length, "seed": cfg.pretrain.seed}

    def on_epoch(epoch: int, params: ParamStore, record: EpochRecord, opt: AdamWState) -> None:
        ckpt = _checkpoint("pretrain", model_cfg, vocab, params, opt, epoch=epoch, **meta)
        save_checkpoint(out / f"epoch_{epoch:03d}.ckpt", ckpt)

    with atomic_write(out / "train.log", "w", encoding="utf-8") as fh:
        result = pretrain(data, vocab, model_cfg, cfg.pretrain, StepLog(fh), on_epoch)
    best = out / "best.ckpt"
    save_checkpoint(
        best,
        _checkpoint("pretrain", model_cfg, vocab, result.params, result.optimizer, epoch=result.best_epoch, **meta),
    )
    with atomic_write(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for h in result.history:
            w.writerow([h.epoch, repr(h.train_loss), "" if h.val_loss is None else repr(h.val_loss)])
    log.info("pretraining done; best epoch %d -> %s", result.best_epoch, best)
    return best


# -- finetuning -----------------------------------------------------------


def _extend_embeddings(weights: dict[str, np.ndarray], old: int, new: int, std: float, seed: int) -> dict:
    """Append freshly initialized embedding rows for tokens added at finetune time."""
    emb = weights["embed.tokens.weight"]
    if emb.shape[0] != old:
        raise CheckpointError("embedding rows do not match the checkpoint vocabulary")
    if new == old:
        return weights
    rng = np.random.default_rng([seed, 4099])
    extra = (rng.standard_normal((new - old, emb.shape[1])) * std).astype(emb.dtype)
    return {**weights, "embed.tokens.weight": np.concatenate([emb, extra])}


def _pretrained(cfg: TrainConfig) -> Checkpoint | None:
    if not cfg.pretrained:
        return None
    path = cfg.path(cfg.pretrained)
    if not path.is_file():
        raise ConfigError("finetune.pretrained", f"checkpoint not found: {path}")
    return load_checkpoint(path)


def load_records(cfg: TrainConfig, schema: DatasetSchema) -> list[PolymerRecord]:
    if not cfg.data.dataset:
        raise ConfigError("data.dataset", "required")
    path = cfg.path(cfg.data.dataset)
    if not path.is_file():
        raise ConfigError("data.dataset", f"file not found: {path}")
    return load_dataset(path, schema, cfg.data.skip_bad_rows)


def plan_splits(cfg: TrainConfig, records: Sequence[PolymerRecord]) -> list[Fold]:
    s = cfg.split
    return make_splits(records, SplitPlan(s.kind, s.k, s.seed, tuple(sorted(s.routes.items()))))


def fold_data(
    cfg: TrainConfig, schema: DatasetSchema, records: Sequence[PolymerRecord], fold: Fold
) -> tuple[list[PolymerRecord], list[PolymerRecord]]:
    """(augmented train, test) records; augmentation never touches the test split."""
    train = select(records, fold.train_ids)
    test = select(records, fold.test_ids)
    if cfg.data.augment:
        train = augment_train(train, schema, seed=cfg.split.seed + fold.index)
    return train, test


def run_finetune(cfg: TrainConfig, freeze_encoder: bool | None = None) -> list[FoldOutcome]:
    """Finetune every fold and write metrics (fold rows plus a mean row)."""
    ft = cfg.finetune
    if freeze_encoder is not None:
        ft = type(ft)(**{**ft.__dict__, "freeze_encoder": freeze_encoder})
    schema = _schema(cfg, required=True)
    base = _pretrained(cfg)
    if ft.freeze_encoder and base is None:
        raise ConfigError("finetune.pretrained", "freezing the encoder needs a pretrained checkpoint")
    records = load_records(cfg, schema)
    folds = plan_splits(cfg, records)
    max_length = cfg.data.max_length

    out = cfg.out / "finetune"
    out.mkdir(parents=True, exist_ok=True)
    write_split_file(folds, out / "splits.csv", cfg.split.kind)

    outcomes: list[FoldOutcome] = []
    rows: list[dict] = []
    history_rows: list[list] = []
    for fold in folds:
        train, test = fold_data(cfg, schema, records, fold)
        train_tokens = [tokenize(assemble_sequence(r, schema), schema) for r in train]
        if base is None:
            vocab = build_vocab(train_tokens, cfg.data.min_count, schema.nan_tokens())
            model_cfg = cfg.model_config(len(vocab))
            weights = None
        else:
            base_cfg, base_vocab = checkpoint_model(base)
            vocab = base_vocab.extended(
                list(schema.nan_tokens()) + sorted({t for toks in train_tokens for t in toks})
            )
            model_cfg = ModelConfig(**{**base_cfg.to_dict(), "vocab_size": len(vocab)})
            weights = _extend_embeddings(
                base.params(), len(base_vocab), len(vocab), model_cfg.init_std, ft.seed
            )
        if model_cfg.max_length < max_length:
            raise ConfigError("data.max_length", f"exceeds model max_length ({model_cfg.max_length})")
        train_set = encode_records(train, schema, vocab, max_length)
        test_set = encode_records(test, schema, vocab, max_length)

        with atomic_write(out / f"fold_{fold.index}.log", "w", encoding="utf-8") as fh:
            result = finetune(train_set, test_set, model_cfg, ft, weights, StepLog(fh))
        path = out / f"fold_{fold.index}.ckpt"
        save_checkpoint(
            path,
            _checkpoint(
                "finetune", model_cfg, vocab, result.params, result.optimizer,
                run_id=cfg.run_id, fold=fold.index, epoch=result.best_epoch, max_length=max_length,
                label_mean=result.label_mean, label_std=result.label_std,
                freeze_encoder=ft.freeze_encoder, dataset=schema.name,
                test_ids=list(fold.test_ids),
            ),
        )
        m = result.best_metrics
        outcomes.append(FoldOutcome(fold.index, m, result.best_epoch, path))
        rows.append(_row(cfg.run_id, schema.name, fold.index, result.best_epoch, m))
        history_rows += [[fold.index, e, repr(h.rmse), repr(h.r2)] for e, h in result.history]
        log.info("fold %d: rmse %.4f r2 %.4f (epoch %d)", fold.index, m.rmse, m.r2, result.best_epoch)

    mean = mean_metrics([o.metrics for o in outcomes])
    rows.append(_row(cfg.run_id, schema.name, "mean", "", mean))
    write_metrics_csv(rows, out / "metrics.csv")
    with atomic_write(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "epoch", "rmse", "r2"])
        w.writerows(history_rows)
    return outcomes


def _row(run_id: str, dataset: str, fold, epoch, m: Metrics) -> dict:
    return {"run_id": run_id, "dataset": dataset, "fold": fold, "epoch": epoch, "split": "test",
            "rmse": m.rmse, "r2": m.r2}


# -- evaluation -----------------------------------------------------------


def evaluate_checkpoint(
    path: str | Path, records: Sequence[PolymerRecord], schema: DatasetSchema
) -> tuple[Metrics, np.ndarray]:
    """Metrics of a finetuned checkpoint on ``records``."""
    ckpt, model_cfg, vocab, params = load_model(path)
    if ckpt.meta.get("kind") != "finetune" or "reg.out.weight" not in params:
        raise CheckpointError(f"{path}: not a finetuned regression checkpoint")
    data = encode_records(records, schema, vocab, int(ckpt.meta["max_length"]))
    pred = predict(params, model_cfg, data, float(ckpt.meta["label_mean"]), float(ckpt.meta["label_std"]))
    return evaluate(pred, data.labels), pred


def run_eval(cfg: TrainConfig, ckpt: str | Path) -> list[Metrics]:
    """Evaluate one fold checkpoint, or every ``fold_*.ckpt`` in a directory.

    Each checkpoint is scored on the test ids it was held out on (all records
    when it carries none).  Several checkpoints also get a mean row.
    """
    ckpt = Path(ckpt)
    if ckpt.is_dir():
        paths = sorted(ckpt.glob("fold_*.ckpt"), key=lambda p: int(p.stem.split("_")[1]))
        if not paths:
            raise ConfigError("ckpt", f"no fold_*.ckpt files in {ckpt}")
    elif ckpt.is_file():
        paths = [ckpt]
    else:
        raise ConfigError("ckpt", f"checkpoint not found: {ckpt}")
    schema = _schema(cfg, required=True)
    records = load_records(cfg, schema)
    by_id = {r.record_id for r in records}

    results, rows = [], []
    for p in paths:
        meta = load_checkpoint(p).meta
        ids = meta.get("test_ids")
        subset = records if not ids else select(records, [i for i in ids if i in by_id])
        m, _ = evaluate_checkpoint(p, subset, schema)
        results.append(m)
        rows.append(_row(cfg.run_id, schema.name, meta.get("fold", ""), meta.get("epoch", ""), m))
    if len(results) > 1:
        rows.append(_row(cfg.run_id, schema.name, "mean", "", mean_metrics(results)))
    out = cfg.out / "eval"
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "metrics.csv")
    return results
