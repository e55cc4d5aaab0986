"""MLM pretraining and regression finetuning."""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import IO, Callable, Iterator, Sequence

import numpy as np

from polyseq import tensor as T
from polyseq.errors import DegenerateBatch, DegenerateLabels, NumericalError, ParameterNameError
from polyseq.io import atomic_write
from polyseq.model import (
    ModelConfig,
    ParamStore,
    RunState,
    encoder_forward,
    init_encoder,
    init_mlm_head,
    init_regression_head,
    layer_of,
    mlm_head,
    regression_head,
)
from polyseq.optim import AdamW, AdamWState, ParamGroup
from polyseq.tokenizer import Vocabulary

log = logging.getLogger(__name__)

IGNORE_INDEX = -100
METRICS_COLUMNS = ("run_id", "dataset", "fold", "epoch", "split", "rmse", "r2")


# -- masking --------------------------------------------------------------


@dataclass(frozen=True)
class MaskingPolicy:
    select_prob: float = 0.15
    mask_frac: float = 0.8
    random_frac: float = 0.1
    keep_frac: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if abs(self.mask_frac + self.random_frac + self.keep_frac - 1.0) > 1e-9:
            raise ValueError("mask_frac + random_frac + keep_frac must equal 1")
        if not 0.0 <= self.select_prob <= 1.0:
            raise ValueError("select_prob must be in [0, 1]")


def selection_count(maskable: int, select_prob: float = 0.15) -> int:
    """floor(select_prob * m + 0.5); sequences with m <= 3 get no selection at 0.15."""
    if maskable <= 0:
        return 0
    return min(maskable, math.floor(select_prob * maskable + 0.5))


def apply_masking(
    ids: Sequence[int] | np.ndarray,
    policy: MaskingPolicy,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt one id sequence for MLM.

    Returns (input ids, labels) where labels hold the original id at selected
    positions and IGNORE_INDEX elsewhere.  Special tokens are never selected.
    """
    ids = np.asarray(ids, dtype=np.int64)
    inputs = ids.copy()
    labels = np.full_like(ids, IGNORE_INDEX)
    special = np.fromiter(vocab.special_ids, dtype=np.int64)
    candidates = np.nonzero(~np.isin(ids, special))[0]
    n = selection_count(len(candidates), policy.select_prob)
    if n == 0:
        return inputs, labels
    chosen = rng.choice(candidates, size=n, replace=False)
    labels[chosen] = ids[chosen]
    action = rng.choice(3, size=n, p=[policy.mask_frac, policy.random_frac, policy.keep_frac])
    inputs[chosen[action == 0]] = vocab.mask_id
    n_random = int((action == 1).sum())
    if n_random:
        inputs[chosen[action == 1]] = rng.integers(len(special), len(vocab), size=n_random)
    return inputs, labels


def mask_batch(
    ids: np.ndarray, policy: MaskingPolicy, vocab: Vocabulary, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    pairs = [apply_masking(row, policy, vocab, rng) for row in ids]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


# -- losses ---------------------------------------------------------------


def mlm_loss(logits: T.Tensor, labels) -> T.Tensor:
    """Mean cross-entropy over positions whose label is not IGNORE_INDEX."""
    labels = np.asarray(labels)
    if not (labels != IGNORE_INDEX).any():
        raise DegenerateBatch("no masked positions in batch")
    return T.cross_entropy(logits, labels, ignore_index=IGNORE_INDEX)


def regression_loss(pred: T.Tensor, label) -> T.Tensor:
    """Mean squared error."""
    diff = pred - T.as_tensor(np.asarray(label, dtype=pred.dtype).reshape(pred.shape))
    return T.mean(diff * diff)


# -- schedules ------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "linear_warmup_linear_decay"  # or "linear_warmup_cosine"
    warmup_ratio: float = 0.05
    total_steps: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("linear_warmup_linear_decay", "linear_warmup_cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must be in [0, 1]")

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_ratio * self.total_steps)


def lr_at(step: int, schedule: ScheduleConfig, peak: float) -> float:
    """Linear warmup from 0 to ``peak``, then linear or cosine decay to 0."""
    warm = schedule.warmup_steps
    step = min(max(step, 0), schedule.total_steps)
    if step < warm:
        return peak * step / warm
    span = schedule.total_steps - warm
    progress = (step - warm) / span if span > 0 else 1.0
    if schedule.kind == "linear_warmup_linear_decay":
        return peak * max(0.0, 1.0 - progress)
    return 0.5 * peak * (1.0 + math.cos(math.pi * progress))


# -- layer-wise learning-rate decay ---------------------------------------


@dataclass(frozen=True)
class LLRDConfig:
    head_lr: float = 1e-4
    top_layer_lr: float = 5e-5
    decay_factor: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must be in (0, 1]")


def build_llrd_groups(
    params: ParamStore | dict, cfg: LLRDConfig, weight_decay: float = 0.0, n_layers: int | None = None
) -> list[ParamGroup]:
    """Partition parameters: heads at head_lr, encoder layer l of L at
    top_layer_lr * decay^(L - l) (layers counted 1..L from the input side),
    embeddings at top_layer_lr * decay^L."""
    heads: dict = {}
    layers: dict[int, dict] = {}
    embeds: dict = {}
    for name, p in params.items():
        if name.startswith(("reg.", "mlm.")):
            heads[name] = p
        elif name.startswith("embed."):
            embeds[name] = p
        elif name.startswith("enc."):
            idx = layer_of(name)
            if idx is None:
                raise ParameterNameError(f"cannot parse layer index from {name!r}")
            layers.setdefault(idx, {})[name] = p
        else:
            raise ParameterNameError(f"parameter {name!r} belongs to no known group")
    L = n_layers if n_layers is not None else (max(layers) + 1 if layers else 0)
    groups = []
    if heads:
        groups.append(ParamGroup("head", heads, cfg.head_lr, weight_decay))
    for idx in sorted(layers, reverse=True):
        lr = cfg.top_layer_lr * cfg.decay_factor ** (L - (idx + 1))
        groups.append(ParamGroup(f"enc.{idx}", layers[idx], lr, weight_decay))
    if embeds:
        groups.append(ParamGroup("embed", embeds, cfg.top_layer_lr * cfg.decay_factor**L, weight_decay))
    return groups


# -- metrics --------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    rmse: float
    r2: float
    n: int = 0


def evaluate(pred: Sequence[float], labels: Sequence[float]) -> Metrics:
    """RMSE and R^2 = 1 - SSE/SST with SST around this set's own mean."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape or p.size == 0:
        raise ValueError(f"need equal non-zero lengths, got {p.size} and {y.size}")
    sse = float(((p - y) ** 2).sum())
    sst = float(((y - y.mean()) ** 2).sum())
    rmse = math.sqrt(sse / y.size)
    if sst == 0.0:
        warnings.warn("all labels equal; R2 is undefined", DegenerateLabels, stacklevel=2)
        return Metrics(rmse, float("nan"), int(y.size))
    return Metrics(rmse, 1.0 - sse / sst, int(y.size))


def mean_metrics(items: Sequence[Metrics]) -> Metrics:
    return Metrics(
        float(np.mean([m.rmse for m in items])),
        float(np.mean([m.r2 for m in items])),
        int(sum(m.n for m in items)),
    )


def write_metrics_csv(rows: Sequence[dict], path: str | os.PathLike) -> None:
    with atomic_write(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in METRICS_COLUMNS})


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- batching -------------------------------------------------------------


@dataclass
class EncodedSet:
    """Padded id matrix, attention mask and optional labels."""

    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index) -> EncodedSet:
        index = np.asarray(index, dtype=np.int64)
        return EncodedSet(
            self.ids[index], self.mask[index], None if self.labels is None else self.labels[index]
        )


def batches(n: int, batch_size: int, rng: np.random.Generator | None) -> Iterator[np.ndarray]:
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def trim(ids: np.ndarray, mask: np.ndarray, *extra: np.ndarray):
    """Drop trailing columns that are padding in every row."""
    width = max(1, int(mask.sum(axis=1).max()))
    return (ids[:, :width], mask[:, :width]) + tuple(e[:, :width] for e in extra)


def _check_finite(loss: float, where: str) -> None:
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss} at {where}")


class StepLog:
    """One ``step<TAB>lr<TAB>loss`` line per optimizer step."""

    def __init__(self, fh: IO[str] | None) -> None:
        self.fh = fh
        if fh is not None:
            fh.write("step\tlr\tloss\n")

    def __call__(self, step: int, lr: float, loss: float) -> None:
        if self.fh is not None:
            self.fh.write(f"{step}\t{lr:.8e}\t{loss:.8f}\n")


# -- pretraining ----------------------------------------------------------


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 200
    lr: float = 5e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-6
    weight_decay: float = 0.0
    warmup_ratio: float = 0.05
    val_fraction: float = 0.2
    seed: int = 0
    dynamic_masking: bool = True
    max_steps: int | None = None
    max_grad_norm: float | None = None
    masking: MaskingPolicy = field(default_factory=MaskingPolicy)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None


@dataclass
class PretrainResult:
    params: ParamStore  # best-epoch weights
    config: ModelConfig
    history: list[EpochRecord]
    step_losses: list[float]
    best_epoch: int
    train_index: np.ndarray
    val_index: np.ndarray
    optimizer: AdamWState | None = None


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng([seed, 7919]).permutation(n)
    n_val = int(round(n * val_fraction)) if n > 1 else 0
    n_val = min(n_val, n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def mlm_batch_loss(
    params: ParamStore, model_cfg: ModelConfig, inputs: np.ndarray, mask: np.ndarray, labels: np.ndarray,
    run: RunState,
) -> T.Tensor:
    hidden = encoder_forward(inputs, mask, model_cfg, params, run).hidden
    return mlm_loss(mlm_head(hidden, params, model_cfg), labels)


def _static_masks(data: EncodedSet, policy: MaskingPolicy, vocab: Vocabulary, seed: int, tag: int):
    rng = np.random.default_rng([seed, tag])
    return mask_batch(data.ids, policy, vocab, rng)


def mlm_validation_loss(
    params: ParamStore, model_cfg: ModelConfig, data: EncodedSet, vocab: Vocabulary,
    policy: MaskingPolicy, seed: int, batch_size: int,
) -> float:
    """Token-weighted MLM loss with dropout off and fixed masks."""
    inputs, labels = _static_masks(data, policy, vocab, seed, 104729)
    total, count = 0.0, 0
    with T.no_grad():
        for idx in batches(len(data), batch_size, None):
            ids, m, lab = trim(inputs[idx], data.mask[idx], labels[idx])
            n = int((lab != IGNORE_INDEX).sum())
            if n == 0:
                continue
            loss = mlm_batch_loss(params, model_cfg, ids, m, lab, RunState())
            total += loss.item() * n
            count += n
    return total / count if count else float("nan")


def masked_token_accuracy(
    params: ParamStore, model_cfg: ModelConfig, data: EncodedSet, vocab: Vocabulary,
    policy: MaskingPolicy, seed: int, batch_size: int = 64,
) -> float:
    """Fraction of selected positions whose argmax prediction is the original token."""
    inputs, labels = _static_masks(data, policy, vocab, seed, 15485863)
    hit = total = 0
    with T.no_grad():
        for idx in batches(len(data), batch_size, None):
            ids, m, lab = trim(inputs[idx], data.mask[idx], labels[idx])
            hidden = encoder_forward(ids, m, model_cfg, params).hidden
            pred = mlm_head(hidden, params, model_cfg).data.argmax(axis=-1)
            sel = lab != IGNORE_INDEX
            hit += int((pred[sel] == lab[sel]).sum())
            total += int(sel.sum())
    return hit / total if total else float("nan")


def pretrain(
    data: EncodedSet,
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    cfg: PretrainConfig,
    step_log: StepLog | None = None,
    on_epoch: Callable[[int, ParamStore, EpochRecord, AdamWState], None] | None = None,
) -> PretrainResult:
    """MLM training with AdamW and linear warmup/decay; keeps the best-validation epoch.

    ``on_epoch`` is called after every epoch (checkpoint hook).
    """
    rng = np.random.default_rng(cfg.seed)
    params = init_encoder(model_cfg, rng)
    init_mlm_head(model_cfg, rng, params)
    train_idx, val_idx = split_indices(len(data), cfg.val_fraction, cfg.seed)
    train, val = data.subset(train_idx), data.subset(val_idx)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    schedule = ScheduleConfig("linear_warmup_linear_decay", cfg.warmup_ratio, max(1, total))
    opt = AdamW(
        [ParamGroup("all", dict(params), cfg.lr, cfg.weight_decay)], cfg.betas, cfg.eps, cfg.max_grad_norm
    )
    step_log = step_log or StepLog(None)
    static = None if cfg.dynamic_masking else _static_masks(train, cfg.masking, vocab, cfg.seed, 1)

    history: list[EpochRecord] = []
    step_losses: list[float] = []
    best_state, best_epoch, best_val = params.state(), 0, math.inf
    best_opt = opt.state.snapshot()
    step = 0
    for epoch in range(cfg.epochs):
        if step >= total:
            break
        epoch_losses = []
        order_rng = np.random.default_rng([cfg.seed, epoch])
        for b, idx in enumerate(batches(len(train), cfg.batch_size, order_rng)):
            if step >= total:
                break
            if static is None:
                inputs, labels = mask_batch(
                    train.ids[idx], cfg.masking, vocab, np.random.default_rng([cfg.seed, epoch, b, 1])
                )
            else:
                inputs, labels = static[0][idx], static[1][idx]
            ids, m, lab = trim(inputs, train.mask[idx], labels)
            if not (lab != IGNORE_INDEX).any():
                continue
            lr = lr_at(step, schedule, cfg.lr)
            opt.set_lr(lambda base: lr_at(step, schedule, base))
            opt.zero_grad()
            loss = mlm_batch_loss(params, model_cfg, ids, m, lab, RunState(True, cfg.seed, step))
            value = loss.item()
            _check_finite(value, f"pretrain step {step} (epoch {epoch}, lr {lr:.3e})")
            loss.backward()
            opt.step()
            step_log(step, lr, value)
            step_losses.append(value)
            epoch_losses.append(value)
            step += 1
        val_loss = (
            mlm_validation_loss(params, model_cfg, val, vocab, cfg.masking, cfg.seed, cfg.batch_size)
            if len(val)
            else None
        )
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        record = EpochRecord(epoch, train_loss, val_loss)
        history.append(record)
        log.info("pretrain epoch %d train %.4f val %s", epoch, train_loss, val_loss)
        score = val_loss if val_loss is not None else train_loss
        if score < best_val:
            best_val, best_epoch, best_state = score, epoch, params.state()
            best_opt = opt.state.snapshot()
        if on_epoch is not None:
            on_epoch(epoch, params, record, opt.state)
    params.load_state(best_state)
    return PretrainResult(
        params, model_cfg, history, step_losses, best_epoch, train_idx, val_idx, best_opt
    )


# -- finetuning -----------------------------------------------------------


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batch_size: int = 32
    head_lr: float = 1e-4
    top_layer_lr: float = 5e-5
    decay_factor: float = 1.0
    weight_decay: float = 0.01
    warmup_ratio: float = 0.05
    schedule: str = "linear_warmup_cosine"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-6
    seed: int = 0
    freeze_encoder: bool = False
    normalize_labels: bool = True
    max_grad_norm: float | None = None


@dataclass
class FinetuneResult:
    params: ParamStore  # best-epoch weights
    config: ModelConfig
    best_epoch: int
    best_metrics: Metrics
    history: list[tuple[int, Metrics]]  # (epoch, eval metrics)
    step_losses: list[float]
    label_mean: float
    label_std: float
    optimizer: AdamWState | None = None


def predict(
    params: ParamStore, model_cfg: ModelConfig, data: EncodedSet, label_mean: float = 0.0,
    label_std: float = 1.0, batch_size: int = 64,
) -> np.ndarray:
    out = []
    with T.no_grad():
        for idx in batches(len(data), batch_size, None):
            ids, m = trim(data.ids[idx], data.mask[idx])
            hidden = encoder_forward(ids, m, model_cfg, params).hidden
            out.append(regression_head(hidden, params, model_cfg).data[:, 0].astype(np.float64))
    return np.concatenate(out) * label_std + label_mean if out else np.zeros(0)


def finetune(
    train: EncodedSet,
    eval_set: EncodedSet,
    model_cfg: ModelConfig,
    cfg: FinetuneConfig,
    pretrained: dict[str, np.ndarray] | None = None,
    step_log: StepLog | None = None,
) -> FinetuneResult:
    """Regression finetuning with AdamW, LLRD groups and warmup + cosine annealing.

    The epoch with the lowest eval RMSE is kept.  With ``freeze_encoder`` only
    the regressor head is optimized and the encoder runs without a graph.
    """
    if train.labels is None or eval_set.labels is None:
        raise ValueError("finetuning needs labels")
    rng = np.random.default_rng([cfg.seed, 1])
    params = init_encoder(model_cfg, rng)
    init_regression_head(model_cfg, rng, params)
    if pretrained is not None:
        loaded = params.load_state(pretrained, strict=False)
        if not any(n.startswith("enc.") for n in loaded):
            raise ValueError("pretrained weights contain no encoder layers")

    labels = train.labels.astype(np.float64)
    mean, std = (float(labels.mean()), float(labels.std())) if cfg.normalize_labels else (0.0, 1.0)
    std = std if std > 0 else 1.0

    llrd = LLRDConfig(cfg.head_lr, cfg.top_layer_lr, cfg.decay_factor)
    trainable = {n: p for n, p in params.items() if n.startswith("reg.")} if cfg.freeze_encoder else params
    groups = build_llrd_groups(trainable, llrd, cfg.weight_decay, model_cfg.n_layers)
    opt = AdamW(groups, cfg.betas, cfg.eps, cfg.max_grad_norm)
    total = max(1, math.ceil(len(train) / cfg.batch_size) * cfg.epochs)
    schedule = ScheduleConfig(cfg.schedule, cfg.warmup_ratio, total)
    step_log = step_log or StepLog(None)

    history: list[tuple[int, Metrics]] = []
    step_losses: list[float] = []
    best = (math.inf, -1, None, params.state(), opt.state.snapshot())
    step = 0
    for epoch in range(cfg.epochs):
        order_rng = np.random.default_rng([cfg.seed, epoch, 2])
        for idx in batches(len(train), cfg.batch_size, order_rng):
            ids, m = trim(train.ids[idx], train.mask[idx])
            target = (train.labels[idx].astype(np.float64) - mean) / std
            opt.set_lr(lambda base: lr_at(step, schedule, base))
            opt.zero_grad()
            run = RunState(True, cfg.seed, step)
            if cfg.freeze_encoder:
                with T.no_grad():
                    hidden = encoder_forward(ids, m, model_cfg, params, run).hidden
            else:
                hidden = encoder_forward(ids, m, model_cfg, params, run).hidden
            loss = regression_loss(regression_head(hidden, params, model_cfg, run), target)
            value = loss.item()
            _check_finite(value, f"finetune step {step} (epoch {epoch})")
            loss.backward()
            opt.step()
            step_log(step, groups[0].lr, value)
            step_losses.append(value)
            step += 1
        pred = predict(params, model_cfg, eval_set, mean, std)
        if not np.all(np.isfinite(pred)):
            raise NumericalError(f"non-finite predictions after finetune epoch {epoch}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateLabels)
            metrics = evaluate(pred, eval_set.labels)
        history.append((epoch, metrics))
        log.info("finetune epoch %d rmse %.4f r2 %.4f", epoch, metrics.rmse, metrics.r2)
        if metrics.rmse < best[0]:
            best = (metrics.rmse, epoch, metrics, params.state(), opt.state.snapshot())
    params.load_state(best[3])
    return FinetuneResult(params, model_cfg, best[1], best[2], history, step_losses, mean, std, best[4])
