"""Transformer encoder with an MLM head and a regression head on ``<s>``.

Post-layer-norm encoder blocks (attention -> dropout -> residual -> norm ->
GELU feed-forward -> dropout -> residual -> norm), token embeddings plus
sinusoidal positions with no embedding scaling.  Parameters live in a flat
``ParamStore`` keyed by dotted names; encoder layer ``l`` (0-based) owns
everything under ``enc.<l>.``.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from polyseq import tensor as T
from polyseq.errors import ConfigError, ParameterNameError, ShapeError
from polyseq.tensor import Tensor

_LAYER_RE = re.compile(r"^enc\.(\d+)\.")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 768
    n_layers: int = 6
    n_heads: int = 12
    d_ff: int | None = None
    max_length: int = 256
    dropout_hidden: float = 0.1
    dropout_attn: float = 0.1
    dropout_regressor: float = 0.1
    positions: str = "sinusoidal"  # or "learned"
    tie_mlm_weights: bool = False
    layer_norm_eps: float = 1e-5
    init_std: float = 0.02
    # token embeddings start at unit scale so they are not swamped by the
    # (unscaled, amplitude-1) sinusoidal positions
    embed_init_std: float = 1.0

    def __post_init__(self) -> None:
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads:
            raise ConfigError("model.n_heads", f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.positions not in ("sinusoidal", "learned"):
            raise ConfigError("model.positions", "must be 'sinusoidal' or 'learned'")
        for key in ("dropout_hidden", "dropout_attn", "dropout_regressor"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"model.{key}", "must be in [0, 1)")
        if self.max_length < 1:
            raise ConfigError("model.max_length", "must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


class ParamStore(dict):
    """Named trainable tensors."""

    def __setitem__(self, name: str, value: Tensor) -> None:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        value.requires_grad = True
        value.name = name
        super().__setitem__(name, value)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def load_state(self, arrays: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching arrays in; returns names that were loaded."""
        loaded = []
        for name, t in self.items():
            if name not in arrays:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            arr = arrays[name]
            if arr.shape != t.shape:
                raise ShapeError(f"load {name}", t.shape, arr.shape)
            t.data = arr.astype(t.dtype, copy=True)
            loaded.append(name)
        return loaded

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None


def layer_of(name: str) -> int | None:
    """0-based encoder layer index encoded in ``name``, or None for non-layer params."""
    m = _LAYER_RE.match(name)
    return int(m.group(1)) if m else None


def positional_encoding(max_length: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal table: even dims sin(pos / 10000^(2i/d)), odd dims the cosine."""
    if max_length < 1:
        raise ValueError("max_length must be >= 1")
    pos = np.arange(max_length, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_i / d_model)
    table = np.zeros((max_length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table.astype(dtype)


# -- initialisation -------------------------------------------------------


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape).astype(T.get_default_dtype())


def _zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=T.get_default_dtype())


def _ones(shape) -> np.ndarray:
    return np.ones(shape, dtype=T.get_default_dtype())


def _linear(params: ParamStore, name: str, n_in: int, n_out: int, rng, std: float) -> None:
    params[f"{name}.weight"] = Tensor(_normal(rng, (n_in, n_out), std))
    params[f"{name}.bias"] = Tensor(_zeros(n_out))


def _norm(params: ParamStore, name: str, d: int) -> None:
    params[f"{name}.weight"] = Tensor(_ones(d))
    params[f"{name}.bias"] = Tensor(_zeros(d))


def init_encoder(config: ModelConfig, rng: np.random.Generator, params: ParamStore | None = None) -> ParamStore:
    params = ParamStore() if params is None else params
    d, std = config.d_model, config.init_std
    params["embed.tokens.weight"] = Tensor(_normal(rng, (config.vocab_size, d), config.embed_init_std))
    if config.positions == "learned":
        params["embed.positions.weight"] = Tensor(_normal(rng, (config.max_length, d), std))
    for layer in range(config.n_layers):
        p = f"enc.{layer}"
        for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
            _linear(params, f"{p}.attn.{proj}", d, d, rng, std)
        _norm(params, f"{p}.attn_norm", d)
        _linear(params, f"{p}.ffn.fc1", d, config.d_ff, rng, std)
        _linear(params, f"{p}.ffn.fc2", config.d_ff, d, rng, std)
        _norm(params, f"{p}.ffn_norm", d)
    return params


def init_mlm_head(config: ModelConfig, rng: np.random.Generator, params: ParamStore) -> ParamStore:
    d = config.d_model
    _linear(params, "mlm.dense", d, d, rng, config.init_std)
    _norm(params, "mlm.norm", d)
    if not config.tie_mlm_weights:
        params["mlm.decoder.weight"] = Tensor(_normal(rng, (d, config.vocab_size), config.init_std))
    params["mlm.decoder.bias"] = Tensor(_zeros(config.vocab_size))
    return params


def init_regression_head(config: ModelConfig, rng: np.random.Generator, params: ParamStore) -> ParamStore:
    d = config.d_model
    _linear(params, "reg.dense", d, d, rng, config.init_std)
    _linear(params, "reg.out", d, 1, rng, config.init_std)
    return params


# -- forward ----------------------------------------------------------------


@dataclass
class AttentionOutput:
    context: Tensor  # batch x length x (heads * head_dim)
    weights: np.ndarray  # batch x heads x length x length


@dataclass
class EncoderOutput:
    hidden: Tensor  # batch x length x d_model
    attentions: list[np.ndarray] = field(default_factory=list)  # per layer


@dataclass
class RunState:
    """Dropout switches for one forward pass."""

    training: bool = False
    seed: int = 0
    step: int = 0

    def dropout(self, x: Tensor, p: float, site: str) -> Tensor:
        return T.dropout(x, p, self.training, self.seed, T.op_key(site), self.step)


_EVAL = RunState()


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    pad_mask=None,
    run: RunState = _EVAL,
    dropout_p: float = 0.0,
    site: str = "attn",
) -> AttentionOutput:
    """softmax(q k^T / sqrt(d_k)) v with padded keys excluded.

    ``q``, ``k``, ``v`` are batch x heads x length x d_k; ``pad_mask`` is
    batch x length with 1 for real tokens.
    """
    if q.ndim != 4 or k.shape != v.shape or q.shape[:2] != k.shape[:2] or q.shape[-1] != k.shape[-1]:
        raise ShapeError("attention", "q, k, v as (batch, heads, length, d_k)", (q.shape, k.shape, v.shape))
    b, h, t, dk = q.shape
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
    if pad_mask is not None:
        pad_mask = np.asarray(pad_mask)
        if pad_mask.shape != (b, k.shape[2]):
            raise ShapeError("attention pad_mask", (b, k.shape[2]), pad_mask.shape)
        scores = T.masked_fill(scores, (pad_mask == 0)[:, None, None, :], -np.inf)
    weights = T.softmax(scores, axis=-1)
    probs = run.dropout(weights, dropout_p, site)
    context = T.matmul(probs, v)
    merged = T.reshape(T.transpose(context, (0, 2, 1, 3)), (b, t, h * dk))
    return AttentionOutput(merged, weights.data)


def _dense(x: Tensor, params: ParamStore, name: str) -> Tensor:
    return T.matmul(x, params[f"{name}.weight"]) + params[f"{name}.bias"]


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    return T.transpose(T.reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def encoder_forward(
    ids,
    attention_mask,
    config: ModelConfig,
    params: ParamStore,
    run: RunState = _EVAL,
) -> EncoderOutput:
    ids = np.asarray(ids)
    mask = np.asarray(attention_mask)
    if ids.ndim != 2 or mask.shape != ids.shape:
        raise ShapeError("encoder_forward", "ids and attention_mask as (batch, length)", (ids.shape, mask.shape))
    b, t = ids.shape
    if t > config.max_length:
        raise ShapeError("encoder_forward", f"length <= {config.max_length}", t)
    x = T.embedding_lookup(params["embed.tokens.weight"], ids)
    if config.positions == "learned":
        x = x + params["embed.positions.weight"][:t]
    else:
        x = x + positional_encoding(t, config.d_model, dtype=x.dtype)
    x = run.dropout(x, config.dropout_hidden, "embed.dropout")
    attentions = []
    eps = config.layer_norm_eps
    for layer in range(config.n_layers):
        p = f"enc.{layer}"
        q = _split_heads(_dense(x, params, f"{p}.attn.q_proj"), config.n_heads)
        k = _split_heads(_dense(x, params, f"{p}.attn.k_proj"), config.n_heads)
        v = _split_heads(_dense(x, params, f"{p}.attn.v_proj"), config.n_heads)
        att = attention(q, k, v, mask, run, config.dropout_attn, f"{p}.attn.dropout")
        attentions.append(att.weights)
        a = run.dropout(_dense(att.context, params, f"{p}.attn.out_proj"), config.dropout_hidden, f"{p}.attn.out_dropout")
        x = T.layer_norm(x + a, params[f"{p}.attn_norm.weight"], params[f"{p}.attn_norm.bias"], eps)
        f = _dense(T.gelu(_dense(x, params, f"{p}.ffn.fc1")), params, f"{p}.ffn.fc2")
        f = run.dropout(f, config.dropout_hidden, f"{p}.ffn.dropout")
        x = T.layer_norm(x + f, params[f"{p}.ffn_norm.weight"], params[f"{p}.ffn_norm.bias"], eps)
    return EncoderOutput(x, attentions)


def mlm_head(hidden: Tensor, params: ParamStore, config: ModelConfig) -> Tensor:
    """Dense -> GELU -> layer norm -> projection onto the vocabulary."""
    if hidden.ndim != 3 or hidden.shape[-1] != config.d_model:
        raise ShapeError("mlm_head", f"(batch, length, {config.d_model})", hidden.shape)
    h = T.gelu(_dense(hidden, params, "mlm.dense"))
    h = T.layer_norm(h, params["mlm.norm.weight"], params["mlm.norm.bias"], config.layer_norm_eps)
    if config.tie_mlm_weights:
        decoder = T.transpose(params["embed.tokens.weight"], (1, 0))
    else:
        decoder = params["mlm.decoder.weight"]
    return T.matmul(h, decoder) + params["mlm.decoder.bias"]


def regression_head(
    hidden: Tensor, params: ParamStore, config: ModelConfig, run: RunState = _EVAL
) -> Tensor:
    """Prediction from the ``<s>`` position: dropout -> dense -> SiLU -> dense(1)."""
    if hidden.ndim != 3 or hidden.shape[-1] != config.d_model:
        raise ShapeError("regression_head", f"(batch, length, {config.d_model})", hidden.shape)
    cls = hidden[:, 0, :]
    cls = run.dropout(cls, config.dropout_regressor, "reg.dropout")
    return _dense(T.silu(_dense(cls, params, "reg.dense")), params, "reg.out")


def encoder_param_names(params: ParamStore) -> list[str]:
    return [n for n in params if n.startswith(("embed.", "enc."))]


def check_param_name(name: str) -> None:
    if name.startswith("enc.") and layer_of(name) is None:
        raise ParameterNameError(f"cannot parse layer index from {name!r}")
