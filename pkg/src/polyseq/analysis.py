"""Plot-ready exports: attention maps and max-pooled sequence embeddings."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from polyseq.io import atomic_write
from polyseq.model import ModelConfig, ParamStore, encoder_forward
from polyseq.pipeline import load_model
from polyseq.schema import DatasetSchema
from polyseq.tensor import no_grad
from polyseq.tokenizer import Vocabulary, encode, tokenize


def _encode_one(sequence: str, vocab: Vocabulary, model_cfg: ModelConfig, schema: DatasetSchema | None):
    tokens = tokenize(sequence, schema)
    length = min(len(tokens) + 2, model_cfg.max_length)
    return encode(tokens, vocab, length)


def attention_maps(
    params: ParamStore, model_cfg: ModelConfig, vocab: Vocabulary, sequence: str,
    layers: Sequence[int] | None = None, schema: DatasetSchema | None = None,
) -> dict:
    """Per layer and head: the length x length weights and the ``<s>`` row.

    Rows are query positions, columns key positions; only non-pad positions
    appear, so every row sums to one.
    """
    enc = _encode_one(sequence, vocab, model_cfg, schema)
    with no_grad():
        out = encoder_forward(np.array([enc.ids]), np.array([enc.attention_mask]), model_cfg, params)
    wanted = range(model_cfg.n_layers) if layers is None else layers
    maps = []
    for layer in wanted:
        if not 0 <= layer < model_cfg.n_layers:
            raise ValueError(f"layer {layer} out of range 0..{model_cfg.n_layers - 1}")
        weights = out.attentions[layer][0]
        for head in range(model_cfg.n_heads):
            m = weights[head].astype(np.float64)
            maps.append({"layer": layer, "head": head, "matrix": m.tolist(), "cls_row": m[0].tolist()})
    return {"sequence": sequence, "tokens": list(enc.tokens), "maps": maps}


def write_attention(result: dict, path: str | os.PathLike, fmt: str | None = None) -> None:
    """JSON (nested) or CSV (one row per layer/head/query; ``row`` is "cls" for the ``<s>`` row)."""
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "json")
    if fmt == "json":
        with atomic_write(path, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=1)
        return
    tokens = result["tokens"]
    header = ["layer", "head", "row", "query_token"] + [f"{j}:{t}" for j, t in enumerate(tokens)]
    with atomic_write(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for m in result["maps"]:
            for i, row in enumerate(m["matrix"]):
                w.writerow([m["layer"], m["head"], i, tokens[i]] + [repr(x) for x in row])
            w.writerow([m["layer"], m["head"], "cls", tokens[0]] + [repr(x) for x in m["cls_row"]])


def export_attention(
    checkpoint: str | os.PathLike, sequence: str, out: str | os.PathLike,
    layers: Sequence[int] | None = None, fmt: str | None = None, schema: DatasetSchema | None = None,
) -> dict:
    _, model_cfg, vocab, params = load_model(checkpoint)
    result = attention_maps(params, model_cfg, vocab, sequence, layers, schema)
    write_attention(result, out, fmt)
    return result


def pooled_embeddings(
    params: ParamStore, model_cfg: ModelConfig, vocab: Vocabulary, sequences: Sequence[str],
    schema: DatasetSchema | None = None,
) -> np.ndarray:
    """Last-layer hidden states max-pooled over non-pad positions, one row per sequence."""
    rows = []
    with no_grad():
        for s in sequences:
            enc = _encode_one(s, vocab, model_cfg, schema)
            hidden = encoder_forward(np.array([enc.ids]), np.array([enc.attention_mask]), model_cfg, params).hidden
            rows.append(hidden.data[0].max(axis=0).astype(np.float64))
    return np.stack(rows) if rows else np.zeros((0, model_cfg.d_model))


def export_embeddings(
    checkpoint: str | os.PathLike, sequences: Sequence[str], out: str | os.PathLike,
    ids: Sequence[str] | None = None, schema: DatasetSchema | None = None,
) -> np.ndarray:
    _, model_cfg, vocab, params = load_model(checkpoint)
    matrix = pooled_embeddings(params, model_cfg, vocab, sequences, schema)
    ids = [str(i) for i in range(len(sequences))] if ids is None else list(ids)
    with atomic_write(Path(out), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"e{j}" for j in range(model_cfg.d_model)])
        for rid, vec in zip(ids, matrix):
            w.writerow([rid] + [repr(float(x)) for x in vec])
    return matrix
