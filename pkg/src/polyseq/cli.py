"""``polyseq`` command line.

Exit codes: 0 ok, 2 input error, 3 config or checkpoint error, 4 numerical failure.
"""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click

from polyseq.errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    EmptySplit,
    NumericalError,
    PolyseqError,
    RowError,
    SchemaError,
    SmilesSyntaxError,
    TokenizeError,
)

EXIT_INPUT, EXIT_CONFIG, EXIT_NUMERIC = 2, 3, 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, CheckpointError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except NumericalError as exc:
            _fail(EXIT_NUMERIC, str(exc))
        except (TokenizeError, SmilesSyntaxError, DatasetError, RowError, SchemaError, EmptySplit) as exc:
            _fail(EXIT_INPUT, str(exc))
        except PolyseqError as exc:
            _fail(EXIT_INPUT, str(exc))

    return wrapper


def _schema(path: str | None):
    if path is None:
        return None
    from polyseq.schema import load_schema

    return load_schema(path)


def _sequences(path: str, schema) -> tuple[list[str], list[str]]:
    """(ids, assembled sequences) from a schema CSV or a plain one-per-line file."""
    from polyseq.data import load_dataset
    from polyseq.tokenizer import assemble_sequence

    if path.lower().endswith(".csv"):
        if schema is None:
            raise click.UsageError("a CSV input needs --schema")
        records = load_dataset(path, schema)
        return [r.record_id for r in records], [assemble_sequence(r, schema) for r in records]
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    kept = [(str(i + 1), line.strip()) for i, line in enumerate(lines) if line.strip()]
    return [k for k, _ in kept], [s for _, s in kept]


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Polymer sequence tokenizer, pretraining and finetuning toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command("tokenize")
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_path", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def tokenize_cmd(schema_path, in_path, vocab_path) -> None:
    """Print space-separated tokens per record (and ids, tab-separated, with --vocab)."""
    from polyseq.tokenizer import Vocabulary, tokenize

    schema = _schema(schema_path)
    vocab = Vocabulary.load(vocab_path) if vocab_path else None
    ids, seqs = _sequences(in_path, schema)
    for rid, seq in zip(ids, seqs):
        try:
            tokens = tokenize(seq, schema)
        except TokenizeError as exc:
            offset = len(seq[: exc.position].encode("utf-8"))
            _fail(EXIT_INPUT, f"record {rid}: {exc.message} at byte offset {offset}")
        line = " ".join(tokens)
        if vocab is not None:
            line += "\t" + " ".join(str(i) for i in vocab.ids(tokens))
        click.echo(line)


@main.command("augment")
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def augment_cmd(schema_path, in_path, seed, out_path) -> None:
    """Write every record plus its SMILES-rotation variants (run this on training data only)."""
    from polyseq.data import augment_train, load_dataset, write_dataset

    schema = _schema(schema_path)
    records = load_dataset(in_path, schema)
    out = augment_train(records, schema, seed)
    write_dataset(out, schema, out_path)
    click.echo(f"{len(records)} records -> {len(out)}", err=True)


@main.command("pretrain")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def pretrain_cmd(config_path) -> None:
    """Masked-language-model pretraining."""
    from polyseq.config import load_config
    from polyseq.pipeline import run_pretrain

    click.echo(str(run_pretrain(load_config(config_path))))


@main.command("finetune")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--freeze-encoder", is_flag=True, help="Train only the regressor head.")
@click.option("--pretrained", type=click.Path(dir_okay=False), help="Override finetune.pretrained.")
@click.option("--scratch", is_flag=True, help="Ignore any pretrained checkpoint.")
@handle_errors
def finetune_cmd(config_path, freeze_encoder, pretrained, scratch) -> None:
    """Regression finetuning over the configured folds."""
    from polyseq.config import load_config
    from polyseq.pipeline import run_finetune

    cfg = load_config(config_path)
    if pretrained:
        cfg.pretrained = str(Path(pretrained).resolve())
    if scratch:
        cfg.pretrained = ""
    outcomes = run_finetune(cfg, freeze_encoder=True if freeze_encoder else None)
    for o in outcomes:
        click.echo(f"fold {o.fold}\trmse {o.metrics.rmse:.4f}\tr2 {o.metrics.r2:.4f}")
    click.echo(str(cfg.out / "finetune" / "metrics.csv"))


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--ckpt", required=True, type=click.Path(), help="Fold checkpoint or a directory of them.")
@handle_errors
def eval_cmd(config_path, ckpt) -> None:
    """Score finetuned checkpoints on their held-out records."""
    from polyseq.config import load_config
    from polyseq.pipeline import run_eval

    cfg = load_config(config_path)
    for m in run_eval(cfg, ckpt):
        click.echo(f"rmse {m.rmse:.4f}\tr2 {m.r2:.4f}\tn {m.n}")
    click.echo(str(cfg.out / "eval" / "metrics.csv"))


@main.command("export-attention")
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--sequence", required=True)
@click.option("--layer", "layers", multiple=True, type=int, help="Layer index (repeatable); default all.")
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default=None)
@handle_errors
def export_attention_cmd(ckpt, sequence, layers, schema_path, out_path, fmt) -> None:
    """Attention weights per layer and head, with token labels."""
    from polyseq.analysis import export_attention

    if not Path(ckpt).is_file():
        raise CheckpointError(f"checkpoint not found: {ckpt}")
    try:
        export_attention(ckpt, sequence, out_path, list(layers) or None, fmt, _schema(schema_path))
    except ValueError as exc:
        if isinstance(exc, PolyseqError):
            raise
        _fail(EXIT_INPUT, str(exc))


@main.command("export-embeddings")
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@handle_errors
def export_embeddings_cmd(ckpt, in_path, schema_path, out_path) -> None:
    """Max-pooled last-layer embeddings, one CSV row per input sequence."""
    from polyseq.analysis import export_embeddings

    if not Path(ckpt).is_file():
        raise CheckpointError(f"checkpoint not found: {ckpt}")
    schema = _schema(schema_path)
    ids, seqs = _sequences(in_path, schema)
    export_embeddings(ckpt, seqs, out_path, ids, schema)


if __name__ == "__main__":
    main()
