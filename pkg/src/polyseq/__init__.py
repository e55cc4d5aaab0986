"""Polymer sequence modelling: SMILES handling, tokenization, a numpy Transformer encoder,
masked-language-model pretraining and regression finetuning."""

from importlib.resources import files

__version__ = "0.1.0"


def data_path(name: str):
    """Path of a bundled file (``mini.csv``, ``mini_schema.toml``, ``mini_corpus.txt``)."""
    return files("polyseq") / "data" / name
