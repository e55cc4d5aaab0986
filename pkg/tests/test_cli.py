import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from polyseq import data_path
from polyseq.cli import main

SCHEMA = str(data_path("mini_schema.toml"))
DATASET = str(data_path("mini.csv"))


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def tiny_config(root, **extra):
    lines = [
        "format = 1",
        'run_id = "tiny"',
        f'output_dir = "{root / "run"}"',
        "[data]",
        f'schema = "{SCHEMA}"',
        f'dataset = "{DATASET}"',
        f'pretrain_corpus = "{data_path("mini_corpus.txt")}"',
        "max_length = 64",
        "[model]",
        "d_model = 16\nn_layers = 1\nn_heads = 2\nmax_length = 64",
        "[pretrain]",
        "epochs = 1\nbatch_size = 64\nlr = 1e-3",
        "[finetune]",
        f'pretrained = "{root / "run" / "pretrain" / "best.ckpt"}"',
        "epochs = 1\nbatch_size = 16",
    ]
    path = root / "tiny.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    config = tiny_config(root)
    pre = invoke("pretrain", "--config", config)
    assert pre.exit_code == 0, pre.output
    ft = invoke("finetune", "--config", config)
    assert ft.exit_code == 0, ft.output
    return root, config


def test_tokenize_peo(tmp_path):
    (tmp_path / "in.txt").write_text("*CCO*\n")
    result = invoke("tokenize", "--in", tmp_path / "in.txt")
    assert result.exit_code == 0
    assert result.output == "* C C O *\n"


def test_tokenize_empty_file(tmp_path):
    (tmp_path / "in.txt").write_text("")
    result = invoke("tokenize", "--in", tmp_path / "in.txt")
    assert result.exit_code == 0 and result.output == ""


def test_tokenize_bad_character(tmp_path):
    (tmp_path / "in.txt").write_text("*CCO*\n*CC&O*\n")
    result = invoke("tokenize", "--in", tmp_path / "in.txt")
    assert result.exit_code == 2
    assert "record 2" in result.output and "byte offset 3" in result.output


def test_tokenize_csv_with_vocab(tmp_path, tiny_run):
    root, _ = tiny_run
    result = invoke("tokenize", "--schema", SCHEMA, "--in", DATASET, "--vocab", root / "run" / "pretrain" / "vocab.txt")
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert len(lines) == 50
    tokens, ids = lines[0].split("\t")
    assert len(tokens.split()) == len(ids.split())


def test_augment_is_seeded_and_valid(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert invoke("augment", "--schema", SCHEMA, "--in", DATASET, "--seed", 4, "--out", a).exit_code == 0
    assert invoke("augment", "--schema", SCHEMA, "--in", DATASET, "--seed", 4, "--out", b).exit_code == 0
    assert a.read_bytes() == b.read_bytes()
    from polyseq.data import load_dataset
    from polyseq.schema import load_schema

    out = load_dataset(a, load_schema(SCHEMA))  # reparses every SMILES
    assert 50 < len(out) <= 250


def test_bad_dataset_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    rows = open(DATASET).read().splitlines()
    rows[1] = rows[1].replace("*SCC(C)*", "*SCC(C*")
    bad.write_text("\n".join(rows) + "\n")
    result = invoke("augment", "--schema", SCHEMA, "--in", bad, "--out", tmp_path / "o.csv")
    assert result.exit_code == 2
    assert "smiles_1" in result.output


def test_missing_checkpoint_exit_3(tmp_path):
    config = tiny_config(tmp_path)
    assert invoke("eval", "--config", config, "--ckpt", tmp_path / "nope.ckpt").exit_code == 3
    assert invoke("finetune", "--config", config).exit_code == 3
    assert invoke("export-attention", "--ckpt", tmp_path / "nope.ckpt", "--sequence", "*C*",
                  "--out", tmp_path / "a.json").exit_code == 3


def test_bad_config_exit_3(tmp_path):
    (tmp_path / "c.toml").write_text("format = 1\n[model]\nwidth = 3\n")
    result = invoke("pretrain", "--config", tmp_path / "c.toml")
    assert result.exit_code == 3 and "model.width" in result.output


def test_freeze_without_pretrained_exit_3(tmp_path):
    result = invoke("finetune", "--config", tiny_config(tmp_path), "--scratch", "--freeze-encoder")
    assert result.exit_code == 3


def test_finetune_outputs(tiny_run):
    root, _ = tiny_run
    out = root / "run" / "finetune"
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["fold"] for r in rows] == ["0", "1", "2", "3", "4", "mean"]
    assert all(np.isfinite(float(r["rmse"])) and np.isfinite(float(r["r2"])) for r in rows)
    assert (out / "splits.csv").is_file() and (out / "fold_0.log").is_file()
    pre = root / "run" / "pretrain"
    assert (pre / "epoch_000.ckpt").is_file() and (pre / "history.csv").is_file()


def test_finetune_rerun_reproduces_metrics(tmp_path, tiny_run):
    root, config = tiny_run
    first = (root / "run" / "finetune" / "metrics.csv").read_bytes()
    assert invoke("finetune", "--config", config).exit_code == 0
    assert (root / "run" / "finetune" / "metrics.csv").read_bytes() == first


def test_eval_directory_and_file(tiny_run):
    root, config = tiny_run
    result = invoke("eval", "--config", config, "--ckpt", root / "run" / "finetune")
    assert result.exit_code == 0, result.output
    with open(root / "run" / "eval" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    with open(root / "run" / "finetune" / "metrics.csv") as fh:
        trained = list(csv.DictReader(fh))
    assert [r["fold"] for r in rows] == [r["fold"] for r in trained]
    for a, b in zip(rows, trained):
        assert float(a["rmse"]) == pytest.approx(float(b["rmse"]), rel=1e-5)
    single = invoke("eval", "--config", config, "--ckpt", root / "run" / "finetune" / "fold_2.ckpt")
    assert single.exit_code == 0 and single.output.count("rmse") == 1


def test_export_attention(tmp_path, tiny_run):
    root, _ = tiny_run
    ckpt = root / "run" / "pretrain" / "best.ckpt"
    out = tmp_path / "att.json"
    assert invoke("export-attention", "--ckpt", ckpt, "--sequence", "*CCO*", "--out", out).exit_code == 0
    doc = json.loads(out.read_text())
    assert doc["tokens"] == ["<s>", "*", "C", "C", "O", "*", "</s>"]
    assert len(doc["maps"]) == 2
    for m in doc["maps"]:
        matrix = np.array(m["matrix"])
        assert matrix.shape == (7, 7)
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-6)
    out_csv = tmp_path / "att.csv"
    result = invoke("export-attention", "--ckpt", ckpt, "--sequence", "*CCO*", "--layer", 0, "--out", out_csv)
    assert result.exit_code == 0
    with open(out_csv) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:5] == ["layer", "head", "row", "query_token", "0:<s>"]
    for row in rows[1:]:
        assert sum(float(x) for x in row[4:]) == pytest.approx(1.0, abs=1e-6)
    assert invoke("export-attention", "--ckpt", ckpt, "--sequence", "*C*", "--layer", 5,
                  "--out", out_csv).exit_code == 2


def test_export_embeddings(tmp_path, tiny_run):
    root, _ = tiny_run
    (tmp_path / "s.txt").write_text("*CCO*\n*CC(C)*\n*CCO*\n")
    out = tmp_path / "emb.csv"
    ckpt = root / "run" / "finetune" / "fold_0.ckpt"
    assert invoke("export-embeddings", "--ckpt", ckpt, "--in", tmp_path / "s.txt", "--out", out).exit_code == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id"] + [f"e{j}" for j in range(16)]
    assert len(rows) == 4
    assert rows[1][1:] == rows[3][1:]


def test_pooled_embedding_is_elementwise_max(tiny_run):
    from polyseq.analysis import pooled_embeddings
    from polyseq.model import encoder_forward
    from polyseq.pipeline import load_model
    from polyseq.tokenizer import encode, tokenize

    root, _ = tiny_run
    _, cfg, vocab, params = load_model(root / "run" / "pretrain" / "best.ckpt")
    pooled = pooled_embeddings(params, cfg, vocab, ["*CC(Cl)O*"])
    enc = encode(tokenize("*CC(Cl)O*"), vocab, 16)
    hidden = encoder_forward(np.array([enc.ids]), np.array([enc.attention_mask]), cfg, params).hidden.data[0]
    real = hidden[np.array(enc.attention_mask) == 1]
    assert np.all(pooled[0] >= real - 1e-6)
    np.testing.assert_allclose(pooled[0], real.max(axis=0), atol=1e-5)


def test_numerical_failure_exit_4(tmp_path, monkeypatch):
    from polyseq import pipeline
    from polyseq.errors import NumericalError

    def boom(cfg):
        raise NumericalError("non-finite loss nan at pretrain step 3")

    monkeypatch.setattr(pipeline, "run_pretrain", boom)
    result = invoke("pretrain", "--config", tiny_config(tmp_path))
    assert result.exit_code == 4 and "step 3" in result.output
