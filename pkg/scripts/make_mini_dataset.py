"""Regenerate the bundled synthetic mini dataset.

Everything produced here is synthetic: polymer repeat units are assembled
from a fixed fragment list and the label is a deterministic function of the
composition and descriptors.  None of it is experimental data.

    python scripts/make_mini_dataset.py
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from polyseq.smiles import canonical_smiles

OUT = Path(__file__).resolve().parents[1] / "src" / "polyseq" / "data"

# (fragment, contribution to the synthetic label)
FRAGMENTS = [
    ("CC", -0.30),
    ("CC(C)", -0.45),
    ("OCC", 0.55),
    ("C(=O)O", 0.35),
    ("c1ccc(cc1)", -0.80),
    ("C(F)(F)", 0.25),
    ("CC(Cl)", -0.10),
    ("[Si](C)(C)O", 0.40),
    ("C(=O)N", 0.15),
    ("S", 0.05),
    ("CC(C#N)", 0.30),
    ("OC(=O)", 0.35),
]
SALTS = ["F[B-](F)(F)F", "[Li+]", "FC(F)(F)S(=O)(=O)[N-]S(=O)(=O)C(F)(F)F"]


def repeat_unit(rng: np.random.Generator) -> tuple[str, float]:
    k = int(rng.integers(2, 5))
    picks = rng.integers(0, len(FRAGMENTS), size=k)
    smiles = "*" + "".join(FRAGMENTS[i][0] for i in picks) + "*"
    score = float(sum(FRAGMENTS[i][1] for i in picks))
    return smiles, score


def make_records(n: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows: list[dict] = []
    seen: set[str] = set()
    while len(rows) < n:
        smiles1, s1 = repeat_unit(rng)
        two = rng.random() < 0.3
        smiles2, s2 = repeat_unit(rng) if two else ("", 0.0)
        key = canonical_smiles(smiles1) + "|" + (canonical_smiles(smiles2) if two else "")
        if key in seen:
            continue
        seen.add(key)
        ratio1 = round(float(rng.uniform(0.3, 0.7)), 2) if two else 1.0
        temperature = float(rng.choice([25.0, 40.0, 60.0, 80.0]))
        tg1 = "" if rng.random() < 0.25 else f"{rng.uniform(-60, 120):.1f}"
        tg2 = ("" if rng.random() < 0.25 else f"{rng.uniform(-60, 120):.1f}") if two else ""
        label = -4.0 + s1 * ratio1 + s2 * (1.0 - ratio1) + 0.01 * (temperature - 25.0)
        rows.append(
            {
                "id": f"P{len(rows):03d}",
                "smiles_1": smiles1,
                "Tg_1": tg1,
                "smiles_2": smiles2,
                "Tg_2": tg2,
                "ratio_1": f"{ratio1:.2f}",
                "ratio_2": f"{1 - ratio1:.2f}" if two else "",
                "temperature": f"{temperature:.1f}",
                "year": str(2018 if len(rows) % 5 else 2019),
                "log_conductivity": f"{label:.4f}",
            }
        )
    return rows


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    rows = make_records(50, seed=20240601)
    with open(OUT / "mini.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

    rng = np.random.default_rng(7)
    corpus: list[str] = []
    seen: set[str] = set()
    while len(corpus) < 400:
        smiles, _ = repeat_unit(rng)
        if smiles not in seen:
            seen.add(smiles)
            corpus.append(smiles)
    (OUT / "mini_corpus.txt").write_text("\n".join(corpus) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} records and {len(corpus)} corpus lines to {OUT}")


if __name__ == "__main__":
    main()
