"""Polymer sequence assembly, chemistry-aware tokenization and vocabularies.

A record is flattened as::

    SMILES_1 $d1 $d2 ... | SMILES_2 $d1 ... $g1 $g2 ...

(without the spaces): each component's SMILES followed by its descriptor
values, components joined by ``|``, global descriptors appended at the end.
Missing descriptor values become ``NAN_<name>``.

Tokenization is positional.  Text after a ``$`` up to the next separator is a
descriptor field and, when it looks like a value (``95.2``, ``-23``,
``NAN_Tg``, ``S_1``), becomes a single token.  Everything else is sliced
into SMILES symbols, keeping multi-letter elements (``Cl``, ``Br``, and
bracket symbols like ``Si``) whole.
"""

from __future__ import annotations

import os
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from polyseq.errors import SchemaError, TokenizeError
from polyseq.schema import DatasetSchema, check_names
from polyseq.smiles import ELEMENTS

BOS, EOS, PAD, UNK, MASK = "<s>", "</s>", "<pad>", "<unk>", "<mask>"
SPECIAL_TOKENS = (BOS, EOS, PAD, UNK, MASK)
DEFAULT_MAX_LENGTH = 256

_VALUE_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_LABEL_RE = re.compile(r"[A-Za-z][A-Za-z0-9]*_[A-Za-z0-9_.+-]+")
_OUTSIDE_SINGLE = set("BCNOPSFI" "bcnops" "*0123456789().^=#-+/\\%@:")
_INSIDE_SINGLE = set("0123456789+-@:*")


@dataclass(frozen=True)
class Descriptor:
    name: str
    value: str | None = None  # None means missing

    def token(self) -> str:
        return f"NAN_{self.name}" if self.value is None else self.value


@dataclass(frozen=True)
class PolymerComponent:
    smiles: str
    descriptors: tuple[Descriptor, ...] = ()


@dataclass(frozen=True)
class PolymerRecord:
    components: tuple[PolymerComponent, ...]
    global_descriptors: tuple[Descriptor, ...] = ()
    label: float | None = None
    record_id: str = ""
    split_value: str | None = None


def assemble_sequence(record: PolymerRecord, schema: DatasetSchema | None = None) -> str:
    """Flatten a record into the string the tokenizer consumes."""
    if not record.components:
        raise SchemaError("record has no components")
    if schema is not None:
        if len(record.components) > schema.max_components:
            raise SchemaError(
                f"{len(record.components)} components exceed max_components={schema.max_components}"
            )
        comp_names = [d.name for d in schema.component_descriptors]
        for comp in record.components:
            check_names(comp_names, [d.name for d in comp.descriptors], "component")
        check_names(
            [spec.name for spec, _ in schema.expanded_globals()],
            [d.name for d in record.global_descriptors],
            "global",
        )
    parts = []
    for comp in record.components:
        parts.append(comp.smiles + "".join("$" + d.token() for d in comp.descriptors))
    return "|".join(parts) + "".join("$" + d.token() for d in record.global_descriptors)


def _smiles_tokens(text: str, offset: int) -> list[str]:
    tokens: list[str] = []
    i, n = 0, len(text)
    in_bracket = False
    while i < n:
        ch = text[i]
        if in_bracket:
            two = text[i : i + 2]
            if len(two) == 2 and two[1].islower() and two in ELEMENTS:
                tokens.append(two)
                i += 2
                continue
            if two in ("se", "as"):
                tokens.append(two)
                i += 2
                continue
            if ch == "]":
                in_bracket = False
            elif not (ch in _INSIDE_SINGLE or ch in ELEMENTS or ch in "bcnops"):
                raise TokenizeError(offset + i, f"unrecognized character {ch!r} in bracket atom")
            tokens.append(ch)
            i += 1
            continue
        two = text[i : i + 2]
        if two in ("Cl", "Br"):
            tokens.append(two)
            i += 2
        elif ch == "[":
            in_bracket = True
            tokens.append(ch)
            i += 1
        elif ch in _OUTSIDE_SINGLE:
            tokens.append(ch)
            i += 1
        else:
            raise TokenizeError(offset + i, f"unrecognized character {ch!r}")
    if in_bracket:
        raise TokenizeError(offset + n, "unterminated bracket atom")
    return tokens


def tokenize(flat: str, schema: DatasetSchema | None = None) -> list[str]:
    """Split an assembled sequence into tokens; ``"".join`` of the result is ``flat``.

    Raises:
        TokenizeError: with the offset of the first unrecognizable character.
    """
    extra = frozenset(schema.extra_tokens) if schema is not None else frozenset()
    tokens: list[str] = []
    pos, n = 0, len(flat)
    while pos < n:
        ch = flat[pos]
        if ch == "|":
            tokens.append(ch)
            pos += 1
            continue
        end = pos + 1 if ch == "$" else pos
        while end < n and flat[end] not in "$|":
            end += 1
        if ch == "$":
            tokens.append("$")
            value = flat[pos + 1 : end]
            if value in extra or _VALUE_RE.fullmatch(value) or _LABEL_RE.fullmatch(value):
                tokens.append(value)
            else:
                tokens.extend(_smiles_tokens(value, pos + 1))
        else:
            tokens.extend(_smiles_tokens(flat[pos:end], pos))
        pos = end
    return tokens


# -- vocabulary -----------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.id_to_token[:5]) != SPECIAL_TOKENS:
            raise ValueError(f"the first five tokens must be {SPECIAL_TOKENS}")
        mapping = {t: i for i, t in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def bos_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def pad_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    @property
    def mask_id(self) -> int:
        return 4

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def extended(self, tokens: Iterable[str]) -> Vocabulary:
        """New vocabulary with unseen ``tokens`` appended (existing ids kept)."""
        new = list(self.id_to_token)
        seen = set(new)
        for t in tokens:
            if t not in seen:
                seen.add(t)
                new.append(t)
        return Vocabulary(tuple(new))

    def save(self, path: str | os.PathLike) -> None:
        from polyseq.io import atomic_write

        with atomic_write(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.id_to_token) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> Vocabulary:
        with open(path, encoding="utf-8") as fh:
            return cls(tuple(line.rstrip("\n") for line in fh if line.rstrip("\n")))


def build_vocab(
    corpus: Iterable[Sequence[str]],
    min_count: int = 1,
    nan_tokens: Sequence[str] = (),
) -> Vocabulary:
    """Specials, then schema NAN tokens, then corpus tokens by (count desc, token asc)."""
    counts: Counter[str] = Counter()
    empty = True
    for tokens in corpus:
        empty = False
        counts.update(tokens)
    if empty:
        raise ValueError("corpus is empty")
    ordered = list(SPECIAL_TOKENS)
    seen = set(ordered)
    for t in nan_tokens:
        if t not in seen:
            seen.add(t)
            ordered.append(t)
    for t, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if c >= min_count and t not in seen:
            seen.add(t)
            ordered.append(t)
    return Vocabulary(tuple(ordered))


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def length(self) -> int:
        """Number of non-pad positions."""
        return sum(self.attention_mask)


def encode(tokens: Sequence[str], vocab: Vocabulary, max_length: int = DEFAULT_MAX_LENGTH) -> TokenSequence:
    """Wrap in ``<s>``/``</s>``, truncate the body to fit, pad to ``max_length``."""
    if max_length < 2:
        raise ValueError("max_length must be >= 2")
    body = list(tokens[: max_length - 2])
    toks = [BOS] + body + [EOS]
    ids = [vocab.bos_id] + vocab.ids(body) + [vocab.eos_id]
    pad = max_length - len(toks)
    return TokenSequence(
        tokens=tuple(toks + [PAD] * pad),
        ids=tuple(ids + [vocab.pad_id] * pad),
        attention_mask=tuple([1] * len(toks) + [0] * pad),
    )


def decode(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    """Body tokens of ``seq`` recovered from its ids (specials dropped)."""
    return [vocab.id_to_token[i] for i, m in zip(seq.ids[1:], seq.attention_mask[1:]) if m][:-1]
