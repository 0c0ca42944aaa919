"""Substructure-level SMILES tokenization and vocabulary management.

Greedy longest-match with a fixed priority: bracket expression > ``%NN``
ring closure > Cl/Br > single character. Joining the tokens always
reproduces the input exactly. A character-level tokenizer is kept behind
the same interface for ablation runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import EmptyCorpus, SequenceTooLong, UnknownId, UnterminatedBracket

GTK, SEP, MASK, UNK, PAD, BOS, EOS = "[GTK]", "[SEP]", "[MASK]", "[UNK]", "[PAD]", "[BOS]", "[EOS]"
SPECIAL_TOKENS = [GTK, SEP, MASK, UNK, PAD, BOS, EOS]  # ids 0..6 in this order


def tokenize(s: str) -> list[str]:
    """Split a raw SMILES string into substructure tokens (lossless)."""
    tokens = []
    i = 0
    n = len(s)
    while i < n:
        c = s[i]
        if c == "[":
            end = s.find("]", i)
            if end < 0:
                raise UnterminatedBracket("'[' without matching ']'", i)
            tokens.append(s[i:end + 1])
            i = end + 1
        elif c == "%" and len(s[i + 1:i + 3]) == 2 and s[i + 1:i + 3].isdigit():
            tokens.append(s[i:i + 3])
            i += 3
        elif s[i:i + 2] in ("Cl", "Br"):
            tokens.append(s[i:i + 2])
            i += 2
        else:
            tokens.append(c)
            i += 1
    return tokens


def tokenize_chars(s: str) -> list[str]:
    """Character-level fallback for the tokenizer ablation."""
    return list(s)


@dataclass
class Vocab:
    token_to_id: dict[str, int]
    id_to_token: list[str]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, self.token_to_id[UNK])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.token_to_id, fh, indent=0, sort_keys=False, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            mapping = json.load(fh)
        id_to_token = [None] * len(mapping)
        for tok, i in mapping.items():
            id_to_token[i] = tok
        return cls(token_to_id=mapping, id_to_token=id_to_token)


def build_vocab(corpus: Iterable[str], char_level: bool = False) -> Vocab:
    """Collect every distinct token; specials first, the rest sorted."""
    fn = tokenize_chars if char_level else tokenize
    seen: set[str] = set()
    empty = True
    for smiles in corpus:
        empty = False
        seen.update(fn(smiles))
    if empty:
        raise EmptyCorpus("vocabulary needs at least one SMILES string")
    id_to_token = list(SPECIAL_TOKENS) + sorted(seen - set(SPECIAL_TOKENS))
    return Vocab(token_to_id={t: i for i, t in enumerate(id_to_token)},
                 id_to_token=id_to_token)


@dataclass
class TokenSequence:
    tokens: list[str]
    ids: list[int]
    gtk_pos: int = 0
    sep_pos: int = field(default=0)


def encode(s: str, vocab: Vocab, max_len: int, char_level: bool = False) -> tuple[TokenSequence, np.ndarray]:
    """Wrap the token stream as [GTK] tokens [SEP], pad to ``max_len``.

    Returns the sequence and a boolean mask of the real (non-pad) positions.
    """
    fn = tokenize_chars if char_level else tokenize
    body = fn(s)
    if len(body) + 2 > max_len:
        raise SequenceTooLong(f"{len(body)} tokens + specials exceed max_len {max_len}")
    tokens = [GTK] + body + [SEP]
    sep_pos = len(tokens) - 1
    tokens = tokens + [PAD] * (max_len - len(tokens))
    ids = [vocab.lookup(t) for t in tokens]
    mask = np.zeros(max_len, dtype=bool)
    mask[:sep_pos + 1] = True
    return TokenSequence(tokens=tokens, ids=ids, gtk_pos=0, sep_pos=sep_pos), mask


def decode(seq: TokenSequence, vocab: Vocab) -> str:
    """Concatenate non-special tokens back into a string.

    ``[UNK]`` decodes to the literal string "[UNK]"; the other specials are
    stripped.
    """
    stripped = set(SPECIAL_TOKENS) - {UNK}
    parts = []
    for i in seq.ids:
        if not 0 <= i < vocab.size:
            raise UnknownId(f"id {i} outside vocabulary")
        tok = vocab.id_to_token[i]
        if tok in stripped:
            continue
        parts.append(tok)
    return "".join(parts)
