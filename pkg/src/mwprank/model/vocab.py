"""Token vocabulary shared by the encoder input and decoder output."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..expressions import OPERATORS, MappedProblem, serialize_infix

PAD, BOS, EOS, UNK = "[pad]", "[bos]", "[eos]", "[unk]"
SPECIALS = (PAD, BOS, EOS, UNK)
PARENS = ("(", ")")


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if self.tokens[: len(SPECIALS)] != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        index = self._index
        unk = self.unk_id
        return np.array([index.get(t, unk) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    @classmethod
    def build(cls, problems: Sequence[MappedProblem]) -> "Vocab":
        """Deterministic vocabulary: specials, expression symbols, NUM tokens
        (dense up to the largest index seen), then sorted word tokens."""
        max_num = -1
        words: set[str] = set()
        consts: set[str] = set()
        for p in problems:
            for name in p.number_table:
                max_num = max(max_num, int(name[3:]))
            expr_tokens = set(serialize_infix(p.ground_truth).split())
            for tok in p.tokens:
                if not tok.startswith("NUM"):
                    words.add(tok)
            for tok in expr_tokens:
                if tok not in OPERATORS and tok not in PARENS and not tok.startswith("NUM"):
                    consts.add(tok)
        nums = tuple(f"NUM{i}" for i in range(max_num + 1))
        tokens = SPECIALS + OPERATORS + PARENS + nums + tuple(sorted(consts)) + tuple(sorted(words))
        return cls(tokens)
