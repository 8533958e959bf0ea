"""Shared test utilities: random trees and an independent oracle evaluator."""

from fractions import Fraction

import numpy as np

from mwprank.expressions import UNDEFINED, Const, Num, Op, serialize_infix

OPS = ("+", "-", "*", "/")


def random_tree(rng: np.random.Generator, num_tokens, max_depth: int, p_leaf: float = 0.35, allow_consts: bool = True):
    """Random expression tree of depth <= max_depth over the given NUM tokens."""
    if max_depth == 0 or rng.random() < p_leaf:
        if allow_consts and rng.random() < 0.15:
            # terminating decimals only: integers or quarters
            return Const(Fraction(int(rng.integers(0, 100)), int(rng.choice([1, 2, 4]))))
        return Num(num_tokens[int(rng.integers(len(num_tokens)))])
    op = OPS[int(rng.integers(4))]
    return Op(op, random_tree(rng, num_tokens, max_depth - 1, p_leaf, allow_consts),
              random_tree(rng, num_tokens, max_depth - 1, p_leaf, allow_consts))


def random_table(rng: np.random.Generator, num_tokens) -> dict:
    return {t: Fraction(int(rng.integers(-20, 21)), int(rng.integers(1, 7))) for t in num_tokens}


def oracle_evaluate(tree, table):
    """Independent evaluator: renders the tree to a Python expression over
    Fraction literals and lets the Python parser apply precedence rules."""
    text = serialize_infix(tree)
    parts = []
    for tok in text.split():
        if tok.startswith("NUM"):
            value = table[tok]
            parts.append(f"Fraction({value.numerator}, {value.denominator})")
        elif tok in OPS or tok in "()":
            parts.append(tok)
        else:
            parts.append(f'Fraction("{tok}")')
    try:
        return eval(" ".join(parts), {"Fraction": Fraction})  # noqa: S307 - test oracle
    except ZeroDivisionError:
        return UNDEFINED
