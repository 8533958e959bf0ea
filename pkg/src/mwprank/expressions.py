"""Expression trees, number mapping, infix parsing, and exact evaluation.

Solution expressions are binary trees over the four arithmetic operators
with leaves that are either placeholder tokens (NUM0, NUM1, ...) bound by
a per-problem number table, or literal decimal constants.  All arithmetic
is exact rational (fractions.Fraction); dividing by zero anywhere yields
the distinguished UNDEFINED value, which compares equal to nothing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence, Union

from .errors import ExpressionSyntaxError, MissingNumberError

OPERATORS = ("+", "-", "*", "/")
PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}

NUM_PREFIX = "NUM"
_NUM_RE = re.compile(r"NUM\d+")
_NUMERAL_RE = re.compile(r"\d+\.\d+|\d+")

# NUM tokens first so already-mapped text survives re-tokenization, then
# numerals (decimals before integers), letter runs, and single punctuation.
_TOKEN_RE = re.compile(r"NUM\d+|\d+\.\d+|\d+|[^\W\d_]+|[^\w\s]")


@dataclass(frozen=True)
class Num:
    """Leaf bound to a problem number via its NUM token."""

    token: str

    def __post_init__(self):
        if not _NUM_RE.fullmatch(self.token):
            raise ValueError(f"not a NUM token: {self.token!r}")


@dataclass(frozen=True)
class Const:
    """Literal rational constant (kept exactly)."""

    value: Fraction

    def __post_init__(self):
        object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class Op:
    """Binary operator node."""

    op: str
    left: "ExprTree"
    right: "ExprTree"

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise ValueError(f"unknown operator: {self.op!r}")


ExprTree = Union[Num, Const, Op]


class _Undefined:
    """Result of any evaluation that divided by zero; equal to nothing."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Undefined"


UNDEFINED = _Undefined()
ExprValue = Union[Fraction, _Undefined]


@dataclass(frozen=True)
class MappedProblem:
    """A problem whose numerals were replaced by ordered NUM tokens.

    number_table maps NUM tokens to their exact values in first-occurrence
    order; every NUM leaf of ground_truth must appear in it.
    """

    id: str
    tokens: tuple[str, ...]
    number_table: dict[str, Fraction]
    ground_truth: ExprTree
    answer: Fraction | None = field(default=None, compare=False)

    @property
    def num_tokens(self) -> tuple[str, ...]:
        return tuple(self.number_table)

    @property
    def op_count(self) -> int:
        return operator_count(self.ground_truth)


def tokenize_text(raw_text: str) -> list[str]:
    """Split raw problem text into word/numeral/punctuation tokens."""
    return _TOKEN_RE.findall(raw_text)


def map_numbers(raw_text: str) -> tuple[list[str], dict[str, Fraction]]:
    """Replace each numeral occurrence with NUM#i, in order of appearance.

    Repeated identical numerals get their own consecutive indices.  Text
    without numerals comes back unchanged with an empty table.
    """
    tokens = []
    table: dict[str, Fraction] = {}
    for tok in tokenize_text(raw_text):
        if _NUMERAL_RE.fullmatch(tok):
            name = f"{NUM_PREFIX}{len(table)}"
            table[name] = Fraction(tok)
            tokens.append(name)
        else:
            tokens.append(tok)
    return tokens, table


def parse_infix(tokens: Sequence[str] | str) -> ExprTree:
    """Parse space-separated infix tokens into an expression tree.

    Standard precedence (* / over + -), left associativity, parentheses
    override.  Raises ExpressionSyntaxError on malformed input.
    """
    if isinstance(tokens, str):
        tokens = tokens.split()
    toks = list(tokens)
    if not toks:
        raise ExpressionSyntaxError("empty expression")
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def advance():
        nonlocal pos
        tok = toks[pos]
        pos += 1
        return tok

    def parse_atom() -> ExprTree:
        tok = peek()
        if tok is None:
            raise ExpressionSyntaxError("unexpected end of expression")
        advance()
        if tok == "(":
            node = parse_expr(1)
            if peek() != ")":
                raise ExpressionSyntaxError("expected ')'")
            advance()
            return node
        if _NUM_RE.fullmatch(tok):
            return Num(tok)
        if _NUMERAL_RE.fullmatch(tok):
            return Const(Fraction(tok))
        raise ExpressionSyntaxError(f"unexpected token {tok!r}")

    def parse_expr(min_prec: int) -> ExprTree:
        node = parse_atom()
        while True:
            tok = peek()
            if tok not in PRECEDENCE or PRECEDENCE[tok] < min_prec:
                return node
            advance()
            right = parse_expr(PRECEDENCE[tok] + 1)
            node = Op(tok, node, right)

    tree = parse_expr(1)
    if pos != len(toks):
        raise ExpressionSyntaxError(f"trailing tokens after expression: {toks[pos:]}")
    return tree


def fraction_to_decimal(value: Fraction) -> str:
    """Exact decimal string for a rational with a 2^a*5^b denominator."""
    value = Fraction(value)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        raise ValueError(f"{value} has no terminating decimal form")
    digits = max(twos, fives)
    scaled = value.numerator * 10**digits // value.denominator
    sign = "-" if scaled < 0 else ""
    text = str(abs(scaled)).rjust(digits + 1, "0")
    if digits == 0:
        return sign + text
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


def has_decimal_form(value: Fraction) -> bool:
    den = Fraction(value).denominator
    while den % 2 == 0:
        den //= 2
    while den % 5 == 0:
        den //= 5
    return den == 1


def _serialize(node: ExprTree, out: list[str]) -> None:
    if isinstance(node, Num):
        out.append(node.token)
        return
    if isinstance(node, Const):
        if node.value < 0:
            raise ValueError("negative constants have no infix form")
        out.append(fraction_to_decimal(node.value))
        return
    prec = PRECEDENCE[node.op]

    def emit(child: ExprTree, needs_parens: bool) -> None:
        if needs_parens:
            out.append("(")
            _serialize(child, out)
            out.append(")")
        else:
            _serialize(child, out)

    # Parenthesize children only where reparsing would otherwise rebind:
    # lower precedence on either side, equal precedence on the right.
    emit(node.left, isinstance(node.left, Op) and PRECEDENCE[node.left.op] < prec)
    out.append(node.op)
    emit(node.right, isinstance(node.right, Op) and PRECEDENCE[node.right.op] <= prec)


def serialize_infix(tree: ExprTree) -> str:
    """Space-separated infix with minimal parentheses; inverse of parse_infix."""
    out: list[str] = []
    _serialize(tree, out)
    return " ".join(out)


def evaluate(tree: ExprTree, number_table: dict[str, Fraction]) -> ExprValue:
    """Exact rational value of the tree; UNDEFINED if any divisor is zero."""
    if isinstance(tree, Num):
        try:
            return number_table[tree.token]
        except KeyError:
            raise MissingNumberError(tree.token) from None
    if isinstance(tree, Const):
        return tree.value
    left = evaluate(tree.left, number_table)
    right = evaluate(tree.right, number_table)
    if left is UNDEFINED or right is UNDEFINED:
        return UNDEFINED
    if tree.op == "+":
        return left + right
    if tree.op == "-":
        return left - right
    if tree.op == "*":
        return left * right
    if right == 0:
        return UNDEFINED
    return left / right


def results_equal(a: ExprValue, b: ExprValue) -> bool:
    """True iff both values are defined and exactly equal as rationals."""
    if a is UNDEFINED or b is UNDEFINED:
        return False
    return a == b


# Tree inspection helpers used by the disturbance operators and tests.

Path = tuple[str, ...]  # "L"/"R" steps from the root


def iter_nodes(tree: ExprTree, path: Path = ()) -> Iterator[tuple[Path, ExprTree]]:
    """Yield (path, node) pairs in pre-order."""
    yield path, tree
    if isinstance(tree, Op):
        yield from iter_nodes(tree.left, path + ("L",))
        yield from iter_nodes(tree.right, path + ("R",))


def leaf_paths(tree: ExprTree) -> list[Path]:
    return [p for p, n in iter_nodes(tree) if not isinstance(n, Op)]


def operator_paths(tree: ExprTree) -> list[Path]:
    return [p for p, n in iter_nodes(tree) if isinstance(n, Op)]


def subtree_at(tree: ExprTree, path: Path) -> ExprTree:
    node = tree
    for step in path:
        if not isinstance(node, Op):
            raise ValueError(f"path {path} leaves the tree")
        node = node.left if step == "L" else node.right
    return node


def replace_at(tree: ExprTree, path: Path, replacement: ExprTree) -> ExprTree:
    """A copy of the tree with the subtree at `path` swapped out."""
    if not path:
        return replacement
    if not isinstance(tree, Op):
        raise ValueError(f"path {path} leaves the tree")
    step, rest = path[0], path[1:]
    if step == "L":
        return Op(tree.op, replace_at(tree.left, rest, replacement), tree.right)
    return Op(tree.op, tree.left, replace_at(tree.right, rest, replacement))


def leaf_count(tree: ExprTree) -> int:
    return len(leaf_paths(tree))


def operator_count(tree: ExprTree) -> int:
    return len(operator_paths(tree))


def num_tokens_in(tree: ExprTree) -> set[str]:
    return {n.token for _, n in iter_nodes(tree) if isinstance(n, Num)}
