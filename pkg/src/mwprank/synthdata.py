"""Synthetic math word problems and JSON-lines dataset ingestion.

Problems are instantiated from a closed-vocabulary template bank (operator
counts 1 through 5, several templates per count, some with distractor
numbers the solution never uses).  Records use the interchange format
{"id", "text", "equation", "answer"}, one JSON object per line; loading
applies number mapping and binds equation numerals to NUM tokens by value
with first-occurrence tie-breaking.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import ExpressionSyntaxError, FormatError, ParseError
from .expressions import (
    UNDEFINED,
    MappedProblem,
    evaluate,
    fraction_to_decimal,
    has_decimal_form,
    map_numbers,
    parse_infix,
)
from .seeding import stream

logger = logging.getLogger(__name__)

_SLOT_RE = re.compile(r"\{(\d+)\}")
_EQ_TOKEN_RE = re.compile(r"\d+\.\d+|\d+|[+\-*/()]")


@dataclass(frozen=True)
class Template:
    """A text pattern with numeric slots and the expression it asks for.

    Every slot used by the expression must appear in the text; the text may
    carry extra distractor slots.  op_count is the operator count of the
    expression pattern.
    """

    text: str
    expr: str
    op_count: int

    def __post_init__(self):
        text_slots = {int(m) for m in _SLOT_RE.findall(self.text)}
        expr_slots = {int(m) for m in _SLOT_RE.findall(self.expr)}
        if not expr_slots <= text_slots:
            raise ValueError(f"expression slots {expr_slots - text_slots} missing from text")
        if text_slots != set(range(len(text_slots))):
            raise ValueError("text slots must be dense from 0")

    @property
    def n_slots(self) -> int:
        return len(set(_SLOT_RE.findall(self.text)))


TEMPLATES: list[Template] = [
    # one operator
    Template("Tom has {0} apples . He buys {1} more apples . How many apples does Tom have now ?", "{0} + {1}", 1),
    Template("Mia had {0} marbles . She gave {1} marbles to Sam . How many marbles does Mia have left ?", "{0} - {1}", 1),
    Template("A box holds {0} pencils . The shop has {1} boxes . How many pencils does the shop have in all ?", "{0} * {1}", 1),
    Template("The baker puts {0} cookies equally into {1} bags . How many cookies go into each bag ?", "{0} / {1}", 1),
    Template("There are {0} red cards and {1} blue cards . How many cards are there in all ?", "{0} + {1}", 1),
    Template("A book has {0} pages . Ana read {1} pages . How many pages are left ?", "{0} - {1}", 1),
    Template("Each ticket costs {0} dollars . Leo buys {1} tickets . How many dollars does Leo pay ?", "{0} * {1}", 1),
    Template("The class puts {0} books equally into {1} boxes . How many books go into each box ?", "{0} / {1}", 1),
    Template("Sam has {0} coins . He finds {1} coins . Each card costs {2} coins . How many coins does Sam have now ?", "{0} + {1}", 1),
    Template("The team had {0} points . It lost {1} points in {2} games . How many points does the team have now ?", "{0} - {1}", 1),
    # two operators
    Template("Tom has {0} boxes with {1} apples each . He eats {2} apples . How many apples are left ?", "{0} * {1} - {2}", 2),
    Template("Mia picked {0} red flowers and {1} blue flowers . She puts them equally into {2} baskets . How many flowers go into each basket ?", "( {0} + {1} ) / {2}", 2),
    Template("A project is completed in {0} days by {1} workers . If it takes {2} days to complete , how many workers will it take ?", "{0} * {1} / {2}", 2),
    Template("The shop sold {0} pencils , {1} pens and {2} erasers . How many items did the shop sell in all ?", "{0} + {1} + {2}", 2),
    Template("Leo had {0} dollars . He bought {1} tickets at {2} dollars each . How many dollars does Leo have left ?", "{0} - {1} * {2}", 2),
    Template("Ana reads {0} pages each day . How many pages does she read in {1} weeks of {2} days each ?", "{0} * {1} * {2}", 2),
    Template("Sam won {0} points , then lost {1} points , then won {2} more points . How many points does Sam have now ?", "{0} - {1} + {2}", 2),
    Template("A farmer has {0} trees . He plants {1} rows of {2} trees . How many trees does the farmer have now ?", "{0} + {1} * {2}", 2),
    Template("The class has {0} girls and {1} boys . Each child gets {2} stickers . The class read {3} books . How many stickers does the class need ?", "( {0} + {1} ) * {2}", 2),
    Template("A farmer packs {0} eggs into crates of {1} eggs . Each crate sells for {2} dollars . How many dollars does the farmer get ?", "{0} / {1} * {2}", 2),
    # three operators
    Template("Tom packs {0} apples into bags of {1} apples . He sells each bag for {2} dollars and pays {3} dollars for tickets . How many dollars does Tom keep ?", "{0} / {1} * {2} - {3}", 3),
    Template("Mia has {0} red marbles and {1} blue marbles . Sam has {2} marbles . They put all marbles equally into {3} groups . How many marbles are in each group ?", "( {0} + {1} + {2} ) / {3}", 3),
    Template("A farm has {0} trees in each of {1} rows . Then {2} trees fall and {3} trees are planted . How many trees are there now ?", "{0} * {1} - {2} + {3}", 3),
    Template("Ana buys {0} books at {1} dollars each and {2} pens at {3} dollars each . How many dollars does she spend ?", "{0} * {1} + {2} * {3}", 3),
    Template("Leo earns {0} dollars each hour for {1} hours each day and spends {2} dollars each day . How many dollars does he keep after {3} days ?", "( {0} * {1} - {2} ) * {3}", 3),
    Template("The baker made {0} cookies . She sold {1} boxes of {2} cookies and lost {3} cookies . How many cookies are left ?", "{0} - {1} * {2} - {3}", 3),
    Template("Sam had {0} cards . He bought {1} packs of {2} cards . He gave {3} cards to Mia . How many cards does Sam have now ?", "{0} + {1} * {2} - {3}", 3),
    Template("A team wins {0} games with {1} points each and {2} games with {3} points each . How many points does the team win in all ?", "{0} * {1} + {2} * {3}", 3),
    Template("There are {0} rows with {1} books each and one box with {2} books . The shop sold {3} pens . How many books are there in all ?", "{0} * {1} + {2}", 2),
    Template("A class of {0} children is split into teams of {1} children . Each team gets {2} balls and Sam keeps {3} balls . How many balls are there in all ?", "{0} / {1} * {2} + {3}", 3),
    # four operators
    Template("The class has {0} girls and {1} boys . Each child finds {2} shells . Then {3} bags of {4} shells are lost . How many shells are left ?", "( {0} + {1} ) * {2} - {3} * {4}", 4),
    Template("Ana buys {0} books at {1} dollars each , {2} pens at {3} dollars each , and a card for {4} dollars . How many dollars does she spend ?", "{0} * {1} + {2} * {3} + {4}", 4),
    Template("The shop sold {0} pencils , {1} pens , {2} erasers , {3} cards and {4} stickers . How many items did the shop sell in all ?", "{0} + {1} + {2} + {3} + {4}", 4),
    Template("A farmer picks {0} apples and {1} flowers . They go equally into {2} baskets . Each basket sells for {3} dollars and {4} dollars go to Sam . How many dollars are left ?", "( {0} + {1} ) / {2} * {3} - {4}", 4),
    Template("Tom had {0} coins . He won {1} games at {2} coins each and lost {3} games at {4} coins each . How many coins does Tom have now ?", "{0} + {1} * {2} - {3} * {4}", 4),
    Template("A shop has {0} rows of {1} seats . It sells {2} tickets . Then {3} seats are lost and {4} more seats are put in . How many seats are there now ?", "{0} * {1} - {3} + {4}", 3),
    Template("Leo works {0} hours at {1} dollars each hour and {2} hours at {3} dollars each hour , then spends {4} dollars . How many dollars does he keep ?", "{0} * {1} + {2} * {3} - {4}", 4),
    Template("Mia bakes {0} trays of {1} cookies . She keeps {2} cookies and puts the rest equally into {3} bags after she bakes {4} more cookies . How many cookies go into each bag ?", "( {0} * {1} - {2} + {4} ) / {3}", 4),
    Template("The baker makes {0} trays of {1} cookies , eats {2} cookies , and sells {3} boxes of {4} cookies . How many cookies are left ?", "{0} * {1} - {2} - {3} * {4}", 4),
    # five operators
    Template("The shop sold {0} pencils , {1} pens , {2} erasers , {3} cards , {4} stickers and {5} books . How many items did the shop sell in all ?", "{0} + {1} + {2} + {3} + {4} + {5}", 5),
    Template("Ana buys {0} books at {1} dollars each , {2} pens at {3} dollars each and {4} cards at {5} dollars each . How many dollars does she spend ?", "{0} * {1} + {2} * {3} + {4} * {5}", 5),
    Template("Tom has {0} red marbles and {1} blue marbles . Mia has {2} marbles . Sam has {3} bags of {4} marbles . They put all marbles equally into {5} groups . How many marbles are in each group ?", "( {0} + {1} + {2} + {3} * {4} ) / {5}", 5),
    Template("A farm plants {0} rows of {1} trees and {2} rows of {3} trees . Then {4} trees fall and {5} trees are planted . How many trees are there now ?", "{0} * {1} + {2} * {3} - {4} + {5}", 5),
    Template("Leo earns {0} dollars each hour for {1} hours and {2} dollars each hour for {3} hours . He spends {4} dollars and finds {5} dollars . How many dollars does Leo have ?", "{0} * {1} + {2} * {3} - {4} + {5}", 5),
    Template("Sam had {0} points . He won {1} games of {2} points , lost {3} points , won {4} points and lost {5} points . How many points does Sam have now ?", "{0} + {1} * {2} - {3} + {4} - {5}", 5),
    Template("The baker makes {0} trays of {1} cookies and {2} trays of {3} cookies . She puts them equally into boxes of {4} cookies and sells each box for {5} dollars . How many dollars does she get ?", "( {0} * {1} + {2} * {3} ) / {4} * {5}", 5),
    Template("The class has {0} girls and {1} boys . Each child gets {2} pencils and {3} pens . Then {4} items are lost and Sam finds {5} more items . How many items does the class have now ?", "( {0} + {1} ) * ( {2} + {3} ) - {4} + {5}", 5),
]

TEMPLATES_BY_OP: dict[int, list[Template]] = {}
for _t in TEMPLATES:
    TEMPLATES_BY_OP.setdefault(_t.op_count, []).append(_t)


@dataclass(frozen=True)
class ProblemRecord:
    """One dataset row: raw text, raw-numeral infix equation, optional answer."""

    id: str
    text: str
    equation: str
    answer: str | None = None

    def to_json(self) -> str:
        rec = {"id": self.id, "text": self.text, "equation": self.equation}
        if self.answer is not None:
            rec["answer"] = self.answer
        return json.dumps(rec, sort_keys=True)


def _map_record(record: ProblemRecord, line: int | None = None) -> MappedProblem:
    tokens, table = map_numbers(record.text)
    eq_tokens = _EQ_TOKEN_RE.findall(record.equation)
    leftover = _EQ_TOKEN_RE.sub("", record.equation).strip()
    if leftover:
        raise ParseError(f"{record.id}: bad equation characters {leftover!r}")
    mapped_eq = []
    for tok in eq_tokens:
        if tok in "+-*/()":
            mapped_eq.append(tok)
            continue
        value = Fraction(tok)
        for name, table_value in table.items():
            if table_value == value:
                mapped_eq.append(name)
                break
        else:
            mapped_eq.append(tok)  # numeral absent from text: constant leaf
    try:
        tree = parse_infix(mapped_eq)
    except ExpressionSyntaxError as exc:
        raise ParseError(f"{record.id}: {exc}") from exc

    answer = None
    if record.answer is not None:
        try:
            answer = Fraction(record.answer)
        except (ValueError, ZeroDivisionError) as exc:
            raise FormatError(f"{record.id}: bad answer {record.answer!r}", line) from exc
        value = evaluate(tree, table)
        if value is UNDEFINED or value != answer:
            logger.warning(
                "record %s: answer %s disagrees with equation value %s; using the equation",
                record.id, record.answer, value,
            )
    return MappedProblem(record.id, tuple(tokens), table, tree, answer)


def generate_dataset(
    n: int,
    op_count_distribution: dict[int, float] | None = None,
    seed: int = 0,
    templates: Sequence[Template] | None = None,
) -> list[ProblemRecord]:
    """Sample n records; numerals are uniform integers in [2, 100].

    Instances whose ground truth divides by zero are redrawn (keeping the
    operator count, so the requested distribution is preserved exactly).
    Deterministic under seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    dist = op_count_distribution or {1: 0.35, 2: 0.35, 3: 0.30}
    counts = sorted(dist)
    weights = [float(dist[c]) for c in counts]
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("operator-count distribution must sum to 1")
    by_op: dict[int, list[Template]] = {}
    for t in templates if templates is not None else TEMPLATES:
        by_op.setdefault(t.op_count, []).append(t)
    for c in counts:
        if dist[c] > 0 and not by_op.get(c):
            raise ValueError(f"no templates with operator count {c}")

    rng = stream(seed, "synthdata")
    records = []
    for i in range(n):
        op_count = counts[int(rng.choice(len(counts), p=weights))]
        pool = by_op[op_count]
        while True:
            template = pool[int(rng.integers(len(pool)))]
            values = [int(v) for v in rng.integers(2, 101, size=template.n_slots)]
            text = template.text.format(*values)
            equation = template.expr.format(*values)
            record = ProblemRecord(f"synth-{i:05d}", text, equation)
            problem = _map_record(record)
            value = evaluate(problem.ground_truth, problem.number_table)
            if value is UNDEFINED:
                continue
            if has_decimal_form(value):
                record = ProblemRecord(record.id, text, equation, fraction_to_decimal(value))
            records.append(record)
            break
    return records


def save_dataset(records: Sequence[ProblemRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def _iter_records(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line_no) from exc
            if not isinstance(rec, dict):
                raise FormatError("record is not a JSON object", line_no)
            missing = {"id", "text", "equation"} - set(rec)
            if missing:
                raise FormatError(f"missing fields {sorted(missing)}", line_no)
            for key in ("id", "text", "equation"):
                if not isinstance(rec[key], str):
                    raise FormatError(f"field {key!r} must be a string", line_no)
            answer = rec.get("answer")
            if answer is not None and not isinstance(answer, str):
                raise FormatError("field 'answer' must be a string", line_no)
            yield line_no, ProblemRecord(rec["id"], rec["text"], rec["equation"], answer)


def load_records(path) -> list[ProblemRecord]:
    """Parse the JSON-lines file into raw records, validating field types."""
    return [record for _, record in _iter_records(path)]


def load_dataset(path) -> list[MappedProblem]:
    """Load and number-map a JSON-lines dataset."""
    return [_map_record(record, line_no) for line_no, record in _iter_records(path)]


def split_dataset(records: Sequence, folds: int, seed: int = 0) -> list[int]:
    """Fold index per record: deterministic shuffle, then round-robin."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    rng = stream(seed, "folds")
    order = rng.permutation(len(records))
    assignment = [0] * len(records)
    for position, record_idx in enumerate(order):
        assignment[int(record_idx)] = position % folds
    return assignment
