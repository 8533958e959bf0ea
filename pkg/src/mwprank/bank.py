"""Per-problem expression bank: labeled positives and negatives for the ranker.

A bank maps each problem to deduplicated positive/negative candidate sets.
Candidates come from beam search over the current generator (strategy
"model"), additionally from tree disturbance of the ground truth
("model-tree"), or from other problems' ground truths ("random-sample").
The ground truth itself is always present as a positive and does not count
against the per-problem capacity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .candidates import LabeledExpression, Provenance
from .disturb import disturb_candidates
from .errors import EmptyBankError, ExpressionSyntaxError, MissingNumberError
from .expressions import (
    MappedProblem,
    evaluate,
    num_tokens_in,
    parse_infix,
    results_equal,
    serialize_infix,
)
from .seeding import stream

STRATEGY_KINDS = ("model", "model-tree", "random-sample")

# generate_fn(problem, k) -> up to k (expression token string, log-probability)
GenerateFn = Callable[[MappedProblem, int], Sequence[tuple[str, float]]]


@dataclass(frozen=True)
class BankStrategy:
    """Which candidate sources fill the bank, and whether it refreshes per epoch."""

    kind: str = "model-tree"
    online: bool = True

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown bank strategy {self.kind!r}; expected one of {STRATEGY_KINDS}")


@dataclass
class BankEntry:
    positives: list[LabeledExpression] = field(default_factory=list)
    negatives: list[LabeledExpression] = field(default_factory=list)

    def all_items(self) -> list[LabeledExpression]:
        return self.positives + self.negatives


class ExpressionBank:
    """Immutable-after-build candidate sets keyed by problem id."""

    def __init__(self, problems: Sequence[MappedProblem], capacity: int):
        self.capacity = capacity
        self.problems = {p.id: p for p in problems}
        self.entries: dict[str, BankEntry] = {p.id: BankEntry() for p in problems}
        self.stats = {"unparseable": 0, "missing_number": 0, "duplicate": 0, "over_capacity": 0}
        self._pos_pairs: list[tuple[str, LabeledExpression]] | None = None
        self._neg_pairs: list[tuple[str, LabeledExpression]] | None = None

    def n_positive(self) -> int:
        return sum(len(e.positives) for e in self.entries.values())

    def n_negative(self) -> int:
        return sum(len(e.negatives) for e in self.entries.values())

    def _pairs(self) -> tuple[list, list]:
        if self._pos_pairs is None:
            self._pos_pairs = [(pid, le) for pid, e in self.entries.items() for le in e.positives]
            self._neg_pairs = [(pid, le) for pid, e in self.entries.items() for le in e.negatives]
        return self._pos_pairs, self._neg_pairs

    def dump_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.iter_dump_lines():
                fh.write(line + "\n")

    def iter_dump_lines(self) -> Iterable[str]:
        for pid in self.entries:
            for le in self.entries[pid].all_items():
                yield json.dumps(
                    {
                        "problem_id": pid,
                        "expression": le.text,
                        "label": le.label,
                        "provenance": le.provenance.value,
                        "score_hint": le.score_hint,
                    },
                    sort_keys=True,
                )


def _labeled(tree, gt_value, table, provenance, score_hint=None) -> LabeledExpression:
    value = evaluate(tree, table)
    label = 1 if results_equal(value, gt_value) else 0
    return LabeledExpression(tree, label, provenance, score_hint)


def _build_entry(
    problem: MappedProblem,
    generate_fn: GenerateFn | None,
    strategy: BankStrategy,
    beam_k: int,
    capacity: int,
    disturb_count: int,
    gt_pool: Sequence[str],
    rng: np.random.Generator,
    stats: dict,
) -> BankEntry:
    table = problem.number_table
    gt = problem.ground_truth
    gt_value = evaluate(gt, table)
    gt_text = serialize_infix(gt)

    raw: list[LabeledExpression] = []
    if strategy.kind in ("model", "model-tree"):
        for text, logprob in generate_fn(problem, beam_k):
            try:
                tree = parse_infix(text)
            except ExpressionSyntaxError:
                stats["unparseable"] += 1
                continue
            try:
                raw.append(_labeled(tree, gt_value, table, Provenance.MODEL, logprob))
            except MissingNumberError:
                stats["missing_number"] += 1
    if strategy.kind == "model-tree":
        raw.extend(disturb_candidates(problem, disturb_count, rng))
    if strategy.kind == "random-sample":
        available = set(table)
        seen_texts = {gt_text}
        budget = 8 * capacity
        while len(raw) < capacity and budget > 0:
            budget -= 1
            text = gt_pool[int(rng.integers(len(gt_pool)))]
            if text in seen_texts:
                continue
            seen_texts.add(text)
            tree = parse_infix(text)
            if not num_tokens_in(tree) <= available:
                stats["missing_number"] += 1
                continue
            raw.append(_labeled(tree, gt_value, table, Provenance.RANDOM_SAMPLE))

    # Beam candidates keep their beam order, disturbance candidates follow in
    # draw order; duplicates of the ground truth or of earlier items drop out,
    # then everything past the capacity is cut.
    entry = BankEntry()
    entry.positives.append(LabeledExpression(gt, 1, Provenance.GROUND_TRUTH))
    seen = {gt_text}
    kept = 0
    for le in raw:
        if le.text in seen:
            stats["duplicate"] += 1
            continue
        if kept >= capacity:
            stats["over_capacity"] += 1
            continue
        seen.add(le.text)
        kept += 1
        (entry.positives if le.label == 1 else entry.negatives).append(le)
    return entry


def build_bank(
    problems: Sequence[MappedProblem],
    generate_fn: GenerateFn | None,
    strategy: BankStrategy,
    beam_k: int,
    capacity: int,
    seed: int,
    disturb_count: int | None = None,
    jobs: int = 1,
) -> ExpressionBank:
    """Construct the bank for every problem; deterministic under `seed`.

    Per-problem randomness is derived from (seed, problem id) so results do
    not depend on traversal or worker order.  disturb_count defaults to the
    capacity left over after the beam (capacity - beam_k).
    """
    if beam_k < 1 or capacity < 1:
        raise ValueError("beam_k and capacity must be >= 1")
    if strategy.kind in ("model", "model-tree") and generate_fn is None:
        raise ValueError(f"strategy {strategy.kind!r} needs a generator")
    if disturb_count is None:
        disturb_count = max(capacity - beam_k, 0)

    bank = ExpressionBank(problems, capacity)
    gt_texts = [serialize_infix(p.ground_truth) for p in problems]

    def entry_for(i: int) -> tuple[BankEntry, dict]:
        problem = problems[i]
        pool = gt_texts[:i] + gt_texts[i + 1 :]
        rng = stream(seed, "bank", problem.id)
        local_stats = dict.fromkeys(bank.stats, 0)
        entry = _build_entry(
            problem, generate_fn, strategy, beam_k, capacity, disturb_count, pool, rng, local_stats
        )
        return entry, local_stats

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            results = list(pool_exec.map(entry_for, range(len(problems))))
    else:
        results = [entry_for(i) for i in range(len(problems))]
    for problem, (entry, local_stats) in zip(problems, results):
        bank.entries[problem.id] = entry
        for key, value in local_stats.items():
            bank.stats[key] += value
    return bank


def sample_ranking_batch(
    bank: ExpressionBank,
    batch_size: int,
    pos_ratio: float,
    rng: np.random.Generator,
) -> list[tuple[MappedProblem, LabeledExpression]]:
    """Uniform (problem, expression) draws: ceil(pos_ratio*batch) positives,
    the rest negatives; a globally empty class is filled from the other."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not 0 < pos_ratio < 1:
        raise ValueError("pos_ratio must be in (0, 1)")
    if not bank.entries:
        raise EmptyBankError("bank has no entries")
    pos_pairs, neg_pairs = bank._pairs()
    if not pos_pairs and not neg_pairs:
        raise EmptyBankError("bank has no expressions")

    n_pos = math.ceil(pos_ratio * batch_size)
    n_neg = batch_size - n_pos
    if not neg_pairs:
        n_pos, n_neg = batch_size, 0
    elif not pos_pairs:
        n_pos, n_neg = 0, batch_size

    batch = []
    for pool, count in ((pos_pairs, n_pos), (neg_pairs, n_neg)):
        for idx in rng.integers(len(pool), size=count):
            pid, le = pool[int(idx)]
            batch.append((bank.problems[pid], le))
    return batch


def load_bank_jsonl(path, problems: Sequence[MappedProblem], capacity: int) -> ExpressionBank:
    """Rebuild a bank from its dump; inverse of ExpressionBank.dump_jsonl."""
    bank = ExpressionBank(problems, capacity)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            le = LabeledExpression(
                parse_infix(rec["expression"]),
                int(rec["label"]),
                Provenance(rec["provenance"]),
                rec.get("score_hint"),
            )
            entry = bank.entries[rec["problem_id"]]
            (entry.positives if le.label == 1 else entry.negatives).append(le)
    return bank
