"""Tree disturbance: four structural rewrites of a solution expression.

Each operator picks its target uniformly among eligible nodes and returns
a new tree (inputs are never mutated).  disturb_candidates applies random
rewrites to a problem's ground truth and labels every outcome by exact
numerical comparison against the ground truth, so near-miss expressions
become negative training examples and value-preserving rewrites (such as
swapping the operands of + or *) become positives.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .candidates import LabeledExpression, Provenance
from .errors import NoAlternativeError, TooSmallError
from .expressions import (
    OPERATORS,
    ExprTree,
    MappedProblem,
    Num,
    Op,
    Path,
    evaluate,
    leaf_paths,
    operator_paths,
    replace_at,
    results_equal,
    serialize_infix,
    subtree_at,
)


class DisturbanceKind(str, Enum):
    EXPAND = "expand"
    EDIT = "edit"
    DELETE = "delete"
    SWAP = "swap"


@dataclass(frozen=True)
class DisturbanceOutcome:
    """A rewritten tree plus which rewrite was applied where."""

    tree: ExprTree
    kind: DisturbanceKind
    site: Path


def _choose(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


def expand(tree: ExprTree, num_tokens: Sequence[str], rng: np.random.Generator) -> DisturbanceOutcome:
    """Grow a uniformly chosen leaf into an operation with a problem number."""
    if not num_tokens:
        raise NoAlternativeError("no NUM tokens to expand with")
    site = _choose(rng, leaf_paths(tree))
    leaf = subtree_at(tree, site)
    op = _choose(rng, OPERATORS)
    new_leaf = Num(_choose(rng, list(num_tokens)))
    if int(rng.integers(2)) == 0:
        replacement = Op(op, leaf, new_leaf)
    else:
        replacement = Op(op, new_leaf, leaf)
    return DisturbanceOutcome(replace_at(tree, site, replacement), DisturbanceKind.EXPAND, site)


def edit(tree: ExprTree, num_tokens: Sequence[str], rng: np.random.Generator) -> DisturbanceOutcome:
    """Replace a uniformly chosen node in kind, preserving the tree shape."""
    paths = leaf_paths(tree) + operator_paths(tree)
    site = _choose(rng, paths)
    node = subtree_at(tree, site)
    if isinstance(node, Op):
        alternatives = [op for op in OPERATORS if op != node.op]
        replacement: ExprTree = Op(_choose(rng, alternatives), node.left, node.right)
    else:
        current = node.token if isinstance(node, Num) else None
        alternatives = [t for t in num_tokens if t != current]
        if not alternatives:
            raise NoAlternativeError(f"no replacement for {node} at {site}")
        replacement = Num(_choose(rng, alternatives))
    return DisturbanceOutcome(replace_at(tree, site, replacement), DisturbanceKind.EDIT, site)


def delete(tree: ExprTree, rng: np.random.Generator) -> DisturbanceOutcome:
    """Remove a uniformly chosen leaf, promoting its sibling in its parent's place."""
    if not isinstance(tree, Op):
        raise TooSmallError("cannot delete from a single leaf")
    site = _choose(rng, leaf_paths(tree))
    parent_path, side = site[:-1], site[-1]
    parent = subtree_at(tree, parent_path)
    sibling = parent.right if side == "L" else parent.left
    return DisturbanceOutcome(replace_at(tree, parent_path, sibling), DisturbanceKind.DELETE, site)


def swap(tree: ExprTree, rng: np.random.Generator) -> DisturbanceOutcome:
    """Exchange the children of a uniformly chosen operator node."""
    sites = operator_paths(tree)
    if not sites:
        raise TooSmallError("no operator node to swap")
    site = _choose(rng, sites)
    node = subtree_at(tree, site)
    return DisturbanceOutcome(replace_at(tree, site, Op(node.op, node.right, node.left)), DisturbanceKind.SWAP, site)


def apply_disturbance(
    tree: ExprTree,
    kind: DisturbanceKind,
    num_tokens: Sequence[str],
    rng: np.random.Generator,
) -> DisturbanceOutcome:
    if kind is DisturbanceKind.EXPAND:
        return expand(tree, num_tokens, rng)
    if kind is DisturbanceKind.EDIT:
        return edit(tree, num_tokens, rng)
    if kind is DisturbanceKind.DELETE:
        return delete(tree, rng)
    return swap(tree, rng)


_KINDS = tuple(DisturbanceKind)


def disturb_candidates(
    problem: MappedProblem,
    count: int,
    rng: np.random.Generator,
    retry_budget: int = 8,
) -> list[LabeledExpression]:
    """Draw `count` disturbed variants of the ground truth, labeled by value.

    Each draw applies one uniformly chosen rewrite to the original ground
    truth.  Inapplicable rewrites and duplicates (of the ground truth or of
    earlier outcomes, by serialized string) are redrawn up to retry_budget
    times, then skipped.
    """
    gt = problem.ground_truth
    gt_value = evaluate(gt, problem.number_table)
    seen = {serialize_infix(gt)}
    out: list[LabeledExpression] = []
    for _ in range(count):
        for _attempt in range(retry_budget):
            kind = _choose(rng, _KINDS)
            try:
                outcome = apply_disturbance(gt, kind, problem.num_tokens, rng)
            except (TooSmallError, NoAlternativeError):
                continue
            text = serialize_infix(outcome.tree)
            if text in seen:
                continue
            seen.add(text)
            value = evaluate(outcome.tree, problem.number_table)
            label = 1 if results_equal(value, gt_value) else 0
            out.append(LabeledExpression(outcome.tree, label, Provenance.DISTURBANCE))
            break
    return out
