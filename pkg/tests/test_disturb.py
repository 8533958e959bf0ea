"""Tree disturbance operators and labeled-candidate production."""

from fractions import Fraction

import numpy as np
import pytest

from mwprank.disturb import (
    DisturbanceKind,
    apply_disturbance,
    delete,
    disturb_candidates,
    edit,
    expand,
    swap,
)
from mwprank.errors import NoAlternativeError, TooSmallError
from mwprank.expressions import (
    UNDEFINED,
    MappedProblem,
    Num,
    Op,
    evaluate,
    leaf_count,
    map_numbers,
    operator_count,
    parse_infix,
    results_equal,
    serialize_infix,
)

from helpers import random_table, random_tree

TOKENS = ("NUM0", "NUM1", "NUM2")


def rng_for(seed):
    return np.random.default_rng(seed)


class TestExpand:
    def test_single_leaf_grows(self):
        out = expand(Num("NUM0"), TOKENS, rng_for(0))
        assert isinstance(out.tree, Op)
        assert leaf_count(out.tree) == 2

    def test_leaf_count_plus_one(self):
        rng = rng_for(1)
        for _ in range(500):
            tree = random_tree(rng, TOKENS, max_depth=4)
            out = expand(tree, TOKENS, rng)
            assert leaf_count(out.tree) == leaf_count(tree) + 1
            assert parse_infix(serialize_infix(out.tree)) == out.tree

    def test_table1_site_enumeration(self):
        # expanding NUM2 of the Table-1 tree can produce NUM2 / NUM0 in place,
        # confirmed by enumerating every expansion at that site
        tree = parse_infix("NUM0 * NUM1 / NUM2")
        target = "NUM0 * NUM1 / ( NUM2 / NUM0 )"
        seen = set()
        rng = rng_for(2)
        for _ in range(3000):
            out = expand(tree, TOKENS, rng)
            if out.site == ("R",):
                seen.add(serialize_infix(out.tree))
        assert target in seen

    def test_no_num_tokens(self):
        with pytest.raises(NoAlternativeError):
            expand(Num("NUM0"), (), rng_for(0))


class TestEdit:
    def test_operator_edit_example(self):
        # deterministically check the rewrite by enumerating edits at the root
        tree = parse_infix("NUM0 * NUM1 / NUM2")
        rng = rng_for(3)
        seen = set()
        for _ in range(500):
            out = edit(tree, TOKENS, rng)
            if out.site == ():
                seen.add(serialize_infix(out.tree))
        assert "NUM0 * NUM1 - NUM2" in seen

    def test_edited_value_becomes_negative_label(self):
        table = {"NUM0": Fraction(25), "NUM1": Fraction(12), "NUM2": Fraction(20)}
        edited = parse_infix("NUM0 * NUM1 - NUM2")
        assert evaluate(edited, table) == Fraction(280)
        assert not results_equal(evaluate(edited, table), Fraction(15))

    def test_shape_preserved(self):
        rng = rng_for(4)
        for _ in range(500):
            tree = random_tree(rng, TOKENS, max_depth=4)
            out = edit(tree, TOKENS, rng)
            assert leaf_count(out.tree) == leaf_count(tree)
            assert operator_count(out.tree) == operator_count(tree)

    def test_no_alternative_for_single_token(self):
        with pytest.raises(NoAlternativeError):
            edit(Num("NUM0"), ("NUM0",), rng_for(0))


class TestDelete:
    def test_rule(self):
        rng = rng_for(5)
        seen = set()
        tree = parse_infix("NUM0 * NUM1 / NUM2")
        for _ in range(200):
            seen.add(serialize_infix(delete(tree, rng).tree))
        assert "NUM0 * NUM1" in seen

    def test_sibling_promotion(self):
        rng = rng_for(6)
        seen = {serialize_infix(delete(parse_infix("NUM0 + NUM1"), rng).tree) for _ in range(50)}
        assert seen == {"NUM0", "NUM1"}

    def test_leaf_count_minus_one(self):
        rng = rng_for(7)
        for _ in range(500):
            tree = random_tree(rng, TOKENS, max_depth=4)
            if isinstance(tree, Op):
                out = delete(tree, rng)
                assert leaf_count(out.tree) == leaf_count(tree) - 1

    def test_single_leaf_rejected(self):
        with pytest.raises(TooSmallError):
            delete(Num("NUM0"), rng_for(0))


class TestSwap:
    def test_commutative_swap(self):
        out = swap(parse_infix("NUM0 + NUM1"), rng_for(8))
        assert serialize_infix(out.tree) == "NUM1 + NUM0"

    def test_subtraction_changes_value(self):
        table = {"NUM0": Fraction(25), "NUM1": Fraction(12)}
        tree = parse_infix("NUM0 - NUM1")
        out = swap(tree, rng_for(9))
        assert evaluate(out.tree, table) == Fraction(-13)
        assert not results_equal(evaluate(out.tree, table), evaluate(tree, table))

    def test_root_swap_serialization_roundtrips(self):
        tree = parse_infix("NUM0 * NUM1 / NUM2")
        rng = rng_for(10)
        for _ in range(100):
            out = swap(tree, rng)
            if out.site == ():
                assert serialize_infix(out.tree) == "NUM2 / ( NUM0 * NUM1 )"
            assert parse_infix(serialize_infix(out.tree)) == out.tree

    def test_single_leaf_rejected(self):
        with pytest.raises(TooSmallError):
            swap(Num("NUM0"), rng_for(0))

    def test_node_count_unchanged(self):
        rng = rng_for(11)
        for _ in range(500):
            tree = random_tree(rng, TOKENS, max_depth=4)
            if isinstance(tree, Op):
                out = swap(tree, rng)
                assert operator_count(out.tree) == operator_count(tree)
                assert leaf_count(out.tree) == leaf_count(tree)


def _problem(text, equation):
    tokens, table = map_numbers(text)
    return MappedProblem("p0", tuple(tokens), table, parse_infix(equation))


class TestDisturbCandidates:
    def test_count_zero(self):
        problem = _problem("has 3 and 4", "NUM0 + NUM1")
        assert disturb_candidates(problem, 0, rng_for(0)) == []

    def test_labels_match_oracle_relabeling(self):
        rng = rng_for(12)
        problem = _problem("starts 25 then 12 then 20", "NUM0 * NUM1 / NUM2")
        gt_value = evaluate(problem.ground_truth, problem.number_table)
        for le in disturb_candidates(problem, 50, rng):
            value = evaluate(le.expr, problem.number_table)
            assert le.label == int(results_equal(value, gt_value))

    def test_swap_on_addition_always_positive(self):
        rng = rng_for(13)
        problem = _problem("a 3 and b 4", "NUM0 + NUM1")
        for le in disturb_candidates(problem, 200, rng):
            if serialize_infix(le.expr) == "NUM1 + NUM0":
                assert le.label == 1

    def test_no_duplicates_and_no_ground_truth(self):
        rng = rng_for(14)
        problem = _problem("a 3 and b 4 and c 5", "NUM0 + NUM1 * NUM2")
        out = disturb_candidates(problem, 60, rng)
        texts = [le.text for le in out]
        assert len(set(texts)) == len(texts)
        assert serialize_infix(problem.ground_truth) not in texts

    def test_deterministic_under_seed(self):
        problem = _problem("a 3 and b 4 and c 5", "( NUM0 + NUM1 ) * NUM2")
        a = [(le.text, le.label) for le in disturb_candidates(problem, 30, rng_for(15))]
        b = [(le.text, le.label) for le in disturb_candidates(problem, 30, rng_for(15))]
        assert a == b

    def test_undefined_outcomes_labeled_negative(self):
        # force divisions: ground truth with subtraction of equal numbers under /
        problem = _problem("x 5 y 5 z 3", "NUM2 / ( NUM0 - NUM1 )")
        assert evaluate(problem.ground_truth, problem.number_table) is UNDEFINED
        rng = rng_for(16)
        for le in disturb_candidates(problem, 40, rng):
            if evaluate(le.expr, problem.number_table) is UNDEFINED:
                assert le.label == 0


class TestApplyDisturbance:
    def test_all_kinds_valid_trees(self):
        rng = rng_for(17)
        counts = {k: 0 for k in DisturbanceKind}
        for _ in range(2000):
            tree = random_tree(rng, TOKENS, max_depth=4)
            kind = list(DisturbanceKind)[int(rng.integers(4))]
            try:
                out = apply_disturbance(tree, kind, TOKENS, rng)
            except (TooSmallError, NoAlternativeError):
                continue
            counts[kind] += 1
            assert parse_infix(serialize_infix(out.tree)) == out.tree
        assert all(v > 100 for v in counts.values())
