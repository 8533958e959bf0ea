"""Command-line surface: synth, train, solve, eval, bank, disturb.

One entry point with subcommands for batch experiments.  Options resolve as
defaults < config file (--config) < explicit flags.  Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

import numpy as np

from .bank import BankStrategy, build_bank
from .disturb import DisturbanceKind, apply_disturbance
from .errors import FormatError, MwpRankError, NoAlternativeError, ParseError, TooSmallError
from .expressions import (
    UNDEFINED,
    MappedProblem,
    evaluate,
    fraction_to_decimal,
    has_decimal_form,
    map_numbers,
    parse_infix,
    results_equal,
    serialize_infix,
)
from .model import load_checkpoint
from .pipeline import TrainConfig, evaluate_accuracy, model_generate_fn, solve, train_full
from .seeding import stream
from .synthdata import generate_dataset, load_dataset, save_dataset

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _parse_op_dist(text: str) -> dict[int, float]:
    dist = {}
    try:
        for part in text.split(","):
            key, value = part.split(":")
            dist[int(key)] = float(value)
    except ValueError as exc:
        raise UsageError(f"bad --op-dist (expected like '1:0.4,2:0.6'): {exc}") from exc
    return dist


def _fmt_value(value) -> str:
    if value is UNDEFINED:
        return "undefined"
    if has_decimal_form(value):
        return fraction_to_decimal(value)
    return f"{value.numerator}/{value.denominator}"


TRAIN_FLAGS = {
    "m_finetune": int,
    "m_joint": int,
    "beam_k": int,
    "bank_size": int,
    "batch_size": int,
    "lr": float,
    "weight_decay": float,
    "warmup_ratio": float,
    "pos_ratio": float,
    "rank_loss_weight": float,
    "disturb_count": int,
    "max_len": int,
    "seed": int,
    "d_model": int,
    "n_heads": int,
    "n_enc_layers": int,
    "n_dec_layers": int,
    "d_ff": int,
    "halt_after_epochs": int,
}


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; explicit flags override it")
    parser.add_argument("--train", help="training set (JSON lines)")
    parser.add_argument("--dev", help="optional dev set evaluated each joint epoch")
    parser.add_argument("--out", help="output directory for checkpoint, log, bank dump")
    parser.add_argument("--strategy", choices=("model", "model-tree", "random-sample"))
    online = parser.add_mutually_exclusive_group()
    online.add_argument("--online", dest="online", action="store_true", default=None)
    online.add_argument("--no-online", dest="online", action="store_false", default=None)
    parser.add_argument("--head-only", dest="train_head_only", action="store_true", default=None,
                        help="freeze the backbone and train only the ranking head")
    parser.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    for name, typ in TRAIN_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)


def _resolve_train_config(args: argparse.Namespace) -> tuple[TrainConfig, dict]:
    settings: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                settings.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    file_paths = {k: settings.pop(k, None) for k in ("train", "dev", "out")}
    for name in TRAIN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    if args.strategy is not None:
        settings["strategy"] = args.strategy
    if args.online is not None:
        settings["online"] = args.online
    if args.train_head_only is not None:
        settings["train_head_only"] = args.train_head_only
    for key in ("train", "dev", "out"):
        flag = getattr(args, key, None)
        if flag is not None:
            file_paths[key] = flag
    try:
        config = TrainConfig.from_dict(settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc
    if not file_paths.get("train"):
        raise UsageError("a training set is required (--train or config 'train')")
    if not file_paths.get("out"):
        raise UsageError("an output directory is required (--out or config 'out')")
    return config, file_paths


def cmd_synth(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    dist = _parse_op_dist(args.op_dist) if args.op_dist else None
    try:
        records = generate_dataset(args.n, dist, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_dataset(records, args.out)
    print(f"wrote {len(records)} problems to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config, paths = _resolve_train_config(args)
    train_set = load_dataset(paths["train"])
    dev_set = load_dataset(paths["dev"]) if paths.get("dev") else None
    result = train_full(train_set, config, out_dir=paths["out"], dev=dev_set, resume=args.resume)
    print(f"status={result.status} epochs_done={result.epochs_done} out={paths['out']}")
    if result.history:
        last = result.history[-1]
        print(f"last epoch: phase={last['phase']} J_GEN={last['J_GEN']} J_RANK={last['J_RANK']}")
    return 0 if result.status in ("done", "halted") else RUNTIME_ERROR


def _load_params(path: str):
    return load_checkpoint(path).params


def _problem_from_text(text: str, problem_id: str = "adhoc") -> MappedProblem:
    tokens, table = map_numbers(text)
    # inference-only problem: ground truth placeholder never used for solving
    placeholder = parse_infix([next(iter(table))] if table else ["0"])
    return MappedProblem(problem_id, tuple(tokens), table, placeholder)


def cmd_solve(args: argparse.Namespace) -> int:
    params = _load_params(args.checkpoint)
    if (args.problem is None) == (args.file is None):
        raise UsageError("provide exactly one of --problem or --file")
    if args.problem is not None:
        problems = [_problem_from_text(args.problem)]
    else:
        problems = load_dataset(args.file)
    for problem in problems:
        result = solve(params, problem, k=args.k, max_len=args.max_len)
        print(f"problem {problem.id}")
        print(f"  chosen: {serialize_infix(result.tree)} = {_fmt_value(result.value)}")
        print("  candidates (beam order):")
        for cand in result.candidates:
            rank = "     -" if cand.rank_prob is None else f"{cand.rank_prob:.4f}"
            mark = "*" if cand.beam_index == result.chosen_index else " "
            flag = "" if cand.finished else "  [unfinished]"
            print(f"  {mark} rank={rank} logp={cand.gen_logprob:9.4f}  {cand.text}{flag}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    params = _load_params(args.checkpoint)
    problems = load_dataset(args.test)
    report = evaluate_accuracy(params, problems, k=args.k, max_len=args.max_len)
    payload = report.to_dict()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    if args.verdicts:
        report.write_verdicts(args.verdicts)
    print(f"n={payload['n']} accuracy={payload['accuracy']:.4f} "
          f"top1={payload['top1_accuracy']:.4f} oracle={payload['oracle_accuracy']:.4f}")
    if args.by_length:
        print("  #op      n   accuracy   top1   oracle")
        for op, stats in sorted(payload["by_op_count"].items(), key=lambda kv: int(kv[0])):
            print(f"  {op:>3} {stats['n']:>6}     {stats['accuracy']:.4f} {stats['top1_accuracy']:.4f} "
                  f"{stats['oracle_accuracy']:.4f}")
    return 0


def cmd_bank(args: argparse.Namespace) -> int:
    params = _load_params(args.checkpoint)
    problems = load_dataset(args.data)
    strategy = BankStrategy(args.strategy, online=True)
    generate = None
    if strategy.kind in ("model", "model-tree"):
        generate = model_generate_fn(params, problems, args.k, args.max_len)
    bank = build_bank(problems, generate, strategy, args.k, args.bank_size, args.seed,
                      disturb_count=args.disturb_count, jobs=args.jobs)
    bank.dump_jsonl(args.out)
    print(f"bank: {bank.n_positive()} positives, {bank.n_negative()} negatives "
          f"over {len(bank.entries)} problems -> {args.out}")
    print(f"stats: {json.dumps(bank.stats, sort_keys=True)}")
    return 0


def cmd_disturb(args: argparse.Namespace) -> int:
    try:
        tree = parse_infix(args.expr)
    except MwpRankError as exc:
        raise UsageError(f"bad expression: {exc}") from exc
    table = {}
    if args.numbers:
        for i, chunk in enumerate(args.numbers.split(",")):
            try:
                table[f"NUM{i}"] = Fraction(chunk.strip())
            except (ValueError, ZeroDivisionError) as exc:
                raise UsageError(f"bad number {chunk!r}") from exc
    try:
        kind = DisturbanceKind(args.kind)
    except ValueError as exc:
        raise UsageError(f"unknown kind {args.kind!r}") from exc
    rng = stream(args.seed, "disturb-cli")
    try:
        outcome = apply_disturbance(tree, kind, tuple(table), rng)
    except (TooSmallError, NoAlternativeError) as exc:
        raise UsageError(f"{kind.value} not applicable: {exc}") from exc
    before = evaluate(tree, table)
    after = evaluate(outcome.tree, table)
    label = "positive" if results_equal(before, after) else "negative"
    print(f"before: {serialize_infix(tree)} = {_fmt_value(before)}")
    print(f"after:  {serialize_infix(outcome.tree)} = {_fmt_value(after)}")
    print(f"kind: {outcome.kind.value} at site {'/'.join(outcome.site) or 'root'}")
    print(f"label: {label}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mwprank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--op-dist", help="operator-count distribution, e.g. '1:0.4,2:0.35,3:0.25'")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="fine-tune, then joint-train generator and ranker")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("solve", help="solve one problem or a file of problems")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--problem", help="problem text")
    p.add_argument("--file", help="JSON-lines problems")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--max-len", type=int, default=24)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("eval", help="evaluate solution accuracy on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--max-len", type=int, default=24)
    p.add_argument("--report", help="write the report JSON here")
    p.add_argument("--verdicts", help="write per-problem verdicts (JSON lines) here")
    p.add_argument("--by-length", action="store_true", help="print the operator-count breakdown")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bank", help="build and dump an expression bank")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", default="model-tree", choices=("model", "model-tree", "random-sample"))
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--bank-size", type=int, default=20)
    p.add_argument("--disturb-count", type=int, default=None)
    p.add_argument("--max-len", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bank)

    p = sub.add_parser("disturb", help="apply one tree disturbance to an expression")
    p.add_argument("--expr", required=True, help="infix expression, e.g. 'NUM0 + NUM1'")
    p.add_argument("--numbers", help="comma-separated NUM values, e.g. '25,12,20'")
    p.add_argument("--kind", required=True, choices=[k.value for k in DisturbanceKind])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_disturb)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (FormatError, ParseError) as exc:
        # malformed input data is a usage problem, not a runtime crash
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except MwpRankError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
