"""Training and inference pipeline: fine-tune, bank, joint train, solve, score.

The full procedure is: fine-tune the generator on ground truths, build the
expression bank with beam search (plus tree disturbance, per strategy),
then train generation and ranking jointly, rebuilding the bank after every
epoch when the strategy is online.  Inference runs beam search and returns
the candidate with the highest ranking score.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bank import BankStrategy, ExpressionBank, build_bank, load_bank_jsonl, sample_ranking_batch
from .errors import (
    CheckpointError,
    ExpressionSyntaxError,
    MissingNumberError,
    NoCandidateError,
    NonFiniteError,
)
from .expressions import (
    UNDEFINED,
    ExprTree,
    MappedProblem,
    evaluate,
    parse_infix,
    results_equal,
    serialize_infix,
)
from .model import (
    AdamWState,
    IncrementalDecoder,
    ModelConfig,
    ModelParams,
    OptimizerConfig,
    Vocab,
    adamw_update,
    generation_loss,
    joint_step,
    load_checkpoint,
    lr_at,
    no_grad,
    rank_scores,
    save_checkpoint,
)
from .model.network import _pad_batch, _wrap, encoder_forward
from .seeding import stream

BEAM_CHUNK = 128
RANK_SCORE_BATCH = 256


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the full procedure.

    Paper-scale defaults: 50 epochs per phase, beam size 10, bank size 20,
    lr 5e-5 with warmup ratio 0.1 and weight decay 0.01.  The model dims
    default to a small trainable-from-scratch transformer.
    """

    m_finetune: int = 50
    m_joint: int = 50
    beam_k: int = 10
    bank_size: int = 20
    strategy: BankStrategy = field(default_factory=BankStrategy)
    batch_size: int = 16
    lr: float = 5e-5
    weight_decay: float = 0.01
    warmup_ratio: float = 0.1
    pos_ratio: float = 0.5
    rank_loss_weight: float = 1.0
    disturb_count: int | None = None
    max_len: int = 24
    seed: int = 0
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 128
    train_head_only: bool = False
    halt_after_epochs: int | None = None

    def __post_init__(self):
        if self.beam_k < 1 or self.bank_size < 1:
            raise ValueError("beam_k and bank_size must be >= 1")
        if self.m_finetune < 0 or self.m_joint < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1 or self.max_len < 2:
            raise ValueError("batch_size must be >= 1 and max_len >= 2")

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(self.d_model, self.n_heads, self.n_enc_layers, self.n_dec_layers, self.d_ff)

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(self.lr, self.weight_decay, self.warmup_ratio)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "strategy"}
        d["strategy"] = self.strategy.kind
        d["online"] = self.strategy.online
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        strategy = BankStrategy(d.pop("strategy", "model-tree"), bool(d.pop("online", True)))
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(strategy=strategy, **known)


# Token-array plumbing -----------------------------------------------------


def problem_src_ids(vocab: Vocab, problem: MappedProblem) -> np.ndarray:
    return vocab.encode(problem.tokens)


def expr_ids(vocab: Vocab, text: str) -> np.ndarray:
    body = vocab.encode(text.split())
    return np.concatenate(([vocab.bos_id], body, [vocab.eos_id]))


def problem_tgt_ids(vocab: Vocab, problem: MappedProblem) -> np.ndarray:
    return expr_ids(vocab, serialize_infix(problem.ground_truth))


class _Encoded:
    """Per-run cache of token arrays for problems and expression strings."""

    def __init__(self, vocab: Vocab, problems: Sequence[MappedProblem]):
        self.vocab = vocab
        self.src = {p.id: problem_src_ids(vocab, p) for p in problems}
        self.tgt = {p.id: problem_tgt_ids(vocab, p) for p in problems}
        self._expr: dict[str, np.ndarray] = {}

    def expr(self, text: str) -> np.ndarray:
        ids = self._expr.get(text)
        if ids is None:
            ids = self._expr[text] = expr_ids(self.vocab, text)
        return ids


# Beam search --------------------------------------------------------------


@dataclass(frozen=True)
class BeamHypothesis:
    """Generated token ids (ending with [eos] when complete) and their
    cumulative log-probability."""

    tokens: tuple[int, ...]
    score: float
    finished: bool


def _ordered_candidates(flat: np.ndarray, tokens: list[tuple[int, ...]], vocab_size: int, need: int) -> list[int]:
    """Indices of the top `need` candidates by (score desc, sequence lex asc).

    flat is the (k*V,) candidate score array; index i means beam i // V
    extended with token i % V.  The fast path is a stable argsort; exact
    sequence-order tie-breaking kicks in only when equal scores appear
    inside (or at the boundary of) the consumed window.
    """
    order = np.argsort(-flat, kind="stable")
    finite = np.isfinite(flat[order])
    order = order[finite]
    if len(order) == 0:
        return []
    m = min(need, len(order))
    window = flat[order[:m]]
    boundary_tie = m < len(order) and flat[order[m]] == window[-1]
    has_ties = len(np.unique(window)) != m or boundary_tie
    if not has_ties:
        return [int(i) for i in order[:m]]
    cutoff = window[-1]
    pool = [int(i) for i in order if flat[i] >= cutoff]
    pool.sort(key=lambda i: (-flat[i], tokens[i // vocab_size] + (i % vocab_size,)))
    return pool[:m]


def _beam_chunk(
    params: ModelParams,
    src_seqs: list[np.ndarray],
    k: int,
    max_len: int,
) -> list[list[BeamHypothesis]]:
    vocab = params.vocab
    eos = vocab.eos_id
    n_problems = len(src_seqs)
    src_ids, src_pad = _pad_batch(src_seqs, vocab.pad_id)
    with no_grad():
        enc = encoder_forward(_wrap(params), params.config, src_ids, src_pad).data

    decoder = IncrementalDecoder(params)
    state = decoder.start(np.repeat(enc, k, axis=0), np.repeat(src_pad, k, axis=0), max_len)
    last_ids = np.full(n_problems * k, vocab.bos_id, dtype=np.int64)
    scores = np.full((n_problems, k), -np.inf)
    scores[:, 0] = 0.0
    tokens: list[list[tuple[int, ...]]] = [[() for _ in range(k)] for _ in range(n_problems)]
    finals: list[list[tuple[float, tuple[int, ...], bool]]] = [[] for _ in range(n_problems)]
    active = list(range(n_problems))

    for step in range(max_len):
        logprobs = decoder.step(state, last_ids)
        vocab_size = logprobs.shape[1]
        per_problem = logprobs.reshape(len(active), k, vocab_size)
        next_active: list[int] = []
        row_map: list[int] = []
        next_last: list[int] = []
        new_scores: list[list[float]] = []
        new_tokens: list[list[tuple[int, ...]]] = []
        for ai, p in enumerate(active):
            flat = (scores[p][:, None] + per_problem[ai]).ravel()
            selected = _ordered_candidates(flat, tokens[p], vocab_size, 2 * k)
            for rank, idx in enumerate(selected[:k]):
                if idx % vocab_size == eos:
                    finals[p].append((float(flat[idx]), tokens[p][idx // vocab_size] + (eos,), True))
            survivors = [idx for idx in selected if idx % vocab_size != eos][:k]
            done = len(finals[p]) >= k or not survivors
            if step == max_len - 1 and not done:
                # out of length: surviving prefixes become flagged hypotheses
                for idx in survivors:
                    beam, tok = divmod(idx, vocab_size)
                    finals[p].append((float(flat[idx]), tokens[p][beam] + (tok,), False))
                continue
            if done:
                continue
            next_active.append(p)
            beam_scores: list[float] = []
            beam_tokens: list[tuple[int, ...]] = []
            for idx in survivors:
                beam, tok = divmod(idx, vocab_size)
                row_map.append(ai * k + beam)
                next_last.append(tok)
                beam_scores.append(float(flat[idx]))
                beam_tokens.append(tokens[p][beam] + (tok,))
            while len(beam_scores) < k:  # keep k rows; fillers can never win
                row_map.append(ai * k)
                next_last.append(eos)
                beam_scores.append(-np.inf)
                beam_tokens.append(())
            new_scores.append(beam_scores)
            new_tokens.append(beam_tokens)
        if not next_active:
            break
        state = state.select_rows(np.array(row_map, dtype=np.int64))
        last_ids = np.array(next_last, dtype=np.int64)
        for p, sc, tk in zip(next_active, new_scores, new_tokens):
            scores[p] = sc
            tokens[p] = tk
        active = next_active

    results = []
    for p in range(n_problems):
        ranked = sorted(finals[p], key=lambda f: (-f[0], f[1]))[:k]
        results.append([BeamHypothesis(t, s, done) for s, t, done in ranked])
    return results


def beam_search_batch(
    params: ModelParams,
    src_seqs: Sequence[np.ndarray],
    k: int,
    max_len: int,
    chunk: int = BEAM_CHUNK,
) -> list[list[BeamHypothesis]]:
    results: list[list[BeamHypothesis]] = []
    for start in range(0, len(src_seqs), chunk):
        results.extend(_beam_chunk(params, list(src_seqs[start : start + chunk]), k, max_len))
    return results


def beam_search(params: ModelParams, problem: MappedProblem, k: int, max_len: int) -> list[BeamHypothesis]:
    """Top-k hypotheses for one problem, best (score, then lexicographic) first."""
    if k < 1 or max_len < 2:
        raise ValueError("k must be >= 1 and max_len >= 2")
    return _beam_chunk(params, [problem_src_ids(params.vocab, problem)], k, max_len)[0]


def hypothesis_text(vocab: Vocab, hyp: BeamHypothesis) -> str:
    tokens = hyp.tokens[:-1] if hyp.finished else hyp.tokens
    return " ".join(vocab.decode(tokens))


# Training -----------------------------------------------------------------


def _gen_batches(problems: Sequence[MappedProblem], encoded: _Encoded, batch_size: int, rng) -> list[list[tuple]]:
    order = rng.permutation(len(problems))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        batches.append([(encoded.src[problems[i].id], encoded.tgt[problems[i].id]) for i in chunk])
    return batches


def finetune_generator(
    params: ModelParams,
    problems: Sequence[MappedProblem],
    config: TrainConfig,
    start_epoch: int = 0,
    opt_state: AdamWState | None = None,
    epoch_hook: Callable[[dict], bool] | None = None,
) -> tuple[ModelParams, AdamWState, str]:
    """Generation-loss epochs over ground-truth pairs.

    Returns (params, optimizer state, status) where status is "done",
    "halted" (the hook asked to stop), or "aborted" (non-finite loss; the
    parameters are rolled back to the last epoch boundary).
    """
    if not problems and config.m_finetune > 0:
        raise ValueError("empty training set")
    encoded = _Encoded(params.vocab, problems)
    opt_state = opt_state or AdamWState.zeros(params)
    steps_per_epoch = math.ceil(len(problems) / config.batch_size) if problems else 0
    total_steps = steps_per_epoch * config.m_finetune
    for epoch in range(start_epoch, config.m_finetune):
        snapshot = params.copy()
        opt_snapshot = AdamWState(opt_state.step, {n: a.copy() for n, a in opt_state.m.items()}, {n: a.copy() for n, a in opt_state.v.items()})
        rng = stream(config.seed, "shuffle", "finetune", epoch)
        losses = []
        try:
            for i, batch in enumerate(_gen_batches(problems, encoded, config.batch_size, rng)):
                lr = lr_at(epoch * steps_per_epoch + i, total_steps, config.optimizer)
                loss, grads = generation_loss(params, batch)
                adamw_update(params, grads, opt_state, lr, config.optimizer)
                losses.append(loss)
        except NonFiniteError:
            params.arrays.update(snapshot.arrays)
            opt_state.step = opt_snapshot.step
            opt_state.m, opt_state.v = opt_snapshot.m, opt_snapshot.v
            return params, opt_state, "aborted"
        record = {
            "phase": "finetune",
            "epoch": epoch,
            "J_GEN": float(np.mean(losses)) if losses else None,
            "J_RANK": None,
            "bank_pos": None,
            "bank_neg": None,
            "dev_accuracy": None,
        }
        if epoch_hook is not None and not epoch_hook(record):
            return params, opt_state, "halted"
    return params, opt_state, "done"


def _epoch_seed(config: TrainConfig, epoch: int) -> int:
    return int(stream(config.seed, "bank-epoch", epoch).integers(2**62))


def model_generate_fn(params: ModelParams, problems: Sequence[MappedProblem], beam_k: int, max_len: int):
    """Precompute beam candidates for all problems; returns a bank generate_fn."""
    vocab = params.vocab
    seqs = [problem_src_ids(vocab, p) for p in problems]
    hyps = beam_search_batch(params, seqs, beam_k, max_len)
    table = {
        p.id: [(hypothesis_text(vocab, h), h.score) for h in hs]
        for p, hs in zip(problems, hyps)
    }

    def generate(problem: MappedProblem, k: int):
        return table[problem.id][:k]

    return generate


def build_bank_for_epoch(
    params: ModelParams,
    problems: Sequence[MappedProblem],
    config: TrainConfig,
    epoch: int,
) -> ExpressionBank:
    generate = None
    if config.strategy.kind in ("model", "model-tree"):
        generate = model_generate_fn(params, problems, config.beam_k, config.max_len)
    return build_bank(
        problems,
        generate,
        config.strategy,
        config.beam_k,
        config.bank_size,
        _epoch_seed(config, epoch),
        disturb_count=config.disturb_count,
    )


def joint_train(
    params: ModelParams,
    problems: Sequence[MappedProblem],
    config: TrainConfig,
    bank: ExpressionBank | None = None,
    dev: Sequence[MappedProblem] | None = None,
    start_epoch: int = 0,
    opt_state: AdamWState | None = None,
    epoch_hook: Callable[[dict, ExpressionBank], bool] | None = None,
) -> tuple[ModelParams, ExpressionBank | None, AdamWState, str]:
    """Joint generation+ranking epochs with per-epoch online bank rebuild.

    The initial bank is built here when not supplied (fresh runs build it
    from the fine-tuned generator; resumed runs pass the restored bank).
    """
    if not problems and config.m_joint > 0:
        raise ValueError("empty training set")
    encoded = _Encoded(params.vocab, problems)
    opt_state = opt_state or AdamWState.zeros(params)
    steps_per_epoch = math.ceil(len(problems) / config.batch_size) if problems else 0
    total_steps = steps_per_epoch * config.m_joint
    if bank is None and config.m_joint > 0:
        bank = build_bank_for_epoch(params, problems, config, start_epoch)
    for epoch in range(start_epoch, config.m_joint):
        shuffle_rng = stream(config.seed, "shuffle", "joint", epoch)
        rank_rng = stream(config.seed, "rank", epoch)
        gen_losses, rank_losses = [], []
        for i, gen_batch in enumerate(_gen_batches(problems, encoded, config.batch_size, shuffle_rng)):
            rank_batch = [
                (encoded.src[p.id], encoded.expr(le.text), le.label)
                for p, le in sample_ranking_batch(bank, config.batch_size, config.pos_ratio, rank_rng)
            ]
            lr = lr_at(epoch * steps_per_epoch + i, total_steps, config.optimizer)
            j_gen, j_rank = joint_step(
                params,
                gen_batch,
                rank_batch,
                opt_state,
                lr,
                config.optimizer,
                rank_loss_weight=config.rank_loss_weight,
                head_only=config.train_head_only,
            )
            gen_losses.append(j_gen)
            rank_losses.append(j_rank)
        used_pos, used_neg = bank.n_positive(), bank.n_negative()
        if config.strategy.online:
            bank = build_bank_for_epoch(params, problems, config, epoch + 1)
        dev_accuracy = None
        if dev:
            dev_accuracy = evaluate_accuracy(
                params, dev, config.beam_k, config.max_len, collect_verdicts=False
            ).accuracy
        record = {
            "phase": "joint",
            "epoch": epoch,
            "J_GEN": float(np.mean(gen_losses)) if gen_losses else None,
            "J_RANK": float(np.mean(rank_losses)) if rank_losses else None,
            "bank_pos": used_pos,
            "bank_neg": used_neg,
            "dev_accuracy": dev_accuracy,
        }
        if epoch_hook is not None and not epoch_hook(record, bank):
            return params, bank, opt_state, "halted"
    return params, bank, opt_state, "done"


# Inference ----------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    """One ranked beam candidate of a solve call."""

    text: str
    tree: ExprTree | None
    gen_logprob: float
    rank_prob: float | None
    finished: bool
    beam_index: int


@dataclass(frozen=True)
class SolveResult:
    tree: ExprTree
    value: object
    candidates: tuple[Candidate, ...]
    chosen_index: int


def _score_candidates(
    params: ModelParams,
    pairs: list[tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    if not pairs:
        return np.zeros((0, 2))
    rows = []
    for start in range(0, len(pairs), RANK_SCORE_BATCH):
        rows.append(rank_scores(params, pairs[start : start + RANK_SCORE_BATCH]))
    return np.concatenate(rows, axis=0)


def _choose(parsed: list[tuple[int, str, ExprTree, BeamHypothesis]], probs: np.ndarray) -> int:
    """Index into `parsed` of the winner: highest ranking score, ties broken
    by generator log-probability, then beam order."""
    best, best_key = 0, None
    for j, (beam_index, _text, _tree, hyp) in enumerate(parsed):
        key = (probs[j, 1], hyp.score, -beam_index)
        if best_key is None or key > best_key:
            best, best_key = j, key
    return best


def solve(
    params: ModelParams,
    problem: MappedProblem,
    k: int = 10,
    max_len: int = 24,
) -> SolveResult:
    """Beam-search candidates, rank them, return the highest-scoring tree."""
    hyps = beam_search(params, problem, k, max_len)
    vocab = params.vocab
    src = problem_src_ids(vocab, problem)
    candidates: list[Candidate] = []
    parsed: list[tuple[int, str, ExprTree, BeamHypothesis]] = []
    for i, hyp in enumerate(hyps):
        text = hypothesis_text(vocab, hyp)
        try:
            tree = parse_infix(text)
        except ExpressionSyntaxError:
            candidates.append(Candidate(text, None, hyp.score, None, hyp.finished, i))
            continue
        parsed.append((i, text, tree, hyp))
    if not parsed:
        raise NoCandidateError(f"no parseable candidate among {len(hyps)} hypotheses")
    probs = _score_candidates(params, [(src, expr_ids(vocab, text)) for _, text, _, _ in parsed])
    for j, (i, text, tree, hyp) in enumerate(parsed):
        candidates.append(Candidate(text, tree, hyp.score, float(probs[j, 1]), hyp.finished, i))
    winner = _choose(parsed, probs)
    tree = parsed[winner][2]
    try:
        value = evaluate(tree, problem.number_table)
    except MissingNumberError:
        value = UNDEFINED
    candidates.sort(key=lambda c: c.beam_index)
    return SolveResult(tree, value, tuple(candidates), parsed[winner][0])


@dataclass
class EvalReport:
    """Solution accuracy plus generator-only and oracle-in-beam baselines,
    overall and bucketed by ground-truth operator count."""

    n: int = 0
    n_correct: int = 0
    n_top1: int = 0
    n_oracle: int = 0
    n_no_candidate: int = 0
    n_unparseable: int = 0
    by_op: dict[int, dict[str, int]] = field(default_factory=dict)
    verdicts: list[dict] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n if self.n else 0.0

    @property
    def top1_accuracy(self) -> float:
        return self.n_top1 / self.n if self.n else 0.0

    @property
    def oracle_accuracy(self) -> float:
        return self.n_oracle / self.n if self.n else 0.0

    def to_dict(self) -> dict:
        def bucket(stats: dict[str, int]) -> dict:
            out = dict(stats)
            out["accuracy"] = stats["correct"] / stats["n"]
            out["top1_accuracy"] = stats["top1"] / stats["n"]
            out["oracle_accuracy"] = stats["oracle"] / stats["n"]
            return out

        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "top1_accuracy": self.top1_accuracy,
            "oracle_accuracy": self.oracle_accuracy,
            "counts": {
                "correct": self.n_correct,
                "top1": self.n_top1,
                "oracle": self.n_oracle,
                "no_candidate": self.n_no_candidate,
                "unparseable_candidates": self.n_unparseable,
            },
            "by_op_count": {str(op): bucket(stats) for op, stats in sorted(self.by_op.items())},
        }

    def write_verdicts(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for verdict in self.verdicts:
                fh.write(json.dumps(verdict, sort_keys=True) + "\n")


def evaluate_accuracy(
    params: ModelParams,
    problems: Sequence[MappedProblem],
    k: int = 10,
    max_len: int = 24,
    collect_verdicts: bool = True,
) -> EvalReport:
    """Solution accuracy by exact value match, with per-problem verdicts."""
    vocab = params.vocab
    report = EvalReport()
    for start in range(0, len(problems), BEAM_CHUNK):
        chunk = list(problems[start : start + BEAM_CHUNK])
        all_hyps = beam_search_batch(params, [problem_src_ids(vocab, p) for p in chunk], k, max_len)

        pairs = []
        spans = []
        chunk_parsed = []
        for problem, hyps in zip(chunk, all_hyps):
            parsed = []
            n_bad = 0
            for i, hyp in enumerate(hyps):
                text = hypothesis_text(vocab, hyp)
                try:
                    tree = parse_infix(text)
                except ExpressionSyntaxError:
                    n_bad += 1
                    continue
                parsed.append((i, text, tree, hyp))
            chunk_parsed.append((problem, hyps, parsed, n_bad))
            lo = len(pairs)
            src = problem_src_ids(vocab, problem)
            pairs.extend((src, expr_ids(vocab, text)) for _, text, _, _ in parsed)
            spans.append((lo, len(pairs)))
        probs = _score_candidates(params, pairs)

        for (problem, hyps, parsed, n_bad), (lo, hi) in zip(chunk_parsed, spans):
            gt_value = evaluate(problem.ground_truth, problem.number_table)

            def value_of(tree):
                try:
                    return evaluate(tree, problem.number_table)
                except MissingNumberError:
                    return UNDEFINED

            top1_correct = False
            if hyps:
                top_text = hypothesis_text(vocab, hyps[0])
                try:
                    top1_correct = results_equal(value_of(parse_infix(top_text)), gt_value)
                except ExpressionSyntaxError:
                    top1_correct = False
            oracle = any(results_equal(value_of(tree), gt_value) for _, _, tree, _ in parsed)
            chosen_text = None
            ranked_correct = False
            no_candidate = not parsed
            if parsed:
                winner = _choose(parsed, probs[lo:hi])
                chosen_text = parsed[winner][1]
                ranked_correct = results_equal(value_of(parsed[winner][2]), gt_value)

            report.n += 1
            report.n_correct += ranked_correct
            report.n_top1 += top1_correct
            report.n_oracle += oracle
            report.n_no_candidate += no_candidate
            report.n_unparseable += n_bad
            bucket = report.by_op.setdefault(
                problem.op_count, {"n": 0, "correct": 0, "top1": 0, "oracle": 0}
            )
            bucket["n"] += 1
            bucket["correct"] += ranked_correct
            bucket["top1"] += top1_correct
            bucket["oracle"] += oracle
            if collect_verdicts:
                report.verdicts.append(
                    {
                        "problem_id": problem.id,
                        "op_count": problem.op_count,
                        "ranked_correct": bool(ranked_correct),
                        "top1_correct": bool(top1_correct),
                        "oracle_correct": bool(oracle),
                        "no_candidate": bool(no_candidate),
                        "chosen": chosen_text,
                        "n_candidates": len(parsed),
                        "n_unparseable": n_bad,
                    }
                )
    return report


# Full procedure with persistence and resume --------------------------------


@dataclass
class RunPaths:
    out_dir: str

    @property
    def checkpoint(self) -> str:
        return os.path.join(self.out_dir, "checkpoint.mwpr")

    @property
    def log(self) -> str:
        return os.path.join(self.out_dir, "train_log.jsonl")

    @property
    def bank(self) -> str:
        return os.path.join(self.out_dir, "bank.jsonl")

    @property
    def config(self) -> str:
        return os.path.join(self.out_dir, "config.json")


@dataclass
class TrainResult:
    params: ModelParams
    status: str  # "done" | "halted" | "aborted"
    epochs_done: int
    history: list[dict]


def train_full(
    problems: Sequence[MappedProblem],
    config: TrainConfig,
    out_dir: str | None = None,
    dev: Sequence[MappedProblem] | None = None,
    resume: bool = False,
) -> TrainResult:
    """Fine-tune, build the bank, joint-train; optionally persist each epoch.

    With out_dir set, every epoch appends one training-log line and rewrites
    the checkpoint (parameters + optimizer + progress) and the bank dump, so
    an interrupted run resumes exactly where it stopped via resume=True.
    """
    paths = RunPaths(out_dir) if out_dir else None
    history: list[dict] = []
    epochs_done = 0
    bank = None
    opt_state = None

    vocab = Vocab.build(problems)
    if resume:
        if paths is None or not os.path.exists(paths.checkpoint):
            raise CheckpointError("resume requested but no checkpoint found")
        ckpt = load_checkpoint(paths.checkpoint)
        if ckpt.params.vocab.tokens != vocab.tokens:
            raise CheckpointError("checkpoint vocabulary does not match the dataset")
        params = ckpt.params
        opt_state = ckpt.opt_state
        epochs_done = int(ckpt.meta.get("epochs_done", 0))
        if epochs_done > config.m_finetune and os.path.exists(paths.bank):
            bank = load_bank_jsonl(paths.bank, problems, config.bank_size)
        if os.path.exists(paths.log):
            with open(paths.log, encoding="utf-8") as fh:
                history = [json.loads(line) for line in fh if line.strip()]
    else:
        params = ModelParams.init(config.model_config, vocab, config.seed)
        if paths:
            os.makedirs(paths.out_dir, exist_ok=True)
            for stale in (paths.checkpoint, paths.log, paths.bank):
                if os.path.exists(stale):
                    os.remove(stale)
            with open(paths.config, "w", encoding="utf-8") as fh:
                json.dump(config.to_dict(), fh, sort_keys=True, indent=2)
                fh.write("\n")

    total_epochs = config.m_finetune + config.m_joint

    def persist(record: dict, current_bank: ExpressionBank | None) -> bool:
        nonlocal epochs_done
        epochs_done += 1
        history.append(record)
        if paths:
            with open(paths.log, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            save_checkpoint(
                paths.checkpoint, params, meta={"epochs_done": epochs_done}, opt_state=opt_state
            )
            if current_bank is not None:
                current_bank.dump_jsonl(paths.bank)
        return config.halt_after_epochs is None or epochs_done < config.halt_after_epochs

    status = "done"
    if epochs_done < config.m_finetune:
        if epochs_done == 0:
            opt_state = AdamWState.zeros(params)
        params, opt_state, status = finetune_generator(
            params,
            problems,
            config,
            start_epoch=epochs_done,
            opt_state=opt_state,
            epoch_hook=lambda record: persist(record, None),
        )
        if status != "done":
            return TrainResult(params, status, epochs_done, history)

    joint_done = epochs_done - config.m_finetune
    if joint_done < config.m_joint:
        if joint_done == 0:
            opt_state = AdamWState.zeros(params)  # fresh optimizer for the joint phase
        if bank is None and paths and joint_done > 0 and os.path.exists(paths.bank):
            bank = load_bank_jsonl(paths.bank, problems, config.bank_size)
        if bank is None:
            bank = build_bank_for_epoch(params, problems, config, joint_done)
            if paths:
                bank.dump_jsonl(paths.bank)
        params, bank, opt_state, status = joint_train(
            params,
            problems,
            config,
            bank=bank,
            dev=dev,
            start_epoch=joint_done,
            opt_state=opt_state,
            epoch_hook=lambda record, b: persist(record, b),
        )
        if status != "done":
            return TrainResult(params, status, epochs_done, history)

    if paths and epochs_done == total_epochs:
        save_checkpoint(paths.checkpoint, params, meta={"epochs_done": epochs_done}, opt_state=opt_state)
    return TrainResult(params, status, epochs_done, history)
