"""Math word problem solving with a generator and a candidate ranker.

One sequence-to-sequence model serves two heads: a generator that decodes
solution expressions from problem text, and a ranker that scores
(problem, expression) pairs.  They are trained jointly against an
expression bank built from the model's own beam candidates and from
tree-disturbed ground truths, refreshed every epoch; at inference the
highest-ranked beam candidate wins.
"""

from .bank import (
    BankStrategy,
    ExpressionBank,
    build_bank,
    load_bank_jsonl,
    sample_ranking_batch,
)
from .candidates import LabeledExpression, Provenance
from .disturb import (
    DisturbanceKind,
    DisturbanceOutcome,
    apply_disturbance,
    delete,
    disturb_candidates,
    edit,
    expand,
    swap,
)
from .errors import (
    CheckpointError,
    DimensionMismatchError,
    EmptyBankError,
    ExpressionSyntaxError,
    FormatError,
    MissingNumberError,
    MwpRankError,
    NoAlternativeError,
    NoCandidateError,
    NonFiniteError,
    ParseError,
    TooSmallError,
)
from .expressions import (
    UNDEFINED,
    Const,
    ExprTree,
    MappedProblem,
    Num,
    Op,
    evaluate,
    map_numbers,
    parse_infix,
    results_equal,
    serialize_infix,
)
from .model import (
    ModelConfig,
    ModelParams,
    Vocab,
    decode_step,
    encode,
    generation_loss,
    load_checkpoint,
    rank_score,
    ranking_loss,
    save_checkpoint,
)
from .pipeline import (
    BeamHypothesis,
    EvalReport,
    SolveResult,
    TrainConfig,
    TrainResult,
    beam_search,
    evaluate_accuracy,
    finetune_generator,
    joint_train,
    solve,
    train_full,
)
from .synthdata import ProblemRecord, Template, generate_dataset, load_dataset, save_dataset, split_dataset

__version__ = "0.1.0"
