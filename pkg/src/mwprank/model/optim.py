"""AdamW with decoupled weight decay and a linear warmup/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import NonFiniteError
from .network import GradientBundle, ModelParams, _is_bias, _is_gain, generation_loss, ranking_loss


@dataclass
class OptimizerConfig:
    lr: float = 5e-5
    weight_decay: float = 0.01
    warmup_ratio: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamWState":
        return cls(
            step=0,
            m={n: np.zeros_like(a) for n, a in params.arrays.items()},
            v={n: np.zeros_like(a) for n, a in params.arrays.items()},
        )


def decays(name: str) -> bool:
    """Weight matrices decay; biases and layer-norm parameters do not."""
    return not (_is_bias(name) or _is_gain(name))


def lr_at(step: int, total_steps: int, opt: OptimizerConfig) -> float:
    """Linear warmup to opt.lr over warmup_ratio*total_steps, then linear decay."""
    warmup = max(1, int(round(opt.warmup_ratio * total_steps)))
    if step < warmup:
        return opt.lr * (step + 1) / warmup
    if total_steps <= warmup:
        return opt.lr
    return opt.lr * (total_steps - step) / (total_steps - warmup)


def adamw_update(
    params: ModelParams,
    grads: GradientBundle,
    state: AdamWState,
    lr: float,
    opt: OptimizerConfig,
    only: set[str] | None = None,
) -> None:
    """One in-place AdamW step; `only` limits the update to named parameters."""
    state.step += 1
    bc1 = 1.0 - opt.beta1**state.step
    bc2 = 1.0 - opt.beta2**state.step
    for name, p in params.arrays.items():
        if only is not None and name not in only:
            continue
        g = grads[name]
        if not np.isfinite(g).all():
            raise NonFiniteError(f"gradient for {name} is not finite")
        m, v = state.m[name], state.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        if decays(name):
            update = update + opt.weight_decay * p
        p -= lr * update


RANK_PARAMS = ("rank.w1", "rank.b1", "rank.w2", "rank.b2")


def joint_step(
    params: ModelParams,
    gen_batch: Sequence,
    rank_batch: Sequence,
    state: AdamWState,
    lr: float,
    opt: OptimizerConfig,
    rank_loss_weight: float = 1.0,
    head_only: bool = False,
) -> tuple[float, float]:
    """One AdamW step on grad(J_GEN + J_RANK), gradients summed on shared
    parameters.  Raises NonFiniteError before touching the parameters if
    either loss is non-finite.  With head_only, only the ranking head moves
    (the generation loss is still evaluated for logging).
    """
    if not gen_batch or not rank_batch:
        raise ValueError("both batches must be non-empty")
    if head_only:
        j_gen, _ = generation_loss(params, gen_batch, want_grads=False)
        j_rank, rank_grads = ranking_loss(params, rank_batch)
        adamw_update(params, rank_grads, state, lr, opt, only=set(RANK_PARAMS))
        return j_gen, j_rank
    j_gen, gen_grads = generation_loss(params, gen_batch)
    j_rank, rank_grads = ranking_loss(params, rank_batch)
    total = {n: gen_grads[n] + rank_loss_weight * rank_grads[n] for n in gen_grads}
    adamw_update(params, total, state, lr, opt)
    return j_gen, j_rank
