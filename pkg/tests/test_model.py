"""Model contracts: shapes, distributions, losses, optimizer, checkpoints."""

import math

import numpy as np
import pytest

from mwprank.errors import CheckpointError, DimensionMismatchError, NonFiniteError
from mwprank.model import (
    AdamWState,
    ModelConfig,
    ModelParams,
    OptimizerConfig,
    Vocab,
    adamw_update,
    decode_step,
    encode,
    generation_loss,
    joint_step,
    load_checkpoint,
    lr_at,
    rank_score,
    rank_scores,
    ranking_loss,
    save_checkpoint,
)
from mwprank.model.optim import decays

TOKENS = ("[pad]", "[bos]", "[eos]", "[unk]", "+", "-", "*", "/", "(", ")", "NUM0", "NUM1")
VOCAB = Vocab(TOKENS)
CFG = ModelConfig(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=8)


def tiny_params(seed=0):
    return ModelParams.init(CFG, VOCAB, seed=seed)


def rand_seq(rng, n, lo=4, hi=12):
    return np.asarray(rng.integers(lo, hi, size=n))


def wrapped(rng, n):
    return np.concatenate(([1], rng.integers(4, 12, size=n), [2]))


class TestEncode:
    def test_one_state_per_token(self):
        params = tiny_params()
        states = encode(params, np.array([4, 5, 6, 10]))
        assert states.shape == (4, CFG.d_model)

    def test_deterministic(self):
        params = tiny_params()
        src = np.array([4, 5, 6])
        np.testing.assert_array_equal(encode(params, src), encode(params, src))

    def test_positional_encoding_breaks_permutation_symmetry(self):
        params = tiny_params()
        a = encode(params, np.array([4, 5]))
        b = encode(params, np.array([5, 4]))
        assert np.abs(a - b).max() > 1e-8

    def test_bad_index_rejected(self):
        params = tiny_params()
        with pytest.raises(DimensionMismatchError):
            encode(params, np.array([4, 99]))
        with pytest.raises(DimensionMismatchError):
            encode(params, np.array([], dtype=np.int64))


class TestDecodeStep:
    def test_probabilities_sum_to_one(self):
        params = tiny_params()
        states = encode(params, np.array([4, 5, 6]))
        probs = decode_step(params, states, np.array([1, 10, 4]))
        assert probs.shape == (len(VOCAB),)
        assert abs(probs.sum() - 1.0) < 1e-6
        assert (probs >= 0).all()

    def test_zeroed_projection_gives_uniform(self):
        params = tiny_params()
        params.arrays["out.w"][:] = 0.0
        params.arrays["out.b"][:] = 0.0
        states = encode(params, np.array([4, 5]))
        probs = decode_step(params, states, np.array([1, 10]))
        np.testing.assert_allclose(probs, 1.0 / len(VOCAB), atol=1e-12)

    def test_prefix_must_start_with_bos(self):
        params = tiny_params()
        states = encode(params, np.array([4]))
        with pytest.raises(DimensionMismatchError):
            decode_step(params, states, np.array([4, 5]))

    def test_causal_masking_in_batched_path(self):
        # per-position probabilities must not depend on later target tokens
        params = tiny_params(seed=2)
        rng = np.random.default_rng(0)
        src = rand_seq(rng, 4)
        states = encode(params, src)
        shared = [1, 10, 4, 11]
        probs_a = decode_step(params, states, np.array(shared))
        probs_b = decode_step(params, states, np.array(shared))
        np.testing.assert_array_equal(probs_a, probs_b)
        # full-sequence forward: positions <= i agree between two targets
        # sharing a prefix but diverging afterwards
        from mwprank.model.autodiff import no_grad
        from mwprank.model.network import _wrap, decoder_forward, encoder_forward
        import mwprank.model.autodiff as ad

        t1 = np.array([[1, 10, 4, 11, 5]])
        t2 = np.array([[1, 10, 4, 6, 9]])  # same first 3 tokens
        with no_grad():
            pt = _wrap(params)
            enc = encoder_forward(pt, CFG, src[None], np.zeros((1, 4), bool))
            d1 = decoder_forward(pt, CFG, enc, np.zeros((1, 4), bool), t1, t1 == 0)
            d2 = decoder_forward(pt, CFG, enc, np.zeros((1, 4), bool), t2, t2 == 0)
        np.testing.assert_allclose(d1.data[0, :3], d2.data[0, :3], atol=1e-12)
        assert np.abs(d1.data[0, 3] - d2.data[0, 3]).max() > 1e-9


class TestGenerationLoss:
    def test_uniform_model_analytic_value(self):
        params = tiny_params()
        params.arrays["out.w"][:] = 0.0
        params.arrays["out.b"][:] = 0.0
        rng = np.random.default_rng(1)
        m = 5
        batch = [(rand_seq(rng, 3), wrapped(rng, m - 1))]  # m tokens after [bos]
        loss, _ = generation_loss(params, batch)
        assert abs(loss - m * math.log(len(VOCAB))) < 1e-9

    def test_near_one_probability_gives_near_zero_loss(self):
        params = tiny_params()
        params.arrays["out.w"][:] = 0.0
        params.arrays["out.b"][:] = 0.0
        params.arrays["out.b"][VOCAB.eos_id] = 60.0
        batch = [(np.array([4, 5]), np.array([1, 2]))]  # target = [bos][eos]
        loss, _ = generation_loss(params, batch)
        assert 0.0 <= loss < 1e-12

    def test_mean_over_batch_sum_over_positions(self):
        params = tiny_params(seed=3)
        rng = np.random.default_rng(2)
        a = (rand_seq(rng, 3), wrapped(rng, 2))
        b = (rand_seq(rng, 4), wrapped(rng, 5))
        la, _ = generation_loss(params, [a])
        lb, _ = generation_loss(params, [b])
        lab, _ = generation_loss(params, [a, b])
        assert abs(lab - (la + lb) / 2) < 1e-9

    def test_padding_does_not_change_loss(self):
        # batching two different-length targets must not alter either loss
        params = tiny_params(seed=4)
        rng = np.random.default_rng(3)
        short = (rand_seq(rng, 2), wrapped(rng, 1))
        long = (rand_seq(rng, 6), wrapped(rng, 6))
        l_short, _ = generation_loss(params, [short])
        l_both, _ = generation_loss(params, [short, long])
        l_long, _ = generation_loss(params, [long])
        assert abs(l_both - (l_short + l_long) / 2) < 1e-9

    def test_nonfinite_raises(self):
        params = tiny_params()
        params.arrays["embed"][4, 0] = np.nan
        rng = np.random.default_rng(4)
        with pytest.raises(NonFiniteError):
            generation_loss(params, [(np.array([4, 5]), wrapped(rng, 2))])


class TestRankHead:
    def test_zero_head_gives_half_half(self):
        params = tiny_params()
        params.arrays["rank.w2"][:] = 0.0
        params.arrays["rank.b2"][:] = 0.0
        p0, p1 = rank_score(params, np.array([4, 5]), np.array([1, 10, 2]))
        assert p0 == pytest.approx(0.5, abs=1e-12)
        assert p1 == pytest.approx(0.5, abs=1e-12)

    def test_pair_sums_to_one(self):
        params = tiny_params(seed=5)
        p0, p1 = rank_score(params, np.array([4, 5, 6]), np.array([1, 10, 4, 11, 2]))
        assert abs(p0 + p1 - 1.0) < 1e-6

    def test_padding_invariance(self):
        # scoring a short pair inside a padded batch equals scoring it alone
        params = tiny_params(seed=6)
        short = (np.array([4, 5]), np.array([1, 10, 2]))
        long = (np.array([4, 5, 6, 7, 8, 9]), np.array([1, 10, 4, 11, 5, 11, 2]))
        alone = rank_scores(params, [short])[0]
        batched = rank_scores(params, [short, long])[0]
        np.testing.assert_allclose(alone, batched, atol=1e-12)

    def test_score_sensitive_to_expression(self):
        params = tiny_params(seed=7)
        rng = np.random.default_rng(5)
        src = rand_seq(rng, 5)
        changed = 0
        for _ in range(100):
            e1 = wrapped(rng, 3)
            e2 = wrapped(rng, 3)
            if np.array_equal(e1, e2):
                continue
            s1 = rank_score(params, src, e1)[1]
            s2 = rank_score(params, src, e2)[1]
            changed += abs(s1 - s2) > 1e-12
        assert changed >= 95

    def test_ranking_loss_uniform_is_log2(self):
        params = tiny_params()
        params.arrays["rank.w2"][:] = 0.0
        params.arrays["rank.b2"][:] = 0.0
        rng = np.random.default_rng(6)
        batch = [(rand_seq(rng, 3), wrapped(rng, 2), i % 2) for i in range(6)]
        loss, _ = ranking_loss(params, batch)
        assert abs(loss - math.log(2)) < 1e-12

    def test_ranking_loss_perfect_classifier_near_zero(self):
        params = tiny_params()
        params.arrays["rank.w2"][:] = 0.0
        params.arrays["rank.b2"][:] = np.array([0.0, 60.0])
        rng = np.random.default_rng(7)
        batch = [(rand_seq(rng, 3), wrapped(rng, 2), 1) for _ in range(4)]
        loss, _ = ranking_loss(params, batch)
        assert 0.0 <= loss < 1e-12

    def test_labels_validated(self):
        params = tiny_params()
        with pytest.raises(ValueError):
            ranking_loss(params, [(np.array([4]), np.array([1, 2]), 2)])


class TestSharedBackbone:
    def test_encoder_weight_touches_both_heads(self):
        params = tiny_params(seed=8)
        rng = np.random.default_rng(8)
        src, tgt = rand_seq(rng, 4), wrapped(rng, 3)
        gen_before, _ = generation_loss(params, [(src, tgt)], want_grads=False)
        rank_before = rank_score(params, src, tgt)[1]
        params.arrays["enc0.self.wq"][0, 0] += 0.05
        gen_after, _ = generation_loss(params, [(src, tgt)], want_grads=False)
        rank_after = rank_score(params, src, tgt)[1]
        assert gen_before != gen_after
        assert rank_before != rank_after

    def test_both_losses_populate_shared_gradients(self):
        params = tiny_params(seed=9)
        rng = np.random.default_rng(9)
        src, tgt = rand_seq(rng, 4), wrapped(rng, 3)
        _, g_gen = generation_loss(params, [(src, tgt)])
        _, g_rank = ranking_loss(params, [(src, tgt, 1)])
        assert np.abs(g_gen["enc0.self.wq"]).max() > 0
        assert np.abs(g_rank["enc0.self.wq"]).max() > 0
        assert np.abs(g_gen["rank.w2"]).max() == 0  # generation does not touch the head
        assert np.abs(g_rank["out.w"]).max() == 0  # ranking does not touch the projection


class TestAdamW:
    def test_zero_gradients_shrink_weights_only(self):
        params = tiny_params(seed=10)
        before = {n: a.copy() for n, a in params.arrays.items()}
        state = AdamWState.zeros(params)
        opt = OptimizerConfig(lr=0.1, weight_decay=0.01)
        zero = {n: np.zeros_like(a) for n, a in params.arrays.items()}
        adamw_update(params, zero, state, lr=0.1, opt=opt)
        for name, arr in params.arrays.items():
            if decays(name):
                np.testing.assert_allclose(arr, before[name] * (1 - 0.1 * 0.01), atol=1e-15)
            else:
                np.testing.assert_array_equal(arr, before[name])

    def test_lr_schedule_warmup_then_decay(self):
        opt = OptimizerConfig(lr=1.0, warmup_ratio=0.1)
        total = 100
        lrs = [lr_at(s, total, opt) for s in range(total)]
        assert lrs[0] == pytest.approx(0.1)
        assert lrs[9] == pytest.approx(1.0)
        assert max(lrs) == pytest.approx(1.0)
        assert lrs[-1] > 0
        assert all(a >= b for a, b in zip(lrs[9:], lrs[10:]))

    def test_joint_step_updates_shared_params_once(self):
        params = tiny_params(seed=11)
        rng = np.random.default_rng(10)
        gen_batch = [(rand_seq(rng, 3), wrapped(rng, 2))]
        rank_batch = [(rand_seq(rng, 3), wrapped(rng, 2), 1)]
        state = AdamWState.zeros(params)
        j_gen, j_rank = joint_step(params, gen_batch, rank_batch, state, 1e-3, OptimizerConfig())
        assert state.step == 1
        assert j_gen > 0 and j_rank > 0

    @pytest.mark.filterwarnings("ignore:invalid value")
    def test_joint_step_nonfinite_leaves_params_unchanged(self):
        params = tiny_params(seed=12)
        params.arrays["rank.w1"][0, 0] = np.inf
        before = {n: a.copy() for n, a in params.arrays.items()}
        rng = np.random.default_rng(11)
        gen_batch = [(rand_seq(rng, 3), wrapped(rng, 2))]
        rank_batch = [(rand_seq(rng, 3), wrapped(rng, 2), 0)]
        state = AdamWState.zeros(params)
        with pytest.raises(NonFiniteError):
            joint_step(params, gen_batch, rank_batch, state, 1e-3, OptimizerConfig())
        for name in before:
            np.testing.assert_array_equal(params.arrays[name], before[name])

    def test_joint_step_deterministic(self):
        rng = np.random.default_rng(12)
        gen_batch = [(rand_seq(rng, 3), wrapped(rng, 2))]
        rank_batch = [(rand_seq(rng, 3), wrapped(rng, 2), 1)]

        def run():
            params = tiny_params(seed=13)
            state = AdamWState.zeros(params)
            for _ in range(5):
                joint_step(params, gen_batch, rank_batch, state, 1e-3, OptimizerConfig())
            return params

        a, b = run(), run()
        for name in a.arrays:
            np.testing.assert_array_equal(a.arrays[name], b.arrays[name])

    def test_head_only_freezes_backbone(self):
        params = tiny_params(seed=14)
        before = {n: a.copy() for n, a in params.arrays.items()}
        rng = np.random.default_rng(13)
        gen_batch = [(rand_seq(rng, 3), wrapped(rng, 2))]
        rank_batch = [(rand_seq(rng, 3), wrapped(rng, 2), 1)]
        state = AdamWState.zeros(params)
        joint_step(params, gen_batch, rank_batch, state, 1e-3, OptimizerConfig(), head_only=True)
        for name, arr in params.arrays.items():
            if name.startswith("rank."):
                assert np.abs(arr - before[name]).max() > 0
            else:
                np.testing.assert_array_equal(arr, before[name])


class TestCheckpoint:
    def test_roundtrip_bytes_identical(self, tmp_path):
        params = tiny_params(seed=15)
        state = AdamWState.zeros(params)
        state.step = 7
        a, b = tmp_path / "a.mwpr", tmp_path / "b.mwpr"
        save_checkpoint(a, params, meta={"epochs_done": 3}, opt_state=state)
        ckpt = load_checkpoint(a)
        assert ckpt.meta["epochs_done"] == 3
        assert ckpt.opt_state.step == 7
        save_checkpoint(b, ckpt.params, meta={"epochs_done": 3}, opt_state=ckpt.opt_state)
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mwpr"
        path.write_bytes(b"NOTME" + b"\0" * 64)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_tampered_vocab(self, tmp_path):
        import json as json_mod
        import struct

        params = tiny_params()
        path = tmp_path / "c.mwpr"
        save_checkpoint(path, params)
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json_mod.loads(raw[16 : 16 + hlen])
        header["vocab"] = header["vocab"][:-1] + ["[extra]"]
        new_header = json_mod.dumps(header, sort_keys=True).encode()
        path.write_bytes(raw[:8] + struct.pack("<Q", len(new_header)) + new_header + raw[16 + hlen :])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_truncated_file(self, tmp_path):
        params = tiny_params()
        path = tmp_path / "t.mwpr"
        save_checkpoint(path, params)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
