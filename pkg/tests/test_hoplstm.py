import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skvmn import autodiff as ad
from skvmn import hoplstm
from skvmn.errors import DimensionError, InputError
from skvmn.hoplstm import LstmParams, cell_step, encode_batch, predict, run_batch, run_sequence
from skvmn.model import ModelConfig, init_params

from conftest import SINGLE_CODE_RANGES, arrays, distinct_identity_questions
from oracles import lstm_cell, sig, skvmn_with_chains, standard_lstm_skvmn


def lstm_from(rng, d_h=3, d_f=2, scale=1.0):
    ws = {f"W_{g}": ad.Tensor(scale * rng.normal(size=(d_h + d_f, d_h))) for g in "gioc"}
    bs = {f"b_{g}": ad.Tensor(scale * rng.normal(size=d_h)) for g in "gioc"}
    return LstmParams(**ws, **bs)


def probs_of(params, qs, ys, ranges):
    return run_sequence(list(zip(qs, ys)), params, ranges).data


class TestCellStep:
    def test_all_zero(self):
        zero = {f"W_{g}": ad.Tensor(np.zeros((5, 3))) for g in "gioc"}
        zero.update({f"b_{g}": ad.Tensor(np.zeros(3)) for g in "gioc"})
        h, c = cell_step(ad.Tensor(np.ones(2)), None, LstmParams(**zero))
        np.testing.assert_array_equal(h.data, np.zeros(3))
        np.testing.assert_array_equal(c.data, np.zeros(3))

    def test_forced_carry(self, rng):
        lstm = lstm_from(rng)
        lstm.b_g = ad.Tensor(np.full(3, 40.0))
        lstm.b_i = ad.Tensor(np.full(3, -40.0))
        c_prev = rng.normal(size=3)
        _, c = cell_step(ad.Tensor(rng.normal(size=2)), (ad.Tensor(rng.normal(size=3)), ad.Tensor(c_prev)), lstm)
        np.testing.assert_allclose(c.data, c_prev, atol=1e-6)

    def test_matches_scalar_lstm(self, rng):
        lstm = lstm_from(rng)
        P = {k: getattr(lstm, k).data for k in ("W_g", "W_i", "W_o", "W_c", "b_g", "b_i", "b_o", "b_c")}
        f, h0, c0 = rng.normal(size=2), rng.normal(size=3), rng.normal(size=3)
        h, c = cell_step(ad.Tensor(f), (ad.Tensor(h0), ad.Tensor(c0)), lstm)
        eh, ec = lstm_cell(f, h0, c0, P)
        np.testing.assert_allclose(h.data, eh, rtol=1e-12)
        np.testing.assert_allclose(c.data, ec, rtol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            cell_step(ad.Tensor(np.ones(4)), None, lstm_from(rng))


class TestPredict:
    def test_zero_weights(self, rng):
        p = predict(ad.Tensor(rng.normal(size=3)), ad.Tensor(np.zeros((3, 1))), ad.Tensor([0.0]))
        assert p.item() == 0.5

    def test_large_bias(self, rng):
        p = predict(ad.Tensor(rng.normal(size=3)), ad.Tensor(np.zeros((3, 1))), ad.Tensor([50.0]))
        assert p.item() > 1 - 1e-12

    def test_matches_oracle(self, rng):
        h, W, b = rng.normal(size=3), rng.normal(size=(3, 1)), rng.normal(size=1)
        p = predict(ad.Tensor(h), ad.Tensor(W), ad.Tensor(b)).item()
        assert abs(p - sig(sum(h[j] * W[j, 0] for j in range(3)) + b[0])) < 1e-14


class TestRunSequence:
    def test_length_one(self, small_params):
        P = arrays(small_params)
        p = probs_of(small_params, [2], [1], SINGLE_CODE_RANGES)
        assert p.shape == (1,)
        np.testing.assert_allclose(p, standard_lstm_skvmn(P, [2], [1]), rtol=1e-12)

    def test_empty_sequence_rejected(self, small_params):
        with pytest.raises(InputError):
            run_sequence([], small_params)

    def test_invalid_question(self, small_params):
        with pytest.raises(InputError):
            run_sequence([(7, 1)], small_params)

    def test_single_identity_equals_standard_lstm(self, small_params, rng):
        qs = rng.integers(1, 7, size=12).tolist()
        ys = rng.integers(0, 2, size=12).tolist()
        got = probs_of(small_params, qs, ys, SINGLE_CODE_RANGES)
        np.testing.assert_allclose(got, standard_lstm_skvmn(arrays(small_params), qs, ys), rtol=0, atol=1e-12)

    def test_alternating_identities_equal_two_chains(self):
        config = ModelConfig.build(6, 4, 5)
        for seed in range(50):
            params = init_params(config, seed=seed, sigma=1.0)
            pair = distinct_identity_questions(params, config)
            if pair:
                break
        qa, qb = pair
        qs, ys = [qa, qb, qa, qb, qa, qb], [1, 0, 0, 1, 1, 1]
        got = probs_of(params, qs, ys, config.ranges)
        expect = skvmn_with_chains(arrays(params), qs, ys, [0, 1, 0, 1, 0, 1])
        np.testing.assert_allclose(got, expect, rtol=0, atol=1e-12)
        # a single chain gives different numbers, so the test discriminates
        assert np.abs(standard_lstm_skvmn(arrays(params), qs, ys) - got).max() > 1e-6

    def test_general_sequence_follows_identity_chains(self, rng):
        config = ModelConfig.build(6, 4, 5)
        params = init_params(config, seed=3, sigma=1.0)
        qs = rng.integers(1, 7, size=15).tolist()
        ys = rng.integers(0, 2, size=15).tolist()
        q, y, mask = encode_batch([qs], [ys])
        res = run_batch(params, q, y, mask, config.ranges)
        chain_of = [tuple(c) for c in res.identities[0].tolist()]
        expect = skvmn_with_chains(arrays(params), qs, ys, chain_of)
        np.testing.assert_allclose(res.probs[0], expect, rtol=0, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 12))
    def test_causality(self, seed, length):
        rng = np.random.default_rng(seed)
        params = init_params(ModelConfig.build(6, 4, 5), seed=seed, sigma=1.0)
        qs = rng.integers(1, 7, size=length).tolist()
        ys = rng.integers(0, 2, size=length).tolist()
        base = probs_of(params, qs, ys, ModelConfig.build(6, 4, 5).ranges)
        t = int(rng.integers(0, length))
        flipped = list(ys)
        flipped[t] = 1 - flipped[t]
        other = probs_of(params, qs, flipped, ModelConfig.build(6, 4, 5).ranges)
        assert base[:t + 1].tobytes() == other[:t + 1].tobytes()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 3.0))
    def test_probabilities_strictly_inside_unit_interval(self, seed, sigma):
        rng = np.random.default_rng(seed)
        params = init_params(ModelConfig.build(6, 4, 5), seed=seed, sigma=sigma)
        qs = rng.integers(1, 7, size=10).tolist()
        ys = rng.integers(0, 2, size=10).tolist()
        p = probs_of(params, qs, ys, ModelConfig.build(6, 4, 5).ranges)
        assert np.all(p > 0) and np.all(p < 1)


class TestHopIsolation:
    def _setup(self):
        config = ModelConfig.build(6, 4, 5)
        for seed in range(50):
            params = init_params(config, seed=seed, sigma=1.0)
            pair = distinct_identity_questions(params, config)
            if pair:
                return config, params, pair
        raise AssertionError("no seed with two identities")

    def test_hidden_states_only_flow_within_a_chain(self):
        config, params, (qa, qb) = self._setup()
        qs = [qa, qb, qa, qb, qa, qb, qa]
        ys = [1, 0, 1, 1, 0, 0, 1]
        a_steps = [0, 2, 4, 6]
        prevs = {}
        q, y, mask = encode_batch([qs], [ys])
        with ad.Tape():
            res = run_batch(params, q, y, mask, config.ranges,
                            observer=lambda t, info: prevs.__setitem__(t, info["prev"]))
            loss_b = ad.take(res.logits, (slice(None), [1, 3, 5])).sum()
        ad.backward(loss_b)
        # chain A's recursion inputs get no gradient from chain B's outputs
        for t in a_steps[1:]:
            h_prev, c_prev = prevs[t]
            assert h_prev.grad is None or not h_prev.grad.any()
            assert c_prev.grad is None or not c_prev.grad.any()
        # but chain B's own recursion does
        assert np.abs(prevs[3][0].grad).sum() > 0

    def test_reordering_other_chain_answers_keeps_recursion_inputs(self):
        # chain B's answers only enter through the memory; with the write
        # projection for the answer zeroed, B's content can change without
        # touching chain A's predecessor states
        config, params, (qa, qb) = self._setup()
        params["B"].data[-1, :] = 0.0
        qs = [qa, qb, qa, qb, qa]
        prevs = []
        for ys in ([1, 0, 1, 1, 0], [1, 1, 1, 0, 0]):
            seen = {}
            q, y, mask = encode_batch([qs], [ys])
            run_batch(params, q, y, mask, config.ranges,
                      observer=lambda t, info: seen.__setitem__(t, info["prev"][0].data.copy()))
            prevs.append(seen)
        for t in (2, 4):
            assert prevs[0][t].tobytes() == prevs[1][t].tobytes()


class TestBatching:
    def test_padded_batch_equals_individual_runs(self):
        config = ModelConfig.build(6, 4, 5)
        params = init_params(config, seed=5, sigma=1.0)
        rng = np.random.default_rng(9)
        seqs = []
        for n in (3, 7, 1, 5):
            seqs.append((rng.integers(1, 7, size=n).tolist(), rng.integers(0, 2, size=n).tolist()))
        q, y, mask = encode_batch([s[0] for s in seqs], [s[1] for s in seqs])
        probs = run_batch(params, q, y, mask, config.ranges).probs
        for b, (qs, ys) in enumerate(seqs):
            alone = probs_of(params, qs, ys, config.ranges)
            np.testing.assert_allclose(probs[b, :len(qs)], alone, rtol=0, atol=1e-13)

    def test_windows_with_carry_equal_full_run(self):
        config = ModelConfig.build(6, 4, 5)
        params = init_params(config, seed=2, sigma=1.0)
        rng = np.random.default_rng(4)
        qs = rng.integers(1, 7, size=(2, 12))
        ys = rng.integers(0, 2, size=(2, 12))
        mask = np.ones_like(qs, dtype=bool)
        full = run_batch(params, qs, ys, mask, config.ranges).probs
        first = run_batch(params, qs[:, :5], ys[:, :5], mask[:, :5], config.ranges)
        carry = hoplstm.detach_carry(first.carry)
        second = run_batch(params, qs[:, 5:], ys[:, 5:], mask[:, 5:], config.ranges, carry=carry)
        np.testing.assert_allclose(np.concatenate([first.probs, second.probs], axis=1), full,
                                   rtol=0, atol=1e-13)

    def test_ragged_answers_rejected(self):
        with pytest.raises(InputError):
            encode_batch([[1, 2]], [[1]])
