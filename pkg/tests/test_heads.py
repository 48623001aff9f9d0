"""Inference layer tests: CRF against enumeration, attention against hand-rolled math."""

import math

import numpy as np
import pytest

from seqlan import autodiff as ad
from seqlan import heads as H
from seqlan.autodiff import Rng, Tensor, grad_check
from seqlan.errors import ConfigError, IndexingError
from oracles import (
    enumerate_path_scores,
    enumerated_logz,
    enumerated_viterbi,
    multihead_label_attention_naive,
)


def make_crf(seed, n_labels, dim, zero_virtual=False):
    head = H.CrfHead.create(Rng(seed).split("crf"), n_labels, dim)
    head.transitions.values[: n_labels + 2, : n_labels + 2] = Rng(seed).split(
        "trans"
    ).uniform_array((n_labels + 2, n_labels + 2), -1, 1)
    if zero_virtual:
        head.transitions.values[:] = 0.0
    else:
        head.reset_forbidden()
    return head


def trans_list(head):
    return head.transitions.values.tolist()


class TestSoftmaxHead:
    def test_uniform_with_zero_params(self):
        head = H.SoftmaxHead(Tensor(np.zeros((45, 8))), Tensor(np.zeros(45)))
        probs = H.softmax_head_forward(head, Tensor(Rng(1).uniform_array((3, 8), -1, 1)))
        np.testing.assert_allclose(probs.values, np.full((3, 45), 1.0 / 45.0), rtol=0, atol=1e-16)

    def test_strong_bias_dominates(self):
        head = H.SoftmaxHead.create(Rng(2), 5, 4)
        head.b.values[3] = 50.0
        probs = H.softmax_head_forward(head, Tensor(Rng(3).uniform_array((6, 4), -1, 1)))
        assert list(np.argmax(probs.values, axis=1)) == [3] * 6

    def test_matches_direct_computation(self):
        rng = Rng(4)
        head = H.SoftmaxHead.create(rng.split("head"), 3, 5)
        x = rng.uniform_array((4, 5), -1, 1)
        probs = H.softmax_head_forward(head, Tensor(x))
        scores = x @ head.w.values.T + head.b.values
        for i in range(4):
            e = np.exp(scores[i] - scores[i].max())
            np.testing.assert_allclose(probs.values[i], e / e.sum(), rtol=0, atol=1e-15)


class TestCrfScore:
    def test_all_zero_scores(self):
        head = make_crf(1, 3, 4, zero_virtual=True)
        head.emission_w.values[:] = 0.0
        h = Tensor(Rng(5).uniform_array((4, 4), -1, 1))
        for labels in ([0, 1, 2, 0], [2, 2, 2, 2]):
            assert float(H.crf_score_sequence(head, h, labels).values) == 0.0

    def test_single_position(self):
        head = make_crf(2, 3, 4)
        h = Tensor(Rng(6).uniform_array((1, 4), -1, 1))
        e = (h.values @ head.emission_w.values.T)[0]
        tv = head.transitions.values
        for l in range(3):
            expected = tv[head.start, l] + e[l] + tv[l, head.stop]
            got = float(H.crf_score_sequence(head, h, [l]).values)
            assert got == pytest.approx(expected, abs=1e-12)

    def test_matches_term_by_term_accumulation(self):
        head = make_crf(3, 3, 4)
        h = Tensor(Rng(7).uniform_array((3, 4), -1, 1))
        e = h.values @ head.emission_w.values.T
        tv = head.transitions.values
        labels = [2, 0, 1]
        expected = (
            tv[head.start, 2] + e[0, 2] + tv[2, 0] + e[1, 0] + tv[0, 1] + e[2, 1] + tv[1, head.stop]
        )
        got = float(H.crf_score_sequence(head, h, labels).values)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_label_out_of_range(self):
        head = make_crf(4, 2, 3)
        with pytest.raises(IndexingError):
            H.crf_score_sequence(head, Tensor(np.zeros((2, 3))), [0, 2])


class TestCrfForward:
    def test_counting_case(self):
        head = make_crf(5, 2, 3, zero_virtual=True)
        emissions = Tensor(np.zeros((3, 2)))
        logz = H.crf_forward_logz_from_emissions(emissions, head)
        assert float(logz.values) == pytest.approx(3.0 * math.log(2.0), abs=1e-12)

    def test_single_label_equals_path_score(self):
        head = make_crf(6, 1, 4)
        h = Tensor(Rng(8).uniform_array((4, 4), -1, 1))
        logz = float(H.crf_forward_logz(head, h).values)
        score = float(H.crf_score_sequence(head, h, [0, 0, 0, 0]).values)
        assert logz == score  # single path: identical float association

    def test_matches_enumeration(self):
        head = make_crf(7, 3, 5)
        h = Tensor(Rng(9).uniform_array((4, 5), -1, 1))
        e = h.values @ head.emission_w.values.T
        expected = enumerated_logz(e.tolist(), trans_list(head), head.start, head.stop)
        got = float(H.crf_forward_logz(head, h).values)
        assert got == pytest.approx(expected, abs=1e-8)


class TestCrfNll:
    def test_single_label_loss_exactly_zero(self):
        head = make_crf(10, 1, 3)
        h = Tensor(Rng(11).uniform_array((5, 3), -1, 1))
        assert float(H.crf_nll_loss(head, h, [0] * 5).values) == 0.0

    def test_uniform_counting(self):
        head = make_crf(11, 3, 2, zero_virtual=True)
        emissions = Tensor(np.zeros((2, 3)))
        loss = H.crf_nll_loss_from_emissions(emissions, head, [1, 2])
        assert float(loss.values) == pytest.approx(2.0 * math.log(3.0), abs=1e-12)

    def test_matches_enumerated_gold_probability(self):
        head = make_crf(12, 3, 4)
        h = Tensor(Rng(13).uniform_array((3, 4), -1, 1))
        e = h.values @ head.emission_w.values.T
        scores = enumerate_path_scores(e.tolist(), trans_list(head), head.start, head.stop)
        m = max(scores.values())
        z = sum(math.exp(s - m) for s in scores.values())
        gold = (1, 0, 2)
        expected = -(scores[gold] - m - math.log(z))
        got = float(H.crf_nll_loss(head, h, list(gold)).values)
        assert got == pytest.approx(expected, abs=1e-8)

    def test_probabilities_normalize(self):
        head = make_crf(13, 3, 4)
        h = Tensor(Rng(14).uniform_array((3, 4), -1, 1))
        total = 0.0
        for path in enumerate_path_scores(np.zeros((3, 3)), trans_list(head), head.start, head.stop):
            total += math.exp(-float(H.crf_nll_loss(head, h, list(path)).values))
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_gradients_through_recursion(self):
        head = make_crf(14, 3, 3)
        h = Tensor(Rng(15).uniform_array((3, 3), -1, 1))
        f = lambda: H.crf_nll_loss(head, h, [0, 2, 1])
        assert grad_check(f, [h, *head.tensors()]) <= 1e-4


class TestViterbi:
    def test_dominant_emissions(self):
        head = make_crf(15, 4, 3, zero_virtual=True)
        emissions = np.zeros((5, 4))
        want = [2, 0, 3, 1, 1]
        for t, l in enumerate(want):
            emissions[t, l] = 50.0
        path, score = H.crf_viterbi_from_emissions(emissions, head)
        assert path == want
        assert score == pytest.approx(250.0)

    def test_all_equal_scores_tie_break(self):
        head = make_crf(16, 3, 3, zero_virtual=True)
        path, score = H.crf_viterbi_from_emissions(np.zeros((4, 3)), head)
        assert path == [0, 0, 0, 0]
        assert score == 0.0

    def test_matches_enumeration(self):
        for seed in range(5):
            head = make_crf(20 + seed, 4, 3)
            h = Tensor(Rng(30 + seed).uniform_array((4, 3), -1, 1))
            e = h.values @ head.emission_w.values.T
            want_path, want_score = enumerated_viterbi(
                e.tolist(), trans_list(head), head.start, head.stop
            )
            path, score = H.crf_viterbi_decode(head, h)
            assert path == want_path
            assert score == pytest.approx(want_score, abs=1e-10)

    def test_transition_counter(self):
        head = make_crf(17, 3, 2)
        counter = H.OpCounter()
        H.crf_viterbi_from_emissions(np.zeros((4, 3)), head, counter)
        assert counter.viterbi_transitions == 9 * 3 + 6  # |L|^2 (n-1) + 2|L|


class TestLabelAttention:
    def test_single_label_column_of_ones(self):
        labels = H.LabelEmbeddingTable(Tensor(Rng(18).uniform_array((1, 4), -1, 1)))
        h_w = Tensor(Rng(19).uniform_array((3, 4), -1, 1))
        alpha, h_l = H.label_attention_naive(h_w, labels)
        np.testing.assert_array_equal(alpha.values, np.ones((3, 1)))
        for i in range(3):
            np.testing.assert_allclose(h_l.values[i], labels.table.values[0], atol=1e-15)

    def test_zero_scores_uniform(self):
        labels = H.LabelEmbeddingTable(Tensor(Rng(20).uniform_array((4, 3), -1, 1)))
        alpha, _ = H.label_attention_naive(Tensor(np.zeros((2, 3))), labels)
        np.testing.assert_array_equal(alpha.values, np.full((2, 4), 0.25))

    def test_naive_matches_direct_formula(self):
        rng = Rng(21)
        labels = H.LabelEmbeddingTable(Tensor(rng.uniform_array((3, 4), -1, 1)))
        h_w = Tensor(rng.uniform_array((2, 4), -1, 1))
        alpha, h_l = H.label_attention_naive(h_w, labels)
        scores = h_w.values @ labels.table.values.T / math.sqrt(4)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        expected = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(alpha.values, expected, rtol=0, atol=1e-15)
        np.testing.assert_allclose(h_l.values, expected @ labels.table.values, rtol=0, atol=1e-15)

    def test_multihead_matches_hand_rolled_oracle(self):
        rng = Rng(22)
        d_h, n, L, k = 4, 2, 3, 2
        labels = H.LabelEmbeddingTable(Tensor(rng.uniform_array((L, d_h), -1, 1)))
        params = H.LanLayerParams.create(rng.split("proj"), d_h, k)
        h_w = Tensor(rng.uniform_array((n, d_h), -1, 1))
        alphas, h_l = H.label_attention_multihead(h_w, labels, params)
        want_alphas, want_out = multihead_label_attention_naive(
            h_w.values,
            labels.table.values,
            [t.values for t in params.w_q],
            [t.values for t in params.w_k],
            [t.values for t in params.w_v],
        )
        for got, want in zip(alphas, want_alphas):
            np.testing.assert_allclose(got.values, want, rtol=0, atol=1e-12)
        np.testing.assert_allclose(h_l.values, want_out, rtol=0, atol=1e-12)

    def test_multihead_rows_sum_to_one(self):
        rng = Rng(23)
        labels = H.LabelEmbeddingTable(Tensor(rng.uniform_array((5, 6), -1, 1)))
        params = H.LanLayerParams.create(rng.split("proj"), 6, 3)
        h_w = Tensor(rng.uniform_array((4, 6), -1, 1))
        alphas, _ = H.label_attention_multihead(h_w, labels, params)
        for a in alphas:
            np.testing.assert_allclose(a.values.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_head_count_must_divide_hidden(self):
        with pytest.raises(ConfigError):
            H.LanLayerParams.create(Rng(24), 6, 4)

    def test_attention_score_counter(self):
        labels = H.LabelEmbeddingTable(Tensor(Rng(25).uniform_array((3, 4), -1, 1)))
        counter = H.OpCounter()
        H.label_attention_naive(Tensor(np.zeros((4, 4))), labels, counter)
        assert counter.attention_scores == 12  # |L| * n

    def test_gradients(self):
        rng = Rng(26)
        labels = H.LabelEmbeddingTable(Tensor(rng.uniform_array((3, 4), -1, 1)))
        params = H.LanLayerParams.create(rng.split("proj"), 4, 2)
        h_w = Tensor(rng.uniform_array((2, 4), -1, 1))

        def f_naive():
            alpha, h_l = H.label_attention_naive(h_w, labels)
            return ad.sum_all(ad.mul(h_l, h_l))

        def f_multi():
            _, h_l = H.label_attention_multihead(h_w, labels, params)
            return ad.sum_all(ad.mul(h_l, h_l))

        assert grad_check(f_naive, [h_w, labels.table]) <= 1e-4
        assert grad_check(f_multi, [h_w, labels.table, *params.tensors()]) <= 1e-4


class TestLanOutput:
    def test_uniform_alpha_ties_to_zero(self):
        alpha = Tensor(np.full((3, 4), 0.25))
        assert H.lan_output_decode(alpha) == [0, 0, 0]

    def test_one_hot_rows(self):
        alpha = Tensor(np.eye(4)[[2, 0, 3]])
        assert H.lan_output_decode(alpha) == [2, 0, 3]

    def test_argmax_invariant_to_softmax(self):
        rng = Rng(27)
        scores = rng.uniform_array((6, 5), -2, 2)
        alpha = ad.softmax_rows(Tensor(scores))
        assert H.lan_output_decode(alpha) == [int(i) for i in np.argmax(scores, axis=1)]

    def test_loss_perfect_prediction(self):
        alpha = Tensor(np.eye(3))
        assert float(H.lan_loss(alpha, [0, 1, 2]).values) == 0.0

    def test_loss_uniform(self):
        alpha = Tensor(np.full((2, 4), 0.25))
        assert float(H.lan_loss(alpha, [1, 3]).values) == pytest.approx(2 * math.log(4), abs=1e-12)

    def test_loss_matches_direct_accumulation(self):
        rng = Rng(28)
        alpha = ad.softmax_rows(Tensor(rng.uniform_array((4, 3), -1, 1)))
        gold = [2, 0, 1, 1]
        expected = -sum(math.log(alpha.values[i, g]) for i, g in enumerate(gold))
        assert float(H.lan_loss(alpha, gold).values) == pytest.approx(expected, abs=1e-12)


class TestSingleLayerEquivalence:
    def test_tied_weights_same_argmax(self):
        # one naive attention layer with label matrix W and zero bias predicts
        # exactly like the softmax head on the same token states
        rng = Rng(29)
        for trial in range(20):
            d_h, L, n = 6, 4, 5
            table = H.LabelEmbeddingTable(Tensor(rng.uniform_array((L, d_h), -1, 1)))
            h_w = Tensor(rng.uniform_array((n, d_h), -1, 1))
            alpha, _ = H.label_attention_naive(h_w, table)
            head = H.SoftmaxHead(table.table, Tensor(np.zeros(L)))
            probs = H.softmax_head_forward(head, h_w)
            assert H.lan_output_decode(alpha) == [int(i) for i in np.argmax(probs.values, axis=1)]
