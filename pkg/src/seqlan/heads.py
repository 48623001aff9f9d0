"""Inference layers: local softmax, linear-chain CRF, and label attention.

The CRF keeps one (|L|+2) x (|L|+2) transition table with two virtual states
(START = |L|, STOP = |L|+1) appended after the real labels. Transitions into
START and out of STOP are pinned at -1e4 so the recursions never have to
special-case sequence boundaries. The partition function is computed by the
forward algorithm in log space and is differentiable; Viterbi decoding is a
plain max-product dynamic program over the same scores.

Label attention scores every token state against every label embedding. The
unprojected single-head form yields the per-token label distribution used
for output; the multi-head form projects queries/keys/values per head,
concatenates the attended label summaries and adds the token states back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .errors import ConfigError, ContractError, IndexingError, ShapeError
from .layers import init_weight

FORBIDDEN_SCORE = -1.0e4


@dataclass
class OpCounter:
    """Exact tally of the label-decision work done during decoding."""

    viterbi_transitions: int = 0
    attention_scores: int = 0


@dataclass
class SoftmaxHead:
    w: Tensor  # (|L| x d)
    b: Tensor  # (|L|,)

    @classmethod
    def create(cls, rng: Rng, n_labels: int, dim: int) -> "SoftmaxHead":
        return cls(init_weight(rng, n_labels, dim), Tensor(np.zeros(n_labels)))

    @property
    def n_labels(self) -> int:
        return self.w.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.w, self.b]


def softmax_head_forward(head: SoftmaxHead, h: Tensor) -> Tensor:
    """Per-token label distributions softmax(W h_i + b), one row per token."""
    from .layers import linear

    return ad.softmax_rows(linear(head.w, head.b, h))


@dataclass
class CrfHead:
    emission_w: Tensor  # (|L| x d)
    transitions: Tensor  # (|L|+2 x |L|+2) incl. virtual START/STOP
    n_labels: int

    @classmethod
    def create(cls, rng: Rng, n_labels: int, dim: int) -> "CrfHead":
        trans = Tensor(np.zeros((n_labels + 2, n_labels + 2)))
        head = cls(init_weight(rng, n_labels, dim), trans, n_labels)
        head.reset_forbidden()
        return head

    @property
    def start(self) -> int:
        return self.n_labels

    @property
    def stop(self) -> int:
        return self.n_labels + 1

    def reset_forbidden(self) -> None:
        """Pin transitions into START and out of STOP at the forbidden score."""
        self.transitions.values[:, self.start] = FORBIDDEN_SCORE
        self.transitions.values[self.stop, :] = FORBIDDEN_SCORE

    def tensors(self) -> list[Tensor]:
        return [self.emission_w, self.transitions]


def crf_emissions(head: CrfHead, h: Tensor) -> Tensor:
    """Per-token emission scores W_emit h_i, shape (n x |L|)."""
    return ad.matmul(h, ad.transpose(head.emission_w))


def _check_labels(labels, n_labels: int) -> list[int]:
    labels = [int(l) for l in labels]
    for l in labels:
        if not 0 <= l < n_labels:
            raise IndexingError(f"label id {l} out of range [0, {n_labels})")
    return labels


def crf_gold_path_score(emissions: Tensor, head: CrfHead, labels) -> Tensor:
    """Score of one label path: emissions plus transitions, START and STOP included.

    Terms are folded in path order (transition into position t, then emission
    at t), matching the association order of the forward recursion so that a
    single-label alphabet gives a loss of exactly zero.
    """
    n = emissions.shape[0]
    labels = _check_labels(labels, head.n_labels)
    if len(labels) != n:
        raise ContractError(f"{len(labels)} labels for {n} positions")
    ev = emissions.values
    tv = head.transitions.values
    prev = [head.start] + labels[:-1]
    acc = 0.0
    for t in range(n):
        acc += tv[prev[t], labels[t]]
        acc += ev[t, labels[t]]
    acc += tv[labels[-1], head.stop]
    out = Tensor(np.asarray(acc))

    if ad.active_tape() is not None:
        rows = np.array(prev + [labels[-1]], dtype=np.intp)
        cols = np.array(labels + [head.stop], dtype=np.intp)
        e_rows = np.arange(n, dtype=np.intp)
        e_cols = np.array(labels, dtype=np.intp)
        shape_t = tv.shape
        shape_e = ev.shape

        def bwd(g):
            d_e = np.zeros(shape_e)
            np.add.at(d_e, (e_rows, e_cols), g)
            d_t = np.zeros(shape_t)
            np.add.at(d_t, (rows, cols), g)
            return (d_e, d_t)

        ad.active_tape().record(out, (emissions, head.transitions), bwd)
    return out


def crf_score_sequence(head: CrfHead, h: Tensor, labels) -> Tensor:
    """Path score computed from encoder states h (n x d)."""
    return crf_gold_path_score(crf_emissions(head, h), head, labels)


def _row_vec(x: Tensor, t: int, width: int) -> Tensor:
    return ad.reshape(ad.gather_rows(x, [t]), (width,))


def crf_forward_logz_from_emissions(emissions: Tensor, head: CrfHead) -> Tensor:
    """log of the summed exponentiated scores of all label paths (forward algorithm)."""
    n, L = emissions.shape
    if n < 1:
        raise ContractError("forward algorithm needs at least one position")
    label_range = np.arange(L, dtype=np.intp)
    start_row = ad.gather2d(head.transitions, [head.start] * L, label_range)
    stop_col = ad.gather2d(head.transitions, label_range, [head.stop] * L)
    alpha = ad.add(_row_vec(emissions, 0, L), start_row)
    if n > 1:
        trans_block = ad.slice_cols(ad.gather_rows(head.transitions, label_range), 0, L)
        for t in range(1, n):
            scores = ad.add_col(trans_block, alpha)  # [i, j] = alpha_i + trans(i -> j)
            alpha = ad.add(ad.logsumexp_cols(scores), _row_vec(emissions, t, L))
    return ad.logsumexp(ad.add(alpha, stop_col))


def crf_forward_logz(head: CrfHead, h: Tensor) -> Tensor:
    return crf_forward_logz_from_emissions(crf_emissions(head, h), head)


def crf_nll_loss_from_emissions(emissions: Tensor, head: CrfHead, gold) -> Tensor:
    logz = crf_forward_logz_from_emissions(emissions, head)
    score = crf_gold_path_score(emissions, head, gold)
    return ad.sub(logz, score)


def crf_nll_loss(head: CrfHead, h: Tensor, gold) -> Tensor:
    """Negative log-probability of the gold path: logZ - score(gold). Always >= 0."""
    return crf_nll_loss_from_emissions(crf_emissions(head, h), head, gold)


def crf_viterbi_decode(
    head: CrfHead, h: Tensor, counter: OpCounter | None = None
) -> tuple[list[int], float]:
    """Highest-scoring label path and its score.

    Ties at every backpointer decision and at the final position resolve to
    the lower label id (argmax takes the first maximum).
    """
    emissions = h.values @ head.emission_w.values.T
    return crf_viterbi_from_emissions(emissions, head, counter)


def crf_viterbi_from_emissions(
    emissions: np.ndarray, head: CrfHead, counter: OpCounter | None = None
) -> tuple[list[int], float]:
    n, L = emissions.shape
    if n < 1:
        raise ContractError("viterbi needs at least one position")
    tv = head.transitions.values
    trans_block = tv[:L, :L]
    delta = emissions[0] + tv[head.start, :L]
    if counter is not None:
        counter.viterbi_transitions += L
    backpointers = np.empty((n, L), dtype=np.intp)
    for t in range(1, n):
        scores = delta[:, None] + trans_block  # candidate transition i -> j
        backpointers[t] = np.argmax(scores, axis=0)
        delta = emissions[t] + scores[backpointers[t], np.arange(L)]
        if counter is not None:
            counter.viterbi_transitions += L * L
    totals = delta + tv[:L, head.stop]
    if counter is not None:
        counter.viterbi_transitions += L
    best = int(np.argmax(totals))
    path = [best]
    for t in range(n - 1, 0, -1):
        path.append(int(backpointers[t, path[-1]]))
    path.reverse()
    return path, float(totals[best])


@dataclass
class LabelEmbeddingTable:
    """One trained d_h-dimensional vector per candidate label."""

    table: Tensor  # (|L| x d_h)

    @classmethod
    def create(cls, rng: Rng, n_labels: int, dim: int) -> "LabelEmbeddingTable":
        return cls(init_weight(rng, n_labels, dim))

    @property
    def n_labels(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


@dataclass
class LanLayerParams:
    """Per-head query/key/value projections, each (d_h x d_h/k)."""

    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    heads: int

    @classmethod
    def create(cls, rng: Rng, d_h: int, heads: int) -> "LanLayerParams":
        if heads < 1 or d_h % heads != 0:
            raise ConfigError(f"head count {heads} must divide hidden size {d_h}")
        dk = d_h // heads
        return cls(
            w_q=[init_weight(rng, d_h, dk) for _ in range(heads)],
            w_k=[init_weight(rng, d_h, dk) for _ in range(heads)],
            w_v=[init_weight(rng, d_h, dk) for _ in range(heads)],
            heads=heads,
        )

    def tensors(self) -> list[Tensor]:
        return [*self.w_q, *self.w_k, *self.w_v]


def label_attention_naive(
    h_w: Tensor,
    labels: LabelEmbeddingTable,
    counter: OpCounter | None = None,
    mix: bool = True,
) -> tuple[Tensor, Tensor | None]:
    """Unprojected single-head attention from token states to label embeddings.

    alpha = softmax(H x_l^T / sqrt(d_h)) holds one label distribution per
    token; the attended summary is alpha x_l. This is the output form: each
    row of alpha is the label distribution the final layer predicts from.
    Callers that only need alpha (the output layer, decoding) pass mix=False
    to skip the summary product.
    """
    d_h = h_w.shape[1]
    if labels.dim != d_h:
        raise ShapeError(f"token states {h_w.shape} vs label embeddings {labels.table.shape}")
    scores = ad.scale(ad.matmul(h_w, ad.transpose(labels.table)), 1.0 / math.sqrt(d_h))
    if counter is not None:
        counter.attention_scores += scores.shape[0] * scores.shape[1]
    alpha = ad.softmax_rows(scores)
    return alpha, (ad.matmul(alpha, labels.table) if mix else None)


def label_attention_multihead(
    h_w: Tensor, labels: LabelEmbeddingTable, params: LanLayerParams
) -> tuple[list[Tensor], Tensor]:
    """Multi-head label attention with a residual connection.

    Each head attends from projected token states to projected label
    embeddings with scale sqrt(d_h/k); the concatenated head outputs are
    added back onto the token states. Returns the per-head attention
    matrices (each n x |L|) and the combined representation.
    """
    d_h = h_w.shape[1]
    if labels.dim != d_h:
        raise ShapeError(f"token states {h_w.shape} vs label embeddings {labels.table.shape}")
    if d_h % params.heads != 0:
        raise ConfigError(f"head count {params.heads} must divide hidden size {d_h}")
    dk = d_h // params.heads
    inv_scale = 1.0 / math.sqrt(dk)
    alphas: list[Tensor] = []
    outputs: list[Tensor] = []
    for w_q, w_k, w_v in zip(params.w_q, params.w_k, params.w_v):
        q = ad.matmul(h_w, w_q)
        k = ad.matmul(labels.table, w_k)
        v = ad.matmul(labels.table, w_v)
        a = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)), inv_scale))
        alphas.append(a)
        outputs.append(ad.matmul(a, v))
    combined = reduce(ad.concat_cols, outputs)
    return alphas, ad.add(combined, h_w)


def lan_output_decode(final_alpha: Tensor) -> list[int]:
    """Per-token argmax of the final attention matrix; ties go to the lower id."""
    return [int(i) for i in np.argmax(final_alpha.values, axis=1)]


def lan_loss(final_alpha: Tensor, gold) -> Tensor:
    """Cross-entropy against the gold labels: sum_i -log alpha[i, gold_i]."""
    n, L = final_alpha.shape
    gold = _check_labels(gold, L)
    if len(gold) != n:
        raise ContractError(f"{len(gold)} gold labels for {n} positions")
    picks = ad.gather2d(final_alpha, np.arange(n, dtype=np.intp), gold)
    return ad.scale(ad.sum_all(ad.log(picks)), -1.0)
