"""Representation stack: embeddings, character and word BiLSTMs, dropout, linear.

Every token is represented as [word embedding ; char BiLSTM encoding] and fed
to stacked bidirectional LSTMs. Two LSTM implementations coexist on purpose:

* :func:`lstm_step` composes tape primitives and is the readable reference
  for one cell update (it also serves as the oracle in tests);
* :func:`lstm_run` processes a whole padded sequence batch as a single tape
  node with a hand-written backward pass. The input projection for all time
  steps is one matrix product, which is what makes CPU training viable.

Sequence batches use a time-major layout: a batch of B sequences padded to
length T is a (T*B) x d tensor whose row t*B + b is position t of sequence b.
Positions at or beyond a sequence's length carry zero states and receive zero
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .errors import ConfigError, ContractError, ShapeError

GATE_ORDER = "input, forget, cell-candidate, output"


def init_weight(rng: Rng, rows: int, cols: int) -> Tensor:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform_array((rows, cols), -bound, bound))


@dataclass
class EmbeddingTable:
    """Lookup table of |V| x d rows; the pad row stays frozen at zeros."""

    rows: Tensor
    unk_id: int
    pad_id: int

    @classmethod
    def create(cls, rng: Rng, vocab_size: int, dim: int, unk_id: int, pad_id: int) -> "EmbeddingTable":
        table = cls(init_weight(rng, vocab_size, dim), unk_id=unk_id, pad_id=pad_id)
        table.rows.values[pad_id, :] = 0.0
        return table

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def embed_lookup(table: EmbeddingTable, ids) -> Tensor:
    """Rows of the table selected by ids; gradients scatter to used rows only."""
    return ad.gather_rows(table.rows, ids)


@dataclass
class LstmParams:
    """One direction of an LSTM.

    w_x is (input_dim x 4d), w_h is (d x 4d), b is (4d,), with the gate
    blocks ordered as: input, forget, output, cell-candidate. The three
    sigmoid gates are contiguous so one activation call covers them. The
    forget bias starts at +1.
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor
    hidden_size: int

    @classmethod
    def create(cls, rng: Rng, input_dim: int, hidden_size: int) -> "LstmParams":
        w_x = init_weight(rng, input_dim, 4 * hidden_size)
        w_h = init_weight(rng, hidden_size, 4 * hidden_size)
        b = Tensor(np.zeros(4 * hidden_size))
        b.values[hidden_size : 2 * hidden_size] = 1.0
        return cls(w_x, w_h, b, hidden_size)

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.b]


def lstm_step(params: LstmParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
    """One LSTM cell update built from tape primitives.

    Accepts 1-D vectors (a single state) or (B x d) matrices (a batch of
    states); the result matches the input rank. Gates follow the standard
    form: i, f, o = sigmoid, g = tanh, c = f*c_prev + i*g, h = o*tanh(c).
    """
    was_vector = x_t.values.ndim == 1
    if was_vector:
        x_t = ad.reshape(x_t, (1, -1))
        h_prev = ad.reshape(h_prev, (1, -1))
        c_prev = ad.reshape(c_prev, (1, -1))
    d = params.hidden_size
    if x_t.shape[1] != params.input_dim or h_prev.shape[1] != d or c_prev.shape[1] != d:
        raise ShapeError(
            f"lstm_step dims: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"vs params (in={params.input_dim}, hidden={d})"
        )
    gates = ad.add_row(ad.add(ad.matmul(x_t, params.w_x), ad.matmul(h_prev, params.w_h)), params.b)
    i = ad.sigmoid(ad.slice_cols(gates, 0, d))
    f = ad.sigmoid(ad.slice_cols(gates, d, 2 * d))
    o = ad.sigmoid(ad.slice_cols(gates, 2 * d, 3 * d))
    g = ad.tanh(ad.slice_cols(gates, 3 * d, 4 * d))
    c_t = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h_t = ad.mul(o, ad.tanh(c_t))
    if was_vector:
        h_t = ad.reshape(h_t, (-1,))
        c_t = ad.reshape(c_t, (-1,))
    return h_t, c_t


def lstm_run(
    params: LstmParams,
    xs: Tensor,
    batch: int = 1,
    lengths: np.ndarray | None = None,
    reverse: bool = False,
) -> Tensor:
    """Run one LSTM direction over a time-major padded batch, as one tape node.

    xs has shape (T*batch) x input_dim; lengths gives each sequence's true
    length (default: all T). The output row t*batch + b holds the hidden
    state after consuming position t of sequence b, processed left-to-right,
    or right-to-left when reverse is set. Rows at padded positions are zero.
    """
    rows, din = xs.shape
    if din != params.input_dim:
        raise ShapeError(f"lstm_run input dim {din} vs params {params.input_dim}")
    if batch < 1 or rows % batch != 0:
        raise ShapeError(f"lstm_run rows {rows} not divisible by batch {batch}")
    T = rows // batch
    if T == 0:
        raise ContractError("lstm_run needs at least one time step")
    d = params.hidden_size
    if lengths is None:
        lengths = np.full(batch, T, dtype=np.intp)
    else:
        lengths = np.asarray(lengths, dtype=np.intp)
    # mask[t, b] = 1.0 while position t is inside sequence b
    masks = (np.arange(T)[:, None] < lengths[None, :]).astype(np.float64)

    wx, wh, bias = params.w_x.values, params.w_h.values, params.b.values
    xw = xs.values @ wx + bias

    H = np.zeros((rows, d))
    sig = np.empty((rows, 3 * d))  # input, forget, output gates after activation
    cand = np.empty((rows, d))
    cache_tc = np.empty((rows, d))
    cache_hprev = np.zeros((rows, d))
    cache_cprev = np.zeros((rows, d))

    order = range(T - 1, -1, -1) if reverse else range(T)
    h = np.zeros((batch, d))
    c = np.zeros((batch, d))
    for t in order:
        sl = slice(t * batch, (t + 1) * batch)
        gates = xw[sl] + h @ wh
        s = _sigmoid(gates[:, : 3 * d])
        g = np.tanh(gates[:, 3 * d :])
        i, f, o = s[:, :d], s[:, d : 2 * d], s[:, 2 * d :]
        cache_hprev[sl] = h
        cache_cprev[sl] = c
        c_inner = f * c + i * g
        tc = np.tanh(c_inner)
        m = masks[t][:, None]
        h = m * (o * tc)
        c = m * c_inner
        sig[sl] = s
        cand[sl] = g
        cache_tc[sl] = tc
        H[sl] = h

    out = Tensor(H)
    if ad.active_tape() is None:
        return out

    xs_values = xs.values

    def bwd(dH):
        dG = np.empty((rows, 4 * d))
        dh = np.zeros((batch, d))
        dc = np.zeros((batch, d))
        for t in reversed(order):
            sl = slice(t * batch, (t + 1) * batch)
            m = masks[t][:, None]
            dh_in = (dH[sl] + dh) * m
            s = sig[sl]
            i, f, o = s[:, :d], s[:, d : 2 * d], s[:, 2 * d :]
            g = cand[sl]
            tc = cache_tc[sl]
            dci = dc * m + dh_in * o * (1.0 - tc * tc)
            block = dG[sl]
            block[:, :d] = dci * g
            block[:, d : 2 * d] = dci * cache_cprev[sl]
            block[:, 2 * d : 3 * d] = dh_in * tc
            block[:, : 3 * d] *= s * (1.0 - s)
            block[:, 3 * d :] = (dci * i) * (1.0 - g * g)
            dc = dci * f
            dh = block @ wh.T
        d_xs = dG @ wx.T
        d_wx = xs_values.T @ dG
        d_wh = cache_hprev.T @ dG
        d_b = dG.sum(axis=0)
        return (d_xs, d_wx, d_wh, d_b)

    ad.active_tape().record(out, (xs, params.w_x, params.w_h, params.b), bwd)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow saturates through 1/(1+inf) to exactly 0, the right limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def bilstm_encode(fwd: LstmParams, bwd: LstmParams, xs: Tensor) -> Tensor:
    """Encode an n x d_in sequence into n x 2d: [forward h_i ; backward h_i]."""
    if xs.values.ndim != 2 or xs.shape[0] == 0:
        raise ContractError(f"bilstm_encode needs a non-empty n x d input, got {xs.shape}")
    return bilstm_encode_batch(fwd, bwd, xs, batch=1, lengths=None)


def bilstm_encode_batch(
    fwd: LstmParams,
    bwd: LstmParams,
    xs: Tensor,
    batch: int,
    lengths: np.ndarray | None,
) -> Tensor:
    h_fwd = lstm_run(fwd, xs, batch, lengths, reverse=False)
    h_bwd = lstm_run(bwd, xs, batch, lengths, reverse=True)
    return ad.concat_cols(h_fwd, h_bwd)


def char_encode(char_fwd: LstmParams, char_bwd: LstmParams, char_vectors: Tensor) -> Tensor:
    """Encode one word's character vectors into a fixed 2*d_c vector.

    Runs the character BiLSTM over the word and concatenates the final
    forward state with the final backward state.
    """
    if char_vectors.values.ndim != 2 or char_vectors.shape[0] == 0:
        raise ContractError("char_encode needs at least one character")
    n = char_vectors.shape[0]
    h_fwd = lstm_run(char_fwd, char_vectors, batch=1, reverse=False)
    h_bwd = lstm_run(char_bwd, char_vectors, batch=1, reverse=True)
    final = ad.concat_cols(ad.gather_rows(h_fwd, [n - 1]), ad.gather_rows(h_bwd, [0]))
    return ad.reshape(final, (-1,))


def char_encode_words(
    char_fwd: LstmParams,
    char_bwd: LstmParams,
    char_table: EmbeddingTable,
    words: list[list[int]],
) -> Tensor:
    """Encode many words at once; word w of the result equals char_encode(word w).

    Words are padded to the longest word and run as one time-major batch, so
    the whole character pass costs a handful of tensor ops regardless of how
    many words there are.
    """
    if not words or any(len(w) == 0 for w in words):
        raise ContractError("char_encode_words needs non-empty words")
    n_words = len(words)
    lens = np.array([len(w) for w in words], dtype=np.intp)
    T = int(lens.max())
    ids = np.full(T * n_words, char_table.pad_id, dtype=np.intp)
    for w, chars in enumerate(words):
        for t, cid in enumerate(chars):
            ids[t * n_words + w] = cid
    emb = embed_lookup(char_table, ids)
    h_fwd = lstm_run(char_fwd, emb, batch=n_words, lengths=lens, reverse=False)
    h_bwd = lstm_run(char_bwd, emb, batch=n_words, lengths=lens, reverse=True)
    fwd_final = ad.gather_rows(h_fwd, (lens - 1) * n_words + np.arange(n_words))
    bwd_final = ad.gather_rows(h_bwd, np.arange(n_words))
    return ad.concat_cols(fwd_final, bwd_final)


def dropout_apply(x: Tensor, rate: float, training: bool, rng: Rng) -> Tensor:
    """Inverted dropout: zero with probability rate, scale the rest by 1/(1-rate).

    In evaluation mode (or at rate 0) the input is returned unchanged, so
    inference is exactly dropout-free.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.uniform_array(x.shape) >= rate).astype(np.float64)
    return ad.scale(x, keep / (1.0 - rate))


def linear(w: Tensor, b: Tensor, x: Tensor) -> Tensor:
    """Affine map x W^T + b applied per row; w is (d_out x d_in)."""
    if x.values.ndim != 2 or w.values.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: x {x.shape} vs W {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} vs W {w.shape}")
    return ad.add_row(ad.matmul(x, ad.transpose(w)), b)
