"""Model assembly: the three architectures behind one config and one forward API.

* ``softmax``: word representation, stacked BiLSTM encoder layers, local
  softmax over labels per token.
* ``crf``: the same encoder with a linear-chain CRF inference layer.
* ``lan``: stacked BiLSTM + label-attention layers. Every layer but the last
  concatenates its BiLSTM states with a multi-head attended summary of the
  label embeddings; the last layer's single-head unprojected attention matrix
  is the per-token label distribution the model predicts from.

``num_layers`` counts encoder layers including the output layer, so the
3-layer tagging default means two refinement layers plus the output layer.

All forwards run through one batched core. A batch of B sentences padded to
length T is laid out time-major as (T*B) x d tensors; a single sentence is
the B=1 case of the same code path, which keeps evaluation-mode outputs
bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .data import EncodedSentence, LabelAlphabet, Vocab, PAD_ID, UNK_ID
from .errors import ConfigError, ContractError
from .heads import (
    CrfHead,
    LabelEmbeddingTable,
    LanLayerParams,
    OpCounter,
    SoftmaxHead,
    crf_emissions,
    crf_nll_loss_from_emissions,
    crf_viterbi_from_emissions,
    label_attention_multihead,
    label_attention_naive,
    lan_loss,
    softmax_head_forward,
)
from .layers import (
    EmbeddingTable,
    LstmParams,
    bilstm_encode_batch,
    char_encode_words,
    dropout_apply,
    embed_lookup,
)

ARCHITECTURES = ("softmax", "crf", "lan")


@dataclass
class ModelConfig:
    """Architecture choice plus every dimension and training-time knob.

    Defaults follow the English POS tagging recipe: hidden and label
    embedding size 400, 3 layers, 5 attention heads, 30-dim character
    embeddings with a 50-dim character LSTM, dropout 0.5.
    """

    arch: str = "lan"
    num_layers: int = 3
    d_h: int = 400
    word_emb_dim: int = 100
    char_emb_dim: int = 30
    char_hidden: int = 50
    heads: int = 5
    dropout: float = 0.5
    n_labels: int = 0
    seed: int = 42

    def validate(self) -> None:
        problems = []
        if self.arch not in ARCHITECTURES:
            problems.append(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.num_layers < 1:
            problems.append(f"num_layers must be >= 1, got {self.num_layers}")
        if self.d_h < 2 or self.d_h % 2 != 0:
            problems.append(f"d_h must be even and >= 2 (split over two directions), got {self.d_h}")
        for name in ("word_emb_dim", "char_emb_dim", "char_hidden", "n_labels"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout must be in [0, 1), got {self.dropout}")
        if self.arch == "lan":
            if self.heads < 1:
                problems.append(f"heads must be >= 1, got {self.heads}")
            elif self.d_h % self.heads != 0:
                problems.append(f"heads ({self.heads}) must divide d_h ({self.d_h})")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def word_rep_dim(self) -> int:
        return self.word_emb_dim + 2 * self.char_hidden

    def layer_input_dim(self, layer: int) -> int:
        if layer == 0:
            return self.word_rep_dim
        return 2 * self.d_h if self.arch == "lan" else self.d_h


@dataclass
class AttentionTrace:
    """Per-layer n x |L| attention matrices recorded during one forward pass.

    Inner layers store the mean over heads (each head's matrix is itself a
    distribution per row, so the mean is too); the last entry is the output
    layer's single-head matrix.
    """

    layers: list[np.ndarray] = field(default_factory=list)


@dataclass
class Model:
    config: ModelConfig
    words: Vocab
    chars: Vocab
    labels: LabelAlphabet
    word_table: EmbeddingTable
    char_table: EmbeddingTable
    char_fwd: LstmParams
    char_bwd: LstmParams
    encoder: list[tuple[LstmParams, LstmParams]]
    label_table: LabelEmbeddingTable | None = None
    attn: list[LanLayerParams] = field(default_factory=list)
    softmax_head: SoftmaxHead | None = None
    crf_head: CrfHead | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("word_emb", self.word_table.rows), ("char_emb", self.char_table.rows)]
        for direction, p in (("fwd", self.char_fwd), ("bwd", self.char_bwd)):
            out += [
                (f"char_lstm.{direction}.w_x", p.w_x),
                (f"char_lstm.{direction}.w_h", p.w_h),
                (f"char_lstm.{direction}.b", p.b),
            ]
        for i, (fwd, bwd) in enumerate(self.encoder):
            for direction, p in (("fwd", fwd), ("bwd", bwd)):
                out += [
                    (f"encoder.{i}.{direction}.w_x", p.w_x),
                    (f"encoder.{i}.{direction}.w_h", p.w_h),
                    (f"encoder.{i}.{direction}.b", p.b),
                ]
        if self.label_table is not None:
            out.append(("label_emb", self.label_table.table))
        for i, layer in enumerate(self.attn):
            for j in range(layer.heads):
                out += [
                    (f"attn.{i}.head{j}.w_q", layer.w_q[j]),
                    (f"attn.{i}.head{j}.w_k", layer.w_k[j]),
                    (f"attn.{i}.head{j}.w_v", layer.w_v[j]),
                ]
        if self.softmax_head is not None:
            out += [("head.w", self.softmax_head.w), ("head.b", self.softmax_head.b)]
        if self.crf_head is not None:
            out += [
                ("head.emission", self.crf_head.emission_w),
                ("head.transitions", self.crf_head.transitions),
            ]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grads(self) -> None:
        for t in self.parameters():
            t.zero_grad()


def parameter_count_closed_form(config: ModelConfig, n_words: int, n_chars: int) -> int:
    """Trainable scalar count derived from the config alone."""

    def lstm(din: int, d: int) -> int:
        return din * 4 * d + d * 4 * d + 4 * d

    d_dir = config.d_h // 2
    total = n_words * config.word_emb_dim + n_chars * config.char_emb_dim
    total += 2 * lstm(config.char_emb_dim, config.char_hidden)
    for layer in range(config.num_layers):
        total += 2 * lstm(config.layer_input_dim(layer), d_dir)
    if config.arch == "lan":
        total += config.n_labels * config.d_h
        per_head = 3 * config.d_h * (config.d_h // config.heads)
        total += (config.num_layers - 1) * config.heads * per_head
    elif config.arch == "softmax":
        total += config.n_labels * config.d_h + config.n_labels
    elif config.arch == "crf":
        total += config.n_labels * config.d_h + (config.n_labels + 2) ** 2
    return total


def build_model(
    config: ModelConfig,
    vocabs: tuple[Vocab, Vocab, LabelAlphabet],
    rng: Rng,
    word_table: EmbeddingTable | None = None,
) -> Model:
    """Construct a model with all parameters drawn from the init substream.

    The same (config, vocabs, seed) always yields bitwise-identical
    parameters. A pretrained word table, when given, replaces the randomly
    initialized one and must match the vocabulary and embedding size.
    """
    words, chars, labels = vocabs
    config = replace(config, n_labels=len(labels))
    config.validate()
    init = rng.split("init")

    if word_table is None:
        word_table = EmbeddingTable.create(init, len(words), config.word_emb_dim, UNK_ID, PAD_ID)
    elif word_table.rows.shape != (len(words), config.word_emb_dim):
        raise ConfigError(
            f"pretrained table {word_table.rows.shape} vs vocab {(len(words), config.word_emb_dim)}"
        )
    char_table = EmbeddingTable.create(init, len(chars), config.char_emb_dim, UNK_ID, PAD_ID)
    char_fwd = LstmParams.create(init, config.char_emb_dim, config.char_hidden)
    char_bwd = LstmParams.create(init, config.char_emb_dim, config.char_hidden)
    d_dir = config.d_h // 2
    encoder = [
        (
            LstmParams.create(init, config.layer_input_dim(i), d_dir),
            LstmParams.create(init, config.layer_input_dim(i), d_dir),
        )
        for i in range(config.num_layers)
    ]
    model = Model(
        config=config,
        words=words,
        chars=chars,
        labels=labels,
        word_table=word_table,
        char_table=char_table,
        char_fwd=char_fwd,
        char_bwd=char_bwd,
        encoder=encoder,
    )
    if config.arch == "lan":
        model.label_table = LabelEmbeddingTable.create(init, config.n_labels, config.d_h)
        model.attn = [
            LanLayerParams.create(init, config.d_h, config.heads)
            for _ in range(config.num_layers - 1)
        ]
    elif config.arch == "softmax":
        model.softmax_head = SoftmaxHead.create(init, config.n_labels, config.d_h)
    elif config.arch == "crf":
        model.crf_head = CrfHead.create(init, config.n_labels, config.d_h)
    return model


@dataclass
class BatchForward:
    """Output of the batched forward core, in time-major padded layout."""

    output: Tensor  # (T*B) x |L|: alpha (lan), probs (softmax), emissions (crf)
    batch: int
    max_len: int
    lengths: np.ndarray
    valid_rows: np.ndarray  # row ids of real positions, time-major order
    trace: AttentionTrace | None = None

    def rows_of(self, b: int) -> np.ndarray:
        return np.arange(self.lengths[b], dtype=np.intp) * self.batch + b

    def sentence_output(self, b: int) -> np.ndarray:
        return self.output.values[self.rows_of(b)]


def forward_batch(
    model: Model,
    sentences: list[EncodedSentence],
    training: bool = False,
    rng: Rng | None = None,
    want_trace: bool = False,
    counter: OpCounter | None = None,
) -> BatchForward:
    if not sentences or any(len(s) == 0 for s in sentences):
        raise ContractError("forward needs non-empty sentences")
    if training and model.config.dropout > 0.0 and rng is None:
        raise ContractError("training-mode forward needs an rng for dropout")
    cfg = model.config
    B = len(sentences)
    lengths = np.array([len(s) for s in sentences], dtype=np.intp)
    T = int(lengths.max())

    word_ids = np.full(T * B, PAD_ID, dtype=np.intp)
    valid_rows = []
    char_seqs = []
    for t in range(T):
        for b, sent in enumerate(sentences):
            if t < lengths[b]:
                row = t * B + b
                word_ids[row] = sent.word_ids[t]
                valid_rows.append(row)
                char_seqs.append(sent.char_ids[t])
    valid_rows = np.array(valid_rows, dtype=np.intp)

    word_part = embed_lookup(model.word_table, word_ids)
    char_enc = char_encode_words(model.char_fwd, model.char_bwd, model.char_table, char_seqs)
    char_part = ad.scatter_rows(char_enc, valid_rows, T * B)
    x = ad.concat_cols(word_part, char_part)
    x = dropout_apply(x, cfg.dropout, training, rng)

    trace = AttentionTrace() if want_trace else None
    n_inner = cfg.num_layers - 1 if cfg.arch == "lan" else cfg.num_layers
    for i in range(n_inner):
        fwd, bwd = model.encoder[i]
        h = bilstm_encode_batch(fwd, bwd, x, B, lengths)
        if cfg.arch == "lan":
            alphas, h_l = label_attention_multihead(h, model.label_table, model.attn[i])
            if trace is not None:
                trace.layers.append(np.mean([a.values for a in alphas], axis=0))
            h = ad.concat_cols(h, h_l)
        x = dropout_apply(h, cfg.dropout, training, rng)

    if cfg.arch == "lan":
        fwd, bwd = model.encoder[-1]
        h_w = bilstm_encode_batch(fwd, bwd, x, B, lengths)
        alpha, _ = label_attention_naive(h_w, model.label_table, counter, mix=False)
        if trace is not None:
            trace.layers.append(alpha.values.copy())
        output = alpha
    elif cfg.arch == "softmax":
        output = softmax_head_forward(model.softmax_head, x)
    else:
        output = crf_emissions(model.crf_head, x)
    return BatchForward(output, B, T, lengths, valid_rows, trace)


def model_forward(
    model: Model,
    sentence: EncodedSentence,
    training: bool = False,
    rng: Rng | None = None,
    want_trace: bool = True,
) -> tuple[Tensor, AttentionTrace | None]:
    """Per-token label distributions (lan/softmax) or emission scores (crf).

    The attention trace is populated for the label attention architecture
    only.
    """
    bf = forward_batch(
        model,
        [sentence],
        training=training,
        rng=rng,
        want_trace=want_trace and model.config.arch == "lan",
    )
    return bf.output, bf.trace


def batch_loss(
    model: Model,
    sentences: list[EncodedSentence],
    training: bool = True,
    rng: Rng | None = None,
) -> Tensor:
    """Mean over sentences of the per-sentence loss (token losses are summed)."""
    if any(s.label_ids is None for s in sentences):
        raise ContractError("loss needs gold labels")
    bf = forward_batch(model, sentences, training=training, rng=rng)
    cfg = model.config
    if cfg.arch in ("lan", "softmax"):
        gold_flat = []
        for t in range(bf.max_len):
            for b, sent in enumerate(sentences):
                if t < bf.lengths[b]:
                    gold_flat.append(sent.label_ids[t])
        valid = ad.gather_rows(bf.output, bf.valid_rows)
        total = lan_loss(valid, gold_flat)
    else:
        per_sentence = []
        for b, sent in enumerate(sentences):
            emissions = ad.gather_rows(bf.output, bf.rows_of(b))
            per_sentence.append(crf_nll_loss_from_emissions(emissions, model.crf_head, sent.label_ids))
        total = per_sentence[0]
        for extra in per_sentence[1:]:
            total = ad.add(total, extra)
    return ad.scale(total, 1.0 / len(sentences))


def model_loss(model: Model, sentence: EncodedSentence, training: bool = False, rng: Rng | None = None) -> Tensor:
    """Loss of a single sentence: cross-entropy (lan/softmax) or CRF NLL."""
    return batch_loss(model, [sentence], training=training, rng=rng)


def predict_batch(model: Model, sentences: list[EncodedSentence]) -> list[list[int]]:
    """Label ids per sentence, evaluation mode (no dropout, no tape)."""
    bf = forward_batch(model, sentences)
    out = []
    for b in range(len(sentences)):
        values = bf.sentence_output(b)
        if model.config.arch == "crf":
            path, _ = crf_viterbi_from_emissions(values, model.crf_head)
            out.append(path)
        else:
            out.append([int(i) for i in np.argmax(values, axis=1)])
    return out


def model_predict(model: Model, sentence: EncodedSentence) -> list[int]:
    return predict_batch(model, [sentence])[0]
