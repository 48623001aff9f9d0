"""SGD training loop and evaluation metrics.

The optimization recipe: plain SGD with momentum 0.9, L2 regularization
1e-8, global-norm gradient clipping at 5.0, batch size 10, and a learning
rate of 0.01 decayed per epoch as lr0 / (1 + decay * epoch). Loss is summed
over the tokens of a sentence and averaged over the sentences of a batch.

Training is deterministic end to end: shuffling and dropout draw from
labeled substreams of the run seed, so one (seed, data, config) triple
always produces the same report and the same best-model bytes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng, Tape, Tensor, backward
from .data import EncodedSentence, spans_from_labels
from .errors import ContractError, TrainingDivergedError
from .model import Model, batch_loss, build_model, predict_batch

EVAL_BATCH = 32


@dataclass
class OptimizerState:
    """Momentum-SGD buffers and hyper-parameters."""

    lr0: float = 0.01
    momentum: float = 0.9
    l2: float = 1e-8
    clip: float = 5.0
    decay: float = 0.035
    lr: float = field(init=False)
    velocities: list[np.ndarray] | None = None

    def __post_init__(self):
        self.lr = self.lr0


def lr_for_epoch(lr0: float, decay: float, epoch: int) -> float:
    """Per-epoch learning rate lr0 / (1 + decay * epoch); epoch 0 gives lr0."""
    return lr0 / (1.0 + decay * epoch)


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    """Rescale all gradients when their global L2 norm exceeds max_norm.

    Returns the applied scale (1.0 when no clipping happened).
    """
    total = 0.0
    for p in params:
        g = p.grad
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params:
        g = p.grad
        g *= scale
    return scale


def sgd_step(state: OptimizerState, params: list[Tensor]) -> None:
    """v <- momentum*v - lr*(grad + l2*param); param += v; gradients zeroed."""
    if state.velocities is None:
        state.velocities = [np.zeros_like(p.values) for p in params]
    if len(state.velocities) != len(params):
        raise ContractError("optimizer state does not match the parameter list")
    for v, p in zip(state.velocities, params):
        v *= state.momentum
        v -= state.lr * (p.grad + state.l2 * p.values)
        p.values += v
        p.zero_grad()


@dataclass
class EpochRow:
    epoch: int
    lr: float
    train_loss: float
    dev_metric: float
    seconds: float

    def tsv(self) -> str:
        return (
            f"{self.epoch}\t{format(self.lr, '.17g')}\t{format(self.train_loss, '.17g')}"
            f"\t{format(self.dev_metric, '.17g')}\t{self.seconds:.3f}"
        )


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = float("-inf")

    def tsv(self) -> str:
        return "\n".join(r.tsv() for r in self.rows)


def clone_model(model: Model) -> Model:
    """Structurally identical model carrying a copy of the current parameters."""
    copy = build_model(model.config, (model.words, model.chars, model.labels), Rng(model.config.seed))
    for (_, src), (_, dst) in zip(model.named_parameters(), copy.named_parameters()):
        dst.values[...] = src.values
    return copy


def _enforce_parameter_constraints(model: Model, state: OptimizerState) -> None:
    """Re-pin values the optimizer must not move: pad rows and forbidden transitions."""
    for idx, (name, tensor) in enumerate(model.named_parameters()):
        if name in ("word_emb", "char_emb"):
            pad = model.word_table.pad_id if name == "word_emb" else model.char_table.pad_id
            tensor.values[pad, :] = 0.0
            if state.velocities is not None:
                state.velocities[idx][pad, :] = 0.0
        elif name == "head.transitions":
            model.crf_head.reset_forbidden()
            if state.velocities is not None:
                v = state.velocities[idx]
                v[:, model.crf_head.start] = 0.0
                v[model.crf_head.stop, :] = 0.0


def evaluate_accuracy(model: Model, data: list[EncodedSentence]) -> float:
    """Token-level accuracy of the model's predictions against gold labels."""
    if not data:
        raise ContractError("cannot evaluate on empty data")
    correct = 0
    total = 0
    for start in range(0, len(data), EVAL_BATCH):
        chunk = data[start : start + EVAL_BATCH]
        for sent, pred in zip(chunk, predict_batch(model, chunk)):
            if sent.label_ids is None:
                raise ContractError("evaluation needs gold labels")
            correct += sum(1 for p, g in zip(pred, sent.label_ids) if p == g)
            total += len(pred)
    return correct / total


def span_f1_scores(
    predictions: list[list[str]], gold: list[list[str]], scheme: str = "BIO"
) -> tuple[float, float, float]:
    """Exact-span precision/recall/F1 over (start, end, type) spans.

    Precision is 0 by convention when nothing was predicted, recall is 0
    when there are no gold spans, and F1 is 0 when P + R = 0.
    """
    tp = n_pred = n_gold = 0
    for pred_tags, gold_tags in zip(predictions, gold):
        p_spans = spans_from_labels(pred_tags, scheme)
        g_spans = spans_from_labels(gold_tags, scheme)
        tp += len(p_spans & g_spans)
        n_pred += len(p_spans)
        n_gold += len(g_spans)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def evaluate_span_f1(
    model: Model, data: list[EncodedSentence], scheme: str = "BIO"
) -> tuple[float, float, float]:
    """Span precision/recall/F1 of the model's predictions against gold tags."""
    if not data:
        raise ContractError("cannot evaluate on empty data")
    predictions = []
    gold = []
    for start in range(0, len(data), EVAL_BATCH):
        chunk = data[start : start + EVAL_BATCH]
        for sent, pred in zip(chunk, predict_batch(model, chunk)):
            if sent.label_ids is None:
                raise ContractError("evaluation needs gold labels")
            predictions.append([model.labels.name(p) for p in pred])
            gold.append([model.labels.name(g) for g in sent.label_ids])
    return span_f1_scores(predictions, gold, scheme)


def train(
    model: Model,
    train_data: list[EncodedSentence],
    dev_data: list[EncodedSentence],
    optimizer: OptimizerState,
    epochs: int,
    batch_size: int,
    rng: Rng,
    metric: str = "acc",
    scheme: str = "BIO",
    log_fn=None,
) -> tuple[TrainReport, Model]:
    """Run the training loop and return the report plus the best-dev model.

    Every epoch shuffles the training order, steps over fixed-size batches
    (clipping before each step), then scores the dev set. The model from the
    best-scoring epoch is returned; with 0 epochs the input model is returned
    unchanged.
    """
    if not train_data or not dev_data:
        raise ContractError("train and dev sets must be non-empty")
    shuffle_rng = rng.split("shuffle")
    dropout_rng = rng.split("dropout")
    params = model.parameters()
    report = TrainReport()
    best: Model = model
    for epoch in range(epochs):
        started = time.perf_counter()
        optimizer.lr = lr_for_epoch(optimizer.lr0, optimizer.decay, epoch)
        order = list(range(len(train_data)))
        shuffle_rng.shuffle(order)
        total_loss = 0.0
        for batch_index, start in enumerate(range(0, len(order), batch_size)):
            batch = [train_data[i] for i in order[start : start + batch_size]]
            with Tape() as tape:
                loss = batch_loss(model, batch, training=True, rng=dropout_rng)
            value = float(loss.values)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, batch_index, value)
            backward(tape, loss)
            clip_gradients(params, optimizer.clip)
            sgd_step(optimizer, params)
            _enforce_parameter_constraints(model, optimizer)
            total_loss += value * len(batch)
        if metric == "acc":
            dev_metric = evaluate_accuracy(model, dev_data)
        elif metric == "span-f1":
            dev_metric = evaluate_span_f1(model, dev_data, scheme)[2]
        else:
            raise ContractError(f"unknown metric {metric!r}")
        row = EpochRow(
            epoch=epoch,
            lr=optimizer.lr,
            train_loss=total_loss / len(train_data),
            dev_metric=dev_metric,
            seconds=time.perf_counter() - started,
        )
        report.rows.append(row)
        if log_fn is not None:
            log_fn(row)
        if dev_metric > report.best_metric:
            report.best_metric = dev_metric
            report.best_epoch = epoch
            best = clone_model(model)
    return report, best
