"""seqlan: a sequence labeling toolkit.

Three architectures behind one training and decoding API: a local softmax
tagger, a linear-chain CRF tagger, and a hierarchically-refined label
attention tagger, all built on a small reverse-mode autodiff core. Ships
with a CLI (``seqlan``) and an HTTP tagging service.
"""

from .autodiff import Rng, Tape, Tensor, backward, grad_check
from .data import (
    EncodedSentence,
    LabelAlphabet,
    RawSentence,
    SyntheticSpec,
    Vocab,
    build_vocabs,
    encode_sentence,
    generate_synthetic,
    parse_conll,
    spans_from_labels,
    write_conll,
)
from .model import (
    AttentionTrace,
    Model,
    ModelConfig,
    build_model,
    model_forward,
    model_loss,
    model_predict,
)
from .serialize import export_attention, export_label_embeddings, load_model, save_model
from .training import (
    OptimizerState,
    TrainReport,
    clip_gradients,
    evaluate_accuracy,
    evaluate_span_f1,
    lr_for_epoch,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "EncodedSentence",
    "LabelAlphabet",
    "RawSentence",
    "SyntheticSpec",
    "Vocab",
    "build_vocabs",
    "encode_sentence",
    "generate_synthetic",
    "parse_conll",
    "spans_from_labels",
    "write_conll",
    "AttentionTrace",
    "Model",
    "ModelConfig",
    "build_model",
    "model_forward",
    "model_loss",
    "model_predict",
    "export_attention",
    "export_label_embeddings",
    "load_model",
    "save_model",
    "OptimizerState",
    "TrainReport",
    "clip_gradients",
    "evaluate_accuracy",
    "evaluate_span_f1",
    "lr_for_epoch",
    "sgd_step",
    "train",
    "__version__",
]
