"""Model persistence and data exports.

Model files are line-oriented text: a magic/version line, the config, the
label/word/char alphabets, then every named tensor with a shape header and
rows of decimal floats at 17 significant digits. 17 digits round-trip IEEE
doubles exactly, so load(save(m)) reproduces bitwise-identical forwards and
save(load(f)) reproduces f byte for byte.
"""

from __future__ import annotations

import json
from typing import Iterable

import numpy as np

from .autodiff import Rng
from .data import EncodedSentence, LabelAlphabet, Vocab
from .errors import ConfigError, ModelFormatError, ModelVersionError
from .model import Model, ModelConfig, build_model, model_forward

MAGIC = "seqlan-model"
FORMAT_VERSION = 1

_CONFIG_FIELDS = [
    ("arch", str),
    ("num_layers", int),
    ("d_h", int),
    ("word_emb_dim", int),
    ("char_emb_dim", int),
    ("char_hidden", int),
    ("heads", int),
    ("dropout", float),
    ("n_labels", int),
    ("seed", int),
]


def _fmt(v: float) -> str:
    return format(v, ".17g")


def save_model(model: Model, path: str) -> None:
    lines = [f"{MAGIC} {FORMAT_VERSION}"]
    for name, _ in _CONFIG_FIELDS:
        value = getattr(model.config, name)
        lines.append(f"{name} {_fmt(value) if isinstance(value, float) else value}")
    lines.append(f"labels {len(model.labels)}")
    lines.extend(model.labels.labels)
    lines.append(f"words {len(model.words.entries)}")
    lines.extend(model.words.entries)
    lines.append(f"chars {len(model.chars.entries)}")
    lines.extend(model.chars.entries)
    for name, tensor in model.named_parameters():
        dims = " ".join(str(d) for d in tensor.shape)
        lines.append(f"tensor {name} {tensor.values.ndim} {dims}")
        rows = tensor.values if tensor.values.ndim == 2 else tensor.values[None, :]
        for row in rows:
            lines.append(" ".join(_fmt(v) for v in row))
    lines.append("end")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


class _Reader:
    def __init__(self, lines: list[str]):
        self.lines = lines
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise ModelFormatError("unexpected end of model file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def done(self) -> bool:
        return self.pos >= len(self.lines)


def load_model(path: str) -> Model:
    """Load a saved model; the result's forward outputs match the saved model's bitwise."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    reader = _Reader(text.splitlines())

    header = reader.next().split()
    if len(header) != 2 or header[0] != MAGIC:
        raise ModelVersionError(f"not a {MAGIC} file")
    if header[1] != str(FORMAT_VERSION):
        raise ModelVersionError(f"unsupported format version {header[1]} (expected {FORMAT_VERSION})")

    raw: dict[str, str] = {}
    for name, _ in _CONFIG_FIELDS:
        parts = reader.next().split(maxsplit=1)
        if len(parts) != 2 or parts[0] != name:
            raise ModelFormatError(f"expected config field {name!r}, got {parts!r}")
        raw[name] = parts[1]
    try:
        config = ModelConfig(**{name: kind(raw[name]) for name, kind in _CONFIG_FIELDS})
    except (TypeError, ValueError) as e:
        raise ModelFormatError(f"bad config value: {e}") from None

    def block(expected_key: str) -> list[str]:
        parts = reader.next().split()
        if len(parts) != 2 or parts[0] != expected_key:
            raise ModelFormatError(f"expected {expected_key!r} block header, got {parts!r}")
        try:
            count = int(parts[1])
        except ValueError:
            raise ModelFormatError(f"bad {expected_key} count {parts[1]!r}") from None
        return [reader.next() for _ in range(count)]

    labels = LabelAlphabet(block("labels"))
    words = Vocab(block("words"))
    chars = Vocab(block("chars"))
    if len(labels) != config.n_labels:
        raise ModelFormatError(f"label block size {len(labels)} vs config n_labels {config.n_labels}")

    try:
        model = build_model(config, (words, chars, labels), Rng(config.seed))
    except ConfigError as e:
        raise ModelFormatError(f"invalid stored config: {e}") from None

    expected = dict(model.named_parameters())
    seen = set()
    while True:
        line = reader.next()
        if line == "end":
            break
        parts = line.split()
        if len(parts) < 3 or parts[0] != "tensor":
            raise ModelFormatError(f"expected tensor header or end, got {line!r}")
        name, ndim = parts[1], parts[2]
        try:
            ndim = int(ndim)
            dims = tuple(int(d) for d in parts[3:])
        except ValueError:
            raise ModelFormatError(f"bad tensor header {line!r}") from None
        if len(dims) != ndim:
            raise ModelFormatError(f"tensor {name}: {ndim} dims declared, {len(dims)} given")
        if name not in expected:
            raise ModelFormatError(f"unknown tensor {name!r} for this architecture")
        if name in seen:
            raise ModelFormatError(f"duplicate tensor {name!r}")
        seen.add(name)
        target = expected[name]
        if dims != target.shape:
            raise ModelFormatError(f"tensor {name}: stored shape {dims} vs model shape {target.shape}")
        n_rows = dims[0] if ndim == 2 else 1
        width = dims[1] if ndim == 2 else dims[0]
        values = np.empty((n_rows, width))
        for r in range(n_rows):
            fields = reader.next().split()
            if len(fields) != width:
                raise ModelFormatError(f"tensor {name} row {r}: {len(fields)} values, expected {width}")
            try:
                values[r] = [float(v) for v in fields]
            except ValueError as e:
                raise ModelFormatError(f"tensor {name} row {r}: {e}") from None
        target.values[...] = values.reshape(target.shape)
    missing = set(expected) - seen
    if missing:
        raise ModelFormatError(f"model file is missing tensors: {sorted(missing)}")
    return model


def export_label_embeddings(model: Model, path: str) -> None:
    """Write the trained label embeddings as TSV: label string, then d_h floats."""
    if model.label_table is None:
        raise ConfigError(f"label embedding export needs the lan architecture, not {model.config.arch!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, label in enumerate(model.labels.labels):
            row = model.label_table.table.values[i]
            f.write(label + "\t" + "\t".join(_fmt(v) for v in row) + "\n")


def _fmt_matrix(m: np.ndarray) -> str:
    return "[" + ", ".join("[" + ", ".join(_fmt(v) for v in row) + "]" for row in m) + "]"


def export_attention(model: Model, sentences: Iterable[EncodedSentence], path: str) -> None:
    """Write one JSON record per sentence: tokens, label strings, per-layer attention.

    Floats are emitted at 17 significant digits so a parse reads back the
    exact in-memory distributions.
    """
    if model.config.arch != "lan":
        raise ConfigError(f"attention export needs the lan architecture, not {model.config.arch!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sent in sentences:
            _, trace = model_forward(model, sent, want_trace=True)
            record = '{"tokens": %s, "labels": %s, "layers": [%s]}' % (
                json.dumps(sent.tokens),
                json.dumps(model.labels.labels),
                ", ".join(_fmt_matrix(layer) for layer in trace.layers),
            )
            f.write(record + "\n")
