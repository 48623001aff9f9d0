"""Corpus reading, vocabularies, pretrained embeddings, synthetic data, spans.

The column corpus format: one token per line, blank lines between sentences.
The token is the first whitespace-separated field and the tag is the last,
which covers both 2-column POS files and multi-column NER files. Lines
beginning with -DOCSTART- are skipped.

Word lookups are lowercased (casing is still visible to the character
encoder); characters and labels keep their surface form.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng, Tensor
from .errors import ConfigError, ContractError, LabelMismatchError, ParseError, SchemeError
from .layers import EmbeddingTable, init_weight

log = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


@dataclass
class RawSentence:
    tokens: list[str]
    tags: list[str]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise ContractError(f"{len(self.tokens)} tokens vs {len(self.tags)} tags")
        if any(t == "" for t in self.tokens):
            raise ContractError("empty token")

    def __len__(self) -> int:
        return len(self.tokens)


class Vocab:
    """String-to-id bijection with reserved PAD (0) and UNK (1) entries."""

    def __init__(self, entries: list[str]):
        self.entries = list(entries)
        self._ids = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for i, e in enumerate(self.entries):
            self._ids[e] = i + 2

    def __len__(self) -> int:
        return len(self.entries) + 2

    def __contains__(self, s: str) -> bool:
        return s in self._ids

    def id(self, s: str) -> int:
        return self._ids.get(s, UNK_ID)


class LabelAlphabet:
    """Strict bijection between label strings and dense ids."""

    def __init__(self, labels: list[str]):
        self.labels = list(labels)
        self._ids = {l: i for i, l in enumerate(self.labels)}
        if len(self._ids) != len(self.labels):
            raise ContractError("duplicate label strings")

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, s: str) -> bool:
        return s in self._ids

    def id(self, s: str) -> int:
        try:
            return self._ids[s]
        except KeyError:
            raise LabelMismatchError(f"label {s!r} not in the model's alphabet {self.labels}") from None

    def name(self, i: int) -> str:
        return self.labels[i]


@dataclass
class EncodedSentence:
    """One sentence mapped to ids: words, per-word characters, optional gold labels."""

    tokens: list[str]
    word_ids: list[int]
    char_ids: list[list[int]]
    label_ids: list[int] | None = None

    def __len__(self) -> int:
        return len(self.word_ids)


def parse_conll(text: str) -> list[RawSentence]:
    """Parse column-format text; blank lines delimit sentences, CRLF tolerated."""
    sentences: list[RawSentence] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush():
        if tokens:
            sentences.append(RawSentence(tokens[:], tags[:]))
            tokens.clear()
            tags.clear()

    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("-DOCSTART-"):
            continue
        fields = line.split()
        if len(fields) < 2:
            raise ParseError(f"expected at least 2 fields, got {len(fields)}: {line!r}", line=lineno)
        tokens.append(fields[0])
        tags.append(fields[-1])
    flush()
    return sentences


def write_conll(sentences: list[RawSentence], sep: str = "\t") -> str:
    blocks = ["\n".join(f"{tok}{sep}{tag}" for tok, tag in zip(s.tokens, s.tags)) for s in sentences]
    return "\n\n".join(blocks) + "\n"


def build_vocabs(train: list[RawSentence], min_count: int = 1) -> tuple[Vocab, Vocab, LabelAlphabet]:
    """Word/char vocabularies and the label alphabet from the training set.

    Ids are assigned by descending frequency, ties broken lexicographically,
    so identical corpora always produce identical alphabets. Words rarer than
    min_count fall back to UNK at encoding time.
    """
    if not train:
        raise ContractError("cannot build vocabularies from an empty corpus")
    word_counts: Counter[str] = Counter()
    char_counts: Counter[str] = Counter()
    label_counts: Counter[str] = Counter()
    for sent in train:
        for tok, tag in zip(sent.tokens, sent.tags):
            word_counts[tok.lower()] += 1
            char_counts.update(tok)
            label_counts[tag] += 1

    def ordered(counts: Counter[str], threshold: int = 1) -> list[str]:
        kept = [(s, c) for s, c in counts.items() if c >= threshold and s not in (PAD_TOKEN, UNK_TOKEN)]
        kept.sort(key=lambda it: (-it[1], it[0]))
        return [s for s, _ in kept]

    words = Vocab(ordered(word_counts, min_count))
    chars = Vocab(ordered(char_counts))
    labels = LabelAlphabet(ordered(label_counts))
    return words, chars, labels


def encode_sentence(
    sent: RawSentence,
    words: Vocab,
    chars: Vocab,
    labels: LabelAlphabet | None,
) -> EncodedSentence:
    label_ids = [labels.id(t) for t in sent.tags] if labels is not None else None
    return EncodedSentence(
        tokens=list(sent.tokens),
        word_ids=[words.id(t.lower()) for t in sent.tokens],
        char_ids=[[chars.id(c) for c in t] for t in sent.tokens],
        label_ids=label_ids,
    )


def encode_tokens(tokens: list[str], words: Vocab, chars: Vocab) -> EncodedSentence:
    return encode_sentence(RawSentence(tokens, ["?"] * len(tokens)), words, chars, None)


def load_pretrained_embeddings(path: str, vocab: Vocab, dim: int, rng: Rng) -> EmbeddingTable:
    """Load a text embedding file (word then dim floats per line) into a table.

    Vocabulary entries found in the file get the stored vector; the rest are
    randomly initialized from the given stream. The UNK row is the average of
    every vector in the file. Duplicate words keep the last occurrence and
    log a warning.
    """
    table = EmbeddingTable(init_weight(rng, len(vocab), dim), unk_id=UNK_ID, pad_id=PAD_ID)
    total = np.zeros(dim)
    n_vectors = 0
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            word, vals = fields[0], fields[1:]
            if len(vals) != dim:
                raise ParseError(f"expected {dim} values for {word!r}, got {len(vals)}", line=lineno)
            try:
                vec = np.array([float(v) for v in vals])
            except ValueError as e:
                raise ParseError(str(e), line=lineno) from None
            total += vec
            n_vectors += 1
            if word in vocab:
                if word in seen:
                    log.warning("duplicate embedding for %r at line %d; keeping the last", word, lineno)
                seen.add(word)
                table.rows.values[vocab.id(word)] = vec
    if n_vectors:
        table.rows.values[UNK_ID] = total / n_vectors
    table.rows.values[PAD_ID] = 0.0
    return table


# ---------------------------------------------------------------------------
# Synthetic long-range corpus
# ---------------------------------------------------------------------------

TRIGGER_TAG = "TRG"
FILLER_TAGS = ("F0", "F1")


@dataclass
class SyntheticSpec:
    """Generator settings for the long-range disambiguation task.

    Every sentence carries exactly one trigger token at a uniformly random
    position. Ambiguous tokens (surface forms amb0, amb1, ...) take the
    first or second tag of their pair depending only on which trigger the
    sentence holds, no matter how far away it is. Filler tokens get a fixed
    tag determined by their surface form, so no local window reveals the
    ambiguous tags.
    """

    vocab_size: int = 20
    label_pairs: list[tuple[str, str]] = field(default_factory=lambda: [("TA", "TB")])
    triggers: tuple[str, str] = ("ta", "tb")
    len_range: tuple[int, int] = (12, 20)
    seed: int = 0
    ambiguous_rate: float = 0.3

    def validate(self) -> None:
        problems = []
        if self.vocab_size < 1:
            problems.append("vocab_size must be >= 1")
        if not self.label_pairs:
            problems.append("need at least one ambiguous label pair")
        if len(self.triggers) != 2:
            problems.append("need exactly two trigger tokens")
        if self.len_range[0] < 2 or self.len_range[1] < self.len_range[0]:
            problems.append(f"bad length range {self.len_range}")
        if not 0.0 < self.ambiguous_rate < 1.0:
            problems.append("ambiguous_rate must be in (0, 1)")
        tags = {t for pair in self.label_pairs for t in pair}
        if len(tags) != 2 * len(self.label_pairs):
            problems.append("pair tags must be distinct")
        if problems:
            raise ConfigError("; ".join(problems))


def generate_synthetic(spec: SyntheticSpec, n_sentences: int) -> list[RawSentence]:
    spec.validate()
    rng = Rng(spec.seed).split("synthetic")
    lo, hi = spec.len_range
    sentences = []
    for _ in range(n_sentences):
        n = lo + rng.next_below(hi - lo + 1)
        trigger_idx = rng.next_below(2)
        trigger_pos = rng.next_below(n)
        tokens, tags = [], []
        for pos in range(n):
            if pos == trigger_pos:
                tokens.append(spec.triggers[trigger_idx])
                tags.append(TRIGGER_TAG)
            elif rng.uniform() < spec.ambiguous_rate:
                a = rng.next_below(len(spec.label_pairs))
                tokens.append(f"amb{a}")
                tags.append(spec.label_pairs[a][trigger_idx])
            else:
                w = rng.next_below(spec.vocab_size)
                tokens.append(f"w{w}")
                tags.append(FILLER_TAGS[w % 2])
        sentences.append(RawSentence(tokens, tags))
    return sentences


# ---------------------------------------------------------------------------
# Span extraction
# ---------------------------------------------------------------------------


def _split_tag(tag: str, scheme: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    if "-" not in tag:
        raise SchemeError(f"tag {tag!r} has no {scheme} prefix")
    prefix, kind = tag.split("-", 1)
    valid = {"BIO": ("B", "I"), "BIOES": ("B", "I", "E", "S")}.get(scheme)
    if valid is None:
        raise SchemeError(f"unknown scheme {scheme!r}")
    if prefix not in valid:
        raise SchemeError(f"prefix {prefix!r} not valid under {scheme}")
    return prefix, kind


def spans_from_labels(tags: list[str], scheme: str = "BIO") -> set[tuple[int, int, str]]:
    """Maximal well-formed (start, end, type) spans, ends inclusive.

    Repair policy (conlleval-compatible, documented and tested):

    * I-X with no open X span starts a new span, as if it were B-X.
    * Under BIOES, E-X with no open X span forms a single-token span, and
      spans left unterminated at a boundary (O, B, S, or the sequence end)
      are still emitted.
    """
    spans: set[tuple[int, int, str]] = set()
    open_type: str | None = None
    open_start = 0

    def close(end: int) -> None:
        nonlocal open_type
        if open_type is not None:
            spans.add((open_start, end, open_type))
            open_type = None

    for i, tag in enumerate(tags):
        prefix, kind = _split_tag(tag, scheme)
        if prefix == "O":
            close(i - 1)
        elif prefix == "B":
            close(i - 1)
            open_type, open_start = kind, i
        elif prefix == "S":
            close(i - 1)
            spans.add((i, i, kind))
        elif prefix == "I":
            if open_type != kind:
                close(i - 1)
                open_type, open_start = kind, i
        elif prefix == "E":
            if open_type == kind:
                close(i)
            else:
                close(i - 1)
                spans.add((i, i, kind))
    close(len(tags) - 1)
    return spans
