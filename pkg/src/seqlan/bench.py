"""Decoding-complexity benchmark.

Viterbi evaluates every (previous label, current label) transition at each
interior position plus one START and one STOP candidate per label, which is
|L|^2 (n-1) + 2|L| score evaluations per sentence. The label-attention
output layer scores every token against every label once: |L| n. The
benchmark verifies these counts exactly with instrumented decoders and
reports wall-clock medians alongside them.

Both decoders are timed from the same starting point, a precomputed n x d
matrix of encoder states, so the measured gap is the inference layer's own
cost and not the shared BiLSTM encoding.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .autodiff import Rng, Tensor
from .heads import (
    CrfHead,
    LabelEmbeddingTable,
    OpCounter,
    crf_viterbi_decode,
    label_attention_naive,
    lan_output_decode,
)

DEFAULT_SIZES = (10, 50, 100, 400)
BENCH_ARCHS = ("crf", "lan")


def viterbi_transition_count(n_labels: int, length: int) -> int:
    return n_labels * n_labels * (length - 1) + 2 * n_labels


def attention_score_count(n_labels: int, length: int) -> int:
    return n_labels * length


@dataclass
class BenchResult:
    arch: str
    n_labels: int
    length: int
    reps: int
    median_seconds: float
    op_count: int  # per-sentence decode operations, from the instrumented run

    def tsv(self) -> str:
        return (
            f"{self.arch}\t{self.n_labels}\t{self.length}\t{self.reps}"
            f"\t{format(self.median_seconds, '.9f')}\t{self.op_count}"
        )


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[mid]
    return 0.5 * (ordered[mid - 1] + ordered[mid])


def bench_decode(
    arch: str,
    sizes=DEFAULT_SIZES,
    length: int = 30,
    reps: int = 25,
    d_h: int = 100,
    seed: int = 0,
) -> list[BenchResult]:
    """Time one decode per rep on randomly parameterized heads of each size."""
    if arch not in BENCH_ARCHS:
        raise ValueError(f"arch must be one of {BENCH_ARCHS}, got {arch!r}")
    results = []
    for n_labels in sizes:
        rng = Rng(seed).split(f"bench.{arch}.{n_labels}")
        states = [Tensor(rng.uniform_array((length, d_h), -1, 1)) for _ in range(reps)]
        counter = OpCounter()
        if arch == "crf":
            head = CrfHead.create(rng, n_labels, d_h)
            head.transitions.values[:n_labels, :n_labels] = rng.uniform_array(
                (n_labels, n_labels), -1, 1
            )

            def decode(h, c=None):
                crf_viterbi_decode(head, h, c)

        else:
            table = LabelEmbeddingTable.create(rng, n_labels, d_h)

            def decode(h, c=None):
                alpha, _ = label_attention_naive(h, table, c, mix=False)
                lan_output_decode(alpha)

        decode(states[0], counter)  # instrumented run, untimed
        times = []
        for h in states:
            t0 = time.perf_counter()
            decode(h)
            times.append(time.perf_counter() - t0)
        count = counter.viterbi_transitions if arch == "crf" else counter.attention_scores
        results.append(BenchResult(arch, n_labels, length, reps, _median(times), count))
    return results


def format_report(results: list[BenchResult]) -> str:
    header = "arch\tlabels\tlength\treps\tmedian_seconds\top_count"
    return "\n".join([header, *(r.tsv() for r in results)]) + "\n"
