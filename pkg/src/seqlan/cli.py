"""Command-line entry points.

Subcommands: train, eval, tag, bench, synth, serve. Every command is a thin
wrapper over the library; settings resolve as defaults < config file < flags,
where a config file holds one key=value pair per line with # comments and
must not contain unknown keys.

Exit codes: 0 success, 1 runtime failure (bad data, missing files, diverged
training), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys

from .autodiff import Rng
from .bench import BENCH_ARCHS, DEFAULT_SIZES, bench_decode, format_report
from .data import (
    SyntheticSpec,
    build_vocabs,
    encode_sentence,
    encode_tokens,
    generate_synthetic,
    load_pretrained_embeddings,
    parse_conll,
    write_conll,
)
from .errors import ConfigError, SeqlanError
from .model import ModelConfig, build_model, model_forward, model_predict
from .serialize import export_attention, export_label_embeddings, load_model, save_model
from .training import OptimizerState, evaluate_accuracy, evaluate_span_f1, train

_FMT = lambda v: format(v, ".17g")  # noqa: E731


def load_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def resolve_settings(args, spec: dict[str, tuple]) -> dict:
    """Merge defaults, config-file values, and flags; flags win.

    spec maps each key to (type, default). Unknown config keys are rejected.
    """
    settings = {key: default for key, (_, default) in spec.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        for key, raw in load_config_file(config_path).items():
            if key not in spec:
                raise ConfigError(f"unknown config key {key!r}")
            kind = spec[key][0]
            try:
                settings[key] = kind(raw) if kind is not bool else raw.lower() in ("1", "true", "yes")
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None
    for key in spec:
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            settings[key] = flag_value
    return settings


_TRAIN_SPEC = {
    "arch": (str, "lan"),
    "train": (str, None),
    "dev": (str, None),
    "model": (str, None),
    "report": (str, None),
    "embeddings": (str, None),
    "seed": (int, 42),
    "layers": (int, 3),
    "hidden": (int, 400),
    "heads": (int, 5),
    "dropout": (float, 0.5),
    "lr": (float, 0.01),
    "decay": (float, 0.035),
    "clip": (float, 5.0),
    "batch": (int, 10),
    "epochs": (int, 30),
    "metric": (str, "acc"),
    "scheme": (str, "BIO"),
    "word-emb": (int, 100),
    "char-emb": (int, 30),
    "char-hidden": (int, 50),
    "min-count": (int, 1),
}


def _read_corpus(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return parse_conll(f.read())


def cmd_train(args) -> int:
    s = resolve_settings(args, _TRAIN_SPEC)
    for required in ("train", "dev", "model"):
        if not s[required]:
            raise ConfigError(f"--{required} is required")
    train_sents = _read_corpus(s["train"])
    dev_sents = _read_corpus(s["dev"])
    vocabs = build_vocabs(train_sents, s["min-count"])
    rng = Rng(s["seed"])
    word_table = None
    if s["embeddings"]:
        word_table = load_pretrained_embeddings(
            s["embeddings"], vocabs[0], s["word-emb"], rng.split("pretrained")
        )
    config = ModelConfig(
        arch=s["arch"],
        num_layers=s["layers"],
        d_h=s["hidden"],
        word_emb_dim=s["word-emb"],
        char_emb_dim=s["char-emb"],
        char_hidden=s["char-hidden"],
        heads=s["heads"],
        dropout=s["dropout"],
        seed=s["seed"],
    )
    model = build_model(config, vocabs, rng, word_table)
    encoded_train = [encode_sentence(x, *vocabs) for x in train_sents]
    encoded_dev = [encode_sentence(x, *vocabs) for x in dev_sents]
    optimizer = OptimizerState(lr0=s["lr"], clip=s["clip"], decay=s["decay"])
    report, best = train(
        model,
        encoded_train,
        encoded_dev,
        optimizer,
        epochs=s["epochs"],
        batch_size=s["batch"],
        rng=rng,
        metric=s["metric"],
        scheme=s["scheme"],
        log_fn=lambda row: print(row.tsv()),
    )
    save_model(best, s["model"])
    if s["report"]:
        with open(s["report"], "w", encoding="utf-8", newline="\n") as f:
            f.write(report.tsv() + ("\n" if report.rows else ""))
    print(f"best\t{report.best_epoch}\t{_FMT(report.best_metric) if report.rows else 'n/a'}")
    return 0


_EVAL_SPEC = {
    "model": (str, None),
    "test": (str, None),
    "metric": (str, "acc"),
    "scheme": (str, "BIO"),
}


def cmd_eval(args) -> int:
    s = resolve_settings(args, _EVAL_SPEC)
    for required in ("model", "test"):
        if not s[required]:
            raise ConfigError(f"--{required} is required")
    model = load_model(s["model"])
    sents = _read_corpus(s["test"])
    encoded = [encode_sentence(x, model.words, model.chars, model.labels) for x in sents]
    if s["metric"] == "acc":
        print(f"accuracy\t{_FMT(evaluate_accuracy(model, encoded))}")
    elif s["metric"] == "span-f1":
        p, r, f1 = evaluate_span_f1(model, encoded, s["scheme"])
        print(f"precision\t{_FMT(p)}")
        print(f"recall\t{_FMT(r)}")
        print(f"f1\t{_FMT(f1)}")
    else:
        raise ConfigError(f"unknown metric {s['metric']!r} (choose acc or span-f1)")
    return 0


_TAG_SPEC = {
    "model": (str, None),
    "input": (str, None),
    "output": (str, None),
    "top-k": (int, 5),
}


def cmd_tag(args) -> int:
    s = resolve_settings(args, _TAG_SPEC)
    if not s["model"]:
        raise ConfigError("--model is required")
    model = load_model(s["model"])
    with_probs = bool(getattr(args, "with_probs", False))
    if with_probs and model.config.arch == "crf":
        raise ConfigError("--with-probs needs per-token distributions (lan or softmax architecture)")
    if args.export_labels:
        export_label_embeddings(model, args.export_labels)
    if s["input"]:
        with open(s["input"], "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    else:
        lines = sys.stdin.read().splitlines()

    sentences = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            print(f"warning: skipping empty line {lineno}", file=sys.stderr)
            continue
        sentences.append(encode_tokens(tokens, model.words, model.chars))

    out = open(s["output"], "w", encoding="utf-8", newline="\n") if s["output"] else sys.stdout
    try:
        for sent in sentences:
            if with_probs:
                dist, _ = model_forward(model, sent, want_trace=False)
                values = dist.values
                k = min(s["top-k"], len(model.labels))
                for i, token in enumerate(sent.tokens):
                    row = values[i]
                    top = sorted(range(len(row)), key=lambda j: (-row[j], j))[:k]
                    tag = model.labels.name(top[0])
                    probs = "\t".join(f"{model.labels.name(j)}:{_FMT(row[j])}" for j in top)
                    out.write(f"{token}\t{tag}\t{probs}\n")
            else:
                pred = model_predict(model, sent)
                for token, p in zip(sent.tokens, pred):
                    out.write(f"{token}\t{model.labels.name(p)}\n")
            out.write("\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.export_attention:
        export_attention(model, sentences, args.export_attention)
    return 0


_BENCH_SPEC = {
    "arch": (str, "crf,lan"),
    "sizes": (str, ",".join(str(v) for v in DEFAULT_SIZES)),
    "length": (int, 30),
    "reps": (int, 25),
    "hidden": (int, 100),
    "seed": (int, 0),
    "output": (str, None),
}


def cmd_bench(args) -> int:
    s = resolve_settings(args, _BENCH_SPEC)
    archs = [a.strip() for a in s["arch"].split(",") if a.strip()]
    for a in archs:
        if a not in BENCH_ARCHS:
            raise ConfigError(f"bench arch must be in {BENCH_ARCHS}, got {a!r}")
    try:
        sizes = [int(v) for v in str(s["sizes"]).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --sizes {s['sizes']!r}") from None
    results = []
    for arch in archs:
        results.extend(
            bench_decode(arch, sizes, length=s["length"], reps=s["reps"], d_h=s["hidden"], seed=s["seed"])
        )
    report = format_report(results)
    if s["output"]:
        with open(s["output"], "w", encoding="utf-8", newline="\n") as f:
            f.write(report)
    else:
        print(report, end="")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        vocab_size=args.vocab,
        len_range=(args.min_len, args.max_len),
        seed=args.seed,
        ambiguous_rate=args.ambiguous_rate,
    )
    sentences = generate_synthetic(spec, args.sentences)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write(write_conll(sentences))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(args.model), host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqlan", description="Sequence labeling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tagger and save the best-dev model")
    p.add_argument("--config", help="key=value settings file (flags win)")
    p.add_argument("--arch", choices=("softmax", "crf", "lan"))
    p.add_argument("--train", help="training corpus (column format)")
    p.add_argument("--dev", help="development corpus")
    p.add_argument("--model", help="output model path")
    p.add_argument("--report", help="write per-epoch TSV log here")
    p.add_argument("--embeddings", help="pretrained word embedding text file")
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--metric", choices=("acc", "span-f1"))
    p.add_argument("--scheme", choices=("BIO", "BIOES"))
    p.add_argument("--word-emb", type=int, dest="word_emb")
    p.add_argument("--char-emb", type=int, dest="char_emb")
    p.add_argument("--char-hidden", type=int, dest="char_hidden")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on a labeled corpus")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--test")
    p.add_argument("--metric", choices=("acc", "span-f1"))
    p.add_argument("--scheme", choices=("BIO", "BIOES"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tag", help="tag raw sentences (one per line, whitespace tokens)")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--input", help="default: stdin")
    p.add_argument("--output", help="default: stdout")
    p.add_argument("--with-probs", action="store_true", dest="with_probs")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--export-attention", dest="export_attention", metavar="PATH")
    p.add_argument("--export-labels", dest="export_labels", metavar="PATH")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("bench", help="decoding-complexity benchmark")
    p.add_argument("--config")
    p.add_argument("--arch", help="comma list from: crf,lan")
    p.add_argument("--sizes", help="comma list of label-set sizes")
    p.add_argument("--length", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate the synthetic long-range corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sentences", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--min-len", type=int, default=12, dest="min_len")
    p.add_argument("--max-len", type=int, default=20, dest="max_len")
    p.add_argument("--ambiguous-rate", type=float, default=0.3, dest="ambiguous_rate")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="run the HTTP tagging service")
    p.add_argument("--model", help="model to preload")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SeqlanError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
