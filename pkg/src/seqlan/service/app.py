"""HTTP tagging service: a loaded model served to many clients.

Trained models are immutable, so concurrent read-only inference is safe.
Training stays a batch job in the CLI; the service covers tagging,
attention inspection, evaluation of server-local corpora, and the decoding
benchmark.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..bench import bench_decode
from ..data import encode_sentence, encode_tokens, parse_conll
from ..errors import LabelMismatchError, ModelFormatError, ParseError, SchemeError
from ..model import Model, model_forward, predict_batch
from ..serialize import load_model
from ..training import evaluate_accuracy, evaluate_span_f1
from .schemas import (
    AttentionRecord,
    AttentionRequest,
    AttentionResponse,
    BenchRequest,
    BenchResponse,
    BenchRow,
    EvalRequest,
    EvalResponse,
    HealthResponse,
    LabelProb,
    LoadRequest,
    ModelInfo,
    TagRequest,
    TagResponse,
    TaggedSentence,
)


def _model_info(model: Model) -> ModelInfo:
    cfg = model.config
    return ModelInfo(
        arch=cfg.arch,
        num_layers=cfg.num_layers,
        d_h=cfg.d_h,
        heads=cfg.heads,
        dropout=cfg.dropout,
        labels=list(model.labels.labels),
        parameter_count=model.parameter_count(),
    )


def _check_tokens(sentences: list[list[str]]) -> None:
    for sent in sentences:
        if not sent:
            raise HTTPException(status_code=400, detail="empty sentence")
        for tok in sent:
            if not tok or any(c.isspace() for c in tok):
                raise HTTPException(status_code=400, detail=f"bad token {tok!r}")


def create_app(model_path: str | None = None) -> FastAPI:
    app = FastAPI(title="seqlan", description="sequence labeling service", version="0.1.0")
    app.state.model = load_model(model_path) if model_path else None

    def current_model() -> Model:
        model = app.state.model
        if model is None:
            raise HTTPException(status_code=409, detail="no model loaded; POST /model/load first")
        return model

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse()

    @app.get("/model", response_model=ModelInfo)
    def model_info():
        return _model_info(current_model())

    @app.post("/model/load", response_model=ModelInfo)
    def model_load(req: LoadRequest):
        try:
            app.state.model = load_model(req.path)
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail=f"no such file: {req.path}") from None
        except ModelFormatError as e:
            raise HTTPException(status_code=400, detail=str(e)) from None
        return _model_info(app.state.model)

    @app.post("/tag", response_model=TagResponse)
    def tag(req: TagRequest):
        model = current_model()
        _check_tokens(req.sentences)
        if req.with_probs and model.config.arch == "crf":
            raise HTTPException(
                status_code=400,
                detail="per-token probabilities need the lan or softmax architecture",
            )
        out = []
        encoded = [encode_tokens(toks, model.words, model.chars) for toks in req.sentences]
        predictions = predict_batch(model, encoded)
        for sent, pred in zip(encoded, predictions):
            tagged = TaggedSentence(
                tokens=sent.tokens, tags=[model.labels.name(p) for p in pred]
            )
            if req.with_probs:
                dist, _ = model_forward(model, sent, want_trace=False)
                k = min(req.top_k, len(model.labels))
                tagged.probs = [
                    [
                        LabelProb(label=model.labels.name(j), prob=float(row[j]))
                        for j in sorted(range(len(row)), key=lambda j: (-row[j], j))[:k]
                    ]
                    for row in dist.values
                ]
            out.append(tagged)
        return TagResponse(sentences=out)

    @app.post("/attention", response_model=AttentionResponse)
    def attention(req: AttentionRequest):
        model = current_model()
        if model.config.arch != "lan":
            raise HTTPException(status_code=400, detail="attention needs the lan architecture")
        _check_tokens(req.sentences)
        records = []
        for toks in req.sentences:
            sent = encode_tokens(toks, model.words, model.chars)
            _, trace = model_forward(model, sent, want_trace=True)
            records.append(
                AttentionRecord(
                    tokens=sent.tokens,
                    labels=list(model.labels.labels),
                    layers=[layer.tolist() for layer in trace.layers],
                )
            )
        return AttentionResponse(records=records)

    @app.post("/evaluate", response_model=EvalResponse)
    def evaluate(req: EvalRequest):
        model = current_model()
        try:
            with open(req.path, "r", encoding="utf-8") as f:
                sents = parse_conll(f.read())
            encoded = [encode_sentence(s, model.words, model.chars, model.labels) for s in sents]
            if req.metric == "acc":
                return EvalResponse(metric="acc", value=evaluate_accuracy(model, encoded))
            p, r, f1 = evaluate_span_f1(model, encoded, req.scheme)
            return EvalResponse(metric="span-f1", value=f1, precision=p, recall=r)
        except FileNotFoundError:
            raise HTTPException(status_code=404, detail=f"no such file: {req.path}") from None
        except (ParseError, LabelMismatchError, SchemeError) as e:
            raise HTTPException(status_code=400, detail=str(e)) from None

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest):
        rows = []
        for arch in req.archs:
            for r in bench_decode(arch, req.sizes, req.length, req.reps, req.hidden, req.seed):
                rows.append(
                    BenchRow(
                        arch=r.arch,
                        n_labels=r.n_labels,
                        length=r.length,
                        reps=r.reps,
                        median_seconds=r.median_seconds,
                        op_count=r.op_count,
                    )
                )
        return BenchResponse(rows=rows)

    return app
