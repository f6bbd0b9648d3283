"""Sentence embedding extraction and persistence.

An embedding is the final-layer last-token hidden state of the model run on a
filled extraction template.  Embeddings are stored raw (not length-normalized):
hypersphere metrics normalize internally, while partition-function metrics
need the unnormalized vectors, so one stored representation serves both.

File format (little-endian): magic ``PPEMB1\\n``, a JSON header line with
(n, d, model_tag, template_tag), then n rows of d float32 values.  Matrices
hold float32 rows, so save -> load round trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .backend import CausalScorer
from .core import EXTRACTION, PromptTemplate, Sentence, fill_template
from .errors import ConfigError, DataFormatError
from .objectives import cosine

MAGIC = b"PPEMB1\n"


@dataclass(frozen=True)
class SentenceEmbedding:
    """One embedding vector plus provenance tags."""

    vector: np.ndarray
    model_tag: str = ""
    template_tag: str = ""

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding has non-finite components")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-aligned stack of embeddings (float32 storage)."""

    rows: np.ndarray
    model_tag: str = ""
    template_tag: str = ""

    def __post_init__(self):
        rows = np.ascontiguousarray(np.asarray(self.rows), dtype=np.float32)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("embedding matrix needs at least one row")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def embed(model: CausalScorer, template: PromptTemplate, sentence: Sentence,
          pooling: str = "last_token") -> SentenceEmbedding:
    """Run the filled extraction template through the model and read out the
    hidden state.  ``pooling`` is ``last_token`` (default) or ``mean`` (the
    mean-pooling comparison baseline averaging all final-layer states)."""
    if template.kind != EXTRACTION:
        raise ConfigError(
            f"embedding extraction needs an embedding_extraction template, got {template.kind!r}"
        )
    text = fill_template(template, sentence)
    if pooling == "last_token":
        vec = model.last_token_hidden(text)
    elif pooling == "mean":
        vec = model.mean_pooled_hidden(text)
    else:
        raise ConfigError(f"unknown pooling {pooling!r}; use last_token or mean")
    return SentenceEmbedding(
        vector=vec,
        model_tag=getattr(model, "tag", model.__class__.__name__),
        template_tag=template.name or "custom",
    )


def embed_corpus(model: CausalScorer, template: PromptTemplate, sentences,
                 pooling: str = "last_token") -> EmbeddingMatrix:
    """Row i of the result is ``embed(model, template, sentences[i])``."""
    sentences = list(sentences)
    if not sentences:
        raise ValueError("no sentences to embed")
    vecs = []
    tags = ("", "")
    for i, s in enumerate(sentences):
        try:
            if isinstance(s, str):
                s = Sentence(s)
            e = embed(model, template, s, pooling=pooling)
        except Exception as exc:
            raise type(exc)(f"sentence {i}: {exc}") from exc
        vecs.append(e.vector)
        tags = (e.model_tag, e.template_tag)
    return EmbeddingMatrix(rows=np.stack(vecs), model_tag=tags[0], template_tag=tags[1])


def cosine_similarity(a, b) -> float:
    """Cosine similarity in [-1, 1]; accepts embeddings or plain vectors."""
    va = a.vector if isinstance(a, SentenceEmbedding) else a
    vb = b.vector if isinstance(b, SentenceEmbedding) else b
    return cosine(va, vb)


def save_embeddings(matrix: EmbeddingMatrix, path) -> None:
    header = {
        "n": matrix.n,
        "d": matrix.dim,
        "model_tag": matrix.model_tag,
        "template_tag": matrix.template_tag,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(matrix.rows.astype("<f4", copy=False).tobytes(order="C"))


def load_embeddings(path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataFormatError(f"{path}: not an embedding file (bad magic {magic!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        n, d = header["n"], header["d"]
        data = fh.read(4 * n * d)
        if len(data) != 4 * n * d:
            raise DataFormatError(f"{path}: truncated embedding payload")
        rows = np.frombuffer(data, dtype="<f4").reshape(n, d)
    return EmbeddingMatrix(rows=rows, model_tag=header.get("model_tag", ""),
                           template_tag=header.get("template_tag", ""))
