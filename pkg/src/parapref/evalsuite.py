"""Evaluation metrics: STS correlation, embedding-space geometry, alignment.

All metrics are pure functions of their inputs and deterministic.  Geometry
conventions:

* uniformity: rows are L2-normalized first, then log of the mean over all
  unordered distinct pairs i<j of exp(-2 * squared distance).  Lower means
  more spread out.  (Deterministic pair enumeration, not i.i.d. resampling.)
* isotropy score: partition function Z(c) = sum_i exp(c . v_i) evaluated over
  both signs of every eigenvector of V^T V; returns min Z / max Z in (0, 1].
  Rows are used raw.
* global alignment rate (GAR): dataset-level coverage of surface token types
  by each sentence's top-K unembedded tokens.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .core import PromptTemplate, Sentence
from .embedder import EmbeddingMatrix, embed
from .errors import DataFormatError, NumericError

# ------------------------------------------------------------------ spearman


def _average_ranks(v):
    """1-based ranks; ties receive the mean of their rank span."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.shape[0])
    i = 0
    sv = v[order]
    n = v.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation: Pearson correlation of average ranks, in [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 2:
        raise ValueError("spearman needs two equal-length vectors with >= 2 entries")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise NumericError("correlation undefined for a constant vector")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.clip((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)), -1.0, 1.0))


# ----------------------------------------------------------------- sts pairs


@dataclass(frozen=True)
class StsPairSet:
    """Scored sentence pairs: (sentence1, sentence2, gold) on the native scale."""

    records: tuple

    def __post_init__(self):
        if len(self.records) < 2:
            raise ValueError("an STS set needs at least 2 records")
        for i, (s1, s2, gold) in enumerate(self.records):
            if not (isinstance(s1, str) and isinstance(s2, str)):
                raise ValueError(f"record {i}: sentences must be strings")
            if not np.isfinite(gold):
                raise ValueError(f"record {i}: gold score must be finite")

    def __len__(self) -> int:
        return len(self.records)


def load_sts_tsv(path) -> StsPairSet:
    """Tab-separated records: sentence1 <TAB> sentence2 <TAB> gold."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            try:
                gold = float(parts[2])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad gold score {parts[2]!r}") from None
            records.append((parts[0], parts[1], gold))
    return StsPairSet(tuple(records))


def eval_sts(model, template: PromptTemplate, pairs: StsPairSet,
             pooling: str = "last_token") -> float:
    """Embed both sides, correlate cosines with gold, scale by 100."""
    from .embedder import cosine_similarity

    cosines = []
    gold = []
    for s1, s2, g in pairs.records:
        e1 = embed(model, template, Sentence(s1), pooling=pooling)
        e2 = embed(model, template, Sentence(s2), pooling=pooling)
        cosines.append(cosine_similarity(e1, e2))
        gold.append(g)
    return spearman(cosines, gold) * 100.0


# ------------------------------------------------------------------ geometry


def _rows64(matrix: EmbeddingMatrix) -> np.ndarray:
    return np.asarray(matrix.rows, dtype=np.float64)


def uniformity(matrix: EmbeddingMatrix) -> float:
    """log mean over pairs i<j of exp(-2 ||r_i - r_j||^2) on unit-normalized rows."""
    rows = _rows64(matrix)
    if rows.shape[0] < 2:
        raise ValueError("uniformity needs at least 2 rows")
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0):
        raise NumericError("uniformity undefined: zero-norm row")
    unit = rows / norms[:, None]
    gram = unit @ unit.T
    sq = np.clip(2.0 - 2.0 * gram, 0.0, None)
    iu = np.triu_indices(rows.shape[0], k=1)
    vals = -2.0 * sq[iu]
    m = float(vals.max())
    return m + float(np.log(np.exp(vals - m).sum())) - float(np.log(vals.size))


def _log_partition(rows, direction) -> float:
    proj = rows @ direction
    m = float(proj.max())
    return m + float(np.log(np.exp(proj - m).sum()))


def isotropy_score(matrix: EmbeddingMatrix) -> float:
    """min/max of the partition function over +-eigenvector directions of V^T V."""
    return embedding_space_report(matrix)["isotropy"]


def embedding_space_report(matrix: EmbeddingMatrix) -> dict:
    """Isotropy score plus diagnostics (uniformity, eigenvalue degeneracy)."""
    rows = _rows64(matrix)
    n, d = rows.shape
    if n < 2 or d < 2:
        raise ValueError("isotropy needs n >= 2 rows and d >= 2 dimensions")
    if not np.any(rows):
        raise ValueError("isotropy undefined for an all-zero matrix (rank 0)")
    eigvals, vecs = np.linalg.eigh(rows.T @ rows)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    vecs = vecs[:, order]
    log_zs = []
    for j in range(d):
        for sign in (1.0, -1.0):
            log_zs.append(_log_partition(rows, sign * vecs[:, j]))
    score = float(np.exp(min(log_zs) - max(log_zs)))
    # numerically equal eigenvalue clusters make the eigenbasis solver-chosen
    scale = max(abs(eigvals[0]), 1e-30)
    degenerate = bool(np.any(np.abs(np.diff(eigvals)) <= 1e-9 * scale))
    return {
        "isotropy": score,
        "uniformity": uniformity(matrix),
        "eigenvalues": eigvals,
        "degenerate_spectrum": degenerate,
    }


# ----------------------------------------------------------------- alignment


@dataclass(frozen=True)
class GarInput:
    """One sentence's surface token set and its top-k aligned token set."""

    surface: frozenset
    aligned: frozenset
    k: int

    def __post_init__(self):
        if len(self.aligned) > self.k:
            raise ValueError(f"aligned set of {len(self.aligned)} exceeds k={self.k}")


def gar(inputs) -> float:
    """|union of (aligned & surface)| / |union of surface| over the dataset."""
    inputs = list(inputs)
    hit: set = set()
    surface: set = set()
    for item in inputs:
        hit.update(item.aligned & item.surface)
        surface.update(item.surface)
    if not surface:
        raise ValueError("all surface token sets are empty")
    return len(hit) / len(surface)


def aligned_token_report(model, template: PromptTemplate, sentences, k: int = 10,
                         normalizer=None) -> dict:
    """Per-sentence top-k aligned tokens and the dataset-level coverage rate.

    Aligned tokens are the highest-logit vocabulary entries when the sentence
    embedding is pushed through the unembedding matrix.  ``normalizer`` (an
    optional str -> str hook, e.g. a stemmer) is applied to both surface and
    aligned tokens before matching; the default matches exact token strings.
    """
    if k > model.vocab_size:
        raise ValueError(f"k={k} exceeds vocabulary size {model.vocab_size}")
    norm = normalizer if normalizer is not None else (lambda t: t)
    tok = model.tokenizer
    entries = []
    gar_inputs = []
    for s in sentences:
        text = s.text if isinstance(s, Sentence) else s
        surface = frozenset(norm(tok.token(i)) for i in tok.encode(text))
        vec = embed(model, template, Sentence(text)).vector
        top = model.unembed_topk(vec, k)
        aligned = frozenset(norm(t) for t, _ in top)
        hits = sorted(aligned & surface)
        entries.append({"sentence": text, "top_tokens": top, "hits": hits})
        gar_inputs.append(GarInput(surface=surface, aligned=aligned, k=k))
    return {"sentences": entries, "gar": gar(gar_inputs), "k": k}


# ---------------------------------------------------------------- projection


def pca_2d(matrix: EmbeddingMatrix) -> np.ndarray:
    """Mean-centered projection onto the top-2 principal components.

    Components are ordered by descending variance; each component's sign is
    fixed by making its largest-magnitude loading positive.  Rank-deficient
    input degrades to a zero second coordinate with a warning.
    """
    rows = _rows64(matrix)
    n, d = rows.shape
    if n < 3 or d < 2:
        raise ValueError("2-D projection needs n >= 3 rows and d >= 2 dimensions")
    centered = rows - rows.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    rank2_ok = svals.shape[0] > 1 and svals[1] > 1e-12 * max(svals[0], 1e-30)
    if not rank2_ok:
        warnings.warn("input has rank < 2; second projection coordinate is zero")
        components[1] = 0.0
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return centered @ components.T


# ------------------------------------------------------------- metric records


def append_metric_record(path, metric: str, dataset: str, value: float) -> None:
    """One JSON line per measurement: {metric, dataset, value}."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"metric": metric, "dataset": dataset, "value": float(value)}) + "\n")


def load_metric_records(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append(
                    {"metric": rec["metric"], "dataset": rec["dataset"], "value": float(rec["value"])}
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad metric record: {exc}") from None
    return records
