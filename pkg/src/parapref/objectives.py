"""Loss and probability functions for preference and contrastive training.

Everything here is a pure function of its numeric inputs.  The pairwise
preference loss (DPO) is provided in two algebraically equivalent forms, and
ranking probabilities come with a factorial enumeration oracle so the fast
paths can be cross-checked.  All softmax-style expressions are computed in log
space with max subtraction; reward differences of several hundred stay finite.

Score conventions: a "candidate score" is any real number; for preference
pairs it is the reference-anchored reward beta * (log pi_policy - log pi_ref),
for contrastive tuples it is cosine similarity over a temperature.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import NumericError


def _sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _logsumexp(x):
    x = np.asarray(x, dtype=np.float64)
    m = float(np.max(x))
    return m + float(np.log(np.sum(np.exp(x - m))))


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity undefined for a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# --------------------------------------------------------------- preference


@dataclass(frozen=True)
class DpoBatchLogps:
    """Sequence log-probabilities for a batch of preference pairs.

    Four equal-length vectors (policy/reference x chosen/rejected) and the
    reward scale beta.  beta == 0 is permitted only as a diagnostic (all
    rewards collapse to zero and the loss pins at ln 2).
    """

    policy_chosen: np.ndarray
    policy_rejected: np.ndarray
    ref_chosen: np.ndarray
    ref_rejected: np.ndarray
    beta: float

    def __post_init__(self):
        vecs = [np.asarray(v, dtype=np.float64) for v in (
            self.policy_chosen, self.policy_rejected, self.ref_chosen, self.ref_rejected)]
        n = vecs[0].shape[0] if vecs[0].ndim == 1 else -1
        if n < 1 or any(v.ndim != 1 or v.shape[0] != n for v in vecs):
            raise ValueError("the four log-probability vectors must share one length >= 1")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        for label, v in zip(("policy_chosen", "policy_rejected", "ref_chosen", "ref_rejected"), vecs):
            bad = np.flatnonzero(~np.isfinite(v))
            if bad.size:
                raise NumericError(f"non-finite {label} log-probability at pair index {bad[0]}")
        object.__setattr__(self, "policy_chosen", vecs[0])
        object.__setattr__(self, "policy_rejected", vecs[1])
        object.__setattr__(self, "ref_chosen", vecs[2])
        object.__setattr__(self, "ref_rejected", vecs[3])

    def rewards(self):
        """Per-pair rewards (r_w, r_l): beta-scaled policy/reference log ratios."""
        r_w = self.beta * (self.policy_chosen - self.ref_chosen)
        r_l = self.beta * (self.policy_rejected - self.ref_rejected)
        return r_w, r_l


def dpo_loss(batch: DpoBatchLogps):
    """Mean -log sigmoid(r_w - r_l) over the batch; also returns the margins.

    Computed as softplus(-margin), which is exact for margins out to +-500.
    """
    r_w, r_l = batch.rewards()
    margins = r_w - r_l
    loss = float(np.mean(np.logaddexp(0.0, -margins)))
    return loss, margins


def dpo_loss_softmax_form(batch: DpoBatchLogps) -> float:
    """Same loss written as -log of a two-candidate softmax on (r_w, r_l).

    log denominator = m + log1p(exp(other - m)) with m the larger reward, so
    sub-ulp losses survive instead of rounding away inside log(1 + tiny).
    """
    r_w, r_l = batch.rewards()
    m = np.maximum(r_w, r_l)
    other = np.minimum(r_w, r_l)
    per_pair = (m - r_w) + np.log1p(np.exp(other - m))
    return float(np.mean(per_pair))


def dpo_loss_grads(batch: DpoBatchLogps) -> dict[str, np.ndarray]:
    """Analytic gradients of :func:`dpo_loss` w.r.t. each log-prob vector."""
    _, margins = dpo_loss(batch)
    n = margins.shape[0]
    coeff = batch.beta * _sigmoid(-margins) / n
    return {
        "policy_chosen": -coeff,
        "policy_rejected": coeff,
        "ref_chosen": coeff,
        "ref_rejected": -coeff,
    }


# ------------------------------------------------------------------- ranking


def _check_scores(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] < 1:
        raise ValueError("scores must be a non-empty 1-D vector")
    if not np.all(np.isfinite(scores)):
        raise NumericError("candidate scores must be finite")
    return scores


def pl_ranking_prob(scores, ranking) -> float:
    """Probability of a complete ranking under sequential softmax selection.

    ``ranking`` lists candidate indices best-first and must be a permutation
    of 0..N-1.  Computed in log space, then exponentiated; always in (0, 1].
    """
    scores = _check_scores(scores)
    n = scores.shape[0]
    perm = np.asarray(ranking, dtype=np.int64)
    if perm.shape != (n,) or sorted(perm.tolist()) != list(range(n)):
        raise ValueError(f"ranking {ranking!r} is not a permutation of 0..{n - 1}")
    ordered = scores[perm]
    logp = 0.0
    for k in range(n):
        logp += ordered[k] - _logsumexp(ordered[k:])
    return float(np.exp(logp))


def pl_best_prob(scores, best_index: int) -> float:
    """Probability that one candidate ranks first: a stable softmax entry."""
    scores = _check_scores(scores)
    if not 0 <= best_index < scores.shape[0]:
        raise ValueError(f"best_index {best_index} out of range 0..{scores.shape[0] - 1}")
    return float(np.exp(scores[best_index] - _logsumexp(scores)))


def pl_enumeration_oracle(scores) -> dict[tuple, float]:
    """Brute-force distribution over all N! rankings (N <= 8).

    Slow by construction; exists to cross-check the closed forms.
    """
    scores = _check_scores(scores)
    n = scores.shape[0]
    if n > 8:
        raise ValueError(f"enumeration over {n}! rankings refused; N must be <= 8")
    return {
        perm: pl_ranking_prob(scores, perm)
        for perm in itertools.permutations(range(n))
    }


# --------------------------------------------------------------- contrastive


def infonce_scores(anchor, positive, negatives, temperature=1.0) -> np.ndarray:
    """Temperature-scaled cosine scores: positive first, then the negatives."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    negatives = list(negatives)
    if not negatives:
        raise ValueError("need at least one negative")
    sims = [cosine(anchor, positive)] + [cosine(anchor, neg) for neg in negatives]
    return np.asarray(sims, dtype=np.float64) / temperature


def infonce_loss_from_scores(scores) -> float:
    """-log softmax weight of score 0 (the positive candidate)."""
    scores = _check_scores(scores)
    return float(_logsumexp(scores) - scores[0])


def infonce_scores_grad(scores) -> np.ndarray:
    """Gradient of :func:`infonce_loss_from_scores` w.r.t. the score vector."""
    scores = _check_scores(scores)
    g = np.exp(scores - _logsumexp(scores))
    g[0] -= 1.0
    return g


def infonce_loss(anchor, positive, negatives, temperature=1.0) -> float:
    """Contrastive loss: the positive's similarity against the negatives'.

    Identical to -log pl_best_prob over the same score set; the default
    temperature of 1.0 leaves raw cosine scores untouched.
    """
    return infonce_loss_from_scores(infonce_scores(anchor, positive, negatives, temperature))
