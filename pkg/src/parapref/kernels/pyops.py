"""Pure-numpy kernels for the tiny transformer's hot loops.

This module is the reference implementation; ``_fastops`` (the compiled twin)
must match it within floating-point reordering noise.  All kernels take and
return float64 C-contiguous arrays.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def layernorm_fwd(x, gamma, beta, eps=1e-5):
    """Row-wise layer norm.  Returns (y, xhat, rstd) with caches for backward."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layernorm_bwd(dy, xhat, rstd, gamma):
    """Backward of :func:`layernorm_fwd`.  Returns (dx, dgamma, dbeta)."""
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def gelu_fwd(x):
    """GELU activation (tanh approximation)."""
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_bwd(x, dy):
    """Backward of :func:`gelu_fwd` given the forward input."""
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def causal_softmax_fwd(scores):
    """Softmax over each row restricted to columns <= row index.

    ``scores`` has shape (H, T, T); entries above the diagonal are ignored and
    come back as exact zeros in the returned probabilities.
    """
    H, T, _ = scores.shape
    mask = np.triu(np.ones((T, T), dtype=bool), k=1)
    masked = np.where(mask, -np.inf, scores)
    m = masked.max(axis=2, keepdims=True)
    e = np.exp(masked - m)
    e[:, mask] = 0.0
    return e / e.sum(axis=2, keepdims=True)


def causal_softmax_bwd(probs, dprobs):
    """Backward of the causal softmax: ds = p * (dp - sum(dp * p))."""
    inner = (dprobs * probs).sum(axis=2, keepdims=True)
    return probs * (dprobs - inner)


def token_logprobs_fwd(logits, targets):
    """Per-row log P(target) under a softmax over the last axis.

    Returns (logp, lse): logp[t] = logits[t, targets[t]] - lse[t] with
    lse computed by the max-subtraction trick.
    """
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    rows = np.arange(logits.shape[0])
    return logits[rows, targets] - lse, lse


def token_logprobs_bwd(logits, targets, lse, dlogp):
    """Backward of :func:`token_logprobs_fwd` w.r.t. the logits."""
    p = np.exp(logits - lse[:, None])
    dlogits = -p * dlogp[:, None]
    rows = np.arange(logits.shape[0])
    dlogits[rows, targets] += dlogp
    return dlogits
