"""Kernel correctness: numpy reference vs compiled twin, and gradient checks.

The backward kernels are verified against central finite differences of their
own forward; backend parity is checked wherever the compiled extension is
importable.
"""

import numpy as np
import pytest

from parapref.kernels import backend_name, pyops

try:
    # import the extension module itself, regardless of which backend the
    # package selected at import time
    import parapref.kernels._fastops as _fastops

    HAVE_C = True
except ImportError:
    _fastops = None
    HAVE_C = False

RNG = np.random.default_rng(0)

needs_c = pytest.mark.skipif(not HAVE_C, reason="compiled kernels not built")


def central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


# ---------------------------------------------------------------- layernorm


def test_layernorm_forward_normalizes():
    x = RNG.normal(size=(5, 16))
    gamma = np.ones(16)
    beta = np.zeros(16)
    y, xhat, rstd = pyops.layernorm_fwd(x, gamma, beta)
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=1), 1.0, atol=1e-3)  # eps shifts variance slightly
    assert rstd.shape == (5,)


def test_layernorm_backward_finite_diff():
    T, d = 3, 8
    x = RNG.normal(size=(T, d))
    gamma = RNG.normal(size=d)
    beta = RNG.normal(size=d)
    w = RNG.normal(size=(T, d))  # random linear functional of the output

    def loss():
        y, _, _ = pyops.layernorm_fwd(x, gamma, beta)
        return float((w * y).sum())

    _, xhat, rstd = pyops.layernorm_fwd(x, gamma, beta)
    dx, dgamma, dbeta = pyops.layernorm_bwd(w, xhat, rstd, gamma)
    np.testing.assert_allclose(dx, central_diff(loss, x), atol=1e-7)
    np.testing.assert_allclose(dgamma, central_diff(loss, gamma), atol=1e-7)
    np.testing.assert_allclose(dbeta, central_diff(loss, beta), atol=1e-7)


# --------------------------------------------------------------------- gelu


def test_gelu_values():
    x = np.array([[0.0, 1.0, -1.0, 3.0]])
    y = pyops.gelu_fwd(x)
    assert y[0, 0] == 0.0
    assert 0.8 < y[0, 1] < 0.9
    assert -0.2 < y[0, 2] < -0.1
    np.testing.assert_allclose(y[0, 3], 3.0, atol=2e-2)


def test_gelu_backward_finite_diff():
    x = RNG.normal(size=(2, 7))
    w = RNG.normal(size=(2, 7))

    def loss():
        return float((w * pyops.gelu_fwd(x)).sum())

    dx = pyops.gelu_bwd(x, w)
    np.testing.assert_allclose(dx, central_diff(loss, x), atol=1e-8)


# ----------------------------------------------------------- causal softmax


def test_causal_softmax_rows_sum_to_one_and_mask():
    s = RNG.normal(size=(2, 6, 6))
    p = pyops.causal_softmax_fwd(s)
    for t in range(6):
        np.testing.assert_allclose(p[:, t, : t + 1].sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p[:, t, t + 1 :] == 0.0)


def test_causal_softmax_backward_finite_diff():
    s = RNG.normal(size=(1, 4, 4))
    w = RNG.normal(size=(1, 4, 4))

    def loss():
        return float((w * pyops.causal_softmax_fwd(s)).sum())

    p = pyops.causal_softmax_fwd(s)
    ds = pyops.causal_softmax_bwd(p, w)
    fd = central_diff(loss, s)
    np.testing.assert_allclose(ds, fd, atol=1e-7)


# ------------------------------------------------------------ token logprobs


def test_token_logprobs_match_plain_softmax():
    logits = RNG.normal(size=(5, 11)) * 3
    targets = RNG.integers(0, 11, size=5)
    logp, lse = pyops.token_logprobs_fwd(logits, targets)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(logp, np.log(probs[np.arange(5), targets]), atol=1e-12)


def test_token_logprobs_stable_for_large_logits():
    logits = np.array([[1000.0, 0.0], [-1000.0, -1001.0]])
    targets = np.array([0, 1])
    logp, _ = pyops.token_logprobs_fwd(logits, targets)
    assert np.all(np.isfinite(logp))
    np.testing.assert_allclose(logp[1], np.log(1 / (1 + np.e)), atol=1e-12)


def test_token_logprobs_backward_finite_diff():
    logits = RNG.normal(size=(3, 6))
    targets = np.array([2, 0, 5])
    w = RNG.normal(size=3)

    def loss():
        lp, _ = pyops.token_logprobs_fwd(logits, targets)
        return float((w * lp).sum())

    _, lse = pyops.token_logprobs_fwd(logits, targets)
    dlogits = pyops.token_logprobs_bwd(logits, targets, lse, w)
    np.testing.assert_allclose(dlogits, central_diff(loss, logits), atol=1e-7)


# ------------------------------------------------------------ backend parity


@needs_c
@pytest.mark.parametrize("shape", [(1, 4), (7, 64), (33, 256)])
def test_parity_layernorm(shape):
    T, d = shape
    x = RNG.normal(size=(T, d))
    gamma = RNG.normal(size=d)
    beta = RNG.normal(size=d)
    dy = RNG.normal(size=(T, d))
    y1, xh1, rs1 = pyops.layernorm_fwd(x, gamma, beta)
    y2, xh2, rs2 = _fastops.layernorm_fwd(x, gamma, beta)
    np.testing.assert_allclose(y1, y2, rtol=1e-12, atol=1e-14)
    for a, b in zip(
        pyops.layernorm_bwd(dy, xh1, rs1, gamma), _fastops.layernorm_bwd(dy, xh2, rs2, gamma)
    ):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)


@needs_c
def test_parity_gelu():
    x = RNG.normal(size=(16, 48)) * 2
    dy = RNG.normal(size=(16, 48))
    np.testing.assert_allclose(pyops.gelu_fwd(x), _fastops.gelu_fwd(x), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(
        pyops.gelu_bwd(x, dy), _fastops.gelu_bwd(x, dy), rtol=1e-12, atol=1e-14
    )


@needs_c
def test_parity_causal_softmax():
    s = RNG.normal(size=(4, 12, 12)) * 4
    dp = RNG.normal(size=(4, 12, 12))
    p1 = pyops.causal_softmax_fwd(s)
    p2 = _fastops.causal_softmax_fwd(s)
    np.testing.assert_allclose(p1, p2, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(
        pyops.causal_softmax_bwd(p1, dp), _fastops.causal_softmax_bwd(p2, dp), rtol=1e-12, atol=1e-15
    )


@needs_c
def test_parity_token_logprobs():
    logits = RNG.normal(size=(20, 300)) * 5
    targets = RNG.integers(0, 300, size=20)
    dlogp = RNG.normal(size=20)
    lp1, lse1 = pyops.token_logprobs_fwd(logits, targets)
    lp2, lse2 = _fastops.token_logprobs_fwd(logits, targets)
    np.testing.assert_allclose(lp1, lp2, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(
        pyops.token_logprobs_bwd(logits, targets, lse1, dlogp),
        _fastops.token_logprobs_bwd(logits, targets, lse2, dlogp),
        rtol=1e-11,
        atol=1e-14,
    )


def test_backend_name_is_reported():
    assert backend_name() in ("c", "python")
