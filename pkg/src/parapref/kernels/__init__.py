"""Kernel backend selection.

The compiled extension (``parapref.kernels._fastops``, built from Cython) is
used when importable; otherwise the pure-numpy fallback ``pyops`` is used.
Override with the environment variable ``PARAPREF_KERNELS``:

    PARAPREF_KERNELS=c        require the compiled kernels (ImportError if absent)
    PARAPREF_KERNELS=python   force the numpy fallback
    PARAPREF_KERNELS=auto     default behavior

Both backends implement the same function set; ``tests/test_kernels.py``
asserts they agree and ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

from . import pyops

_choice = os.environ.get("PARAPREF_KERNELS", "auto").lower()

if _choice in ("auto", "c", "cython"):
    try:
        from . import _fastops

        BACKEND = "c"
    except ImportError:
        if _choice != "auto":
            raise
        _fastops = None
        BACKEND = "python"
elif _choice in ("python", "py"):
    _fastops = None
    BACKEND = "python"
else:
    raise ValueError(f"PARAPREF_KERNELS={_choice!r}; expected auto, c, or python")

if BACKEND == "c":
    # Fused C loops win on the reduction-heavy kernels; numpy's SIMD
    # transcendentals win on the exp/tanh-dominated ones (see
    # benchmarks/bench_kernels.py), so the default mixes per kernel.
    layernorm_fwd = _fastops.layernorm_fwd
    layernorm_bwd = _fastops.layernorm_bwd
    causal_softmax_fwd = _fastops.causal_softmax_fwd
    causal_softmax_bwd = _fastops.causal_softmax_bwd
    token_logprobs_bwd = _fastops.token_logprobs_bwd
    gelu_fwd = pyops.gelu_fwd
    gelu_bwd = pyops.gelu_bwd
    token_logprobs_fwd = pyops.token_logprobs_fwd
else:
    layernorm_fwd = pyops.layernorm_fwd
    layernorm_bwd = pyops.layernorm_bwd
    causal_softmax_fwd = pyops.causal_softmax_fwd
    causal_softmax_bwd = pyops.causal_softmax_bwd
    token_logprobs_bwd = pyops.token_logprobs_bwd
    gelu_fwd = pyops.gelu_fwd
    gelu_bwd = pyops.gelu_bwd
    token_logprobs_fwd = pyops.token_logprobs_fwd


def backend_name() -> str:
    """Which kernel implementation is active: 'c' or 'python'."""
    return BACKEND
