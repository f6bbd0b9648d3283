"""Benchmark: compiled kernels vs the pure-numpy fallback.

Times each kernel on tiny-training shapes, then a full scoring pass
(forward + gradient pullback) with each backend selected for real.

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from parapref.kernels import pyops

try:
    import parapref.kernels._fastops as _fastops
except ImportError:
    _fastops = None


def timeit(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    T, d, H, V = 48, 64, 4, 512
    x = rng.normal(size=(T, d))
    gamma, beta = np.ones(d), np.zeros(d)
    dy = rng.normal(size=(T, d))
    scores = rng.normal(size=(H, T, T))
    logits = rng.normal(size=(T, V))
    targets = rng.integers(0, V, size=T)
    dlogp = rng.normal(size=T)

    _, xhat, rstd = pyops.layernorm_fwd(x, gamma, beta)
    probs = pyops.causal_softmax_fwd(scores)
    _, lse = pyops.token_logprobs_fwd(logits, targets)

    cases = [
        ("layernorm_fwd", lambda m: m.layernorm_fwd(x, gamma, beta)),
        ("layernorm_bwd", lambda m: m.layernorm_bwd(dy, xhat, rstd, gamma)),
        ("gelu_fwd", lambda m: m.gelu_fwd(x)),
        ("gelu_bwd", lambda m: m.gelu_bwd(x, dy)),
        ("causal_softmax_fwd", lambda m: m.causal_softmax_fwd(scores)),
        ("causal_softmax_bwd", lambda m: m.causal_softmax_bwd(probs, dy3(rng, H, T))),
        ("token_logprobs_fwd", lambda m: m.token_logprobs_fwd(logits, targets)),
        ("token_logprobs_bwd", lambda m: m.token_logprobs_bwd(logits, targets, lse, dlogp)),
    ]
    print(f"{'kernel':22s} {'python':>10s} {'c':>10s} {'speedup':>8s}")
    for name, call in cases:
        t_py = timeit(lambda: call(pyops), repeats)
        if _fastops is None:
            print(f"{name:22s} {t_py * 1e6:9.1f}us {'n/a':>10s} {'':>8s}")
            continue
        t_c = timeit(lambda: call(_fastops), repeats)
        print(f"{name:22s} {t_py * 1e6:9.1f}us {t_c * 1e6:9.1f}us {t_py / t_c:7.2f}x")


def dy3(rng, H, T):
    return rng.normal(size=(H, T, T))


SCORING_SNIPPET = """
import time
import numpy as np
from parapref.kernels import backend_name
from parapref.backend import TinyTransformer, TinyTransformerConfig
from parapref.synth import world_vocabulary

cfg = TinyTransformerConfig(layers=2, heads=4, hidden_dim=64,
                            vocab=tuple(world_vocabulary()), max_seq_len=64, seed=0)
model = TinyTransformer(cfg)
prompt = 'Keep the same meaning of this sentence: "the dog runs .", while making some changes.'
response = "the dog sprints ."

def step():
    model.zero_grads()
    _, pb = model.logprob_with_pullback(prompt, response)
    pb(1.0)

step()
start = time.perf_counter()
for _ in range(REPEATS):
    step()
per_step = (time.perf_counter() - start) / REPEATS
print(f"  {backend_name():6s} backend: {per_step * 1e3:7.2f} ms per scored pair (fwd+bwd)")
"""


def bench_full_pass(repeats):
    print("\nfull scoring pass (forward + gradient pullback), backend selected at import:")
    for backend in ("python", "c"):
        env = dict(os.environ, PARAPREF_KERNELS=backend)
        code = SCORING_SNIPPET.replace("REPEATS", str(repeats))
        proc = subprocess.run([sys.executable, "-c", code], env=env,
                              capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"  {backend:6s} backend unavailable: {proc.stderr.strip().splitlines()[-1]}")
        else:
            print(proc.stdout, end="")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    if _fastops is None:
        print("note: compiled kernels not built; run `python setup.py build_ext --inplace`\n")
    bench_kernels(args.repeats)
    bench_full_pass(max(20, args.repeats // 4))


if __name__ == "__main__":
    main()
