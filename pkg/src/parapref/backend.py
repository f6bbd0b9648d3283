"""Causal language model backend.

Defines the scorer interface every backend must satisfy (tokenize, score
sequences, expose hidden states and the unembedding matrix) and ships a tiny
decoder-only transformer implemented in numpy with hand-written backprop, so
the whole pipeline runs deterministically on a CPU.  The hot per-row kernels
(layer norm, causal softmax, GELU, token log-probs) live in
:mod:`parapref.kernels` and are backed by a compiled extension when built.

Conventions fixed here:

* sequence log-probability is the token sum over response positions only,
  never length-normalized;
* a reserved ``<bos>`` token is prepended to every model input, so the first
  real token is always conditioned on something;
* hidden-state extraction returns the final-layer output after the last
  normalization block.
"""

from __future__ import annotations

import copy
import io
import json
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import kernels
from .errors import ConfigError, LengthError
from .tokenizer import WordTokenizer

@runtime_checkable
class CausalScorer(Protocol):
    """Contract for pluggable model engines.

    Any object with this surface can be scored, embedded from, and (when
    ``trainable``) tuned by the trainer.  The toolkit ships only the tiny
    backend below.
    """

    vocab_size: int
    hidden_dim: int
    n_layers: int
    max_seq_len: int
    trainable: bool

    def sequence_logprob(self, prompt: str, response: str) -> float: ...

    def last_token_hidden(self, text: str) -> np.ndarray: ...

    def unembed_topk(self, embedding: np.ndarray, k: int) -> list: ...

    def snapshot_frozen(self) -> "CausalScorer": ...


@dataclass(frozen=True)
class TinyTransformerConfig:
    """Construction recipe for the built-in tiny decoder-only transformer.

    ``init_std`` scales every weight initialization.  The conventional 0.02
    suits generic runs; the bundled desk-scale demo uses a much smaller value
    so that the untrained model's embeddings start as a tight, low-noise
    cluster that genuine training-induced spread can be measured against.
    """

    layers: int
    heads: int
    hidden_dim: int
    vocab: tuple[str, ...]
    max_seq_len: int
    seed: int = 0
    mlp_ratio: int = 4
    init_std: float = 0.02

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}"
            )
        if self.layers < 1 or self.max_seq_len < 2:
            raise ConfigError("need at least 1 layer and max_seq_len >= 2")
        if self.init_std <= 0:
            raise ConfigError(f"init_std must be positive, got {self.init_std}")


# Linear layers that receive a low-rank adapter when one is enabled.
# The unembedding matrix "wu" is deliberately excluded.
_ADAPTED_SUFFIXES = ("attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w1", "mlp.w2")


class TinyTransformer:
    """Seeded, bit-reproducible decoder-only transformer (pre-norm, GELU MLP).

    Parameters live in a flat ``name -> float64 ndarray`` dict.  Gradients
    accumulate into ``self.grads`` under the same names; the optimizer decides
    which names to update via :meth:`trainable_param_names`.
    """

    def __init__(self, config: TinyTransformerConfig, params=None, trainable=True,
                 adapter=None):
        self.config = config
        self.tokenizer = WordTokenizer(config.vocab)
        self.vocab_size = self.tokenizer.vocab_size
        self.hidden_dim = config.hidden_dim
        self.n_layers = config.layers
        self.max_seq_len = config.max_seq_len
        self.trainable = trainable
        self.adapter = adapter  # (rank, scale) or None
        self.params = params if params is not None else self._init_params()
        self.grads: dict[str, np.ndarray] = {}

    # ------------------------------------------------------------- building

    def _init_params(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        std = cfg.init_std
        V, d, P = self.vocab_size, cfg.hidden_dim, cfg.max_seq_len
        dm = cfg.mlp_ratio * d
        p = {
            "wte": rng.normal(0.0, std, (V, d)),
            "wpe": rng.normal(0.0, std, (P, d)),
        }
        for i in range(cfg.layers):
            h = f"h{i}."
            p[h + "ln1.g"] = np.ones(d)
            p[h + "ln1.b"] = np.zeros(d)
            for w in ("wq", "wk", "wv", "wo"):
                p[h + "attn." + w] = rng.normal(0.0, std, (d, d))
                p[h + "attn.b" + w[1]] = np.zeros(d)
            p[h + "ln2.g"] = np.ones(d)
            p[h + "ln2.b"] = np.zeros(d)
            p[h + "mlp.w1"] = rng.normal(0.0, std, (dm, d))
            p[h + "mlp.b1"] = np.zeros(dm)
            p[h + "mlp.w2"] = rng.normal(0.0, std, (d, dm))
            p[h + "mlp.b2"] = np.zeros(d)
        p["lnf.g"] = np.ones(d)
        p["lnf.b"] = np.zeros(d)
        p["wu"] = rng.normal(0.0, std, (V, d))
        return p

    def enable_adapter(self, rank: int, scale: float) -> None:
        """Attach zero-initialized low-rank adapters to every linear layer
        except the unembedding; base weights freeze, only A/B matrices train.

        The B factor starts at zero so the adapted model initially computes
        exactly what the base model does.
        """
        if not self.trainable:
            raise ConfigError("cannot enable an adapter on a frozen model")
        if self.adapter is not None:
            raise ConfigError("adapter already enabled")
        if rank < 1:
            raise ConfigError(f"adapter rank must be >= 1, got {rank}")
        rng = np.random.default_rng([self.config.seed, rank])
        std = self.config.init_std
        for name in list(self.params):
            if name.split(".", 1)[-1] in _ADAPTED_SUFFIXES:
                out_dim, in_dim = self.params[name].shape
                self.params[name + ".lora_a"] = rng.normal(0.0, std, (rank, in_dim))
                self.params[name + ".lora_b"] = np.zeros((out_dim, rank))
        self.adapter = (rank, float(scale))

    def trainable_param_names(self) -> list[str]:
        if self.adapter is None:
            return sorted(self.params)
        return sorted(n for n in self.params if n.endswith((".lora_a", ".lora_b")))

    def zero_grads(self) -> None:
        self.grads = {}

    def _grad(self, name):
        g = self.grads.get(name)
        if g is None:
            g = np.zeros_like(self.params[name])
            self.grads[name] = g
        return g

    # ------------------------------------------------------------- forward

    def _weight(self, name):
        """Effective weight: base plus scaled low-rank delta when adapted."""
        W = self.params[name]
        if self.adapter is not None and name + ".lora_a" in self.params:
            rank, scale = self.adapter
            W = W + (scale / rank) * (self.params[name + ".lora_b"] @ self.params[name + ".lora_a"])
        return W

    def _ids(self, text: str) -> list[int]:
        return self.tokenizer.encode(text)

    def _check_len(self, n_tokens: int, what: str) -> None:
        if n_tokens > self.max_seq_len:
            raise LengthError(
                f"{what}: {n_tokens} tokens exceed the context window of {self.max_seq_len}"
            )

    def _run(self, ids, need_cache=False):
        """Forward pass over token ids (already including <bos>).

        Returns (hidden, cache): hidden is the (T, d) final-layer output after
        the last normalization; cache holds every intermediate needed by
        :meth:`_backward` when requested.
        """
        cfg = self.config
        T = len(ids)
        d = cfg.hidden_dim
        H = cfg.heads
        dh = d // H
        ids_arr = np.asarray(ids, dtype=np.int64)
        x = self.params["wte"][ids_arr] + self.params["wpe"][:T]
        layers_cache = []
        for i in range(cfg.layers):
            h = f"h{i}."
            a, xhat1, rstd1 = kernels.layernorm_fwd(
                x, self.params[h + "ln1.g"], self.params[h + "ln1.b"]
            )
            wq, wk, wv = (self._weight(h + "attn." + w) for w in ("wq", "wk", "wv"))
            q = a @ wq.T + self.params[h + "attn.bq"]
            k = a @ wk.T + self.params[h + "attn.bk"]
            v = a @ wv.T + self.params[h + "attn.bv"]
            qh = np.ascontiguousarray(q.reshape(T, H, dh).transpose(1, 0, 2))
            kh = np.ascontiguousarray(k.reshape(T, H, dh).transpose(1, 0, 2))
            vh = np.ascontiguousarray(v.reshape(T, H, dh).transpose(1, 0, 2))
            scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
            probs = kernels.causal_softmax_fwd(np.ascontiguousarray(scores))
            ctx = probs @ vh
            ctx2 = np.ascontiguousarray(ctx.transpose(1, 0, 2)).reshape(T, d)
            wo = self._weight(h + "attn.wo")
            x_attn = x + (ctx2 @ wo.T + self.params[h + "attn.bo"])
            m, xhat2, rstd2 = kernels.layernorm_fwd(
                x_attn, self.params[h + "ln2.g"], self.params[h + "ln2.b"]
            )
            w1 = self._weight(h + "mlp.w1")
            w2 = self._weight(h + "mlp.w2")
            hpre = m @ w1.T + self.params[h + "mlp.b1"]
            hact = kernels.gelu_fwd(hpre)
            x_out = x_attn + (hact @ w2.T + self.params[h + "mlp.b2"])
            if need_cache:
                layers_cache.append(
                    dict(a=a, xhat1=xhat1, rstd1=rstd1, qh=qh, kh=kh, vh=vh,
                         probs=probs, ctx2=ctx2, x_attn=x_attn, m=m, xhat2=xhat2,
                         rstd2=rstd2, hpre=hpre, hact=hact)
                )
            x = x_out
        hidden, xhatf, rstdf = kernels.layernorm_fwd(
            x, self.params["lnf.g"], self.params["lnf.b"]
        )
        cache = None
        if need_cache:
            cache = dict(ids=ids_arr, layers=layers_cache, xhatf=xhatf, rstdf=rstdf)
        return hidden, cache

    # ------------------------------------------------------------- backward

    def _linear_bwd(self, name, x_in, dy):
        """Gradient of y = x_in @ W_eff.T + b; returns dx and accumulates
        weight grads (into the adapter factors when one is attached)."""
        W_eff = self._weight(name)
        dx = dy @ W_eff
        dW = dy.T @ x_in
        if self.adapter is not None and name + ".lora_a" in self.params:
            rank, scale = self.adapter
            A = self.params[name + ".lora_a"]
            B = self.params[name + ".lora_b"]
            self._grad(name + ".lora_a")[...] += (scale / rank) * (B.T @ dW)
            self._grad(name + ".lora_b")[...] += (scale / rank) * (dW @ A.T)
        else:
            self._grad(name)[...] += dW
        return dx

    def _backward(self, cache, dhidden):
        """Accumulate parameter gradients for upstream grad on the final
        hidden states.  ``dhidden`` is (T, d), C-contiguous."""
        cfg = self.config
        H = cfg.heads
        d = cfg.hidden_dim
        dh = d // H
        T = dhidden.shape[0]
        dx, dg, db = kernels.layernorm_bwd(
            dhidden, cache["xhatf"], cache["rstdf"], self.params["lnf.g"]
        )
        self._grad("lnf.g")[...] += dg
        self._grad("lnf.b")[...] += db
        for i in reversed(range(cfg.layers)):
            h = f"h{i}."
            c = cache["layers"][i]
            # MLP block
            dhact = self._linear_bwd(h + "mlp.w2", c["hact"], dx)
            self._grad(h + "mlp.b2")[...] += dx.sum(axis=0)
            dhpre = kernels.gelu_bwd(c["hpre"], np.ascontiguousarray(dhact))
            dm = self._linear_bwd(h + "mlp.w1", c["m"], dhpre)
            self._grad(h + "mlp.b1")[...] += dhpre.sum(axis=0)
            dx_ln2, dg2, db2 = kernels.layernorm_bwd(
                np.ascontiguousarray(dm), c["xhat2"], c["rstd2"], self.params[h + "ln2.g"]
            )
            self._grad(h + "ln2.g")[...] += dg2
            self._grad(h + "ln2.b")[...] += db2
            dx = dx + dx_ln2
            # attention block
            dctx2 = self._linear_bwd(h + "attn.wo", c["ctx2"], dx)
            self._grad(h + "attn.bo")[...] += dx.sum(axis=0)
            dctx = np.ascontiguousarray(dctx2.reshape(T, H, dh).transpose(1, 0, 2))
            dprobs = dctx @ c["vh"].transpose(0, 2, 1)
            dvh = c["probs"].transpose(0, 2, 1) @ dctx
            dscores = kernels.causal_softmax_bwd(c["probs"], np.ascontiguousarray(dprobs))
            dscores /= np.sqrt(dh)
            dqh = dscores @ c["kh"]
            dkh = dscores.transpose(0, 2, 1) @ c["qh"]
            dq = np.ascontiguousarray(dqh.transpose(1, 0, 2)).reshape(T, d)
            dk = np.ascontiguousarray(dkh.transpose(1, 0, 2)).reshape(T, d)
            dv = np.ascontiguousarray(dvh.transpose(1, 0, 2)).reshape(T, d)
            da = self._linear_bwd(h + "attn.wq", c["a"], dq)
            da += self._linear_bwd(h + "attn.wk", c["a"], dk)
            da += self._linear_bwd(h + "attn.wv", c["a"], dv)
            self._grad(h + "attn.bq")[...] += dq.sum(axis=0)
            self._grad(h + "attn.bk")[...] += dk.sum(axis=0)
            self._grad(h + "attn.bv")[...] += dv.sum(axis=0)
            dx_ln1, dg1, db1 = kernels.layernorm_bwd(
                np.ascontiguousarray(da), c["xhat1"], c["rstd1"], self.params[h + "ln1.g"]
            )
            self._grad(h + "ln1.g")[...] += dg1
            self._grad(h + "ln1.b")[...] += db1
            dx = dx + dx_ln1
        ids = cache["ids"]
        np.add.at(self._grad("wte"), ids, dx)
        self._grad("wpe")[:T] += dx

    # ----------------------------------------------------------- scorer API

    def sequence_logprob(self, prompt: str, response: str) -> float:
        """Sum of log P(token | prompt, preceding response tokens) over the
        response tokens.  Prompt tokens contribute zero; an empty response
        scores exactly 0.0."""
        logp, _ = self._logprob_forward(prompt, response, need_cache=False)
        return logp

    def logprob_with_pullback(self, prompt: str, response: str):
        """Like :meth:`sequence_logprob` but also returns a pullback closure:
        calling it with an upstream scalar accumulates d(logprob)/d(params)
        scaled by that scalar into ``self.grads``."""
        if not self.trainable:
            raise ConfigError("gradients requested from a frozen model")
        return self._logprob_forward(prompt, response, need_cache=True)

    def _logprob_forward(self, prompt, response, need_cache):
        ids_r = self._ids(response)
        if not ids_r:
            return 0.0, (lambda dlogp: None) if need_cache else None
        ids_p = [self.tokenizer.bos_id] + self._ids(prompt)
        full = ids_p + ids_r
        self._check_len(
            len(full), f"prompt {prompt[:40]!r}... with response {response[:40]!r}..."
        )
        hidden, cache = self._run(full, need_cache=need_cache)
        # response token at absolute position j is predicted from hidden[j-1]
        rows = np.ascontiguousarray(hidden[len(ids_p) - 1 : len(full) - 1])
        targets = np.asarray(ids_r, dtype=np.int64)
        wu = self.params["wu"]
        logits = rows @ wu.T
        logp_vec, lse = kernels.token_logprobs_fwd(logits, targets)
        total = float(logp_vec.sum())
        if not need_cache:
            return total, None

        def pullback(dlogp: float) -> None:
            dvec = np.full(len(targets), float(dlogp))
            dlogits = kernels.token_logprobs_bwd(logits, targets, lse, dvec)
            self._grad("wu")[...] += dlogits.T @ rows
            drows = dlogits @ wu
            dhidden = np.zeros_like(hidden)
            dhidden[len(ids_p) - 1 : len(full) - 1] = drows
            self._backward(cache, dhidden)

        return total, pullback

    def last_token_hidden(self, text: str) -> np.ndarray:
        """Final-layer hidden state at the last input position."""
        ids = self._ids(text)
        if not ids:
            raise ValueError(f"text tokenizes to zero tokens: {text!r}")
        full = [self.tokenizer.bos_id] + ids
        self._check_len(len(full), f"text {text[:60]!r}")
        hidden, _ = self._run(full)
        return hidden[-1].copy()

    def mean_pooled_hidden(self, text: str) -> np.ndarray:
        """Baseline pooling: average of all final-layer hidden states."""
        ids = self._ids(text)
        if not ids:
            raise ValueError(f"text tokenizes to zero tokens: {text!r}")
        full = [self.tokenizer.bos_id] + ids
        self._check_len(len(full), f"text {text[:60]!r}")
        hidden, _ = self._run(full)
        return hidden.mean(axis=0)

    def unembed_topk(self, embedding: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Project an embedding through the unembedding matrix and return the
        k highest-logit tokens, descending, ties broken by token id."""
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (self.hidden_dim,):
            raise ValueError(
                f"embedding has shape {embedding.shape}, model expects ({self.hidden_dim},)"
            )
        if not 0 < k <= self.vocab_size:
            raise ValueError(f"k={k} out of range 1..{self.vocab_size}")
        logits = self.params["wu"] @ embedding
        order = np.lexsort((np.arange(self.vocab_size), -logits))
        return [(self.tokenizer.token(int(i)), float(logits[i])) for i in order[:k]]

    def snapshot_frozen(self) -> "TinyTransformer":
        """Deep-copied frozen twin; its outputs never change as this model trains."""
        return TinyTransformer(
            self.config,
            params={k: v.copy() for k, v in self.params.items()},
            trainable=False,
            adapter=copy.deepcopy(self.adapter),
        )


def snapshot_frozen(model: TinyTransformer) -> TinyTransformer:
    return model.snapshot_frozen()


# ------------------------------------------------------------- checkpoints


def save_checkpoint(model: TinyTransformer, path) -> None:
    """Single-file self-describing checkpoint: config, vocabulary, adapter
    state, and all parameter tensors.  Round trips bit-exactly."""
    cfg = model.config
    meta = {
        "format": "parapref-checkpoint-v1",
        "layers": cfg.layers,
        "heads": cfg.heads,
        "hidden_dim": cfg.hidden_dim,
        "max_seq_len": cfg.max_seq_len,
        "seed": cfg.seed,
        "mlp_ratio": cfg.mlp_ratio,
        "init_std": cfg.init_std,
        "vocab": list(cfg.vocab),
        "adapter": list(model.adapter) if model.adapter else None,
        "trainable": model.trainable,
    }
    arrays = {"param:" + name: arr for name, arr in model.params.items()}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.array(json.dumps(meta)), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> TinyTransformer:
    """Rebuild a model from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"]))
        if meta.get("format") != "parapref-checkpoint-v1":
            raise ConfigError(f"{path}: not a parapref checkpoint")
        params = {
            key[len("param:"):]: npz[key] for key in npz.files if key.startswith("param:")
        }
    cfg = TinyTransformerConfig(
        layers=meta["layers"],
        heads=meta["heads"],
        hidden_dim=meta["hidden_dim"],
        vocab=tuple(meta["vocab"]),
        max_seq_len=meta["max_seq_len"],
        seed=meta["seed"],
        mlp_ratio=meta["mlp_ratio"],
        init_std=meta.get("init_std", 0.02),
    )
    adapter = tuple(meta["adapter"]) if meta.get("adapter") else None
    return TinyTransformer(cfg, params=params, trainable=meta["trainable"], adapter=adapter)
