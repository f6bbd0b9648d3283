"""Preference training loop: policy vs. frozen reference on preference pairs.

The reference model is snapshotted once before the first step and never
updated.  Each optimizer update consumes ``per_step_batch * grad_accum_steps``
pairs (the effective batch); gradients are exact for the update-level mean
loss because each pair's contribution is pulled back with its own closed-form
coefficient.  Runs are bit-reproducible for a given seed and kernel backend.

Documented full-scale defaults: effective batch 256 (8 x 8), peak learning
rate 1e-4 with 5% linear warmup then cosine annealing, checkpoint every 20K
samples, optional low-rank adapter (rank 8, scale 32).  ``desk_config`` shrinks
these for the built-in tiny backend.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .backend import TinyTransformer, save_checkpoint
from .errors import ConfigError, ParaprefError
from .objectives import DpoBatchLogps, dpo_loss, dpo_loss_grads

log = logging.getLogger(__name__)

SCHEDULES = ("cosine_anneal",)

_CONFIG_TYPES = {
    "beta": float,
    "per_step_batch": int,
    "grad_accum_steps": int,
    "peak_lr": float,
    "warmup_ratio": float,
    "schedule": str,
    "epochs": int,
    "checkpoint_every": int,
    "adapter_rank": int,
    "adapter_scale": float,
    "seed": int,
    "weight_decay": float,
    "freeze_unembedding": lambda v: v.strip().lower() in ("1", "true", "yes"),
}


@dataclass(frozen=True)
class DpoTrainConfig:
    beta: float = 0.1
    per_step_batch: int = 8
    grad_accum_steps: int = 8
    peak_lr: float = 1e-4
    warmup_ratio: float = 0.05
    schedule: str = "cosine_anneal"
    epochs: int = 1
    checkpoint_every: int = 20_000
    adapter: tuple[int, float] | None = None  # (rank, scale); None = full fine-tune
    seed: int = 0
    weight_decay: float = 0.01
    # keep the unembedding fixed so preference margins must come from
    # hidden-state movement (adapter runs exclude it implicitly anyway)
    freeze_unembedding: bool = False

    def __post_init__(self):
        # beta == 0 is allowed on DpoBatchLogps for diagnostics, but a
        # training run with zero reward scale would be a silent no-op
        if self.beta <= 0:
            raise ConfigError(f"training beta must be positive, got {self.beta}")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; supported: {SCHEDULES}")
        if min(self.per_step_batch, self.grad_accum_steps, self.epochs) < 1:
            raise ConfigError("batch, accumulation, and epoch counts must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    @property
    def effective_batch(self) -> int:
        return self.per_step_batch * self.grad_accum_steps


def desk_config(**overrides) -> DpoTrainConfig:
    """Defaults sized for the tiny backend: effective batch 32, checkpoint
    every 1K samples, a faster peak learning rate."""
    base = dict(per_step_batch=8, grad_accum_steps=4, peak_lr=1e-3, checkpoint_every=1000)
    base.update(overrides)
    return DpoTrainConfig(**base)


def load_flat_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` config file ('#' starts a comment)."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def train_config_from_mapping(mapping: dict[str, str]) -> DpoTrainConfig:
    """Build a config from string key-values, ignoring ``model.*`` keys."""
    kwargs = {}
    adapter_rank = adapter_scale = None
    for key, value in mapping.items():
        if key.startswith("model."):
            continue
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"unknown training config key {key!r}")
        try:
            parsed = _CONFIG_TYPES[key](value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
        if key == "adapter_rank":
            adapter_rank = parsed
        elif key == "adapter_scale":
            adapter_scale = parsed
        else:
            kwargs[key] = parsed
    if adapter_rank is not None:
        kwargs["adapter"] = (adapter_rank, adapter_scale if adapter_scale is not None else 32.0)
    elif adapter_scale is not None:
        raise ConfigError("adapter_scale given without adapter_rank")
    return DpoTrainConfig(**kwargs)


def lr_at(update_index: int, total_updates: int, config: DpoTrainConfig) -> float:
    """Learning rate at one optimizer update: linear ramp over the warmup
    fraction (starting at peak/warmup_updates, not zero), then cosine decay
    from the peak down to ~0 at the final update."""
    if not 0 <= update_index < total_updates:
        raise ValueError(f"update index {update_index} outside 0..{total_updates - 1}")
    warmup_updates = math.ceil(config.warmup_ratio * total_updates)
    if update_index < warmup_updates:
        return config.peak_lr * (update_index + 1) / warmup_updates
    span = max(1, total_updates - warmup_updates)
    progress = (update_index - warmup_updates) / span
    return config.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    mean_margin: float
    lr: float
    samples_seen: int


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    skipped_pairs: int = 0

    def add(self, **kw) -> None:
        rec = StepRecord(**kw)
        if self.records:
            last = self.records[-1]
            if rec.step <= last.step or rec.samples_seen < last.samples_seen:
                raise ValueError("step index must increase and samples_seen must not decrease")
        self.records.append(rec)


def save_train_log(tlog: TrainLog, path) -> None:
    """Line-delimited records, one JSON object per optimizer update."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"skipped_pairs": tlog.skipped_pairs}) + "\n")
        for r in tlog.records:
            fh.write(json.dumps({
                "step": r.step, "loss": r.loss, "mean_margin": r.mean_margin,
                "lr": r.lr, "samples_seen": r.samples_seen,
            }) + "\n")


def load_train_log(path) -> TrainLog:
    with open(path, "r", encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        tlog = TrainLog(skipped_pairs=head["skipped_pairs"])
        for line in fh:
            if line.strip():
                tlog.add(**json.loads(line))
    return tlog


class AdamW:
    """Adaptive moment estimation with decoupled weight decay."""

    def __init__(self, names, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.names = list(names)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in self.names:
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(params[name]))
            v = self.v.setdefault(name, np.zeros_like(params[name]))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            params[name] -= lr * (update + self.weight_decay * params[name])


def _fits(model: TinyTransformer, pair) -> bool:
    tok = model.tokenizer
    base = 1 + len(tok.encode(pair.prompt))
    longest = max(len(tok.encode(pair.chosen)), len(tok.encode(pair.rejected)))
    return base + longest <= model.max_seq_len


def train_dpo(policy: TinyTransformer, pairs, config: DpoTrainConfig, out_dir=None):
    """Optimize ``policy`` on preference pairs against its own frozen snapshot.

    Returns (policy, TrainLog, checkpoint_paths).  Checkpoints are written to
    ``out_dir`` (when given) every ``checkpoint_every`` consumed samples, plus
    a final one.  Pairs that overflow the context window are skipped with a
    warning and counted in the log.
    """
    if not getattr(policy, "trainable", False):
        raise ConfigError("policy must be trainable")
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no preference pairs given")

    if config.adapter is not None and policy.adapter is None:
        policy.enable_adapter(*config.adapter)

    usable = [p for p in pairs if _fits(policy, p)]
    skipped = len(pairs) - len(usable)
    if skipped:
        log.warning("skipped %d of %d pairs exceeding the context window", skipped, len(pairs))
    if not usable:
        raise ParaprefError(f"all {len(pairs)} pairs exceed the context window; nothing to train on")

    reference = policy.snapshot_frozen()
    tlog = TrainLog(skipped_pairs=skipped)
    updated = policy.trainable_param_names()
    if config.freeze_unembedding:
        updated = [n for n in updated if n != "wu"]
    optim = AdamW(updated, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)

    n = len(usable)
    eff = config.effective_batch
    updates_per_epoch = math.ceil(n / eff)
    total_updates = config.epochs * updates_per_epoch

    # the reference is frozen, so its per-pair log-probs never change
    ref_cache: dict[int, tuple[float, float]] = {}

    checkpoints: list[str] = []
    samples_seen = 0
    next_checkpoint = config.checkpoint_every
    update_idx = 0

    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, eff):
            group = order[start : start + eff]
            bsz = len(group)
            pol_c = np.empty(bsz)
            pol_r = np.empty(bsz)
            ref_c = np.empty(bsz)
            ref_r = np.empty(bsz)
            pullbacks = []
            for j, pair_idx in enumerate(group):
                pair = usable[pair_idx]
                lp_c, pb_c = policy.logprob_with_pullback(pair.prompt, pair.chosen)
                lp_r, pb_r = policy.logprob_with_pullback(pair.prompt, pair.rejected)
                if pair_idx not in ref_cache:
                    ref_cache[pair_idx] = (
                        reference.sequence_logprob(pair.prompt, pair.chosen),
                        reference.sequence_logprob(pair.prompt, pair.rejected),
                    )
                pol_c[j], pol_r[j] = lp_c, lp_r
                ref_c[j], ref_r[j] = ref_cache[pair_idx]
                pullbacks.append((pb_c, pb_r))
            batch = DpoBatchLogps(pol_c, pol_r, ref_c, ref_r, beta=config.beta)
            loss, margins = dpo_loss(batch)
            grads = dpo_loss_grads(batch)
            policy.zero_grads()
            for j, (pb_c, pb_r) in enumerate(pullbacks):
                pb_c(grads["policy_chosen"][j])
                pb_r(grads["policy_rejected"][j])
            lr = lr_at(update_idx, total_updates, config)
            optim.step(policy.params, policy.grads, lr)
            policy.zero_grads()
            samples_seen += bsz
            tlog.add(step=update_idx, loss=loss, mean_margin=float(margins.mean()),
                     lr=lr, samples_seen=samples_seen)
            update_idx += 1
            if out_dir is not None and samples_seen >= next_checkpoint:
                path = f"{out_dir}/ckpt-{samples_seen:08d}.npz"
                save_checkpoint(policy, path)
                checkpoints.append(path)
                while next_checkpoint <= samples_seen:
                    next_checkpoint += config.checkpoint_every

    if out_dir is not None:
        final = f"{out_dir}/ckpt-final.npz"
        save_checkpoint(policy, final)
        checkpoints.append(final)
    return policy, tlog, checkpoints
