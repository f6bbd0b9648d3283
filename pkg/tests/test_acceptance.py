"""Acceptance gate: one test per criterion, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  Tolerances are pinned here and nowhere else:

1. pairwise-loss identity, 1000 random batches ......... 1e-9 relative (1e-15 floor)
2. ranking-probability consistency ..................... 1e-10 / sigmoid bridge 1e-12
3. contrastive loss equals -log best-prob .............. 1e-12
4. analytic vs central-difference gradients ............ 1e-4 relative (1e-8 floor)
5. trainer contracts on the tiny backend ............... ln 2 +- 1e-6, bit equality
6. end-to-end desk-scale improvement ................... >= 4 of 5 fixed seeds
7. metric oracles ...................................... exact / 1e-9 / 1e-12
8. format round trips .................................. identity / bit-exact
"""

import json
import math
import time

import numpy as np
import pytest

from parapref.backend import TinyTransformer, TinyTransformerConfig, load_checkpoint, save_checkpoint
from parapref.cli import dispatch
from parapref.core import PROMPT_EOL, Sentence, builtin_templates
from parapref.data import build_preference_pairs, load_pairs, parse_nli_csv, save_pairs
from parapref.embedder import EmbeddingMatrix, embed_corpus, load_embeddings, save_embeddings
from parapref.evalsuite import GarInput, eval_sts, gar, isotropy_score, load_sts_tsv, spearman, uniformity
from parapref.objectives import (
    DpoBatchLogps,
    dpo_loss,
    dpo_loss_grads,
    dpo_loss_softmax_form,
    infonce_loss,
    infonce_loss_from_scores,
    infonce_scores,
    infonce_scores_grad,
    pl_best_prob,
    pl_enumeration_oracle,
)
from parapref.synth import bundled_data_path, world_vocabulary
from parapref.tokenizer import vocab_from_texts
from parapref.trainer import DpoTrainConfig, train_dpo

PARA_TEMPLATE = builtin_templates()[0]
FULL_VOCAB = tuple(sorted(set(
    vocab_from_texts([t.pattern for t in builtin_templates()]) + world_vocabulary()
)))


def _ok(n, name):
    print(f"\nACCEPTANCE {n} {name}: PASS")


def test_criterion_1_pairwise_loss_identity():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        beta = float(rng.choice([0.01, 0.1, 1.0, 5.0]))
        batch = DpoBatchLogps(*(rng.uniform(-50.0, 0.0, n) for _ in range(4)), beta=beta)
        a, _ = dpo_loss(batch)
        b = dpo_loss_softmax_form(batch)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-15)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"identity check took {elapsed:.2f}s (budget 1s)"
    _ok(1, "sigmoid and two-candidate softmax forms agree")


def test_criterion_2_ranking_probability_consistency():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    for n in (2, 3, 4, 5):
        for _ in range(5):
            scores = rng.normal(size=n) * 2.0
            dist = pl_enumeration_oracle(scores)
            np.testing.assert_allclose(sum(dist.values()), 1.0, atol=1e-10)
            for i in range(n):
                marginal = sum(p for perm, p in dist.items() if perm[0] == i)
                np.testing.assert_allclose(marginal, pl_best_prob(scores, i), atol=1e-10)
    for _ in range(200):
        s = rng.uniform(-30, 30, 2)
        sigmoid = 1.0 / (1.0 + math.exp(-(s[0] - s[1])))
        np.testing.assert_allclose(pl_best_prob(s, 0), sigmoid, atol=1e-12)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"ranking consistency took {elapsed:.2f}s (budget 1s)"
    _ok(2, "enumeration oracle, first-place marginals, sigmoid bridge")


def test_criterion_3_contrastive_equals_best_prob():
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    for _ in range(1000):
        d = int(rng.integers(2, 10))
        k = int(rng.integers(1, 7))
        anchor, positive = rng.normal(size=d), rng.normal(size=d)
        negatives = [rng.normal(size=d) for _ in range(k)]
        tau = float(rng.uniform(0.05, 2.0))
        loss = infonce_loss(anchor, positive, negatives, tau)
        scores = infonce_scores(anchor, positive, negatives, tau)
        np.testing.assert_allclose(loss, -math.log(pl_best_prob(scores, 0)), atol=1e-12)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"contrastive bridge took {elapsed:.2f}s (budget 1s)"
    _ok(3, "contrastive loss is -log of the best-candidate probability")


def test_criterion_4_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    eps = 1e-5
    for _ in range(100):
        n = int(rng.integers(1, 6))
        vecs = [rng.uniform(-20.0, 0.0, n) for _ in range(4)]
        beta = float(rng.choice([0.1, 0.5, 1.0]))
        grads = dpo_loss_grads(DpoBatchLogps(*vecs, beta=beta))
        names = ("policy_chosen", "policy_rejected", "ref_chosen", "ref_rejected")
        for vi, name in enumerate(names):
            j = int(rng.integers(0, n))
            pert = [v.copy() for v in vecs]
            pert[vi][j] += eps
            hi, _ = dpo_loss(DpoBatchLogps(*pert, beta=beta))
            pert[vi][j] -= 2 * eps
            lo, _ = dpo_loss(DpoBatchLogps(*pert, beta=beta))
            np.testing.assert_allclose(grads[name][j], (hi - lo) / (2 * eps),
                                       rtol=1e-4, atol=1e-8)
    for _ in range(100):
        n = int(rng.integers(2, 8))
        scores = rng.uniform(-5.0, 5.0, n)
        g = infonce_scores_grad(scores)
        j = int(rng.integers(0, n))
        pert = scores.copy()
        pert[j] += eps
        hi = infonce_loss_from_scores(pert)
        pert[j] -= 2 * eps
        lo = infonce_loss_from_scores(pert)
        np.testing.assert_allclose(g[j], (hi - lo) / (2 * eps), rtol=1e-4, atol=1e-8)
    _ok(4, "analytic gradients match central finite differences")


def test_criterion_5_trainer_contracts_on_tiny_backend():
    start = time.perf_counter()
    nli = parse_nli_csv(bundled_data_path("synth_nli.csv"))
    from parapref.data import subsample

    pairs, _ = build_preference_pairs(subsample(nli, 200, seed=0), PARA_TEMPLATE)
    assert len(pairs) == 200

    def fresh():
        cfg = TinyTransformerConfig(layers=2, heads=4, hidden_dim=64, vocab=FULL_VOCAB,
                                    max_seq_len=64, seed=0)
        return TinyTransformer(cfg)

    config = DpoTrainConfig(beta=0.2, per_step_batch=8, grad_accum_steps=1, peak_lr=2e-3,
                            epochs=2, checkpoint_every=10**9, seed=0, weight_decay=0.0)

    model = fresh()
    reference = model.snapshot_frozen()
    probe = (pairs[0].prompt, pairs[0].chosen)
    ref_before = reference.sequence_logprob(*probe)

    _, log1, _ = train_dpo(model, pairs, config)

    # initial-step loss at ln 2
    assert abs(log1.records[0].loss - math.log(2)) <= 1e-6

    # frozen reference bit-identical before/after training
    assert reference.sequence_logprob(*probe) == ref_before

    # margin growth: mean of final 10 logged steps beats the first 10
    assert len(log1.records) >= 20
    first10 = np.mean([r.mean_margin for r in log1.records[:10]])
    last10 = np.mean([r.mean_margin for r in log1.records[-10:]])
    assert last10 > first10

    # same seed -> bit-identical train log
    _, log2, _ = train_dpo(fresh(), pairs, config)
    assert log1.records == log2.records

    elapsed = time.perf_counter() - start
    assert elapsed < 300.0, f"trainer contract run took {elapsed:.1f}s (budget 5 min)"
    _ok(5, f"trainer contracts (ln2 start, frozen ref, determinism, margin growth; {elapsed:.0f}s)")


def test_criterion_6_end_to_end_desk_scale_improvement():
    sts = load_sts_tsv(bundled_data_path("synth_sts.tsv"))
    assert len(sts) >= 20
    sts_sentences = sorted({s for rec in sts.records for s in rec[:2]})
    nli = parse_nli_csv(bundled_data_path("synth_nli.csv"))
    pairs, _ = build_preference_pairs(nli, PARA_TEMPLATE)

    outcomes = []
    for seed in range(5):
        model_cfg = TinyTransformerConfig(layers=2, heads=4, hidden_dim=64, vocab=FULL_VOCAB,
                                          max_seq_len=64, seed=seed, init_std=0.01)
        model = TinyTransformer(model_cfg)
        pre_sts = eval_sts(model, PROMPT_EOL, sts)
        pre_uni = uniformity(embed_corpus(model, PROMPT_EOL, sts_sentences))
        # freezing the unembedding forces preference margins to come from
        # hidden-state movement, which is what the embedding metrics measure
        train_cfg = DpoTrainConfig(beta=0.2, per_step_batch=8, grad_accum_steps=4,
                                   peak_lr=6e-3, warmup_ratio=0.1, epochs=14,
                                   checkpoint_every=10**9, seed=seed, weight_decay=0.0,
                                   freeze_unembedding=True)
        train_dpo(model, pairs, train_cfg)
        post_sts = eval_sts(model, PROMPT_EOL, sts)
        post_uni = uniformity(embed_corpus(model, PROMPT_EOL, sts_sentences))
        holds = (post_sts >= pre_sts) and (post_uni <= pre_uni)
        outcomes.append(holds)
        print(f"\n  seed {seed}: sts {pre_sts:7.2f} -> {post_sts:7.2f}, "
              f"uniformity {pre_uni:9.5f} -> {post_uni:9.5f}  [{'ok' if holds else 'MISS'}]")
    assert sum(outcomes) >= 4, f"direction held on only {sum(outcomes)}/5 seeds"
    _ok(6, f"desk-scale training improves STS and uniformity ({sum(outcomes)}/5 seeds)")


def test_criterion_7_metric_oracles():
    u = np.zeros(4)
    u[1] = 1.0
    assert uniformity(EmbeddingMatrix(np.stack([u, -u]))) == -8.0
    assert uniformity(EmbeddingMatrix(np.stack([u, u, u]))) == 0.0

    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    cross = EmbeddingMatrix(np.stack([e1, -e1, e2, -e2]))
    assert isotropy_score(cross) == pytest.approx(1.0, abs=1e-9)
    repeated = EmbeddingMatrix(np.stack([e1, e1, e1]))
    assert isotropy_score(repeated) == pytest.approx(math.exp(-2), abs=1e-9)

    hand = [
        GarInput(frozenset("abc"), frozenset(["a", "x"]), k=10),
        GarInput(frozenset(["b", "d"]), frozenset(["d", "y"]), k=10),
    ]
    assert gar(hand) == 0.5

    assert spearman([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6, abs=1e-12)
    _ok(7, "uniformity/isotropy/GAR/spearman oracle values")


def test_criterion_8_format_round_trips(tmp_path, capsys):
    # NLI CSV -> dataset -> persisted pairs -> reload identity
    nli_path = bundled_data_path("synth_nli.csv")
    dataset = parse_nli_csv(nli_path)
    pairs, _ = build_preference_pairs(dataset, PARA_TEMPLATE)
    pairs_path = tmp_path / "pairs.jsonl"
    save_pairs(pairs, pairs_path)
    assert load_pairs(pairs_path) == pairs

    # embedding file save/load bit-exact
    cfg = TinyTransformerConfig(layers=2, heads=2, hidden_dim=16, vocab=FULL_VOCAB,
                                max_seq_len=64, seed=1)
    model = TinyTransformer(cfg)
    matrix = embed_corpus(model, PROMPT_EOL, ["the dog runs .", "the cat naps ."])
    emb_path = tmp_path / "m.emb"
    save_embeddings(matrix, emb_path)
    np.testing.assert_array_equal(load_embeddings(emb_path).rows, matrix.rows)

    # checkpoint save/load bit-exact
    ckpt_path = tmp_path / "m.npz"
    save_checkpoint(model, ckpt_path)
    reloaded = load_checkpoint(ckpt_path)
    for name in model.params:
        np.testing.assert_array_equal(model.params[name], reloaded.params[name])
    probe = ("the dog runs .", "the dog sprints .")
    assert model.sequence_logprob(*probe) == reloaded.sequence_logprob(*probe)

    # report average equals the arithmetic mean of the dataset columns
    run = tmp_path / "run"
    run.mkdir()
    (run / "metrics.jsonl").write_text(
        '{"metric": "sts_spearman_x100", "dataset": "a", "value": 70.0}\n'
        '{"metric": "sts_spearman_x100", "dataset": "b", "value": 80.0}\n'
    )
    assert dispatch(["report", "--run-dir", str(run), "--json", str(run / "s.json")]) == 0
    capsys.readouterr()
    assert json.loads((run / "s.json").read_text())["sts_spearman_x100"]["avg"] == 75.0
    _ok(8, "CSV/pairs identity, embedding and checkpoint bit-exactness, report average")
