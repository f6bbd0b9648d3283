"""Synthetic world generator: determinism and bundled-file sync."""

import numpy as np
import pytest

from parapref.data import parse_nli_csv, save_triplets_csv
from parapref.synth import (
    CONCEPT_PAIRS,
    GOLD_CONTRADICTION,
    GOLD_PARAPHRASE,
    GOLD_UNRELATED,
    bundled_data_path,
    generate_sentences,
    generate_sts,
    generate_triplets,
    make_sentence,
    world_vocabulary,
    write_bundled_data,
    write_sts_tsv,
)
from parapref.tokenizer import split_words


def verb_class(verb):
    for pair in CONCEPT_PAIRS:
        for side, verbs in enumerate(pair):
            if verb in verbs:
                return pair, side
    raise AssertionError(f"unknown verb {verb}")


def test_triplets_encode_synonym_antonym_structure():
    ds = generate_triplets(100, seed=3)
    for t in ds:
        sa, sv = t.anchor.text.split()[1:3]
        pa, pv = t.positive.text.split()[1:3]
        na, nv = t.negative.text.split()[1:3]
        assert sa == pa == na  # same subject throughout
        pair_a, side_a = verb_class(sv)
        pair_p, side_p = verb_class(pv)
        pair_n, side_n = verb_class(nv)
        assert (pair_a, side_a) == (pair_p, side_p)  # positive is a synonym
        assert pair_n == pair_a and side_n != side_a  # negative is the antonym class
        assert sv != pv


def test_sts_tiers():
    records = generate_sts(60, seed=5)
    assert len(records) == 60
    golds = {g for _, _, g in records}
    assert golds == {GOLD_PARAPHRASE, GOLD_CONTRADICTION, GOLD_UNRELATED}
    for s1, s2, gold in records:
        v1, v2 = s1.split()[2], s2.split()[2]
        pair1, side1 = verb_class(v1)
        pair2, side2 = verb_class(v2)
        if gold == GOLD_PARAPHRASE:
            assert (pair1, side1) == (pair2, side2) and s1.split()[1] == s2.split()[1]
        elif gold == GOLD_CONTRADICTION:
            assert pair1 == pair2 and side1 != side2
        else:
            assert pair1 != pair2 and s1.split()[1] != s2.split()[1]


def test_generators_deterministic():
    assert generate_triplets(20, seed=1).triplets == generate_triplets(20, seed=1).triplets
    assert generate_sts(20, seed=1) == generate_sts(20, seed=1)
    assert generate_sentences(20, seed=1) == generate_sentences(20, seed=1)


def test_world_vocabulary_covers_generated_text():
    vocab = set(world_vocabulary())
    for s in generate_sentences(50, seed=2):
        assert set(split_words(s)) <= vocab


def test_bundled_files_match_generator(tmp_path):
    write_bundled_data(tmp_path, n_sts=60)
    for name in ("synth_nli.csv", "synth_sts.tsv", "synth_sentences.txt"):
        bundled = bundled_data_path(name).read_bytes()
        regenerated = (tmp_path / name).read_bytes()
        assert bundled == regenerated, f"{name} is stale; regenerate with write_bundled_data"


def test_bundled_path_rejects_unknown():
    with pytest.raises(FileNotFoundError):
        bundled_data_path("nope.bin")


def test_make_sentence_shape():
    assert make_sentence("dog", "runs") == "the dog runs ."
