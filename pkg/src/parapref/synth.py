"""Deterministic synthetic corpus for desk-scale runs and tests.

A small closed world of subject nouns and antonymous verb-concept pairs, each
concept carrying several interchangeable verbs.  From it we derive:

* NLI-style triplets: anchor "the dog runs .", positive swaps in a synonym
  ("the dog sprints ."), negative swaps in an opposite-concept verb
  ("the dog rests .");
* STS-style scored pairs whose gold scores encode the same structure
  (synonym swap -> 5.0, opposite swap -> 0.0, different subject -> 2.0);
* plain sentence lists for embedding-space metrics.

Everything is a pure function of the seed, so bundled data files can be
regenerated and verified byte-for-byte.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .data import TripletDataset
from .core import Sentence, SentenceTriplet


def bundled_data_path(name: str):
    """Filesystem path of a data file shipped inside the package."""
    path = resources.files("parapref") / "data" / name
    if not path.is_file():
        raise FileNotFoundError(f"no bundled data file named {name!r}")
    return path

SUBJECTS = (
    "dog", "cat", "bird", "horse", "man", "woman", "child", "farmer", "singer", "teacher",
)

# Antonymous concept pairs; verbs within one tuple are interchangeable.
CONCEPT_PAIRS = (
    (("runs", "sprints", "races", "dashes"), ("rests", "sleeps", "naps", "idles")),
    (("laughs", "smiles", "cheers", "rejoices"), ("cries", "weeps", "sobs", "frowns")),
    (("rises", "climbs", "ascends", "soars"), ("falls", "drops", "sinks", "descends")),
    (("opens", "unlocks", "unseals", "unfolds"), ("closes", "locks", "seals", "folds")),
)

GOLD_PARAPHRASE = 5.0
GOLD_CONTRADICTION = 0.0
GOLD_UNRELATED = 2.0


def make_sentence(subject: str, verb: str) -> str:
    return f"the {subject} {verb} ."


def world_vocabulary() -> list[str]:
    """Every word the generator can emit (fit for tokenizer construction)."""
    words = {"the", "."}
    words.update(SUBJECTS)
    for pos, neg in CONCEPT_PAIRS:
        words.update(pos)
        words.update(neg)
    return sorted(words)


def _pick_two(rng, options):
    i, j = rng.choice(len(options), size=2, replace=False)
    return options[i], options[j]


def generate_triplets(n: int, seed: int = 0) -> TripletDataset:
    """n triplets: anchor/synonym-positive/opposite-negative over one subject."""
    rng = np.random.default_rng(seed)
    triplets = []
    for _ in range(n):
        subject = SUBJECTS[rng.integers(len(SUBJECTS))]
        pos_set, neg_set = CONCEPT_PAIRS[rng.integers(len(CONCEPT_PAIRS))]
        if rng.integers(2):
            pos_set, neg_set = neg_set, pos_set
        anchor_verb, positive_verb = _pick_two(rng, pos_set)
        negative_verb = neg_set[rng.integers(len(neg_set))]
        triplets.append(
            SentenceTriplet(
                Sentence(make_sentence(subject, anchor_verb)),
                Sentence(make_sentence(subject, positive_verb)),
                Sentence(make_sentence(subject, negative_verb)),
            )
        )
    return TripletDataset(tuple(triplets), source=f"synthetic(n={n},seed={seed})")


def generate_sts(n_pairs: int, seed: int = 0) -> list[tuple[str, str, float]]:
    """Scored sentence pairs cycling through paraphrase, contradiction, and
    different-subject relations."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_pairs):
        subject = SUBJECTS[rng.integers(len(SUBJECTS))]
        pos_set, neg_set = CONCEPT_PAIRS[rng.integers(len(CONCEPT_PAIRS))]
        if rng.integers(2):
            pos_set, neg_set = neg_set, pos_set
        kind = i % 3
        if kind == 0:
            v1, v2 = _pick_two(rng, pos_set)
            out.append((make_sentence(subject, v1), make_sentence(subject, v2), GOLD_PARAPHRASE))
        elif kind == 1:
            v1 = pos_set[rng.integers(len(pos_set))]
            v2 = neg_set[rng.integers(len(neg_set))]
            out.append((make_sentence(subject, v1), make_sentence(subject, v2), GOLD_CONTRADICTION))
        else:
            # unrelated tier: different subject AND a non-antonymous concept,
            # so the pair is neither reinforced nor repelled by training
            other = SUBJECTS[(SUBJECTS.index(subject) + 1 + rng.integers(len(SUBJECTS) - 1)) % len(SUBJECTS)]
            pair_idx = rng.integers(len(CONCEPT_PAIRS))
            other_idx = (pair_idx + 1 + rng.integers(len(CONCEPT_PAIRS) - 1)) % len(CONCEPT_PAIRS)
            set1 = CONCEPT_PAIRS[pair_idx][rng.integers(2)]
            set2 = CONCEPT_PAIRS[other_idx][rng.integers(2)]
            v1 = set1[rng.integers(len(set1))]
            v2 = set2[rng.integers(len(set2))]
            out.append((make_sentence(subject, v1), make_sentence(other, v2), GOLD_UNRELATED))
    return out


def generate_sentences(n: int, seed: int = 0) -> list[str]:
    """Plain world sentences for embedding-space metrics."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        subject = SUBJECTS[rng.integers(len(SUBJECTS))]
        pair = CONCEPT_PAIRS[rng.integers(len(CONCEPT_PAIRS))]
        verbs = pair[rng.integers(2)]
        out.append(make_sentence(subject, verbs[rng.integers(len(verbs))]))
    return out


def write_sts_tsv(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s1, s2, gold in records:
            fh.write(f"{s1}\t{s2}\t{gold}\n")


def write_bundled_data(directory, n_triplets=600, n_sts=42, n_sentences=60, seed=7) -> None:
    """Regenerate the data files shipped inside the package."""
    from pathlib import Path

    from .data import save_triplets_csv

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_triplets_csv(generate_triplets(n_triplets, seed=seed), directory / "synth_nli.csv")
    write_sts_tsv(generate_sts(n_sts, seed=seed + 1), directory / "synth_sts.tsv")
    with open(directory / "synth_sentences.txt", "w", encoding="utf-8") as fh:
        for line in generate_sentences(n_sentences, seed=seed + 2):
            fh.write(line + "\n")
