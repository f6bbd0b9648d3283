"""NLI triplet ingestion and preference-pair construction.

Input layout is a UTF-8 CSV with header ``sent0,sent1,hard_neg``: the anchor,
a meaning-preserving sentence, and a contradicting one.  No text normalization
is applied anywhere in this module; prompts must receive raw sentences.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .core import PARAPHRASE, PreferencePair, PromptTemplate, Sentence, SentenceTriplet, fill_template
from .errors import ConfigError, DataFormatError

NLI_HEADER = ("sent0", "sent1", "hard_neg")


@dataclass(frozen=True)
class TripletDataset:
    """An ordered, immutable collection of sentence triplets."""

    triplets: tuple[SentenceTriplet, ...]
    source: str = ""
    skipped_rows: int = 0

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self):
        return iter(self.triplets)


def parse_nli_csv(path) -> TripletDataset:
    """Parse an NLI triplet CSV into a :class:`TripletDataset`.

    One triplet per data row (sent0 -> anchor, sent1 -> positive,
    hard_neg -> negative).  Rows with any empty field are skipped and counted
    in ``skipped_rows``.  Standard CSV quoting applies, so fields may contain
    commas and escaped quotes.
    """
    triplets = []
    skipped = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a header row") from None
        if tuple(header) != NLI_HEADER:
            raise DataFormatError(
                f"{path}: expected header {','.join(NLI_HEADER)}, got {','.join(header)}"
            )
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataFormatError(f"{path}: row {rownum}: expected 3 columns, got {len(row)}")
            if any(not f.strip() for f in row):
                skipped += 1
                continue
            triplets.append(
                SentenceTriplet(Sentence(row[0]), Sentence(row[1]), Sentence(row[2]))
            )
    return TripletDataset(triplets=tuple(triplets), source=str(path), skipped_rows=skipped)


def save_triplets_csv(dataset: TripletDataset, path) -> None:
    """Persist a dataset in the same CSV layout accepted by :func:`parse_nli_csv`."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(NLI_HEADER)
        for t in dataset:
            writer.writerow([t.anchor.text, t.positive.text, t.negative.text])


def subsample(dataset: TripletDataset, n: int, seed: int) -> TripletDataset:
    """Deterministic pseudo-random subset of size ``n`` (seeded shuffle, prefix take)."""
    if not 0 < n <= len(dataset):
        raise ValueError(f"subset size {n} not in 1..{len(dataset)}")
    order = np.random.default_rng(seed).permutation(len(dataset))[:n]
    picked = tuple(dataset.triplets[i] for i in order)
    return TripletDataset(picked, source=f"{dataset.source}#sub{n}seed{seed}")


def build_preference_pairs(
    dataset: TripletDataset, template: PromptTemplate
) -> tuple[list[PreferencePair], int]:
    """Turn triplets into preference pairs using a paraphrase-instruction template.

    prompt = template filled with the anchor, chosen = positive, rejected =
    negative.  Pairs whose chosen and rejected texts coincide are dropped;
    returns (pairs, dropped_count) with input order preserved.
    """
    if template.kind != PARAPHRASE:
        raise ConfigError(
            f"preference prompts need a paraphrase_instruction template, got kind {template.kind!r}"
        )
    pairs = []
    dropped = 0
    for t in dataset:
        if t.positive.text == t.negative.text:
            dropped += 1
            continue
        pairs.append(
            PreferencePair(
                prompt=fill_template(template, t.anchor),
                chosen=t.positive.text,
                rejected=t.negative.text,
            )
        )
    return pairs, dropped


def save_pairs(pairs, path) -> None:
    """Write preference pairs as JSON lines with fields prompt/chosen/rejected."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {"prompt": p.prompt, "chosen": p.chosen, "rejected": p.rejected},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_pairs(path) -> list[PreferencePair]:
    """Read preference pairs written by :func:`save_pairs`."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pairs.append(
                    PreferencePair(
                        prompt=rec["prompt"], chosen=rec["chosen"], rejected=rec["rejected"]
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad pair record: {exc}") from None
    return pairs
