"""Domain types and prompt templates shared by every stage of the pipeline.

All types here are immutable after construction and safe to share across
threads.  Templates store a literal placeholder marker rather than relying on
positional substitution so that quote characters inside the pattern survive
bit-exactly; several patterns deliberately end with an open quote, which is
part of the extraction method and must not be stripped.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, DataFormatError

# Literal marker that each template pattern must contain exactly once.
PLACEHOLDER = "{sentence}"

EXTRACTION = "embedding_extraction"
PARAPHRASE = "paraphrase_instruction"
TEMPLATE_KINDS = (EXTRACTION, PARAPHRASE)


@dataclass(frozen=True)
class Sentence:
    """A raw sentence; ``id`` is an optional stable identifier."""

    text: str
    id: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("sentence text is empty after whitespace trimming")


@dataclass(frozen=True)
class SentenceTriplet:
    """Anchor plus a meaning-preserving positive and a contradicting negative.

    Anchor and positive are allowed to be near-duplicates or even equal; no
    inequality is imposed here.
    """

    anchor: Sentence
    positive: Sentence
    negative: Sentence


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt pattern with exactly one ``{sentence}`` slot.

    ``kind`` is either ``embedding_extraction`` (the filled prompt is fed to a
    model and the last hidden state is read out) or ``paraphrase_instruction``
    (the filled prompt asks the model to rephrase the sentence).
    """

    pattern: str
    kind: str
    name: str = ""

    def __post_init__(self):
        if self.kind not in TEMPLATE_KINDS:
            raise ConfigError(f"unknown template kind: {self.kind!r}")
        n = self.pattern.count(PLACEHOLDER)
        if n != 1:
            raise ConfigError(
                f"template pattern must contain {PLACEHOLDER!r} exactly once, found {n}"
            )


@dataclass(frozen=True)
class PreferencePair:
    """A templated prompt with a preferred and a rejected response."""

    prompt: str
    chosen: str
    rejected: str

    def __post_init__(self):
        if self.chosen == self.rejected:
            raise ValueError("chosen and rejected responses are identical")


def fill_template(template: PromptTemplate, sentence: Sentence) -> str:
    """Replace the placeholder with the sentence text, verbatim.

    Pure function: identical inputs yield identical output bytes.  The
    inserted text is never re-scanned, so a sentence containing the marker
    string is inserted as-is.
    """
    n = template.pattern.count(PLACEHOLDER)
    if n != 1:
        raise ConfigError(
            f"template pattern must contain {PLACEHOLDER!r} exactly once, found {n}"
        )
    return template.pattern.replace(PLACEHOLDER, sentence.text, 1)


# Extraction templates.  The trailing ':"' open quote steers the next-token
# distribution toward a single word and is part of the pattern.
PROMPT_EOL = PromptTemplate(
    pattern='This sentence: "{sentence}" means in one word:"',
    kind=EXTRACTION,
    name="prompteol",
)
PRETENDED_COT = PromptTemplate(
    pattern='After thinking step by step, this sentence: "{sentence}" means in one word:"',
    kind=EXTRACTION,
    name="pretended-cot",
)

# Paraphrase instruction templates used to build preference prompts.
PARAPHRASE_TEMPLATES = (
    PromptTemplate(
        pattern='Keep the same meaning of this sentence: "{sentence}", while making some changes.',
        kind=PARAPHRASE,
        name="keep-same-meaning",
    ),
    PromptTemplate(
        pattern='Generate a paraphrase of this sentence: "{sentence}" that preserves its meaning, while making some changes.',
        kind=PARAPHRASE,
        name="paraphrase-preserve",
    ),
    PromptTemplate(
        pattern='Rewrite the sentence: "{sentence}" while preserving its main meaning, but the wording may be simplified or rephrased.',
        kind=PARAPHRASE,
        name="rewrite-simplify",
    ),
    PromptTemplate(
        pattern='Keep the main meaning of this sentence: "{sentence}", and rewrite it in a different way.',
        kind=PARAPHRASE,
        name="keep-main-meaning",
    ),
    PromptTemplate(
        pattern='Generate a paraphrase of the sentence: "{sentence}".',
        kind=PARAPHRASE,
        name="paraphrase-plain",
    ),
)


def builtin_templates() -> list[PromptTemplate]:
    """All built-in templates: five paraphrase instructions, two extraction prompts."""
    return list(PARAPHRASE_TEMPLATES) + [PROMPT_EOL, PRETENDED_COT]


def resolve_template(key: str) -> PromptTemplate:
    """Look up a built-in template by name or by zero-based index."""
    templates = builtin_templates()
    by_name = {t.name: t for t in templates}
    if key in by_name:
        return by_name[key]
    try:
        idx = int(key)
    except ValueError:
        raise ConfigError(
            f"unknown template {key!r}; valid names: {sorted(by_name)}"
        ) from None
    if not 0 <= idx < len(templates):
        raise ConfigError(f"template index {idx} out of range 0..{len(templates) - 1}")
    return templates[idx]


def save_templates(path, templates) -> None:
    """Write a template registry: one tab-separated record (kind, name, pattern) per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in templates:
            if "\t" in t.pattern or "\n" in t.pattern:
                raise ConfigError("template pattern contains tab or newline; not serializable")
            fh.write(f"{t.kind}\t{t.name}\t{t.pattern}\n")


def load_templates(path) -> list[PromptTemplate]:
    """Read a template registry written by :func:`save_templates`."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            kind, name, pattern = parts
            out.append(PromptTemplate(pattern=pattern, kind=kind, name=name))
    return out
