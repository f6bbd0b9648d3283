"""parapref: preference-optimization toolkit for sentence embeddings.

Builds paraphrase preference pairs from NLI triplets, tunes a causal language
model with a pairwise preference objective against a frozen reference, then
extracts and evaluates sentence embeddings.  Ships a tiny seeded transformer
backend so the full pipeline runs on a laptop CPU.
"""

__version__ = "0.1.0"
