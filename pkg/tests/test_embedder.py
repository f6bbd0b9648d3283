"""Embedding extraction, cosine, and the binary persistence format."""

import numpy as np
import pytest

from parapref.backend import TinyTransformer, TinyTransformerConfig
from parapref.core import PRETENDED_COT, PROMPT_EOL, Sentence, builtin_templates
from parapref.embedder import (
    EmbeddingMatrix,
    SentenceEmbedding,
    cosine_similarity,
    embed,
    embed_corpus,
    load_embeddings,
    save_embeddings,
)
from parapref.errors import ConfigError, DataFormatError, NumericError
from parapref.synth import world_vocabulary
from parapref.tokenizer import vocab_from_texts

VOCAB = tuple(sorted(set(
    vocab_from_texts([t.pattern for t in builtin_templates()]) + world_vocabulary()
)))


@pytest.fixture(scope="module")
def model():
    cfg = TinyTransformerConfig(layers=2, heads=2, hidden_dim=16, vocab=VOCAB,
                                max_seq_len=64, seed=0)
    return TinyTransformer(cfg)


def test_embed_deterministic(model):
    s = Sentence("the dog runs .")
    a = embed(model, PROMPT_EOL, s)
    b = embed(model, PROMPT_EOL, s)
    np.testing.assert_array_equal(a.vector, b.vector)
    assert a.dim == model.hidden_dim
    assert a.template_tag == "prompteol"


def test_embed_distinguishes_sentences(model):
    a = embed(model, PROMPT_EOL, Sentence("the dog runs ."))
    b = embed(model, PROMPT_EOL, Sentence("the cat sleeps ."))
    assert np.abs(a.vector - b.vector).max() > 1e-8


def test_embed_rejects_paraphrase_template(model):
    with pytest.raises(ConfigError):
        embed(model, builtin_templates()[0], Sentence("the dog runs ."))


def test_template_sensitivity(model):
    # the two extraction prompts must elicit different vectors
    s = Sentence("the dog runs .")
    a = embed(model, PROMPT_EOL, s)
    b = embed(model, PRETENDED_COT, s)
    assert np.abs(a.vector - b.vector).max() > 1e-8


def test_mean_pooling_flag(model):
    s = Sentence("the dog runs .")
    last = embed(model, PROMPT_EOL, s)
    mean = embed(model, PROMPT_EOL, s, pooling="mean")
    assert np.abs(last.vector - mean.vector).max() > 1e-8
    with pytest.raises(ConfigError):
        embed(model, PROMPT_EOL, s, pooling="max")


def test_embed_corpus_rows_align(model):
    sentences = ["the dog runs .", "the cat sleeps .", "the bird soars ."]
    mat = embed_corpus(model, PROMPT_EOL, sentences)
    assert mat.n == 3 and mat.dim == model.hidden_dim
    for i, s in enumerate(sentences):
        one = embed(model, PROMPT_EOL, Sentence(s)).vector.astype(np.float32)
        np.testing.assert_array_equal(mat.rows[i], one)
    # permuted input -> identically permuted rows
    perm = embed_corpus(model, PROMPT_EOL, sentences[::-1])
    np.testing.assert_array_equal(perm.rows, mat.rows[::-1])


def test_embed_corpus_singleton_matches_embed(model):
    mat = embed_corpus(model, PROMPT_EOL, ["the dog runs ."])
    one = embed(model, PROMPT_EOL, Sentence("the dog runs ."))
    np.testing.assert_allclose(mat.rows[0], one.vector, atol=1e-6)


def test_embed_corpus_error_names_index(model):
    with pytest.raises(ValueError, match="sentence 1"):
        embed_corpus(model, PROMPT_EOL, ["the dog runs .", "   "])


def test_cosine_similarity_contract():
    v = SentenceEmbedding(np.array([1.0, 2.0, 2.0]))
    assert cosine_similarity(v, v) == 1.0
    assert cosine_similarity(v, SentenceEmbedding(-v.vector)) == -1.0
    a = SentenceEmbedding(np.array([1.0, 0.0]))
    b = SentenceEmbedding(np.array([0.0, 1.0]))
    assert abs(cosine_similarity(a, b)) <= 1e-12
    with pytest.raises(NumericError):
        cosine_similarity(np.zeros(2), np.ones(2))


def test_embedding_validation():
    with pytest.raises(ValueError):
        SentenceEmbedding(np.array([1.0, np.inf]))
    with pytest.raises(ValueError):
        EmbeddingMatrix(np.zeros((0, 4)))


def test_save_load_round_trip_bit_exact(tmp_path, model):
    mat = embed_corpus(model, PROMPT_EOL, ["the dog runs .", "the cat naps ."])
    path = tmp_path / "emb.bin"
    save_embeddings(mat, path)
    back = load_embeddings(path)
    np.testing.assert_array_equal(back.rows, mat.rows)
    assert back.rows.dtype == np.float32
    assert back.model_tag == mat.model_tag
    assert back.template_tag == mat.template_tag
    # a second round trip is byte-identical on disk
    path2 = tmp_path / "emb2.bin"
    save_embeddings(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not an embedding file")
    with pytest.raises(DataFormatError):
        load_embeddings(path)


def test_load_rejects_truncation(tmp_path, model):
    mat = embed_corpus(model, PROMPT_EOL, ["the dog runs ."])
    path = tmp_path / "emb.bin"
    save_embeddings(mat, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(DataFormatError):
        load_embeddings(path)
