"""Shared fixtures: tiny corpora written to disk the way production inputs
arrive (JSONL corpus, text embedding tables, JSONL synonym table)."""

import json

import numpy as np
import pytest


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return str(path)


def write_embeddings(path, vectors):
    """vectors: dict token -> list of floats."""
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in vectors.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")
    return str(path)


def make_corpus_files(tmp_path, docs, word_vecs=None, entity_vecs=None, dim=3):
    """Write corpus + embedding files; unspecified vectors are generated."""
    corpus = write_jsonl(tmp_path / "corpus.jsonl", docs)
    if word_vecs is None:
        rng = np.random.default_rng(0)
        tokens = sorted({t for d in docs for t in d.get("tokens", [])})
        word_vecs = {t: rng.normal(size=dim).tolist() for t in tokens}
    if entity_vecs is None:
        rng = np.random.default_rng(1)
        ents = sorted({e for d in docs for e in d.get("entities", [])})
        entity_vecs = {e: rng.normal(size=dim).tolist() for e in ents}
    word_emb = write_embeddings(tmp_path / "word_emb.txt", word_vecs)
    entity_emb = write_embeddings(tmp_path / "entity_emb.txt", entity_vecs)
    return corpus, word_emb, entity_emb


@pytest.fixture
def tiny_corpus(tmp_path):
    """Six labeled documents over a small vocabulary, two classes."""
    docs = [
        {"id": 0, "tokens": ["cat", "sat", "mat"], "pos": ["NN", "VB", "NN"],
         "entities": ["e:cat"], "label": 0},
        {"id": 1, "tokens": ["cat", "ran"], "pos": ["NN", "VB"],
         "entities": ["e:cat"], "label": 0},
        {"id": 2, "tokens": ["dog", "sat"], "pos": ["NN", "VB"],
         "entities": ["e:dog"], "label": 0},
        {"id": 3, "tokens": ["stock", "rose", "fast"], "pos": ["NN", "VB", "RB"],
         "entities": ["e:market"], "label": 1},
        {"id": 4, "tokens": ["stock", "fell"], "pos": ["NN", "VB"],
         "entities": ["e:market"], "label": 1},
        {"id": 5, "tokens": ["market", "rose"], "pos": ["NN", "VB"],
         "entities": [], "label": 1},
    ]
    return make_corpus_files(tmp_path, docs)
