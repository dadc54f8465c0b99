"""Corpus loading, validation, splitting, and augmentation."""

import json

import numpy as np
import pytest

from shortgcl import CorpusError
from shortgcl.ingest import (
    augment_corpus,
    load_bundle,
    load_corpus,
    read_substitution_table,
    save_bundle,
    split_corpus,
)

from conftest import make_corpus_files, write_jsonl


class TestLoadCorpus:
    def test_happy_path_vocab_and_embeddings(self, tiny_corpus):
        corpus, word_emb, entity_emb = tiny_corpus
        bundle = load_corpus(corpus, word_emb, entity_emb)
        assert len(bundle.documents) == 6
        assert bundle.num_classes == 2
        assert len(bundle.word_vocab) == 10
        assert len(bundle.pos_vocab) == 3
        assert len(bundle.entity_vocab) == 3
        assert bundle.word_embeddings.shape == (10, 3)
        bundle.validate()

    def test_minimal_single_document(self, tmp_path):
        docs = [{"id": 0, "tokens": ["a"], "pos": ["NN"], "entities": [], "label": 0}]
        corpus, word_emb, entity_emb = make_corpus_files(tmp_path, docs)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        assert len(bundle.word_vocab) == 1
        assert len(bundle.pos_vocab) == 1
        assert len(bundle.entity_vocab) == 0
        assert bundle.entity_embeddings.shape[0] == 0

    def test_length_mismatch_rejected_with_count(self, tmp_path):
        docs = [
            {"id": 0, "tokens": ["a"], "pos": ["NN"], "entities": [], "label": 0},
            {"id": 1, "tokens": ["a", "b", "c"], "pos": ["NN", "VB"], "entities": [], "label": 0},
        ]
        corpus, word_emb, entity_emb = make_corpus_files(tmp_path, docs)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        assert len(bundle.documents) == 1
        assert len(bundle.rejected) == 1
        assert bundle.rejected[0][0] == 1

    def test_duplicate_id_fatal(self, tmp_path):
        docs = [
            {"id": 7, "tokens": ["a"], "pos": ["NN"], "entities": [], "label": 0},
            {"id": 7, "tokens": ["b"], "pos": ["NN"], "entities": [], "label": 0},
        ]
        corpus, word_emb, entity_emb = make_corpus_files(tmp_path, docs)
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(corpus, word_emb, entity_emb)

    def test_empty_corpus_fatal(self, tmp_path):
        corpus, word_emb, entity_emb = make_corpus_files(
            tmp_path, [{"id": 0, "tokens": ["a", "b"], "pos": ["NN"], "entities": [], "label": 0}]
        )
        with pytest.raises(CorpusError, match="empty"):
            load_corpus(corpus, word_emb, entity_emb)

    def test_oov_tokens_get_deterministic_vectors(self, tmp_path):
        docs = [{"id": 0, "tokens": ["known", "mystery"], "pos": ["NN", "NN"],
                 "entities": [], "label": 0}]
        corpus, word_emb, entity_emb = make_corpus_files(
            tmp_path, docs, word_vecs={"known": [1.0, 2.0, 3.0]}
        )
        b1 = load_corpus(corpus, word_emb, entity_emb)
        b2 = load_corpus(corpus, word_emb, entity_emb)
        idx = b1.word_vocab["mystery"]
        np.testing.assert_array_equal(b1.word_embeddings[idx], b2.word_embeddings[idx])
        assert np.all(np.abs(b1.word_embeddings[idx]) <= 0.01)
        known_idx = b1.word_vocab["known"]
        np.testing.assert_array_equal(b1.word_embeddings[known_idx], [1.0, 2.0, 3.0])

    def test_embedding_dimension_enforced(self, tmp_path):
        docs = [{"id": 0, "tokens": ["a", "b"], "pos": ["NN", "NN"], "entities": [], "label": 0}]
        corpus, _, entity_emb = make_corpus_files(tmp_path, docs)
        bad = tmp_path / "bad_emb.txt"
        bad.write_text("a 1.0 2.0\nb 1.0 2.0 3.0\n")
        with pytest.raises(CorpusError, match="expected 2 values"):
            load_corpus(corpus, str(bad), entity_emb)


class TestSplitCorpus:
    def _corpus(self, tmp_path, n_classes, per_class):
        docs = []
        i = 0
        for cls in range(n_classes):
            for _ in range(per_class):
                docs.append({"id": i, "tokens": [f"w{cls}"], "pos": ["NN"],
                             "entities": [], "label": cls})
                i += 1
        return make_corpus_files(tmp_path, docs, dim=2)

    def test_ohsumed_shaped_split_counts(self, tmp_path):
        # 23 classes, 20 labeled sampled per class: 460 labeled docs total.
        corpus, word_emb, entity_emb = self._corpus(tmp_path, 23, 25)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        bundle = split_corpus(bundle, 20, seed=0)
        assert len(bundle.splits["train"]) + len(bundle.splits["validation"]) == 460
        assert len(bundle.splits["train"]) == 230
        assert len(bundle.splits["test"]) == 23 * 25 - 460

    def test_two_class_forty_labeled(self, tmp_path):
        # 2 classes, 20 per class sampled: 20 train / 20 validation.
        corpus, word_emb, entity_emb = self._corpus(tmp_path, 2, 60)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        bundle = split_corpus(bundle, 20, seed=3)
        assert len(bundle.splits["train"]) == 20
        assert len(bundle.splits["validation"]) == 20

    def test_exhaustive_two_doc_split(self, tmp_path):
        corpus, word_emb, entity_emb = self._corpus(tmp_path, 1, 2)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        bundle = split_corpus(bundle, 2, seed=0)
        assert len(bundle.splits["train"]) == 1
        assert len(bundle.splits["validation"]) == 1
        assert bundle.splits["test"] == set()

    def test_deterministic_given_seed(self, tmp_path):
        corpus, word_emb, entity_emb = self._corpus(tmp_path, 3, 30)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        s1 = split_corpus(bundle, 10, seed=42).splits
        s2 = split_corpus(bundle, 10, seed=42).splits
        assert s1 == s2

    def test_partition_property(self, tmp_path):
        corpus, word_emb, entity_emb = self._corpus(tmp_path, 4, 15)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        bundle = split_corpus(bundle, 6, seed=9)
        tr, va, te = (bundle.splits[k] for k in ("train", "validation", "test"))
        all_ids = {d.doc_id for d in bundle.originals}
        assert tr | va | te == all_ids
        assert not (tr & va) and not (tr & te) and not (va & te)
        # stratification: per class, per_class_labeled/2 in train and validation
        label_of = {d.doc_id: d.label for d in bundle.originals}
        for cls in range(4):
            assert sum(1 for i in tr if label_of[i] == cls) == 3
            assert sum(1 for i in va if label_of[i] == cls) == 3

    def test_underpopulated_class_named_in_error(self, tmp_path):
        corpus, word_emb, entity_emb = self._corpus(tmp_path, 2, 5)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        with pytest.raises(CorpusError, match="class 0"):
            split_corpus(bundle, 10, seed=0)


class TestAugmentCorpus:
    def test_synonym_resimulation_oracle(self, tmp_path):
        # Oracle: replay the seeded generator independently of the library.
        docs = [{"id": 7, "tokens": ["good", "movie"], "pos": ["JJ", "NN"],
                 "entities": [], "label": 0}]
        corpus, word_emb, entity_emb = make_corpus_files(tmp_path, docs)
        table_path = write_jsonl(tmp_path / "syn.jsonl",
                                 [{"word": "good", "synonyms": ["fine"]}])
        bundle = load_corpus(corpus, word_emb, entity_emb)
        out = augment_corpus(bundle, "synonym", table_path, rate=0.5, seed=7)

        rng = np.random.default_rng([7, 7])  # [seed, doc_id]
        expected = []
        table = {"good": ["fine"]}
        for tok in ["good", "movie"]:
            if rng.random() < 0.5 and table.get(tok):
                expected.append(table[tok][int(rng.integers(len(table[tok])))])
            else:
                expected.append(tok)
        assert out.augmented[0].tokens == expected
        assert out.augmented[0].pos_tags == ["JJ", "NN"]

    def test_empty_table_full_rate_is_noop(self, tiny_corpus, tmp_path):
        corpus, word_emb, entity_emb = tiny_corpus
        table_path = write_jsonl(tmp_path / "empty_syn.jsonl", [])
        bundle = load_corpus(corpus, word_emb, entity_emb)
        out = augment_corpus(bundle, "synonym", table_path, rate=1.0, seed=0)
        for orig, aug in zip(out.originals, out.augmented):
            assert aug.tokens == orig.tokens
            assert aug.pos_tags == orig.pos_tags

    def test_deletion_always_leaves_survivor(self, tmp_path):
        docs = [{"id": 0, "tokens": ["a", "b"], "pos": ["NN", "VB"],
                 "entities": [], "label": 0}]
        corpus, word_emb, entity_emb = make_corpus_files(tmp_path, docs)
        bundle = load_corpus(corpus, word_emb, entity_emb)
        out = augment_corpus(bundle, "deletion", None, rate=1.0, seed=5)
        aug = out.augmented[0]
        assert len(aug.tokens) == 1
        assert aug.tokens[0] in ("a", "b")
        # survivor choice is reproducible
        again = augment_corpus(bundle, "deletion", None, rate=1.0, seed=5)
        assert again.augmented[0].tokens == aug.tokens

    def test_bijective_pairing_and_label_masking(self, tiny_corpus, tmp_path):
        corpus, word_emb, entity_emb = tiny_corpus
        table_path = write_jsonl(tmp_path / "syn.jsonl",
                                 [{"word": "cat", "synonyms": ["feline"]}])
        bundle = load_corpus(corpus, word_emb, entity_emb)
        out = augment_corpus(bundle, "synonym", table_path, rate=0.9, seed=1)
        assert len(out.augmented) == len(out.originals)
        assert {d.source_id for d in out.augmented} == {d.doc_id for d in out.originals}
        assert all(d.label is None for d in out.augmented)

    def test_synonym_preserves_length_deletion_never_empties(self, tiny_corpus, tmp_path):
        corpus, word_emb, entity_emb = tiny_corpus
        table_path = write_jsonl(
            tmp_path / "syn.jsonl",
            [{"word": w, "synonyms": [w + "_alt"]} for w in ("cat", "sat", "stock")],
        )
        bundle = load_corpus(corpus, word_emb, entity_emb)
        syn = augment_corpus(bundle, "synonym", table_path, rate=0.7, seed=2)
        for orig, aug in zip(syn.originals, syn.augmented):
            assert len(aug.tokens) == len(orig.tokens)
        dele = augment_corpus(bundle, "deletion", None, rate=0.9, seed=2)
        for aug in dele.augmented:
            assert len(aug.tokens) >= 1

    def test_new_words_extend_vocab_and_embeddings(self, tiny_corpus, tmp_path):
        corpus, word_emb, entity_emb = tiny_corpus
        table_path = write_jsonl(tmp_path / "syn.jsonl",
                                 [{"word": "cat", "synonyms": ["feline"]}])
        bundle = load_corpus(corpus, word_emb, entity_emb)
        out = augment_corpus(bundle, "synonym", table_path, rate=1.0, seed=3)
        assert "feline" in out.word_vocab
        assert out.word_embeddings.shape[0] == len(out.word_vocab)
        # feline is not in the embedding file: deterministic OOV vector
        row = out.word_embeddings[out.word_vocab["feline"]]
        assert np.all(np.abs(row) <= 0.01)

    def test_rate_bounds_and_missing_table_fatal(self, tiny_corpus):
        corpus, word_emb, entity_emb = tiny_corpus
        bundle = load_corpus(corpus, word_emb, entity_emb)
        with pytest.raises(CorpusError, match="rate"):
            augment_corpus(bundle, "deletion", None, rate=0.0, seed=0)
        with pytest.raises(CorpusError, match="rate"):
            augment_corpus(bundle, "deletion", None, rate=1.5, seed=0)
        with pytest.raises(CorpusError, match="table"):
            augment_corpus(bundle, "synonym", None, rate=0.5, seed=0)
        with pytest.raises(CorpusError, match="not found"):
            augment_corpus(bundle, "synonym", "/nonexistent.jsonl", rate=0.5, seed=0)

    def test_double_augmentation_rejected(self, tiny_corpus):
        corpus, word_emb, entity_emb = tiny_corpus
        bundle = load_corpus(corpus, word_emb, entity_emb)
        out = augment_corpus(bundle, "deletion", None, rate=0.5, seed=0)
        with pytest.raises(CorpusError, match="already"):
            augment_corpus(out, "deletion", None, rate=0.5, seed=0)

    def test_contextual_table_strategy(self, tiny_corpus, tmp_path):
        corpus, word_emb, entity_emb = tiny_corpus
        table_path = write_jsonl(tmp_path / "ctx.jsonl",
                                 [{"word": "rose", "synonyms": ["climbed", "gained"]}])
        bundle = load_corpus(corpus, word_emb, entity_emb)
        out = augment_corpus(bundle, "contextual_table", table_path, rate=1.0, seed=11)
        changed = [aug for orig, aug in zip(out.originals, out.augmented)
                   if aug.tokens != orig.tokens]
        assert changed  # every 'rose' is substituted at rate 1.0


class TestBundleRoundTrip:
    def test_save_load_save_bit_identical(self, tiny_corpus, tmp_path):
        corpus, word_emb, entity_emb = tiny_corpus
        bundle = load_corpus(corpus, word_emb, entity_emb)
        bundle = split_corpus(bundle, 2, seed=0)
        bundle = augment_corpus(bundle, "deletion", None, rate=0.3, seed=1)
        p1 = tmp_path / "b1.json"
        p2 = tmp_path / "b2.json"
        save_bundle(bundle, str(p1))
        reloaded = load_bundle(str(p1))
        save_bundle(reloaded, str(p2))
        assert p1.read_bytes() == p2.read_bytes()
        assert reloaded.splits == bundle.splits
        np.testing.assert_array_equal(reloaded.word_embeddings, bundle.word_embeddings)

    def test_substitution_table_parser(self, tmp_path):
        path = write_jsonl(
            tmp_path / "tbl.jsonl",
            [{"word": "a", "synonyms": ["b", "c"]}, {"word": "d", "synonyms": []}],
        )
        table = read_substitution_table(path)
        assert table == {"a": ["b", "c"], "d": []}

    def test_malformed_table_fatal(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"word": "a"}\n')
        with pytest.raises(CorpusError):
            read_substitution_table(str(path))
