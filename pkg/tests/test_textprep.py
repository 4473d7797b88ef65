"""Vocabulary construction and fixed-length encoding."""

import numpy as np
import pytest

from debias_mf.errors import DataError
from debias_mf.textprep import (PAD_ID, UNK_ID, Corpus, build_vocabulary, encode,
                                encode_corpus, load_documents, load_vocabulary,
                                save_vocabulary, tokenize)


class TestTokenize:
    def test_lowercase_and_split_on_non_alphanumeric(self):
        assert tokenize("Hello, World! x2") == ["hello", "world", "x2"]

    def test_empty_text(self):
        assert tokenize("  ...  ") == []


class TestBuildVocabulary:
    def test_frequency_then_lexicographic(self):
        vocab = build_vocabulary(["a a b", "b c"], max_size=2)
        # a:2, b:2, c:1 -> tie between a and b broken lexicographically
        assert set(vocab.token_to_id) == {"a", "b"}
        assert vocab.token_to_id["a"] == 2
        assert vocab.token_to_id["b"] == 3

    def test_max_size_zero_keeps_only_specials(self):
        vocab = build_vocabulary(["a b c"], max_size=0)
        assert len(vocab.token_to_id) == 0
        assert len(vocab) == 2

    def test_cap_applies_when_enough_distinct_tokens(self):
        docs = [f"tok{i}" for i in range(50)]
        distinct = len({t for d in docs for t in tokenize(d)})
        assert distinct == 50
        vocab = build_vocabulary(docs, max_size=20)
        assert len(vocab) == 20 + 2

    def test_all_empty_documents_is_an_error(self):
        with pytest.raises(DataError, match="empty"):
            build_vocabulary(["", "   ", "..."], max_size=5)

    def test_deterministic_for_fixed_input(self):
        docs = ["c a b a", "b c c d"]
        a = build_vocabulary(docs, max_size=3)
        b = build_vocabulary(docs, max_size=3)
        assert a.token_to_id == b.token_to_id


class TestEncode:
    def test_empty_document_is_all_padding(self):
        vocab = build_vocabulary(["a"], max_size=1)
        np.testing.assert_array_equal(encode("", vocab, 5), [0, 0, 0, 0, 0])

    def test_long_document_is_truncated_to_prefix(self):
        vocab = build_vocabulary(["w"], max_size=1)
        doc = " ".join(["w"] * 600)
        ids = encode(doc, vocab, 500)
        assert len(ids) == 500
        assert (ids == vocab.token_to_id["w"]).all()
        assert PAD_ID not in ids

    def test_unknowns_then_padding(self):
        vocab = build_vocabulary(["a b"], max_size=2)
        np.testing.assert_array_equal(encode("x y", vocab, 3),
                                      [UNK_ID, UNK_ID, PAD_ID])

    @pytest.mark.parametrize("text", ["", "a", "a b c d e f g h"])
    def test_output_length_is_always_l(self, text):
        vocab = build_vocabulary(["a b c"], max_size=3)
        assert len(encode(text, vocab, 4)) == 4

    def test_known_tokens_survive_round_trip(self):
        vocab = build_vocabulary(["red green blue"], max_size=3)
        ids = encode("blue red", vocab, 4)
        assert ids[0] == vocab.token_to_id["blue"]
        assert ids[1] == vocab.token_to_id["red"]

    def test_length_must_be_positive(self):
        vocab = build_vocabulary(["a"], max_size=1)
        with pytest.raises(ValueError):
            encode("a", vocab, 0)


class TestCorpus:
    def test_encode_corpus_shape_and_bounds(self):
        vocab = build_vocabulary(["a b", "c"], max_size=3)
        corpus = encode_corpus(["a c", "b b b b b"], vocab, 4)
        assert corpus.sequences.shape == (2, 4)
        assert corpus.num_items == 2
        assert corpus.sequences.max() < len(vocab)

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(ValueError, match="out of vocabulary"):
            Corpus(sequences=np.array([[0, 9]]), length=2, vocab_size=5)

    def test_row_length_enforced(self):
        with pytest.raises(ValueError, match="sequences"):
            Corpus(sequences=np.zeros((2, 3), dtype=int), length=4, vocab_size=5)


class TestFiles:
    def test_documents_file_round_trip(self, tmp_path):
        path = tmp_path / "docs.tsv"
        path.write_text("10\tsome movie about space\n20\tanother text\n")
        docs = load_documents(path)
        assert docs == {10: "some movie about space", 20: "another text"}

    def test_documents_missing_tab_is_an_error(self, tmp_path):
        path = tmp_path / "docs.tsv"
        path.write_text("10 no tab here\n")
        with pytest.raises(DataError, match="line 1"):
            load_documents(path)

    def test_vocabulary_file_round_trip(self, tmp_path):
        vocab = build_vocabulary(["a a b c"], max_size=3)
        path = tmp_path / "vocab.tsv"
        save_vocabulary(vocab, path)
        back = load_vocabulary(path)
        assert back.token_to_id == vocab.token_to_id
