import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from domainsel.corpus import (
    DomainCorpus,
    TextPairExample,
    load_domain,
    split,
    tokenize,
    unigram_stats,
)
from domainsel.errors import ValidationError


def make_corpus(n_pos, n_neg, name="toy"):
    examples = []
    for i in range(n_pos):
        examples.append(TextPairExample(f"alpha {i}", f"beta {i}", 1))
    for i in range(n_neg):
        examples.append(TextPairExample(f"gamma {i}", f"delta {i}", 0))
    return DomainCorpus(name=name, examples=tuple(examples))


class TestTokenize:
    def test_punctuation_and_case(self):
        assert tokenize("Hello, World!") == ["hello", "world"]

    def test_digits_kept_separately(self):
        assert tokenize("C++11 rocks") == ["c", "11", "rocks"]

    def test_underscore_is_a_separator(self):
        assert tokenize("snake_case") == ["snake", "case"]

    def test_empty(self):
        assert tokenize("...!?") == []

    @given(st.text(max_size=80))
    def test_idempotent_on_rejoined_output(self, text):
        once = tokenize(text)
        assert tokenize(" ".join(once)) == once

    @given(st.text(max_size=80))
    def test_tokens_are_lowercase_alnum(self, text):
        for tok in tokenize(text):
            assert tok == tok.lower()
            assert tokenize(tok) == [tok]


class TestLoadDomain:
    def test_jsonl_roundtrip(self, tmp_path):
        p = tmp_path / "d.jsonl"
        rows = [
            {"text_a": "a cat", "text_b": "a feline", "label": 1},
            {"text_a": "a cat", "text_b": "the stock market", "label": 0},
        ]
        p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        corpus = load_domain(p, format="jsonl", name="d")
        assert corpus.name == "d"
        assert len(corpus.examples) == 2
        assert corpus.examples[0] == TextPairExample("a cat", "a feline", 1)
        assert corpus.examples[1].label == 0

    def test_jsonl_bad_json_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"text_a": "x", "text_b": "y", "label": 1}\n{oops\n')
        with pytest.raises(ValidationError, match="line 2"):
            load_domain(p, format="jsonl", name="d")

    def test_jsonl_missing_label_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"text_a": "x", "text_b": "y"}\n')
        with pytest.raises(ValidationError, match="line 1"):
            load_domain(p, format="jsonl", name="d")

    def test_jsonl_label_out_of_range(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"text_a": "x", "text_b": "y", "label": 2}\n')
        with pytest.raises(ValidationError, match="label"):
            load_domain(p, format="jsonl", name="d")

    def test_binarize_threshold_boundary(self, tmp_path):
        p = tmp_path / "d.jsonl"
        rows = [
            {"text_a": "u", "text_b": "v", "score": 3.9},
            {"text_a": "u", "text_b": "v", "score": 4.0},
            {"text_a": "u", "text_b": "v", "score": 4.7},
        ]
        p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        corpus = load_domain(p, format="jsonl", name="d", binarize_threshold=4.0)
        assert [ex.label for ex in corpus.examples] == [0, 1, 1]

    def test_binarize_requires_score(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text('{"text_a": "u", "text_b": "v", "label": 1}\n')
        with pytest.raises(ValidationError, match="score"):
            load_domain(p, format="jsonl", name="d", binarize_threshold=4.0)

    def test_tsv(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("text_a\ttext_b\tlabel\na cat\ta feline\t1\na cat\tmars\t0\n")
        corpus = load_domain(p, format="tsv", name="d")
        assert [ex.label for ex in corpus.examples] == [1, 0]
        assert corpus.examples[0].text_a == "a cat"

    def test_tsv_score_column_with_threshold(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("text_a\ttext_b\tscore\nu\tv\t3.2\nu\tv\t4.5\n")
        corpus = load_domain(p, format="tsv", name="d", binarize_threshold=4.0)
        assert [ex.label for ex in corpus.examples] == [0, 1]

    def test_tsv_bad_header(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("a\tb\tc\nx\ty\t1\n")
        with pytest.raises(ValidationError, match="header"):
            load_domain(p, format="tsv", name="d")

    def test_tsv_wrong_field_count_names_line(self, tmp_path):
        p = tmp_path / "d.tsv"
        p.write_text("text_a\ttext_b\tlabel\nx\ty\t1\nx\ty\n")
        with pytest.raises(ValidationError, match="line 3"):
            load_domain(p, format="tsv", name="d")

    def test_empty_after_tokenization_dropped(self, tmp_path):
        p = tmp_path / "d.jsonl"
        rows = [
            {"text_a": "!!!", "text_b": "ok fine", "label": 1},
            {"text_a": "still here", "text_b": "yes", "label": 0},
        ]
        p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        corpus = load_domain(p, format="jsonl", name="d")
        assert len(corpus.examples) == 1
        assert corpus.examples[0].text_a == "still here"

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValidationError, match="format"):
            load_domain(tmp_path / "d.csv", format="csv", name="d")


class TestCorpusContainer:
    def test_save_load_roundtrip(self, tmp_path):
        corpus = split(make_corpus(5, 4), seed=3)
        path = tmp_path / "c.json"
        corpus.save(path)
        assert DomainCorpus.load(path) == corpus

    def test_texts_order(self):
        corpus = make_corpus(2, 0)
        assert corpus.texts() == ["alpha 0", "beta 0", "alpha 1", "beta 1"]

    def test_subset_requires_split_assignment(self):
        with pytest.raises(ValidationError, match="no split"):
            make_corpus(3, 3).subset("train")

    def test_mismatched_splits_rejected(self):
        with pytest.raises(ValidationError, match="splits length"):
            DomainCorpus("x", (TextPairExample("a", "b", 1),), splits=("train", "val"))


class TestUnigramStats:
    def test_hand_counts(self):
        corpus = DomainCorpus("x", (TextPairExample("a b", "b c", 1),))
        stats = unigram_stats(corpus)
        assert stats.counts == {"a": 1, "b": 2, "c": 1}
        assert stats.total_tokens == 4
        assert stats.example_count == 1
        assert stats.avg_tokens_per_text == 2.0

    def test_split_filter(self):
        corpus = split(make_corpus(30, 30), seed=0)
        full = unigram_stats(corpus)
        parts = [unigram_stats(corpus, s) for s in ("train", "val", "test")]
        assert sum(p.total_tokens for p in parts) == full.total_tokens
        assert sum(p.example_count for p in parts) == full.example_count

    def test_empty_selection_rejected(self):
        corpus = DomainCorpus(
            "x", (TextPairExample("a", "b", 1),), splits=("train",)
        )
        with pytest.raises(ValidationError, match="no examples"):
            unigram_stats(corpus, "val")


class TestSplit:
    def test_sizes_stratified(self):
        corpus = split(make_corpus(50, 50), ratios=(0.8, 0.1, 0.1), seed=7)
        for name, want in (("train", 80), ("val", 10), ("test", 10)):
            idx = corpus.indices(name)
            assert len(idx) == want
            labels = [corpus.examples[i].label for i in idx]
            assert labels.count(1) == want // 2

    def test_deterministic_in_seed(self):
        a = split(make_corpus(40, 20), seed=11)
        b = split(make_corpus(40, 20), seed=11)
        c = split(make_corpus(40, 20), seed=12)
        assert a.splits == b.splits
        assert a.splits != c.splits

    def test_every_example_assigned(self):
        corpus = split(make_corpus(17, 9), seed=2)
        assert all(s in ("train", "val", "test") for s in corpus.splits)

    def test_uneven_counts_all_splits_nonempty(self):
        # Largest-remainder keeps val/test nonempty even for small corpora.
        corpus = split(make_corpus(8, 5), seed=1)
        for name in ("train", "val", "test"):
            assert corpus.indices(name)

    def test_too_few_of_one_label(self):
        with pytest.raises(ValidationError, match="label 0"):
            split(make_corpus(10, 2))

    def test_bad_ratios(self):
        with pytest.raises(ValidationError, match="sum"):
            split(make_corpus(5, 5), ratios=(0.8, 0.1, 0.2))
        with pytest.raises(ValidationError, match="positive"):
            split(make_corpus(5, 5), ratios=(1.0, 0.0, 0.0))

    @given(st.integers(0, 2**32 - 1))
    def test_partition_property(self, seed):
        corpus = split(make_corpus(13, 11), seed=seed)
        seen = sorted(
            i for name in ("train", "val", "test") for i in corpus.indices(name)
        )
        assert seen == list(range(24))
