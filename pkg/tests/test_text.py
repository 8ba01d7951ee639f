from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from audiocap import text
from audiocap.errors import ConfigError
from audiocap.text import (BOS, EOS, PAD, SPECIALS, UNK, CooccurrenceTable,
                           KeywordVocabulary, WordVocabulary, encode_caption,
                           extract_keywords, tokenize)


class TestTokenize:
    def test_punctuation_stripped(self):
        assert tokenize("A car passes by.") == ["a", "car", "passes", "by"]

    def test_repeated_tokens_kept(self):
        assert tokenize("Birds, birds!") == ["birds", "birds"]

    def test_empty_string(self):
        assert tokenize("") == []

    def test_hyphens_split_contractions_kept(self):
        assert tokenize("bird-song") == ["bird", "song"]
        assert tokenize("the car's engine") == ["the", "car's", "engine"]

    def test_hand_tokenized_fixture(self):
        captions = [
            "Cars are driving and birds are singing.",
            "A car passes by, while birds are chirping!",
            "Water drips; a tap was left open.",
            "Someone speaks,   then laughs.",
            "Rain-drops hit the tin roof.",
            "It's loud... very loud.",
        ]
        expected = Counter(
            "cars are driving and birds are singing a car passes by while birds are "
            "chirping water drips a tap was left open someone speaks then laughs "
            "rain drops hit the tin roof it's loud very loud".split())
        assert Counter(t for c in captions for t in tokenize(c)) == expected

    @given(st.text(max_size=60))
    def test_tokens_are_lowercase_words(self, s):
        for token in tokenize(s):
            assert token == token.lower()
            assert any(ch.isalnum() for ch in token)


class TestWordVocabulary:
    def test_empty_corpus_has_exactly_specials(self):
        vocab = WordVocabulary.build([])
        assert set(vocab.token_to_id) == set(SPECIALS)
        assert sorted(vocab.token_to_id.values()) == [0, 1, 2, 3]

    def test_count_threshold_is_strict(self):
        corpus = ["six " * 6, "five " * 5]
        vocab = WordVocabulary.build(corpus)
        assert "six" in vocab.token_to_id
        assert "five" not in vocab.token_to_id
        assert vocab.id_of("five") == vocab.unk_id

    def test_deterministic_ids_with_tiebreak(self):
        corpus = ["b a " * 7, "c " * 7]
        v1 = WordVocabulary.build(corpus)
        v2 = WordVocabulary.build(corpus)
        assert v1.token_to_id == v2.token_to_id
        # a, b, c all appear 7 times: lexicographic among equals
        assert v1.token_to_id["a"] < v1.token_to_id["b"] < v1.token_to_id["c"]

    def test_ids_dense(self, vocabs):
        vocab, _ = vocabs
        assert sorted(vocab.token_to_id.values()) == list(range(len(vocab)))

    def test_save_load_roundtrip(self, tmp_path, vocabs):
        vocab, _ = vocabs
        vocab.save(tmp_path / "wv.json")
        again = WordVocabulary.load(tmp_path / "wv.json")
        assert again.token_to_id == vocab.token_to_id
        assert again.content_hash() == vocab.content_hash()


class TestKeywordVocabulary:
    def test_surface_forms_merge_into_lemma(self):
        fields = ["cars;car;car"] * 4
        kv = KeywordVocabulary.build(fields, [], lemma_table={"cars": "car"})
        assert kv.lemma_to_index == {"car": 0}
        assert kv.counts["car"] == 12
        assert kv.surface_to_lemma["cars"] == "car"

    def test_threshold_more_than_ten(self):
        kv = KeywordVocabulary.build(["dog"] * 10, [], lemma_table={})
        assert "dog" not in kv.lemma_to_index
        kv = KeywordVocabulary.build(["dog"] * 11, [], lemma_table={})
        assert "dog" in kv.lemma_to_index

    def test_missing_lemma_table_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            KeywordVocabulary.build(["a"], [], lemma_table=tmp_path / "nope.csv")

    def test_file_names_contribute_surfaces(self):
        kv = KeywordVocabulary.build(["street"] * 6, ["street_01.wav"] * 5,
                                     lemma_table={})
        assert "street" in kv.lemma_to_index

    def test_save_load_roundtrip(self, tmp_path, vocabs):
        _, kv = vocabs
        kv.save(tmp_path / "kv.json")
        again = KeywordVocabulary.load(tmp_path / "kv.json")
        assert again.lemma_to_index == kv.lemma_to_index
        assert again.surface_to_lemma == kv.surface_to_lemma


class TestRuleLemmatizer:
    @pytest.mark.parametrize("surface,lemma", [
        ("cars", "car"), ("passes", "pass"), ("singing", "sing"),
        ("chirping", "chirp"), ("humming", "hum"), ("repeated", "repeat"),
        ("fades", "fade"), ("cries", "cry"), ("hiss", "hiss"), ("is", "is"),
        ("sing", "sing"), ("glass", "glass"),
    ])
    def test_suffix_rules(self, surface, lemma):
        assert text.rule_lemmatize(surface) == lemma

    def test_exception_table_wins(self):
        assert text.rule_lemmatize("people", {"people": "person"}) == "person"

    def test_bundled_table_loads(self):
        table = text.load_lemma_exceptions()
        assert table["children"] == "child"


class TestExtractKeywords:
    def kv(self):
        return KeywordVocabulary(
            surface_to_lemma={"car": "car", "cars": "car"},
            lemma_to_index={"car": 0})

    def test_single_match(self):
        assert extract_keywords(["a", "car", "passes"], self.kv()) == {0}

    def test_no_match_empty(self):
        assert extract_keywords(["quiet", "rain"], self.kv()) == set()

    def test_deduplicated(self):
        assert extract_keywords(["car", "cars", "car"], self.kv()) == {0}

    def test_hand_fixture(self):
        kv = KeywordVocabulary(
            surface_to_lemma={"bird": "bird", "birds": "bird", "sing": "sing",
                              "singing": "sing", "car": "car", "cars": "car"},
            lemma_to_index={"bird": 0, "car": 1, "sing": 2})
        fixtures = [
            ("cars are driving and birds are singing", {0, 1, 2}),
            ("a car passes by", {1}),
            ("birds chirp", {0}),
            ("water drips from a tap", set()),
            ("the bird sings a song", {0, 2}),
            ("one car and one bird", {0, 1}),
        ]
        for caption, expected in fixtures:
            assert extract_keywords(tokenize(caption), kv) == expected


class TestEncodeCaption:
    def vocab(self):
        tokens = "a car passes by now".split()
        ids = {t: i for i, t in enumerate(SPECIALS)}
        for t in tokens:
            ids[t] = len(ids)
        return WordVocabulary(ids)

    def test_short_caption_pads(self):
        vocab = self.vocab()
        enc = encode_caption(["a", "car", "passes"], vocab, n=20)
        assert enc.length == 3
        assert enc.ids[0] == vocab.bos_id
        assert enc.ids[4] == vocab.eos_id
        assert enc.ids[5:] == [vocab.pad_id] * 15
        assert len(enc.ids) == 20

    def test_long_caption_cropped_to_n(self):
        vocab = self.vocab()
        enc = encode_caption(["a"] * 25, vocab, n=20, max_length=20)
        assert len(enc.ids) == 20
        assert enc.length == 20
        assert vocab.eos_id not in enc.ids

    def test_oov_becomes_unk(self):
        vocab = self.vocab()
        enc = encode_caption(["a", "zebra"], vocab, n=20)
        assert enc.ids[2] == vocab.unk_id

    def test_pad_only_after_eos(self):
        vocab = self.vocab()
        enc = encode_caption(["car", "by"], vocab, n=20)
        first_pad = enc.ids.index(vocab.pad_id)
        assert enc.ids[first_pad - 1] == vocab.eos_id
        assert all(i == vocab.pad_id for i in enc.ids[first_pad:])

    @given(st.lists(st.sampled_from("a car passes by now".split()), max_size=18))
    def test_roundtrip_recovers_in_vocab_tokens(self, tokens):
        vocab = self.vocab()
        enc = encode_caption(tokens, vocab, n=20)
        assert vocab.tokens_of(enc.ids) == tokens


class TestCooccurrence:
    def test_worked_example_lists(self):
        """Keywords {car, sing, bird} with two car/bird captions: every
        keyword's list collects all eleven caption words."""
        kv = KeywordVocabulary(
            surface_to_lemma={"car": "car", "sing": "sing", "bird": "bird"},
            lemma_to_index={"car": 0, "sing": 1, "bird": 2})
        words = ("cars are driving and birds singing a passes by while "
                 "chirping").split()
        ids = {t: i for i, t in enumerate(SPECIALS)}
        for w in words:
            ids[w] = len(ids)
        vocab = WordVocabulary(ids)
        captions = [tokenize("Cars are driving and birds are singing"),
                    tokenize("A car passes by while birds are chirping and singing")]
        table = CooccurrenceTable.build([(captions, {0, 1, 2})], kv, vocab)
        expected = {vocab.id_of(w) for w in words} | {vocab.id_of("car")}
        for k in (0, 1, 2):
            assert table.words_for(k) == expected

    def test_item_without_keywords_contributes_nothing(self):
        kv = KeywordVocabulary(surface_to_lemma={"car": "car"},
                               lemma_to_index={"car": 0})
        vocab = WordVocabulary({t: i for i, t in enumerate(SPECIALS)})
        table = CooccurrenceTable.build([([["some", "words"]], set())], kv, vocab)
        assert table.lists == {}

    def test_three_item_fixture_matches_hand_table(self):
        kv = KeywordVocabulary(
            surface_to_lemma={"rain": "rain", "wind": "wind"},
            lemma_to_index={"rain": 0, "wind": 1})
        ids = {t: i for i, t in enumerate(SPECIALS)}
        for w in ["rain", "falls", "wind", "blows", "hard", "softly"]:
            ids[w] = len(ids)
        vocab = WordVocabulary(ids)
        items = [
            ([["rain", "falls"]], {0}),
            ([["wind", "blows", "hard"]], {1}),
            ([["rain", "falls", "softly"], ["wind", "blows"]], {0, 1}),
        ]
        table = CooccurrenceTable.build(items, kv, vocab)
        rain_words = {vocab.id_of(w) for w in
                      ["rain", "falls", "softly", "wind", "blows"]}
        wind_words = {vocab.id_of(w) for w in
                      ["wind", "blows", "hard", "rain", "falls", "softly"]}
        assert table.words_for(0) == rain_words
        assert table.words_for(1) == wind_words

    def test_soundness_on_training_split(self, training_data, vocabs):
        """Every caption word id sits in the list of every meta keyword of
        its item (mask invariant the penalty relies on)."""
        vocab, _ = vocabs
        for item in training_data.train:
            word_ids = {vocab.id_of(t) for toks in item.caption_tokens for t in toks}
            for k in item.meta_keywords:
                assert word_ids <= training_data.cooccurrence.words_for(k)

    def test_save_load_roundtrip(self, tmp_path, training_data):
        table = training_data.cooccurrence
        table.save(tmp_path / "cooc.json")
        again = CooccurrenceTable.load(tmp_path / "cooc.json")
        assert again.lists == table.lists
        assert again.word_vocab_size == table.word_vocab_size
