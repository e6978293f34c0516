import pytest
import torch

from refseg.errors import ArgumentError, InvalidParseError, MissingParseError
from refseg.models import DependencyParse, Expression, Token
from refseg.text_encoder import TextEncoder, Vocabulary, encode_batch, encode_text, sinusoidal_encoding
from refseg.text_frontend import build_prompt, extract_main_object, prompt_for_expression, rollback_stats


def parse_of(rows):
    return DependencyParse(tuple(Token(*row) for row in rows))


BULL = parse_of([
    ("the", "DET", 1, "det"), ("bull", "NOUN", None, "root"), ("running", "VERB", 1, "acl"),
    ("in", "ADP", 5, "case"), ("the", "DET", 5, "det"), ("field", "NOUN", 2, "obl"),
])
MAN_WEARING = parse_of([
    ("man", "NOUN", 1, "nsubj"), ("wearing", "VERB", None, "root"), ("a", "DET", 3, "det"), ("hat", "NOUN", 1, "obj"),
])
CLOSEST = parse_of([("closest", "ADJ", None, "root"), ("to", "ADP", 2, "case"), ("us", "PRON", 0, "obl")])


class TestExtractMainObject:
    def test_root_noun_phrase(self):
        result = extract_main_object(BULL)
        assert result.phrase == "the bull"
        assert not result.rolled_back

    def test_verb_root_uses_first_child_noun(self):
        result = extract_main_object(MAN_WEARING)
        assert result.phrase == "man"
        assert not result.rolled_back

    def test_no_noun_rolls_back(self):
        result = extract_main_object(CLOSEST)
        assert result.phrase == "closest to us"
        assert result.rolled_back

    def test_phrase_stops_at_head_noun(self):
        parse = parse_of([("the", "DET", 2, "det"), ("big", "ADJ", 2, "amod"), ("dog", "NOUN", None, "root"),
                          ("with", "ADP", 4, "case"), ("spots", "NOUN", 2, "nmod")])
        assert extract_main_object(parse).phrase == "the big dog"

    def test_non_contiguous_modifier_is_dropped(self):
        # "red" modifies the noun, "very" between them does not
        parse = parse_of([("red", "ADJ", 2, "amod"), ("very", "ADV", 0, "advmod"), ("car", "NOUN", None, "root")])
        assert extract_main_object(parse).phrase == "car"

    def test_grandchild_noun_found_breadth_first(self):
        parse = parse_of([("look", "VERB", None, "root"), ("at", "ADP", 2, "case"), ("it", "PRON", 0, "obl"),
                          ("near", "ADP", 4, "case"), ("trees", "NOUN", 2, "nmod")])
        assert extract_main_object(parse).phrase == "trees"

    @pytest.mark.parametrize("rows", [
        [("a", "DET", None, "root"), ("b", "NOUN", None, "root")],
        [("a", "DET", 1, "det"), ("b", "NOUN", 0, "root")],
        [("a", "DET", 5, "det"), ("b", "NOUN", None, "root")],
    ])
    def test_invalid_parses(self, rows):
        with pytest.raises(InvalidParseError):
            extract_main_object(parse_of(rows))


class TestPrompt:
    def test_template(self):
        assert build_prompt("the bull") == "A Photo of the bull"
        assert build_prompt("clownfish") == "A Photo of clownfish"

    def test_empty_phrase(self):
        with pytest.raises(ArgumentError):
            build_prompt("")

    def test_prompt_for_expression(self):
        expr = Expression(text=BULL.text, parse=BULL)
        assert prompt_for_expression(expr) == "A Photo of the bull"
        assert prompt_for_expression(expr, use_extractor=False) == "A Photo of the bull running in the field"

    def test_missing_parse(self):
        with pytest.raises(MissingParseError):
            prompt_for_expression(Expression(text="the bull", parse=None))


def test_rollback_stats():
    stats = rollback_stats([BULL, MAN_WEARING, CLOSEST, CLOSEST])
    assert stats.count == 4
    assert stats.rolled_back == 2
    assert stats.rate == 0.5


class TestTextEncoder:
    @pytest.fixture
    def setup(self):
        torch.manual_seed(0)
        exprs = [Expression(BULL.text, BULL), Expression(MAN_WEARING.text, MAN_WEARING)]
        vocab = Vocabulary.build(exprs)
        return exprs, vocab, TextEncoder(len(vocab), 8, 2)

    def test_shape_and_determinism(self, setup):
        exprs, vocab, encoder = setup
        a = encode_text(exprs[0], vocab, encoder)
        b = encode_text(exprs[0], vocab, encoder)
        assert a.shape == (6, 8)
        assert torch.equal(a, b)

    def test_unknown_words_map_to_unk(self, setup):
        _, vocab, _ = setup
        assert vocab.encode(["bull", "zebra"]) == [vocab.stoi["bull"], 1]

    def test_padding_does_not_change_features(self, setup):
        exprs, vocab, encoder = setup
        alone = encode_text(exprs[1], vocab, encoder)
        ids, padding = encode_batch(vocab, exprs)
        batched = encoder(ids, padding).features[1, :len(MAN_WEARING)]
        assert torch.allclose(alone, batched, atol=1e-6)

    def test_gradient_matches_finite_differences(self, setup, param_gradcheck):
        exprs, vocab, encoder = setup
        ids, padding = encode_batch(vocab, exprs)
        assert param_gradcheck(encoder, ids, padding, readout=lambda out: out.features[~out.padding])

    def test_sinusoidal_encoding(self):
        table = sinusoidal_encoding(5, 8)
        assert table.shape == (5, 8)
        assert torch.allclose(table[0, 0::2], torch.zeros(4))
        assert torch.allclose(table[0, 1::2], torch.ones(4))
