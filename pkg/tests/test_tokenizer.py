import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harp import tokenizer


def test_empty_with_bos():
    assert tokenizer.encode("", add_bos=True) == [256]


def test_ascii_byte():
    assert tokenizer.encode("A") == [65]


def test_round_trip_simple():
    for s in ("hello", "héllo wörld", "日本語", "a\x00b", "emoji 🙂 test"):
        assert tokenizer.decode(tokenizer.encode(s)) == s
        assert tokenizer.decode_bytes(tokenizer.encode(s)) == s.encode("utf-8")


def test_specials_dropped_in_decode():
    assert tokenizer.decode([tokenizer.PAD_ID, 65]) == "A"
    assert tokenizer.decode([tokenizer.BOS_ID, 72, 105, tokenizer.EOS_ID]) == "Hi"


def test_raw_mode_preserves_invalid_utf8():
    ids = [0xFF, 0xFE, 65]
    assert tokenizer.decode_bytes(ids) == b"\xff\xfeA"
    # display mode substitutes replacement characters instead of raising
    assert "A" in tokenizer.decode(ids)


def test_decode_rejects_out_of_range():
    with pytest.raises(ValueError):
        tokenizer.decode([tokenizer.VOCAB_SIZE])
    with pytest.raises(ValueError):
        tokenizer.decode_bytes([-1])


def test_bos_flag_changes_output():
    assert tokenizer.encode("x", add_bos=True) != tokenizer.encode("x", add_bos=False)


@given(st.text(max_size=200))
@settings(max_examples=300, deadline=None)
def test_round_trip_property(s):
    ids = tokenizer.encode(s, add_bos=True)
    assert ids[0] == tokenizer.BOS_ID
    assert all(0 <= i < tokenizer.VOCAB_SIZE for i in ids)
    assert tokenizer.decode(ids) == s
    assert tokenizer.decode_bytes(ids) == s.encode("utf-8")


@given(st.text(max_size=60), st.text(max_size=60))
@settings(max_examples=150, deadline=None)
def test_encode_injective(a, b):
    if a != b:
        assert tokenizer.encode(a) != tokenizer.encode(b)


def test_token_text_forms():
    assert tokenizer.token_text(65) == "A"
    assert tokenizer.token_text(0) == "\\x00"
    assert tokenizer.token_text(tokenizer.BOS_ID) == "<bos>"
    assert tokenizer.token_text(tokenizer.EOS_ID) == "<eos>"
    assert tokenizer.token_text(500) == "<tok500>"
