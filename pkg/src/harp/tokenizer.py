"""Byte-level tokenizer.

Vocab layout: ids 0..255 are raw byte values, then BOS=256, EOS=257,
PAD=258. Any UTF-8 text round-trips byte-exactly, so no trained vocabulary
ships with the engine. Checkpoints may declare a larger vocab; ids >= 259
are never produced or consumed by the tokenizer.
"""

BOS_ID = 256
EOS_ID = 257
PAD_ID = 258
VOCAB_SIZE = 259

_SPECIAL_TEXT = {BOS_ID: "<bos>", EOS_ID: "<eos>", PAD_ID: "<pad>"}


def encode(text: str, add_bos: bool = False) -> list[int]:
    """UTF-8 bytes as token ids, optionally prefixed with BOS."""
    ids = list(text.encode("utf-8"))
    if add_bos:
        return [BOS_ID] + ids
    return ids


def decode_bytes(ids: list[int]) -> bytes:
    """Raw mode: specials dropped, remaining bytes concatenated exactly."""
    out = bytearray()
    for i in ids:
        if not 0 <= i < VOCAB_SIZE:
            raise ValueError(f"token id {i} outside vocabulary of size {VOCAB_SIZE}")
        if i < 256:
            out.append(i)
    return bytes(out)


def decode(ids: list[int]) -> str:
    """Display mode: invalid UTF-8 runs become replacement characters."""
    return decode_bytes(ids).decode("utf-8", errors="replace")


def token_text(token_id: int) -> str:
    """Single-token display form used in traces.

    Printable ASCII bytes render as themselves, other bytes as \\xHH escapes,
    specials by name; ids beyond the byte vocab get a numeric placeholder.
    """
    if token_id < 0:
        raise ValueError(f"negative token id {token_id}")
    if token_id in _SPECIAL_TEXT:
        return _SPECIAL_TEXT[token_id]
    if token_id >= VOCAB_SIZE:
        return f"<tok{token_id}>"
    if 0x20 <= token_id < 0x7F:
        return chr(token_id)
    return f"\\x{token_id:02x}"
