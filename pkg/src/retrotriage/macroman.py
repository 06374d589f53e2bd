"""MacRoman filename handling shared by the HFS reader and the image builder."""

import unicodedata


def _build_fold_table() -> bytes:
    # Byte-level fold: uppercase and strip diacritics, staying inside MacRoman.
    # Characters whose folded form is not one MacRoman character (sharp s,
    # ligatures) keep their original byte.
    table = bytearray(range(256))
    for b in range(256):
        ch = bytes([b]).decode("mac_roman")
        up = unicodedata.normalize("NFD", ch.upper())
        base = "".join(c for c in up if unicodedata.category(c) != "Mn")
        if len(base) != 1:
            continue
        try:
            enc = base.encode("mac_roman")
        except UnicodeEncodeError:
            continue
        if len(enc) == 1:
            table[b] = enc[0]
    return bytes(table)


_FOLD = _build_fold_table()


def fold(raw: bytes) -> bytes:
    """Fold raw MacRoman name bytes for case-insensitive comparison."""
    return raw.translate(_FOLD)


def decode_name(raw: bytes) -> str:
    """Present on-disk name bytes; an embedded '/' becomes ':'."""
    return raw.decode("mac_roman").replace("/", ":")


def encode_name(name: str) -> bytes:
    """Turn a presented name back into on-disk bytes (':' becomes '/')."""
    return name.replace(":", "/").encode("mac_roman")
