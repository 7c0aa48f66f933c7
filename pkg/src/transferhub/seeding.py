"""Hash-derived seeds so every task draws from its own stream."""

import hashlib


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from an arbitrary tuple of ints/strings.

    Python's ``hash`` is salted per process for strings, so sha256 is used.
    """
    text = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")
