"""Named seed derivation: every random stream is sha256(global seed, purpose)."""

import hashlib


def derive_seed(seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
