from __future__ import annotations

import hashlib


def derive_seed(root: int, *labels) -> int:
    """A 63-bit seed for one stage, fixed by the root seed and the stage labels.

    Hashing the labels (rather than spawning in call order) keeps every
    stage's randomness independent of which other stages ran.
    """
    key = ":".join([str(int(root))] + [str(label) for label in labels]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1
