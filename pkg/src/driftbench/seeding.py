"""Deterministic seed derivation for every stochastic component.

All randomness in the package flows from user-supplied 64-bit seeds. Child
seeds are derived by hashing the root seed together with a label path, so
separate components never share a stream and reruns are bit-reproducible.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *parts: int | str) -> int:
    """Derive a child seed from `root` and a label path.

    The same (root, parts) always yields the same value; distinct paths are
    independent for practical purposes. Result fits in a non-negative int64.
    """
    h = hashlib.sha256(str(int(root)).encode("ascii"))
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big") >> 1
