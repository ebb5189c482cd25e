"""Randomness source with an optional deterministic seed mode.

Production actors draw from the OS CSPRNG. The harness passes a seed so
that provisioning keys, session keys, challenges and AEAD nonces are all
reproducible and two runs of the same script yield byte-identical reports.
"""

from __future__ import annotations

import random
import secrets

KEY_LEN = 32
CHALLENGE_HEX_LEN = 32  # 16 random bytes rendered as lowercase hex


class Rng:
    def __init__(self, seed: int | None = None) -> None:
        self._rand = random.Random(seed) if seed is not None else None
        self.seed = seed

    def bytes(self, n: int) -> bytes:
        if self._rand is not None:
            return self._rand.randbytes(n)
        return secrets.token_bytes(n)

    def key_bytes(self) -> bytes:
        return self.bytes(KEY_LEN)

    def challenge(self) -> str:
        return self.bytes(CHALLENGE_HEX_LEN // 2).hex()
