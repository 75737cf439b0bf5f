"""Deterministic, named random substreams.

Every draw is a pure function of (seed material, stream name, counter),
so toggling one stream's consumers never perturbs another stream, and
results are identical across platforms and processes.
"""

from __future__ import annotations

import hashlib
import math

_DENOM = float(1 << 53)


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from arbitrary labeled parts."""
    material = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


class SubStream:
    """A counted stream of uniforms derived from a label.

    ``u(i)`` is the i-th uniform in [0, 1); it does not depend on whether
    any other index was ever drawn.
    """

    def __init__(self, *label_parts: object):
        self._prefix = "|".join(str(p) for p in label_parts)

    def u(self, counter: int) -> float:
        digest = hashlib.sha256(f"{self._prefix}|{counter}".encode("utf-8")).digest()
        return (int.from_bytes(digest[:8], "big") >> 11) / _DENOM

    def geometric(self, counter: int, mean: float) -> int:
        """Geometric sample >= 1 with the given mean, via inverse CDF."""
        if mean <= 1.0:
            return 1
        p = 1.0 / mean
        u = self.u(counter)
        # Support {1, 2, ...}; mean of ceil(log(1-u)/log(1-p)) is 1/p.
        return max(1, math.ceil(math.log1p(-u) / math.log1p(-p)))

    def randint(self, counter: int, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        if hi < lo:
            raise ValueError("hi < lo")
        return lo + int(self.u(counter) * (hi - lo + 1))
