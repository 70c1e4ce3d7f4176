"""Counter-based random streams.

Every random draw in the package goes through :class:`SeededRng`, a Philox
generator keyed by ``(seed, stream)``. Distinct streams never overlap, so
per-example or per-run noise can be drawn in any order and still reproduce.

Not a cryptographic source: the randomness here is for reproducible research,
not for deployments that need protection against an adversary observing the
noise generator.
"""
import math

import numpy as np

ALGORITHM = "philox4x64-boxmuller"


def _mix(parent, child):
    # splitmix64 finalizer over the pair; stable across platforms and Python versions
    mask = 2**64 - 1
    z = (parent * 0x9E3779B97F4A7C15 + child + 1) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


class SeededRng:
    """Reproducible random stream identified by ``(seed, stream)``."""

    def __init__(self, seed=0, stream=0):
        self.seed = int(seed) & (2**64 - 1)
        self.stream = int(stream) & (2**64 - 1)
        self._bitgen = np.random.Philox(key=(self.stream << 64) | self.seed)
        self._gen = np.random.Generator(self._bitgen)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"

    def spawn(self, stream):
        """Independent child stream; derived from this seed, not from the draw position."""
        return SeededRng(self.seed, _mix(self.stream, int(stream)))

    @property
    def state(self):
        st = self._bitgen.state["state"]
        return {
            "algorithm": ALGORITHM,
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(c) for c in st["counter"]],
        }

    def uniform(self, size=None):
        """Uniform draws on the open interval (0, 1)."""
        u = self._gen.random(size)
        # random() is on [0, 1); shift away from the zero endpoint for log transforms
        return np.where(u == 0.0, np.finfo(float).tiny, u) if size is not None else (u or 5e-324)

    def normal(self, size=None):
        """Standard normal draws by Box-Muller on uniform pairs."""
        n = 1 if size is None else int(np.prod(size))
        half = (n + 1) // 2
        u1 = self.uniform(half)
        u2 = self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * math.pi * u2), r * np.sin(2 * math.pi * u2)])[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def laplace(self, scale, size=None):
        """Laplace(0, scale) by inverse CDF."""
        u = self.uniform(size) - 0.5
        return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def integers(self, high, size=None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, p=None):
        return self._gen.choice(n, size=size, p=p)
