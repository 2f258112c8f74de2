"""Seeded random vectors for reproducible experiments.

A plain 64-bit linear congruential generator is used instead of
``numpy.random`` so that every run of the laboratory (and any
reimplementation of it) can reproduce the exact same test vectors from
the constants below:

    state <- (A * state + C) mod 2**64,  A = 6364136223846793005,
                                         C = 1442695040888963407,

with uniform doubles taken from the top 53 bits, ``(state >> 11) * 2**-53``.
"""

import numpy as np

LCG_A = 6364136223846793005
LCG_C = 1442695040888963407
_MASK64 = (1 << 64) - 1


class Lcg:
    """Deterministic uniform generator; one instance per experiment."""

    def __init__(self, seed: int):
        self.state = (int(seed) ^ 0x9E3779B97F4A7C15) & _MASK64
        # warm up so nearby seeds decorrelate
        for _ in range(8):
            self._step()

    def _step(self) -> int:
        self.state = (LCG_A * self.state + LCG_C) & _MASK64
        return self.state

    def uniform(self, size=None):
        """Uniform floats in [0, 1)."""
        if size is None:
            return (self._step() >> 11) * 2.0**-53
        out = np.empty(int(size))
        for i in range(out.size):
            out[i] = (self._step() >> 11) * 2.0**-53
        return out

    def symmetric(self, size=None):
        """Uniform floats in [-1, 1)."""
        u = self.uniform(size)
        return 2.0 * u - 1.0


def random_admissible(mesh, rng: Lcg):
    """Random nodal vector, uniform in [-1, 1) on interior nodes and zero
    on every Dirichlet node."""
    u = np.zeros(mesh.n_nodes)
    u[mesh.interior] = rng.symmetric(mesh.interior.size)
    return u
