"""Reproducible random streams.

Every stochastic draw in the engine comes from a named substream derived
from (seed, generation, step, reframe) through numpy's SeedSequence, so a
run is reproducible for a fixed seed and independent generations can run
in parallel without sharing state.
"""

from dataclasses import dataclass

import numpy as np

# Substream namespaces; keeps perturbation draws disjoint from sampling draws.
_PERTURB = 0
_SAMPLE = 1

_MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class RandomSource:
    """Root seed plus the generation id it is bound to."""

    seed: int
    generation: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= _MAX_SEED:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if self.generation < 0:
            raise ValueError("generation id must be non-negative")

    def perturbation(self, step: int, reframe: int) -> np.random.Generator:
        """Stream for the reframe-th perturbation drawn at a decode step."""
        seq = np.random.SeedSequence(
            [self.seed, _PERTURB, self.generation, step, reframe]
        )
        return np.random.default_rng(seq)

    def sampler(self) -> np.random.Generator:
        """Stream for stochastic token sampling, one per generation."""
        seq = np.random.SeedSequence([self.seed, _SAMPLE, self.generation])
        return np.random.default_rng(seq)
