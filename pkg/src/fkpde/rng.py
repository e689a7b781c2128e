"""Reproducible, splittable random streams."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RngStream:
    """A numpy ``Generator`` keyed by ``(seed, index)``.

    Streams with distinct indices are derived through ``SeedSequence``
    spawn keys and are statistically independent; identical keys give
    identical output.  The wrapped generator is passed straight into the
    compiled kernels, so the stream state advances in place.
    """

    seed: int
    index: tuple = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.index, int):
            self.index = (self.index,)
        self.index = tuple(int(i) for i in self.index)
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.index)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, i):
        """Independent sub-stream number ``i``."""
        return RngStream(self.seed, self.index + (int(i),))

    def get_state(self):
        return self.generator.bit_generator.state

    def set_state(self, state):
        self.generator.bit_generator.state = state


def as_generator(rng):
    """Accept an RngStream, a Generator, or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator
