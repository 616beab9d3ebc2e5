"""Named, independent random streams derived from one master seed."""

import zlib

import numpy as np


class SeedFanout:
    """
    Counter-based splitter: each (name, index) pair gets its own Philox stream.

    Streams depend only on the master seed and their key, so adding or
    skipping a stage never shifts the randomness seen by another stage.
    """

    def __init__(self, master_seed: int):
        if master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        self.master_seed = int(master_seed)

    def seed_sequence(self, name: str, index: int = 0) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.master_seed, zlib.crc32(name.encode("utf-8")), int(index)])

    def stream(self, name: str, index: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence(name, index)))

    def seed(self, name: str, index: int = 0) -> int:
        """A 32-bit integer seed for APIs that take plain ints (network init)."""
        return int(self.seed_sequence(name, index).generate_state(1, dtype=np.uint32)[0])
