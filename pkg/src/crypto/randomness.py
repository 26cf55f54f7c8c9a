import os
import hashlib
from abc import ABC, abstractmethod
import numpy as np

from ..errors import RandomnessError


class RandomSource(ABC):
    """
    Source of uniformly random bytes for key generation, commitment keys and permutations.
    Derived samplers (bounded integers, permutations) are built on top of random_bytes
    by rejection sampling, so every subclass only has to deliver raw bytes.
    """

    @abstractmethod
    def random_bytes(self, n: int) -> bytes:
        """
        Returns n uniformly random bytes.

        Args:
            n: Number of bytes
        Returns:
            Byte string of length n
        """
        pass

    def uniform_ints(self, low: int, high: int, size: int) -> np.ndarray:
        """
        Draws integers uniformly from [low, high) using 64-bit words and rejection below
        the largest multiple of the range size.

        Args:
            low: Lower bound (inclusive)
            high: Upper bound (exclusive)
            size: Number of samples
        Returns:
            int64 array of shape (size,)
        """
        span = high - low
        if span <= 0:
            raise ValueError(f"empty range [{low}, {high})")
        if span > 2**63:
            raise ValueError("range does not fit into 63 bits")
        limit = np.uint64((2**64 // span) * span - 1)
        out = np.empty(0, dtype=np.uint64)
        while len(out) < size:
            missing = size - len(out)
            words = np.frombuffer(self.random_bytes(8 * (missing + 8)), dtype="<u8")
            out = np.concatenate([out, words[words <= limit]])
        return (out[:size] % np.uint64(span)).astype(np.int64) + low

    def randint(self, low: int, high: int) -> int:
        return int(self.uniform_ints(low, high, 1)[0])

    def permutation(self, k: int) -> list[int]:
        """
        Uniform random permutation of range(k) by Fisher-Yates.
        """
        perm = list(range(k))
        for i in range(k - 1, 0, -1):
            j = self.randint(0, i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def numpy_generator(self) -> np.random.Generator:
        """
        Returns a numpy generator seeded from this source, used for the statistical
        simulations where throughput matters more than cryptographic strength.
        """
        seed = int.from_bytes(self.random_bytes(32), "big")
        return np.random.default_rng(seed)


class SystemRandomSource(RandomSource):
    """
    Operating system entropy (os.urandom), standing in for the hardware random
    instruction of the deployed service.
    """

    def random_bytes(self, n: int) -> bytes:
        try:
            data = os.urandom(n)
        except OSError as e:
            raise RandomnessError(f"OS entropy source failed: {e}") from e
        if len(data) != n:
            raise RandomnessError(f"OS entropy source returned {len(data)} of {n} bytes")
        return data


class SeededRandomSource(RandomSource):
    """
    Deterministic byte stream from SHAKE-256 in counter mode. Two sources built from the
    same seed produce identical streams for identical call sequences.
    """

    def __init__(self, seed: bytes | int | str):
        if isinstance(seed, int):
            seed = seed.to_bytes(max(1, (seed.bit_length() + 7) // 8), "big")
        elif isinstance(seed, str):
            seed = seed.encode("utf-8")
        self.seed = bytes(seed)
        self.counter = 0

    def random_bytes(self, n: int) -> bytes:
        block = hashlib.shake_256(self.seed + self.counter.to_bytes(8, "big")).digest(n)
        self.counter += 1
        return block
