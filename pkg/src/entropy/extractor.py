import math
from dataclasses import dataclass
from typing import Iterable, Optional, Union
import numpy as np
import scipy.fft
import scipy.linalg
from scipy.special import erfc

from .bell_sim import Trial, TrialBatch
from ..crypto.randomness import RandomSource, SystemRandomSource
from ..errors import ExtractorError

# longest input handled by one float64 convolution; counts stay below 2^24
MAX_FFT_BITS = 1 << 24


@dataclass(frozen=True)
class ExtractorConfig:
    """
    Shape of one Toeplitz extraction.
    Args:
        n: Input length in bits
        m: Output length in bits
        k: Min-entropy guarantee of the input in bits
    """

    n: int
    m: int
    k: float

    def __post_init__(self):
        if not 0 < self.m <= self.k <= self.n:
            raise ExtractorError(
                f"need 0 < m <= k <= n, got m={self.m}, k={self.k}, n={self.n}"
            )

    @property
    def seed_len(self) -> int:
        return self.n + self.m - 1

    @property
    def log2_eps_x(self) -> float:
        return -(self.k - self.m) / 2

    @property
    def eps_x(self) -> float:
        return 2.0**self.log2_eps_x


def bits_to_bytes(bits: np.ndarray) -> bytes:
    """
    Packs bits little-endian within each byte, zero padding the last byte.
    """
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def bytes_to_bits(data: bytes, count: Optional[int] = None) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if count is not None:
        if count > len(bits):
            raise ExtractorError(f"need {count} bits, only {len(bits)} available")
        bits = bits[:count]
    return bits


@dataclass
class ToeplitzSeed:
    """
    Seed bits s_0..s_{n+m-2}. Entry (i, j) of the matrix is s[i - j + n - 1], so the
    first column is s[n-1 : n+m-1] and the first row is s[n-1], ..., s[0].
    """

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1 or np.any(self.bits > 1):
            raise ExtractorError("seed must be a flat bit array")

    def __len__(self) -> int:
        return len(self.bits)

    @classmethod
    def generate(cls, length: int, rng: Optional[RandomSource] = None) -> "ToeplitzSeed":
        rng = rng or SystemRandomSource()
        return cls(bytes_to_bits(rng.random_bytes((length + 7) // 8), length))

    @classmethod
    def load(cls, path: str, length: Optional[int] = None) -> "ToeplitzSeed":
        with open(path, "rb") as f:
            return cls(bytes_to_bits(f.read(), length))

    def save(self, path: str):
        with open(path, "wb") as f:
            f.write(bits_to_bytes(self.bits))

    def for_config(self, cfg: ExtractorConfig) -> "ToeplitzSeed":
        """
        Prefix of the stored seed long enough for the given shape.
        """
        if len(self) < cfg.seed_len:
            raise ExtractorError(f"seed has {len(self)} bits, extraction needs {cfg.seed_len}")
        return ToeplitzSeed(self.bits[: cfg.seed_len])

    def matrix(self, cfg: ExtractorConfig) -> np.ndarray:
        s = self.bits.astype(np.int64)
        n, m = cfg.n, cfg.m
        return scipy.linalg.toeplitz(c=s[n - 1 : n - 1 + m], r=s[n - 1 :: -1])


def pack_raw(trials: Union[TrialBatch, Iterable[Trial]]) -> np.ndarray:
    """
    Raw extractor input: the output bits (a, b) of every trial, in trial order.
    """
    if isinstance(trials, TrialBatch):
        a, b = trials.a, trials.b
    else:
        pairs = np.array([(t.a, t.b) for t in trials], dtype=np.uint8).reshape(-1, 2)
        a, b = pairs[:, 0], pairs[:, 1]
    if len(a) == 0:
        raise ExtractorError("no trials to pack")
    return np.stack([a, b], axis=1).reshape(-1).astype(np.uint8)


def _extract_fft(raw: np.ndarray, seed: np.ndarray, n: int, m: int) -> np.ndarray:
    # output i is entry n-1+i of the linear convolution; a cyclic length of n+m-1
    # keeps those entries free of wrap-around
    size = scipy.fft.next_fast_len(n + m - 1, real=True)
    prod = scipy.fft.irfft(
        scipy.fft.rfft(seed.astype(np.float64), size) * scipy.fft.rfft(raw.astype(np.float64), size),
        size,
    )
    counts = np.rint(prod[n - 1 : n - 1 + m]).astype(np.int64)
    return (counts & 1).astype(np.uint8)


def _extract_blocked(raw: np.ndarray, seed: np.ndarray, n: int, m: int, block: int) -> np.ndarray:
    # columns j0..j0+B-1 of the matrix form the Toeplitz matrix of seed[n-j0-B : n-j0+m-1]
    out = np.zeros(m, dtype=np.uint8)
    for j0 in range(0, n, block):
        size = min(block, n - j0)
        out ^= _extract_fft(raw[j0 : j0 + size], seed[n - j0 - size : n - j0 + m - 1], size, m)
    return out


def _extract_naive(raw: np.ndarray, seed: ToeplitzSeed, cfg: ExtractorConfig) -> np.ndarray:
    return ((seed.matrix(cfg) @ raw.astype(np.int64)) & 1).astype(np.uint8)


def extract(
    raw: np.ndarray,
    seed: ToeplitzSeed,
    cfg: ExtractorConfig,
    method: str = "fft",
    block: int = MAX_FFT_BITS,
) -> np.ndarray:
    """
    Toeplitz hash of the raw bits over GF(2).

    Args:
        raw: n input bits
        seed: Exactly n+m-1 seed bits
        cfg: Extraction shape
        method: "fft" for the convolution path, "naive" for the explicit matrix product
        block: Column block length of the convolution path
    Returns:
        m output bits as uint8
    """
    raw = np.asarray(raw, dtype=np.uint8)
    if raw.ndim != 1 or len(raw) != cfg.n:
        raise ExtractorError(f"raw input has {raw.size} bits, expected {cfg.n}")
    if len(seed) != cfg.seed_len:
        raise ExtractorError(f"seed has {len(seed)} bits, expected {cfg.seed_len}")
    if method == "fft":
        return _extract_blocked(raw, seed.bits, cfg.n, cfg.m, block)
    elif method == "naive":
        return _extract_naive(raw, seed, cfg)
    else:
        raise ValueError(f"Unknown extraction method {method}")


def monobit_test(bits: np.ndarray) -> float:
    """
    p-value of the frequency test on a bit string.
    """
    bits = np.asarray(bits, dtype=np.int64)
    s = abs(int(np.sum(2 * bits - 1)))
    return float(erfc(s / math.sqrt(2 * len(bits))))


def runs_test(bits: np.ndarray) -> float:
    """
    p-value of the runs test; 0 when the frequency prerequisite already fails.
    """
    bits = np.asarray(bits, dtype=np.int64)
    n = len(bits)
    pi = bits.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return 0.0
    runs = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    num = abs(runs - 2 * n * pi * (1 - pi))
    return float(erfc(num / (2 * math.sqrt(2 * n) * pi * (1 - pi))))
