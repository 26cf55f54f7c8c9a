import hashlib
import numpy as np


class CounterModePrg:
    """
    Deterministic stream SHA-256(seed || counter), counter as 8 big-endian bytes starting
    at 0. The seed is absorbed once and the hash state copied for every block.
    """

    def __init__(self, seed: bytes):
        self.state = hashlib.sha256()
        self.state.update(seed)
        self.counter = 0

    def blocks(self, count: int) -> bytes:
        out = []
        for _ in range(count):
            tmp = self.state.copy()
            tmp.update(self.counter.to_bytes(8, "big"))
            out.append(tmp.digest())
            self.counter += 1
        return b"".join(out)

    def words(self, count: int) -> np.ndarray:
        """
        Next count 64-bit words, read big-endian; each block yields four words.
        """
        blocks = -(-count // 4)
        return np.frombuffer(self.blocks(blocks), dtype=">u8")[:count].astype(np.uint64)


def sample_edges(r: bytes, edge_count: int, rounds: int) -> np.ndarray:
    """
    Challenge edge of every round, derived from the beacon randomness r. Words at or
    above the largest multiple of edge_count below 2^64 are skipped so that every index
    is exactly uniform.

    Args:
        r: Seed, normally the 64-byte pulse output
        edge_count: Number of edges
        rounds: Number of indices to draw
    Returns:
        int64 array of edge indices in [0, edge_count)
    """
    if edge_count < 1:
        raise ValueError("edge_count must be positive")
    prg = CounterModePrg(r)
    limit = np.uint64((2**64 // edge_count) * edge_count - 1)
    out = np.empty(0, dtype=np.uint64)
    # consuming whole blocks keeps the word stream identical for any rounds
    while len(out) < rounds:
        words = prg.words(4 * -(-(rounds - len(out)) // 4))
        out = np.concatenate([out, words[words <= limit]])
    return (out[:rounds] % np.uint64(edge_count)).astype(np.int64)
