import hashlib
import hmac
from dataclasses import dataclass
from typing import Optional
import numpy as np

from .randomness import RandomSource, SystemRandomSource

KEY_BYTES = 32


@dataclass(frozen=True)
class Commitment:
    digest: bytes

    def encode(self) -> bytes:
        return self.digest


@dataclass(frozen=True)
class Decommitment:
    key: bytes
    payload: bytes

    def encode(self) -> bytes:
        return self.key + bytes([len(self.payload)]) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Decommitment":
        if len(data) < KEY_BYTES + 1 or len(data) != KEY_BYTES + 1 + data[KEY_BYTES]:
            raise ValueError("malformed decommitment")
        return cls(data[:KEY_BYTES], data[KEY_BYTES + 1 :])


def commit_with_key(payload: bytes, key: bytes) -> tuple[Commitment, Decommitment]:
    """
    Commits with a caller-chosen key; commit() draws the key itself.
    """
    if not payload:
        raise ValueError("cannot commit to an empty payload")
    if len(payload) > 255:
        raise ValueError("payload longer than 255 bytes")
    if len(key) != KEY_BYTES:
        raise ValueError(f"commitment key must be {KEY_BYTES} bytes")
    return Commitment(hashlib.sha256(key + payload).digest()), Decommitment(key, payload)


def commit(payload: bytes, rng: Optional[RandomSource] = None) -> tuple[Commitment, Decommitment]:
    """
    Keyed-hash commitment SHA-256(key || payload) with a fresh 32-byte key.

    Args:
        payload: Non-empty bytes to commit to
        rng: Randomness source for the key
    Returns:
        Commitment and the matching decommitment
    """
    rng = rng or SystemRandomSource()
    return commit_with_key(payload, rng.random_bytes(KEY_BYTES))


def open(c: Commitment, d: Decommitment) -> bool:
    try:
        if len(d.key) != KEY_BYTES:
            return False
        return hmac.compare_digest(hashlib.sha256(d.key + d.payload).digest(), c.digest)
    except (TypeError, AttributeError):
        return False


def commit_many(
    payloads: list[bytes], rng: Optional[RandomSource] = None
) -> tuple[list[Commitment], list[Decommitment]]:
    """
    Commits to every payload with independent keys drawn in one batch.
    """
    rng = rng or SystemRandomSource()
    keys = rng.random_bytes(KEY_BYTES * len(payloads))
    pairs = [
        commit_with_key(p, keys[i * KEY_BYTES : (i + 1) * KEY_BYTES])
        for i, p in enumerate(payloads)
    ]
    return [c for c, _ in pairs], [d for _, d in pairs]


def commit_array(
    payloads: np.ndarray, rng: Optional[RandomSource] = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    Commits to one-byte payloads in bulk; same construction as commit().

    Args:
        payloads: uint8 array of any shape
        rng: Randomness source for the keys
    Returns:
        digests: uint8 array of shape payloads.shape + (32,)
        keys: uint8 array of shape payloads.shape + (KEY_BYTES,)
    """
    rng = rng or SystemRandomSource()
    payloads = np.asarray(payloads, dtype=np.uint8)
    flat = payloads.reshape(-1)
    keys = np.frombuffer(rng.random_bytes(KEY_BYTES * flat.size), dtype=np.uint8)
    keys = keys.reshape(flat.size, KEY_BYTES)
    digests = hash_array(keys, flat)
    shape = payloads.shape
    return digests.reshape(*shape, 32), keys.reshape(*shape, KEY_BYTES)


def hash_array(keys: np.ndarray, payloads: np.ndarray) -> np.ndarray:
    """
    SHA-256(key || payload) row by row for one-byte payloads.
    """
    rows = np.concatenate([keys, payloads.reshape(-1, 1)], axis=1).tobytes()
    width = KEY_BYTES + 1
    sha256 = hashlib.sha256
    out = b"".join(sha256(rows[i : i + width]).digest() for i in range(0, len(rows), width))
    return np.frombuffer(out, dtype=np.uint8).reshape(-1, 32)
