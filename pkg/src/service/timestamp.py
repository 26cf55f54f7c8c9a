import hashlib
import struct
import threading
from dataclasses import dataclass
from typing import Optional

from .clock import Clock, format_utc
from ..crypto.lattice_sig import PublicKey, SigKeypair, sign, verify_encoded
from ..crypto.randomness import RandomSource
from ..errors import ServiceError

DIGEST_BYTES = 64


def transcript_digest(data: bytes) -> bytes:
    """
    SHA-512 of a serialized commitment transcript; this is what gets stamped.
    """
    return hashlib.sha512(data).digest()


def token_message(digest: bytes, t_ms: int) -> bytes:
    return struct.pack(">I", len(digest)) + digest + struct.pack(">Q", t_ms)


@dataclass(frozen=True)
class TimestampToken:
    """
    Args:
        digest: Stamped 64-byte digest
        t_ms: Receive time in milliseconds since the epoch
        signature: Encoded signature over token_message(digest, t_ms)
    """

    digest: bytes
    t_ms: int
    signature: bytes

    @property
    def time(self) -> str:
        return format_utc(self.t_ms)

    def encode(self) -> bytes:
        return (
            struct.pack(">I", len(self.digest))
            + self.digest
            + struct.pack(">QI", self.t_ms, len(self.signature))
            + self.signature
        )

    @classmethod
    def decode(cls, data: bytes) -> "TimestampToken":
        (d_len,) = struct.unpack_from(">I", data, 0)
        digest = data[4 : 4 + d_len]
        t_ms, s_len = struct.unpack_from(">QI", data, 4 + d_len)
        start = 4 + d_len + 12
        signature = data[start : start + s_len]
        if len(digest) != d_len or len(signature) != s_len or start + s_len != len(data):
            raise ValueError("malformed timestamp token")
        return cls(digest, t_ms, signature)

    def to_json(self) -> dict:
        return {
            "digest": self.digest.hex(),
            "time": self.t_ms,
            "timeStamp": self.time,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TimestampToken":
        return cls(bytes.fromhex(data["digest"]), int(data["time"]), bytes.fromhex(data["signature"]))


def stamp(
    c_digest: bytes, clock: Clock, kp: SigKeypair, rng: Optional[RandomSource] = None
) -> TimestampToken:
    """
    Signs the digest together with the authority's current time.
    """
    if len(c_digest) != DIGEST_BYTES:
        raise ValueError(f"digest must be {DIGEST_BYTES} bytes, got {len(c_digest)}")
    try:
        t_ms = clock.now_ms()
    except OSError as e:
        raise ServiceError(f"timestamp clock failed: {e}") from e
    sig = sign(kp.sk, token_message(c_digest, t_ms), rng)
    return TimestampToken(bytes(c_digest), t_ms, sig.encode(kp.pk.params))


def verify_token(tok: TimestampToken, pk_ts: PublicKey) -> bool:
    try:
        if len(tok.digest) != DIGEST_BYTES:
            return False
        return verify_encoded(pk_ts, tok.signature, token_message(tok.digest, tok.t_ms))
    except (ValueError, TypeError, struct.error, OverflowError):
        return False


class TimestampAuthority:
    def __init__(self, kp: SigKeypair, clock: Clock, rng: Optional[RandomSource] = None):
        self.kp = kp
        self.clock = clock
        self.rng = rng
        self._lock = threading.Lock()

    @property
    def public_key(self) -> PublicKey:
        return self.kp.pk

    def stamp(self, c_digest: bytes) -> TimestampToken:
        with self._lock:
            return stamp(c_digest, self.clock, self.kp, self.rng)
