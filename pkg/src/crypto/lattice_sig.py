import os
import hashlib
import hmac
import struct
from dataclasses import dataclass, field, asdict
from typing import Optional
import numpy as np

from .ring import RingContext, get_ring
from .randomness import RandomSource, SystemRandomSource
from ..errors import SigningError


def _is_prime(q: int) -> bool:
    if q < 2:
        return False
    i = 2
    while i * i <= q:
        if q % i == 0:
            return False
        i += 1
    return True


@dataclass(frozen=True)
class SigParams:
    """
    Parameter set of the Fiat-Shamir-with-aborts signature.
    Args:
        n: Ring degree
        q: Prime modulus, q = 1 mod 2n
        k, l: Dimensions of the public matrix A (k x l)
        eta: Bound of the secret coefficients
        gamma1: Bound of the masking vector y
        gamma2: Rounding divisor, HighBits are taken with respect to 2*gamma2
        tau: Number of +-1 coefficients of the challenge polynomial
        beta: Bound on the max-norm of c*s1 and c*s2
    """

    n: int = 256
    q: int = 8380417
    k: int = 5
    l: int = 4
    eta: int = 2
    gamma1: int = 2**17
    gamma2: int = (8380417 - 1) // 32
    tau: int = 60
    beta: int = 120

    def validate(self):
        if not _is_prime(self.q):
            raise ValueError(f"q={self.q} is not prime")
        if self.q % (2 * self.n) != 1:
            raise ValueError(f"q={self.q} is not 1 mod 2n")
        if self.gamma1 - self.beta <= 0 or self.gamma2 - self.beta <= 0:
            raise ValueError("gamma1 - beta and gamma2 - beta must be positive")
        if self.beta < self.tau * self.eta:
            raise ValueError("beta must be at least tau * eta")
        if self.tau > self.n or self.n > 256:
            raise ValueError("challenge sampling needs tau <= n <= 256")
        return self

    @property
    def alpha(self) -> int:
        return 2 * self.gamma2

    @property
    def z_bits(self) -> int:
        return (2 * self.gamma1 - 2).bit_length()

    @classmethod
    def from_dict(cls, params: dict) -> "SigParams":
        return cls(**{k: int(v) for k, v in params.items()}).validate()

    def encode(self) -> bytes:
        return struct.pack(">9Q", *asdict(self).values())

    @classmethod
    def decode(cls, data: bytes) -> "SigParams":
        return cls(*struct.unpack(">9Q", data))


def highbits(r, alpha: int):
    """
    Euclidean quotient of the canonical representative, r = alpha*highbits + lowbits.
    """
    assert alpha % 2 == 0
    return np.asarray(r) // alpha


def lowbits(r, alpha: int):
    assert alpha % 2 == 0
    return np.asarray(r) % alpha


def sample_in_ball(seed: bytes, n: int, tau: int) -> np.ndarray:
    """
    Expands a challenge digest into a polynomial with exactly tau coefficients in {-1, +1}
    by an inside-out Fisher-Yates shuffle on a SHAKE-256 stream.
    """
    stream_len = 8 + 2 * n
    stream = hashlib.shake_256(seed).digest(stream_len)
    signs = int.from_bytes(stream[:8], "little")
    pos = 8
    c = np.zeros(n, dtype=np.int64)
    for i in range(n - tau, n):
        while True:
            if pos >= stream_len:
                stream_len *= 2
                stream = hashlib.shake_256(seed).digest(stream_len)
            j = stream[pos]
            pos += 1
            if j <= i:
                break
        c[i] = c[j]
        c[j] = 1 - 2 * (signs & 1)
        signs >>= 1
    return c


def _prefixed(*parts: bytes) -> bytes:
    return b"".join(struct.pack(">I", len(p)) + p for p in parts)


def _split_prefixed(data: bytes, count: int) -> list[bytes]:
    parts, pos = [], 0
    for _ in range(count):
        if pos + 4 > len(data):
            raise ValueError("truncated encoding")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        pos += 4
        if pos + length > len(data):
            raise ValueError("truncated encoding")
        parts.append(data[pos : pos + length])
        pos += length
    if pos != len(data):
        raise ValueError("trailing bytes in encoding")
    return parts


def pack_signed(values: np.ndarray, bound: int, bits: int) -> bytes:
    """
    Packs integers in [-(bound-1), bound-1] as bound-1-v with the given bit width,
    little-endian bit order.
    """
    v = (bound - 1 - np.asarray(values, dtype=np.int64).ravel()).astype(np.uint64)
    b = ((v[:, None] >> np.arange(bits, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)
    return np.packbits(b.ravel(), bitorder="little").tobytes()


def unpack_signed(data: bytes, count: int, bound: int, bits: int) -> np.ndarray:
    if len(data) != (count * bits + 7) // 8:
        raise ValueError("packed vector has wrong length")
    b = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    b = b[: count * bits].reshape(count, bits).astype(np.int64)
    v = (b << np.arange(bits, dtype=np.int64)).sum(axis=1)
    return bound - 1 - v


@dataclass(eq=False)
class PublicKey:
    params: SigParams
    a: np.ndarray
    t: np.ndarray
    _a_hat: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def ring(self) -> RingContext:
        return get_ring(self.params.n, self.params.q)

    @property
    def a_hat(self) -> np.ndarray:
        if self._a_hat is None:
            self._a_hat = self.ring.ntt(self.a)
        return self._a_hat

    def encode(self) -> bytes:
        return _prefixed(
            self.params.encode(), self.ring.encode(self.a), self.ring.encode(self.t)
        )

    @classmethod
    def decode(cls, data: bytes) -> "PublicKey":
        p_raw, a_raw, t_raw = _split_prefixed(data, 3)
        params = SigParams.decode(p_raw).validate()
        ring = get_ring(params.n, params.q)
        a = ring.decode(a_raw, params.k * params.l).reshape(params.k, params.l, params.n)
        t = ring.decode(t_raw, params.k).reshape(params.k, params.n)
        return cls(params, a, t)

    def certificate_id(self) -> bytes:
        return hashlib.sha512(self.encode()).digest()


@dataclass(eq=False)
class SecretKey:
    s1: np.ndarray
    s2: np.ndarray
    pk: PublicKey

    def encode(self) -> bytes:
        ring = self.pk.ring
        return _prefixed(ring.encode(self.s1), ring.encode(self.s2), self.pk.encode())

    @classmethod
    def decode(cls, data: bytes) -> "SecretKey":
        s1_raw, s2_raw, pk_raw = _split_prefixed(data, 3)
        pk = PublicKey.decode(pk_raw)
        p, ring = pk.params, pk.ring
        s1 = ring.center(ring.decode(s1_raw, p.l).reshape(p.l, p.n))
        s2 = ring.center(ring.decode(s2_raw, p.k).reshape(p.k, p.n))
        return cls(s1, s2, pk)


@dataclass
class SigKeypair:
    pk: PublicKey
    sk: SecretKey


@dataclass(eq=False)
class Signature:
    """
    Args:
        z: Response vector, shape (l, n), centered integers
        c: Challenge digest (SHA-512 output)
    """

    z: np.ndarray
    c: bytes

    def encode(self, params: SigParams) -> bytes:
        return _prefixed(pack_signed(self.z, params.gamma1, params.z_bits), self.c)

    @classmethod
    def decode(cls, data: bytes, params: SigParams) -> "Signature":
        z_raw, c = _split_prefixed(data, 2)
        count = params.l * params.n
        z = unpack_signed(z_raw, count, params.gamma1, params.z_bits)
        return cls(z.reshape(params.l, params.n), c)


def _encode_w1(w1: np.ndarray) -> bytes:
    return np.asarray(w1, dtype=np.uint8).tobytes()


def keygen(params: SigParams, rng: Optional[RandomSource] = None) -> SigKeypair:
    """
    Generates a keypair with t = A*s1 + s2 over R_q.

    Args:
        params: Signature parameters
        rng: Randomness source, OS entropy if None
    Returns:
        Keypair
    """
    params.validate()
    rng = rng or SystemRandomSource()
    ring = get_ring(params.n, params.q)
    n, k, l, eta = params.n, params.k, params.l, params.eta
    a = rng.uniform_ints(0, params.q, k * l * n).reshape(k, l, n)
    s1 = rng.uniform_ints(-eta, eta + 1, l * n).reshape(l, n)
    s2 = rng.uniform_ints(-eta, eta + 1, k * n).reshape(k, n)
    pk = PublicKey(params, a, np.zeros((k, n), dtype=np.int64))
    pk.t = (ring.intt(ring.matvec_ntt(pk.a_hat, ring.ntt(s1))) + s2) % params.q
    return SigKeypair(pk, SecretKey(s1, s2, pk))


def sign(
    sk: SecretKey,
    mu: bytes,
    rng: Optional[RandomSource] = None,
    max_attempts: int = 1000,
    trace: Optional[dict] = None,
) -> Signature:
    """
    Signs mu with rejection sampling: repeats until ||z||_inf < gamma1 - beta and the low
    bits of A*y - c*s2 stay more than beta away from both edges of their rounding bucket,
    which makes HighBits(A*z - c*t) equal HighBits(A*y) at verification.

    Args:
        sk: Secret key
        mu: Message
        rng: Randomness source for the masking vectors
        max_attempts: Cap on the rejection loop
        trace: If given, filled with "attempts" and the accepted "w"
    Returns:
        Signature (z, c)
    """
    p = sk.pk.params
    ring = sk.pk.ring
    rng = rng or SystemRandomSource()
    s1_hat = ring.ntt(sk.s1)
    s2_hat = ring.ntt(sk.s2)
    bound_z = p.gamma1 - p.beta
    for attempt in range(1, max_attempts + 1):
        y = rng.uniform_ints(-(p.gamma1 - 1), p.gamma1, p.l * p.n).reshape(p.l, p.n)
        w = ring.intt(ring.matvec_ntt(sk.pk.a_hat, ring.ntt(y)))
        w1 = highbits(w, p.alpha)
        c = hashlib.sha512(_encode_w1(w1) + mu).digest()
        c_hat = ring.ntt(sample_in_ball(c, p.n, p.tau))
        z = y + ring.center(ring.intt(c_hat * s1_hat % p.q))
        if np.abs(z).max() >= bound_z:
            continue
        r0 = lowbits((w - ring.intt(c_hat * s2_hat % p.q)) % p.q, p.alpha)
        if np.any(np.abs(r0 - p.gamma2) >= p.gamma2 - p.beta):
            continue
        if trace is not None:
            trace["attempts"] = attempt
            trace["w"] = w
        return Signature(z, c)
    raise SigningError(f"rejection sampling did not terminate after {max_attempts} attempts")


def verify(pk: PublicKey, sig: Signature, mu: bytes) -> bool:
    """
    Accepts iff ||z||_inf < gamma1 - beta and Hash(HighBits(A*z - c*t) || mu) = c.
    Malformed input is rejected, never raised.
    """
    try:
        p = pk.params
        ring = pk.ring
        z = np.asarray(sig.z, dtype=np.int64)
        if z.shape != (p.l, p.n) or len(sig.c) != 64:
            return False
        if np.abs(z).max() >= p.gamma1 - p.beta:
            return False
        c_hat = ring.ntt(sample_in_ball(sig.c, p.n, p.tau))
        az = ring.matvec_ntt(pk.a_hat, ring.ntt(z))
        w = ring.intt((az - c_hat * ring.ntt(pk.t)) % p.q)
        w1 = highbits(w, p.alpha)
        return hmac.compare_digest(hashlib.sha512(_encode_w1(w1) + mu).digest(), bytes(sig.c))
    except (ValueError, TypeError, IndexError):
        return False


def verify_encoded(pk: PublicKey, sig_bytes: bytes, mu: bytes) -> bool:
    try:
        sig = Signature.decode(sig_bytes, pk.params)
    except (ValueError, TypeError):
        return False
    return verify(pk, sig, mu)


def save_keypair(kp: SigKeypair, directory: str, name: str):
    """
    Writes <name>.sk and <name>.pk in their binary encodings.
    """
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, f"{name}.sk"), "wb") as f:
        f.write(kp.sk.encode())
    with open(os.path.join(directory, f"{name}.pk"), "wb") as f:
        f.write(kp.pk.encode())


def load_keypair(directory: str, name: str) -> SigKeypair:
    with open(os.path.join(directory, f"{name}.sk"), "rb") as f:
        sk = SecretKey.decode(f.read())
    return SigKeypair(sk.pk, sk)


def load_public_key(path: str) -> PublicKey:
    with open(path, "rb") as f:
        return PublicKey.decode(f.read())
