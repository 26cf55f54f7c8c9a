from functools import lru_cache
import numpy as np


def bitrev(x: int, bits: int) -> int:
    y = 0
    for i in range(bits):
        y |= ((x >> i) & 1) << (bits - i - 1)
    return y


def find_root_2n(n: int, q: int) -> int:
    """
    Finds a primitive 2n-th root of unity mod q, i.e. h with h^n = -1 (mod q).
    """
    if (q - 1) % (2 * n) != 0:
        raise ValueError(f"q={q} is not 1 mod 2n={2 * n}")
    r = (q - 1) // (2 * n)
    for x in range(2, q - 1):
        y = pow(x, r, q)
        if pow(y, n, q) == q - 1:
            return y
    raise ValueError(f"no primitive {2 * n}-th root of unity mod {q}")


class RingContext:
    """
    Arithmetic in R_q = Z_q[X]/(X^n + 1). Ring elements are int64 arrays whose last axis
    holds the n coefficients, so every method works on single elements, vectors and
    matrices of elements alike.
    """

    def __init__(self, n: int, q: int):
        """
        Precomputes the twiddle factors of the negacyclic transform.

        Args:
            n: Ring degree, power of two
            q: Prime modulus with q = 1 mod 2n
        """
        if n < 2 or n & (n - 1):
            raise ValueError(f"ring degree {n} is not a power of two")
        self.n = n
        self.q = q
        self.logn = n.bit_length() - 1
        self.root = find_root_2n(n, q)
        root_inv = pow(self.root, -1, q)
        self.zetas = np.array(
            [pow(self.root, bitrev(i, self.logn), q) for i in range(n)], dtype=np.int64
        )
        self.zetas_inv = np.array(
            [pow(root_inv, bitrev(i, self.logn), q) for i in range(n)], dtype=np.int64
        )
        self.n_inv = pow(n, -1, q)

    def reduce(self, f) -> np.ndarray:
        return np.asarray(f, dtype=np.int64) % self.q

    def center(self, f) -> np.ndarray:
        """
        Centered representatives in (-q/2, q/2].
        """
        f = self.reduce(f)
        return np.where(f > self.q // 2, f - self.q, f)

    def inf_norm(self, f) -> int:
        f = self.center(f)
        return int(np.abs(f).max()) if f.size else 0

    def ntt(self, f) -> np.ndarray:
        """
        Forward negacyclic number theoretic transform (Cooley-Tukey, bit-reversed twiddles).
        """
        f = self.reduce(f).copy()
        shape = f.shape
        length = self.n // 2
        while length >= 1:
            blocks = self.n // (2 * length)
            z = self.zetas[blocks : 2 * blocks, None]
            g = f.reshape(shape[:-1] + (blocks, 2, length))
            x = g[..., 0, :]
            y = g[..., 1, :] * z % self.q
            f = np.stack([(x + y) % self.q, (x - y) % self.q], axis=-2).reshape(shape)
            length //= 2
        return f

    def intt(self, f) -> np.ndarray:
        """
        Inverse of ntt (Gentleman-Sande butterflies, normalised by n^-1).
        """
        f = self.reduce(f).copy()
        shape = f.shape
        length = 1
        while length < self.n:
            blocks = self.n // (2 * length)
            z = self.zetas_inv[blocks : 2 * blocks, None]
            g = f.reshape(shape[:-1] + (blocks, 2, length))
            a = g[..., 0, :]
            c = g[..., 1, :]
            f = np.stack([(a + c) % self.q, (a - c) * z % self.q], axis=-2).reshape(shape)
            length *= 2
        return f * self.n_inv % self.q

    def mul(self, f, g) -> np.ndarray:
        """
        Negacyclic product f*g via the transform. Broadcasts over leading axes.
        """
        return self.intt(self.ntt(f) * self.ntt(g) % self.q)

    def mul_schoolbook(self, f, g) -> np.ndarray:
        """
        Reference negacyclic convolution, used to cross-check mul.
        """
        f = self.reduce(f)
        g = self.reduce(g)
        full = np.convolve(f, g)
        full = np.concatenate([full, np.zeros(2 * self.n - len(full), dtype=np.int64)])
        return (full[: self.n] - full[self.n :]) % self.q

    def matvec_ntt(self, a_hat: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
        """
        Matrix-vector product with both operands already in the transform domain.

        Args:
            a_hat: shape (k, l, n)
            v_hat: shape (l, n)
        Returns:
            shape (k, n), transform domain
        """
        return (a_hat * v_hat[None, :, :] % self.q).sum(axis=1) % self.q

    def encode(self, f) -> bytes:
        """
        Little-endian 4-byte words of the canonical coefficients.
        """
        return self.reduce(f).astype("<u4").tobytes()

    def decode(self, data: bytes, count: int = 1) -> np.ndarray:
        if len(data) != 4 * self.n * count:
            raise ValueError(f"expected {4 * self.n * count} bytes, got {len(data)}")
        f = np.frombuffer(data, dtype="<u4").astype(np.int64)
        if np.any(f >= self.q):
            raise ValueError("coefficient not reduced mod q")
        return f.reshape((count, self.n)) if count > 1 else f


@lru_cache(maxsize=None)
def get_ring(n: int, q: int) -> RingContext:
    return RingContext(n, q)
