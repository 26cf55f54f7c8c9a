import hashlib
import struct
from dataclasses import dataclass
from typing import Optional
import numpy as np

from ..crypto.randomness import RandomSource, SystemRandomSource
from ..errors import GraphError


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Undirected simple graph. edges is the canonical (E, 2) array of pairs u < w in
    lexicographic order; an edge index always refers to a row of it.
    """

    v: int
    edges: np.ndarray

    @classmethod
    def from_edges(cls, v: int, pairs) -> "Graph":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs) == 0:
            raise ValueError("graph needs at least one edge")
        if np.any(pairs < 0) or np.any(pairs >= v):
            raise ValueError(f"vertices must lie in [0, {v})")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValueError("self-loops are not allowed")
        pairs = np.sort(pairs, axis=1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        if np.any(np.all(pairs[1:] == pairs[:-1], axis=1)):
            raise ValueError("duplicate edges are not allowed")
        return cls(int(v), pairs)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def encode(self) -> bytes:
        return struct.pack(">II", self.v, self.edge_count) + self.edges.astype(">u4").tobytes()

    def digest(self) -> bytes:
        return hashlib.sha512(self.encode()).digest()

    def save(self, path: str):
        with open(path, "w") as f:
            f.write(f"{self.v} {self.edge_count}\n")
            for u, w in self.edges.tolist():
                f.write(f"{u} {w}\n")

    @classmethod
    def load(cls, path: str) -> "Graph":
        with open(path) as f:
            v, e = (int(x) for x in f.readline().split())
            pairs = np.loadtxt(f, dtype=np.int64, ndmin=2)
        if len(pairs) != e:
            raise ValueError(f"{path}: header announces {e} edges, found {len(pairs)}")
        return cls.from_edges(v, pairs)


@dataclass(frozen=True, eq=False)
class Coloring:
    """
    Colour of every vertex, values in {1, 2, 3}.
    """

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.uint8)
        if phi.ndim != 1 or np.any((phi < 1) | (phi > 3)):
            raise ValueError("colours must be 1, 2 or 3")
        object.__setattr__(self, "phi", phi)

    def __len__(self) -> int:
        return len(self.phi)

    def save(self, path: str):
        np.savetxt(path, self.phi, fmt="%d")

    @classmethod
    def load(cls, path: str) -> "Coloring":
        return cls(np.loadtxt(path, dtype=np.int64, ndmin=1))


def monochromatic_edges(g: Graph, phi: Coloring) -> np.ndarray:
    """
    Indices of edges whose endpoints share a colour.
    """
    if len(phi) != g.v:
        raise ValueError(f"colouring has {len(phi)} entries for {g.v} vertices")
    return np.flatnonzero(phi.phi[g.edges[:, 0]] == phi.phi[g.edges[:, 1]])


def verify_witness(g: Graph, phi: Coloring) -> bool:
    try:
        return len(monochromatic_edges(g, phi)) == 0
    except ValueError:
        return False


def cross_color_pairs(phi: Coloring) -> np.ndarray:
    u, w = np.triu_indices(len(phi), k=1)
    keep = phi.phi[u] != phi.phi[w]
    return np.stack([u[keep], w[keep]], axis=1)


def gen_instance(
    v: int, edge_factor: int = 3, rng: Optional[RandomSource] = None
) -> tuple[Graph, Coloring]:
    """
    Random 3-colourable graph with edge_factor * v edges and its witness. The colouring is
    balanced and shuffled; edges are drawn without replacement from the cross-colour pairs.

    Args:
        v: Number of vertices, at least 4
        edge_factor: Edges per vertex
        rng: Randomness source
    Returns:
        graph, colouring
    """
    if v < 4:
        raise GraphError(f"need at least 4 vertices, got {v}")
    rng = rng or SystemRandomSource()
    colors = np.array([1 + i % 3 for i in range(v)], dtype=np.uint8)
    phi = Coloring(colors[np.array(rng.permutation(v))])
    candidates = cross_color_pairs(phi)
    e = edge_factor * v
    if e > len(candidates):
        raise GraphError(
            f"{v} vertices allow only {len(candidates)} cross-colour edges, {e} requested"
        )
    pick = rng.numpy_generator().choice(len(candidates), size=e, replace=False)
    return Graph.from_edges(v, candidates[pick]), phi
