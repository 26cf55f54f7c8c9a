import numpy as np
import pytest

from src.crypto.randomness import SeededRandomSource
from src.errors import GraphError
from src.zkp.graph import (
    Coloring,
    Graph,
    cross_color_pairs,
    gen_instance,
    monochromatic_edges,
    verify_witness,
)
from src.zkp.prg import CounterModePrg, sample_edges
import hashlib


def test_canonical_edges():
    g = Graph.from_edges(4, [(3, 1), (0, 2), (1, 0)])
    assert g.edges.tolist() == [[0, 1], [0, 2], [1, 3]]
    assert g.edge_count == 3
    assert g.digest() == Graph.from_edges(4, [(0, 1), (1, 3), (2, 0)]).digest()


@pytest.mark.parametrize("pairs", [[], [(0, 0)], [(0, 4)], [(0, 1), (1, 0)], [(-1, 2)]])
def test_invalid_graph(pairs):
    with pytest.raises(ValueError):
        Graph.from_edges(4, pairs)


def test_invalid_coloring():
    with pytest.raises(ValueError):
        Coloring([1, 2, 4])
    with pytest.raises(ValueError):
        Coloring([0, 1])


def test_witness_check():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    assert verify_witness(g, Coloring([1, 2, 1]))
    assert not verify_witness(g, Coloring([1, 1, 2]))
    assert monochromatic_edges(g, Coloring([1, 1, 1])).tolist() == [0, 1]
    assert not verify_witness(g, Coloring([1, 2]))


@pytest.mark.parametrize("v", [4, 10, 50])
def test_gen_instance(v):
    edge_factor = 1 if v == 4 else 3
    g, phi = gen_instance(v, edge_factor, SeededRandomSource(v))
    assert g.v == v and g.edge_count == edge_factor * v
    assert verify_witness(g, phi)
    assert sorted(np.bincount(phi.phi, minlength=4)[1:]) == sorted(
        [len(range(i, v, 3)) for i in range(3)]
    )


def test_gen_instance_limits():
    with pytest.raises(GraphError):
        gen_instance(3, 1)
    with pytest.raises(GraphError):
        gen_instance(4, 3)


def test_cross_color_pairs():
    pairs = cross_color_pairs(Coloring([1, 2, 1, 3]))
    assert pairs.tolist() == [[0, 1], [0, 3], [1, 2], [1, 3], [2, 3]]


def test_files(tmp_path):
    g, phi = gen_instance(12, 2, SeededRandomSource("files"))
    g.save(tmp_path / "graph.txt")
    phi.save(tmp_path / "coloring.txt")
    loaded = Graph.load(tmp_path / "graph.txt")
    assert loaded.digest() == g.digest()
    assert np.array_equal(Coloring.load(tmp_path / "coloring.txt").phi, phi.phi)


def test_prg_blocks():
    prg = CounterModePrg(b"seed")
    first, second = prg.blocks(1), prg.blocks(1)
    assert first == hashlib.sha256(b"seed" + (0).to_bytes(8, "big")).digest()
    assert second == hashlib.sha256(b"seed" + (1).to_bytes(8, "big")).digest()
    words = CounterModePrg(b"seed").words(5)
    assert int(words[0]) == int.from_bytes(first[:8], "big")
    assert int(words[4]) == int.from_bytes(second[:8], "big")


def test_sample_edges():
    r = bytes(range(64))
    edges = sample_edges(r, 150, 1000)
    assert edges.min() >= 0 and edges.max() < 150
    assert np.array_equal(sample_edges(r, 150, 10), edges[:10])
    assert not np.array_equal(sample_edges(b"other", 150, 1000), edges)
    assert np.all(sample_edges(r, 1, 5) == 0)
    with pytest.raises(ValueError):
        sample_edges(r, 0, 5)


def test_sample_edges_uniform():
    edges = sample_edges(b"uniformity", 7, 70_000)
    counts = np.bincount(edges, minlength=7)
    assert np.all(np.abs(counts - 10_000) < 500)
