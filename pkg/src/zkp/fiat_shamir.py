"""
Hash-challenge variant of the 3-colouring proof. The challenge is SHA-256 of the
commitment transcript instead of a beacon pulse, so it carries no freshness: a prover
may recompute commitments until the challenge suits it. Kept for comparison only.
"""

import hashlib
import time
from typing import Optional
import numpy as np

from .graph import Coloring, Graph, monochromatic_edges, verify_witness
from .prg import sample_edges
from .zkp3col import (
    Proof,
    ProofCheck,
    check_rounds,
    commit_rounds,
    commitment_transcript,
    open_rounds,
    round_count,
)
from ..crypto.randomness import RandomSource, SystemRandomSource
from ..errors import WitnessError


def fs_challenge(transcript: bytes) -> bytes:
    return hashlib.sha256(transcript).digest()


def _fs_proof(g: Graph, phi: Coloring, lam: int, rng: RandomSource) -> Proof:
    rounds = round_count(g.edge_count, lam)
    graph_digest = g.digest()
    committed = commit_rounds(phi, rounds, rng)
    r = fs_challenge(commitment_transcript(graph_digest, lam, committed.digests))
    edges = sample_edges(r, g.edge_count, rounds)
    keys, colors = open_rounds(g, committed, edges)
    return Proof(graph_digest, lam, committed.digests, edges, keys, colors, mode="fiat_shamir")


def fiat_shamir_prove(
    g: Graph,
    phi: Coloring,
    lam: int,
    rng: Optional[RandomSource] = None,
    timings: Optional[dict] = None,
) -> Proof:
    if not verify_witness(g, phi):
        raise WitnessError("refusing to prove with an invalid colouring")
    start = time.perf_counter()
    proof = _fs_proof(g, phi, lam, rng or SystemRandomSource())
    if timings is not None:
        timings["commit"] = time.perf_counter() - start
        timings["response"] = 0.0
    return proof


def fiat_shamir_verify(g: Graph, proof: Proof) -> ProofCheck:
    findings = []
    try:
        if proof.mode != "fiat_shamir":
            findings.append("not a Fiat-Shamir proof")
        check_rounds(g, proof, findings)
        expected = sample_edges(fs_challenge(proof.transcript()), g.edge_count, proof.rounds)
        if not np.array_equal(expected, proof.edges):
            findings.append("edges do not follow the transcript hash")
    except (ValueError, TypeError, IndexError, AttributeError) as e:
        findings.append(f"malformed proof: {e}")
    return ProofCheck(not findings, findings)


def grind_fiat_shamir(
    g: Graph,
    phi: Coloring,
    lam: int,
    rng: Optional[RandomSource] = None,
    max_attempts: int = 10_000,
) -> tuple[int, Optional[Proof]]:
    """
    Cheating prover: recomputes commitments to an invalid colouring until the hash
    challenge misses every monochromatic edge.

    Returns:
        Number of attempts and the accepted proof, or None if max_attempts ran out
    """
    rng = rng or SystemRandomSource()
    bad = np.zeros(g.edge_count, dtype=bool)
    bad[monochromatic_edges(g, phi)] = True
    for attempt in range(1, max_attempts + 1):
        proof = _fs_proof(g, phi, lam, rng)
        if not bad[proof.edges].any():
            return attempt, proof
    return max_attempts, None
