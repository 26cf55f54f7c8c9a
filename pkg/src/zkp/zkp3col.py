import hashlib
import itertools
import math
import struct
import time
from dataclasses import dataclass
from typing import Optional
import numpy as np

from .graph import Coloring, Graph, verify_witness
from .prg import sample_edges
from ..crypto.commitment import KEY_BYTES, Commitment, Decommitment, commit_array, hash_array
from ..crypto.commitment import open as open_commitment
from ..crypto.lattice_sig import PublicKey
from ..crypto.randomness import RandomSource, SystemRandomSource
from ..errors import ServiceError, WitnessError
from ..progress import progress
from ..service.beacon import verify_pulse
from ..service.client import BeaconSource, TimestampService
from ..service.pulse import Pulse
from ..service.timestamp import TimestampToken, verify_token

PERMUTATIONS = np.array(list(itertools.permutations((1, 2, 3))), dtype=np.uint8)
COLOR_PAIRS = [(a, b) for a in (1, 2, 3) for b in (1, 2, 3) if a != b]
MODES = {"beacon": 0, "fiat_shamir": 1}
MAGIC = b"NZK3"
DIGEST_BYTES = 32
MAX_REPORTED_ROUNDS = 5


def round_count(edge_count: int, lam: int) -> int:
    """
    Smallest R with ((E-1)/E)^R <= 2^-lam, decided with exact integers.
    """
    if edge_count < 1:
        raise ValueError("graph needs at least one edge")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if edge_count == 1:
        return 1
    e = edge_count

    def enough(r: int) -> bool:
        return (e - 1) ** r << lam <= e**r

    r = max(1, math.ceil(lam / math.log2(e / (e - 1))))
    while r > 1 and enough(r - 1):
        r -= 1
    while not enough(r):
        r += 1
    return r


@dataclass
class RoundTranscript:
    commitments: list[Commitment]
    edge_index: int
    d_j: Decommitment
    d_k: Decommitment


@dataclass
class CommittedRounds:
    """
    Prover state after the commit phase: permuted colours, keys and digests, each
    indexed [round, vertex].
    """

    colors: np.ndarray
    keys: np.ndarray
    digests: np.ndarray

    @property
    def rounds(self) -> int:
        return len(self.colors)


def commit_rounds(phi: Coloring, rounds: int, rng: RandomSource) -> CommittedRounds:
    """
    Commits to an independently permuted copy of phi for every round.
    """
    perms = PERMUTATIONS[rng.uniform_ints(0, len(PERMUTATIONS), rounds)]
    colors = perms[:, phi.phi.astype(np.int64) - 1]
    digests, keys = commit_array(colors, rng)
    return CommittedRounds(colors, keys, digests)


def open_rounds(g: Graph, committed: CommittedRounds, edges: np.ndarray):
    ends = g.edges[edges]
    idx = np.arange(committed.rounds)[:, None]
    return committed.keys[idx, ends], committed.colors[idx, ends]


def commitment_transcript(graph_digest: bytes, lam: int, commitments: np.ndarray) -> bytes:
    rounds, v = commitments.shape[:2]
    return graph_digest + struct.pack(">III", lam, rounds, v) + commitments.tobytes()


@dataclass(eq=False)
class Proof:
    """
    Non-interactive proof of 3-colourability.
    Args:
        graph_digest: SHA-512 of the graph encoding
        lam: Soundness parameter
        commitments: uint8 (R, V, 32) commitment digests
        edges: Challenged edge index per round
        open_keys: uint8 (R, 2, 32) keys of the two opened endpoints
        open_colors: uint8 (R, 2) opened permuted colours
        token: Timestamp over the commitment digest (beacon mode)
        pulse: Challenge pulse (beacon mode)
        mode: "beacon" or "fiat_shamir"
    """

    graph_digest: bytes
    lam: int
    commitments: np.ndarray
    edges: np.ndarray
    open_keys: np.ndarray
    open_colors: np.ndarray
    token: Optional[TimestampToken] = None
    pulse: Optional[Pulse] = None
    mode: str = "beacon"

    @property
    def rounds(self) -> int:
        return len(self.edges)

    @property
    def vertices(self) -> int:
        return self.commitments.shape[1]

    def transcript(self) -> bytes:
        return commitment_transcript(self.graph_digest, self.lam, self.commitments)

    def commitment_digest(self) -> bytes:
        return hashlib.sha512(self.transcript()).digest()

    def round(self, i: int) -> RoundTranscript:
        return RoundTranscript(
            [Commitment(bytes(c)) for c in self.commitments[i]],
            int(self.edges[i]),
            Decommitment(bytes(self.open_keys[i, 0]), bytes([self.open_colors[i, 0]])),
            Decommitment(bytes(self.open_keys[i, 1]), bytes([self.open_colors[i, 1]])),
        )

    def _sections(self) -> list[bytes]:
        header = struct.pack(">4sBIII", MAGIC, MODES[self.mode], self.lam, self.rounds, self.vertices)
        return [
            header,
            self.graph_digest,
            self.commitments.tobytes(),
            self.edges.astype(">u4").tobytes(),
            self.open_keys.tobytes(),
            self.open_colors.astype(np.uint8).tobytes(),
            self.token.encode() if self.token is not None else b"",
            self.pulse.encode() if self.pulse is not None else b"",
        ]

    def encode(self) -> bytes:
        return b"".join(struct.pack(">I", len(s)) + s for s in self._sections())

    def size(self) -> int:
        """
        Length of encode() in bytes; per round it carries V commitments of 32 bytes plus
        two openings of 33 bytes and a 4-byte edge index.
        """
        r, v = self.rounds, self.vertices
        fixed = 8 * 4 + 17 + len(self.graph_digest)
        token = len(self.token.encode()) if self.token is not None else 0
        pulse = len(self.pulse.encode()) if self.pulse is not None else 0
        return fixed + r * (v * DIGEST_BYTES + 4 + 2 * KEY_BYTES + 2) + token + pulse

    @classmethod
    def decode(cls, data: bytes) -> "Proof":
        sections, pos = [], 0
        while pos < len(data):
            (length,) = struct.unpack_from(">I", data, pos)
            sections.append(data[pos + 4 : pos + 4 + length])
            pos += 4 + length
        if len(sections) != 8 or pos != len(data):
            raise ValueError("malformed proof encoding")
        header, graph_digest, commitments, edges, keys, colors, token, pulse = sections
        magic, mode, lam, rounds, v = struct.unpack(">4sBIII", header)
        if magic != MAGIC:
            raise ValueError("not a proof file")
        return cls(
            graph_digest=graph_digest,
            lam=lam,
            commitments=np.frombuffer(commitments, dtype=np.uint8).reshape(rounds, v, DIGEST_BYTES),
            edges=np.frombuffer(edges, dtype=">u4").astype(np.int64),
            open_keys=np.frombuffer(keys, dtype=np.uint8).reshape(rounds, 2, KEY_BYTES),
            open_colors=np.frombuffer(colors, dtype=np.uint8).reshape(rounds, 2),
            token=TimestampToken.decode(token) if token else None,
            pulse=Pulse.decode(pulse) if pulse else None,
            mode={code: name for name, code in MODES.items()}[mode],
        )

    def save(self, path: str):
        with open(path, "wb") as f:
            f.write(self.encode())

    @classmethod
    def load(cls, path: str) -> "Proof":
        with open(path, "rb") as f:
            return cls.decode(f.read())

    def to_json(self) -> dict:
        """
        Debug rendering; the commitments are summarised by their digest.
        """
        return {
            "mode": self.mode,
            "lambda": self.lam,
            "rounds": self.rounds,
            "vertices": self.vertices,
            "graphDigest": self.graph_digest.hex(),
            "commitmentDigest": self.commitment_digest().hex(),
            "token": self.token.to_json() if self.token is not None else None,
            "pulse": self.pulse.to_json() if self.pulse is not None else None,
            "openings": [
                {
                    "edge": int(e),
                    "colors": [int(c) for c in cols],
                    "keys": [bytes(k).hex() for k in ks],
                }
                for e, cols, ks in zip(self.edges, self.open_colors, self.open_keys)
            ],
        }


@dataclass
class ProofCheck:
    ok: bool
    findings: list[str]


def await_pulse(
    beacon: BeaconSource, after_ms: int, wait_s: float = 120.0, poll_s: float = 0.5
) -> Pulse:
    """
    First released pulse with a timestamp strictly after after_ms, polling the beacon.

    Raises:
        ServiceError: if no such pulse appears within wait_s
    """
    deadline = time.monotonic() + wait_s
    while True:
        pulse = beacon.first_at_or_after(after_ms + 1)
        if pulse is not None:
            return pulse
        if time.monotonic() >= deadline:
            raise ServiceError(f"no beacon pulse after {after_ms} within {wait_s} s")
        time.sleep(poll_s)


def prove(
    g: Graph,
    phi: Coloring,
    lam: int,
    ts: TimestampService,
    beacon: BeaconSource,
    rng: Optional[RandomSource] = None,
    wait_s: float = 120.0,
    poll_s: float = 0.5,
    timings: Optional[dict] = None,
) -> Proof:
    """
    Commits to R permuted colourings, has the commitment digest timestamped, waits for
    the first pulse after the timestamp and opens the edges its output selects.

    Args:
        g: Graph
        phi: Valid 3-colouring of g
        lam: Soundness parameter
        ts: Timestamp authority
        beacon: Beacon to take the challenge from
        rng: Randomness for permutations and commitment keys
        wait_s: Longest wait for the challenge pulse
        poll_s: Beacon polling interval
        timings: If given, filled with "commit" and "response" seconds
    Returns:
        Proof
    """
    if not verify_witness(g, phi):
        raise WitnessError("refusing to prove with an invalid colouring")
    rng = rng or SystemRandomSource()
    rounds = round_count(g.edge_count, lam)
    graph_digest = g.digest()

    start = time.perf_counter()
    committed = commit_rounds(phi, rounds, rng)
    digest = hashlib.sha512(commitment_transcript(graph_digest, lam, committed.digests)).digest()
    token = ts.stamp(digest)
    commit_s = time.perf_counter() - start

    pulse = await_pulse(beacon, token.t_ms, wait_s, poll_s)
    start = time.perf_counter()
    edges = sample_edges(pulse.output_value, g.edge_count, rounds)
    keys, colors = open_rounds(g, committed, edges)
    proof = Proof(graph_digest, lam, committed.digests, edges, keys, colors, token, pulse)
    if timings is not None:
        timings["commit"] = commit_s
        timings["response"] = time.perf_counter() - start
    return proof


def check_rounds(g: Graph, proof: Proof, findings: list[str]):
    if proof.graph_digest != g.digest():
        findings.append("proof is for a different graph")
    expected = round_count(g.edge_count, proof.lam)
    if proof.rounds != expected:
        findings.append(f"round count {proof.rounds} differs from {expected}")
        return
    if proof.commitments.shape != (expected, g.v, DIGEST_BYTES):
        findings.append("commitment array has the wrong shape")
        return
    edges = np.asarray(proof.edges, dtype=np.int64)
    if np.any(edges < 0) or np.any(edges >= g.edge_count):
        findings.append("edge index out of range")
        return
    ends = g.edges[edges]
    committed = proof.commitments[np.arange(proof.rounds)[:, None], ends]
    opened = hash_array(
        proof.open_keys.reshape(-1, KEY_BYTES), proof.open_colors.reshape(-1)
    ).reshape(proof.rounds, 2, DIGEST_BYTES)
    colors = proof.open_colors
    bad_open = np.flatnonzero(np.any(opened != committed, axis=(1, 2)))
    bad_color = np.flatnonzero(
        (colors[:, 0] == colors[:, 1]) | np.any((colors < 1) | (colors > 3), axis=1)
    )
    for name, rounds in (("opening does not match commitment", bad_open), ("colours", bad_color)):
        for i in rounds[:MAX_REPORTED_ROUNDS]:
            findings.append(f"round {i}: {name}")
        if len(rounds) > MAX_REPORTED_ROUNDS:
            findings.append(f"{len(rounds) - MAX_REPORTED_ROUNDS} more rounds: {name}")


def verify(
    g: Graph,
    proof: Proof,
    pk_ts: PublicKey,
    pk_bc: PublicKey,
    pk_legacy: Optional[PublicKey] = None,
) -> ProofCheck:
    """
    Checks the timestamp token, the challenge pulse, that the pulse is the first one after
    the timestamp (later than it by at most one period),
    the derived edge indices and every opening. Never raises.
    """
    findings = []
    try:
        if proof.mode != "beacon":
            findings.append("not a beacon-mode proof")
        if proof.token is None or proof.pulse is None:
            findings.append("missing timestamp token or challenge pulse")
            return ProofCheck(False, findings)
        check_rounds(g, proof, findings)
        token, pulse = proof.token, proof.pulse
        if token.digest != proof.commitment_digest():
            findings.append("timestamp does not cover the commitments")
        if not verify_token(token, pk_ts):
            findings.append("timestamp signature invalid")
        pulse_check = verify_pulse(pulse, None, pk_bc, pk_legacy)
        findings.extend(f"pulse {f}" for f in pulse_check.findings)
        if pulse.status_code != 0:
            findings.append("challenge pulse carries no fresh randomness")
        if pulse.time_ms <= token.t_ms:
            findings.append("challenge precedes commitment")
        elif pulse.time_ms - token.t_ms > pulse.period_ms:
            findings.append("challenge pulse is not the first after the timestamp")
        expected = sample_edges(pulse.output_value, g.edge_count, proof.rounds)
        if not np.array_equal(expected, proof.edges):
            findings.append("edges do not follow the pulse output")
    except (ValueError, TypeError, IndexError, AttributeError, struct.error) as e:
        findings.append(f"malformed proof: {e}")
    return ProofCheck(not findings, findings)


class InteractiveProver:
    """
    Prover of one commit/challenge/response round. It does not check its colouring, so
    it also plays the cheating prover.
    """

    def __init__(self, g: Graph, phi: Coloring, rng: Optional[RandomSource] = None):
        self.g = g
        self.phi = phi
        self.rng = rng or SystemRandomSource()
        self._state = None

    def commit(self) -> list[Commitment]:
        self._state = commit_rounds(self.phi, 1, self.rng)
        return [Commitment(bytes(d)) for d in self._state.digests[0]]

    def respond(self, edge_index: int) -> tuple[Decommitment, Decommitment]:
        if self._state is None:
            raise RuntimeError("respond called before commit")
        j, k = self.g.edges[edge_index]
        keys, colors = self._state.keys[0], self._state.colors[0]
        return (
            Decommitment(bytes(keys[j]), bytes([colors[j]])),
            Decommitment(bytes(keys[k]), bytes([colors[k]])),
        )


def check_response(
    g: Graph, commitments: list[Commitment], edge_index: int, d_j: Decommitment, d_k: Decommitment
) -> bool:
    j, k = g.edges[edge_index]
    if not (open_commitment(commitments[j], d_j) and open_commitment(commitments[k], d_k)):
        return False
    if len(d_j.payload) != 1 or len(d_k.payload) != 1:
        return False
    cj, ck = d_j.payload[0], d_k.payload[0]
    return cj in (1, 2, 3) and ck in (1, 2, 3) and cj != ck


def challenge_round(g: Graph, prover: InteractiveProver, rng: RandomSource) -> bool:
    """
    Fresh commitments, a locally drawn edge and the check of the two openings.
    """
    commitments = prover.commit()
    edge_index = rng.randint(0, g.edge_count)
    d_j, d_k = prover.respond(edge_index)
    return check_response(g, commitments, edge_index, d_j, d_k)


def interactive_prove_verify(g: Graph, phi: Coloring, rng: Optional[RandomSource] = None) -> bool:
    """
    One round of the interactive protocol with a locally drawn challenge.
    """
    rng = rng or SystemRandomSource()
    return challenge_round(g, InteractiveProver(g, phi, rng), rng)


def expected_acceptance(edge_count: int, bad_edges: int, rounds: int) -> float:
    return ((edge_count - bad_edges) / edge_count) ** rounds


def soundness_experiment(
    g: Graph,
    phi: Coloring,
    rounds: int,
    trials: int,
    rng: Optional[RandomSource] = None,
    verbose: bool = False,
) -> float:
    """
    Acceptance frequency of the interactive protocol against a prover committing to phi,
    over trials runs of rounds rounds. Every round commits afresh and is checked with
    check_response; a run ends at its first rejected round.
    """
    rng = rng or SystemRandomSource()
    prover = InteractiveProver(g, phi, rng)
    accepted = 0
    for _ in progress(range(trials), verbose, desc="soundness"):
        if all(challenge_round(g, prover, rng) for _ in range(rounds)):
            accepted += 1
    return accepted / trials


def opened_pair_counts(proof: Proof) -> np.ndarray:
    """
    Occurrences of each ordered pair of distinct opened colours, in COLOR_PAIRS order.
    """
    pairs = proof.open_colors.astype(np.int64)
    code = 3 * (pairs[:, 0] - 1) + (pairs[:, 1] - 1)
    counts = np.bincount(code, minlength=9)
    return np.array([counts[3 * (a - 1) + (b - 1)] for a, b in COLOR_PAIRS])
