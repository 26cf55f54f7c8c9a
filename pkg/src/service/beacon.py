import hashlib
import math
import os
import struct
import threading
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

from .clock import Clock, format_utc
from .pulse import ZERO_HASH, Pulse
from .store import ChainStore
from ..crypto.lattice_sig import (
    PublicKey,
    SigKeypair,
    SigParams,
    keygen,
    load_keypair,
    save_keypair,
    sign,
    verify_encoded,
)
from ..crypto.randomness import RandomSource
from ..entropy.bell_sim import ChshStats
from ..entropy.pipeline import STATUS_UNDERFLOW, GenerationResult
from ..errors import ChainError, ServiceError
from ..progress import progress

ANCHOR_UNITS = ("hour", "day", "month", "year")


def local_random_value(payload: bytes) -> bytes:
    return hashlib.sha512(payload).digest()


def precommitment(payload: bytes) -> bytes:
    return hashlib.sha512(local_random_value(payload)).digest()


@dataclass
class BeaconConfig:
    uri: str = "http://localhost:8080/beacon/2.0/"
    version: str = "Version 2.0"
    cipher_suite: int = 0
    period_ms: int = 60_000
    chain_index: int = 1
    pulse_type: str = "DIQRNG"
    method: str = "QPE"
    external_source_id: bytes = field(
        default_factory=lambda: hashlib.sha512(b"no external source").digest()
    )
    lead_ms: Optional[int] = None

    @classmethod
    def from_params(cls, params: dict) -> "BeaconConfig":
        beacon = params.get("beacon", {})
        host = beacon.get("host", "localhost")
        port = beacon.get("port", 8080)
        return cls(
            uri=beacon.get("uri", f"http://{host}:{port}/beacon/2.0/"),
            period_ms=int(params.get("period_ms", 60_000)),
            chain_index=int(beacon.get("chain_index", 1)),
            lead_ms=beacon.get("lead_ms"),
        )

    @property
    def lead(self) -> int:
        return self.lead_ms if self.lead_ms is not None else self.period_ms // 2


@dataclass
class BeaconKeys:
    """
    The two signing keys of the beacon: "pqc" fills signature_pqc, "legacy" the classical
    signature slot.
    """

    pqc: SigKeypair
    legacy: SigKeypair

    @classmethod
    def generate(cls, params: SigParams, rng: Optional[RandomSource] = None) -> "BeaconKeys":
        return cls(keygen(params, rng), keygen(params, rng))

    def save(self, directory: str):
        save_keypair(self.pqc, directory, "beacon_pqc")
        save_keypair(self.legacy, directory, "beacon_legacy")

    @classmethod
    def load(cls, directory: str) -> "BeaconKeys":
        return cls(load_keypair(directory, "beacon_pqc"), load_keypair(directory, "beacon_legacy"))


def chain_anchors(store: ChainStore, prev: Optional[Pulse]) -> dict:
    """
    Link fields for the pulse following prev. Each anchor is the output value of the first
    stored pulse sharing prev's UTC hour/day/month/year; without prev all links are zero.
    """
    if prev is None:
        return {"previous": ZERO_HASH, **{unit: ZERO_HASH for unit in ANCHOR_UNITS}}
    anchors = {"previous": prev.output_value}
    t = prev.time_ms
    for unit in ANCHOR_UNITS:
        first = store.first_in_period(t, unit)
        anchors[unit] = first.output_value if first is not None else ZERO_HASH
    return anchors


def format_chsh(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.4f}"


def build_pulse(
    cfg: BeaconConfig,
    keys: BeaconKeys,
    store: ChainStore,
    payload: bytes,
    next_payload: bytes,
    time_ms: int,
    status_code: int = 0,
    chsh: float = float("nan"),
    rng: Optional[RandomSource] = None,
) -> Pulse:
    """
    Forms, signs and hashes the pulse that follows the store's tail.

    Args:
        cfg: Beacon constants
        keys: Signing keys
        store: Chain the pulse will be appended to
        payload: Extracted bits of this pulse
        next_payload: Extracted bits of the next pulse, bound by the precommitment
        time_ms: Pulse timestamp
        status_code: 0 for fresh randomness, non-zero when the payload is a placeholder
        chsh: Monitored CHSH value of the run that produced payload
        rng: Randomness for the signature masks
    Returns:
        Complete pulse
    """
    prev = store.latest()
    lrv = local_random_value(payload)
    if prev is not None and prev.precommitment_value != hashlib.sha512(lrv).digest():
        raise ChainError(f"payload does not match the precommitment of pulse {prev.pulse_index}")
    pulse = Pulse(
        uri=cfg.uri,
        version=cfg.version,
        cipher_suite=cfg.cipher_suite,
        period_ms=cfg.period_ms,
        certificate_id=keys.pqc.pk.certificate_id(),
        chain_index=cfg.chain_index,
        pulse_index=prev.pulse_index + 1 if prev else 1,
        timestamp=format_utc(time_ms),
        local_random_value=lrv,
        external_source_id=cfg.external_source_id,
        external_status_code=0,
        external_value=ZERO_HASH,
        precommitment_value=precommitment(next_payload),
        status_code=status_code,
        type=cfg.pulse_type,
        chsh=format_chsh(chsh),
        method=cfg.method,
        **chain_anchors(store, prev),
    )
    digest = pulse.signing_digest()
    pulse = replace(
        pulse,
        signature_rsa=sign(keys.legacy.sk, digest, rng).encode(keys.legacy.pk.params),
        signature_pqc=sign(keys.pqc.sk, digest, rng).encode(keys.pqc.pk.params),
    )
    return replace(pulse, output_value=pulse.compute_output_value())


@dataclass
class PulseCheck:
    ok: bool
    findings: list[str]


def verify_pulse(
    p: Pulse, prev: Optional[Pulse], pk_pqc: PublicKey, pk_legacy: Optional[PublicKey] = None
) -> PulseCheck:
    """
    Checks the output value, both signatures, the certificate id and, given the
    predecessor, the chain link against its recomputed output value, the index,
    timestamp order and the precommitment.
    Never raises; every failed check adds a finding.
    """
    findings = []
    try:
        if p.compute_output_value() != p.output_value:
            findings.append("output_value")
        digest = p.signing_digest()
        if not verify_encoded(pk_pqc, p.signature_pqc, digest):
            findings.append("signature_pqc")
        if pk_legacy is not None and not verify_encoded(pk_legacy, p.signature_rsa, digest):
            findings.append("signature_rsa")
        if p.certificate_id != pk_pqc.certificate_id():
            findings.append("certificate_id")
        if prev is None:
            if p.pulse_index == 1 and p.previous != ZERO_HASH:
                findings.append("previous")
        else:
            if p.previous != prev.output_value or p.previous != prev.compute_output_value():
                findings.append("previous")
            if p.chain_index != prev.chain_index:
                findings.append("chain_index")
            if p.pulse_index != prev.pulse_index + 1:
                findings.append("pulse_index")
            if p.time_ms <= prev.time_ms:
                findings.append("timestamp")
            if prev.precommitment_value != hashlib.sha512(p.local_random_value).digest():
                findings.append("precommitment")
    except (ValueError, TypeError, AttributeError) as e:
        findings.append(f"malformed: {e}")
    return PulseCheck(not findings, findings)


@dataclass(frozen=True)
class Finding:
    pulse_index: int
    check: str


def audit_chain(
    store: ChainStore,
    pk_pqc: PublicKey,
    pk_legacy: Optional[PublicKey] = None,
    start: int = 1,
    end: Optional[int] = None,
    verbose: bool = False,
) -> list[Finding]:
    """
    Verifies a range of the chain pulse by pulse, including the hour/day/month/year
    anchors recomputed from the store.
    """
    end = len(store) if end is None else min(end, len(store))
    iterator = progress(range(max(start, 1), end + 1), verbose, desc="audit")
    findings = []
    for i in iterator:
        p = store.get(i)
        prev = store.get(i - 1) if i > 1 else None
        check = verify_pulse(p, prev, pk_pqc, pk_legacy)
        findings.extend(Finding(i, f) for f in check.findings)
        try:
            anchors = chain_anchors(store, prev)
        except ValueError:
            findings.append(Finding(i, "anchors"))
            continue
        for unit in ANCHOR_UNITS:
            if getattr(p, unit) != anchors[unit]:
                findings.append(Finding(i, unit))
    return findings


class PayloadSource(Protocol):
    def get(self, timeout: Optional[float] = None) -> GenerationResult:
        ...


def underflow_result(m: int = 512) -> GenerationResult:
    return GenerationResult(
        payload=bytes(m // 8),
        status=STATUS_UNDERFLOW,
        trials=0,
        acc=0.0,
        chsh=ChshStats(),
        duration=0.0,
        eps_x=1.0,
    )


# index, status, trials, chsh wins, chsh total
PENDING_RECORD = struct.Struct(">QQQQQ")


class BeaconEngine:
    """
    Period scheduler. Each step takes the already precommitted payload, fetches the one
    for the following period, builds and appends the pulse. Pulses are built lead_ms
    ahead of their timestamp; the store withholds them until then.

    The precommitted payloads survive restarts in <chain_dir>/pending_<c>.bin together
    with their status, trial count and CHSH statistics.
    """

    def __init__(
        self,
        cfg: BeaconConfig,
        keys: BeaconKeys,
        store: ChainStore,
        source: PayloadSource,
        clock: Clock,
        rng: Optional[RandomSource] = None,
        wait_s: Optional[float] = None,
    ):
        self.cfg = cfg
        self.keys = keys
        self.store = store
        self.source = source
        self.clock = clock
        self.rng = rng
        self.wait_s = wait_s if wait_s is not None else cfg.period_ms / 1000
        self._stop = threading.Event()
        self.pending_path = None
        if store.directory is not None:
            self.pending_path = os.path.join(store.directory, f"pending_{cfg.chain_index}.bin")
        self.pending = self._resume()

    def _resume(self) -> GenerationResult:
        last = self.store.latest()
        if last is None:
            pending = self._fetch()
            self._save_pending([(1, pending)])
            return pending
        for index, result in self._load_pending():
            if index == last.pulse_index + 1 and precommitment(result.payload) == last.precommitment_value:
                print(f"    Resuming chain {self.cfg.chain_index} after pulse {last.pulse_index}")
                return result
        raise ChainError(
            f"precommitted payload for pulse {last.pulse_index + 1} is lost; start a new chain index"
        )

    def _fetch(self) -> GenerationResult:
        try:
            return self.source.get(timeout=self.wait_s)
        except ServiceError as e:
            print(f"    Payload underflow: {e}")
            return underflow_result()

    def _save_pending(self, records: list[tuple[int, GenerationResult]]):
        if self.pending_path is None:
            return
        data = b"".join(
            PENDING_RECORD.pack(index, r.status, r.trials, r.chsh.wins, r.chsh.total) + struct.pack(">I", len(r.payload)) + r.payload
            for index, r in records
        )
        tmp = self.pending_path + ".tmp"
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.pending_path)

    def _load_pending(self) -> list[tuple[int, GenerationResult]]:
        if self.pending_path is None or not os.path.exists(self.pending_path):
            return []
        with open(self.pending_path, "rb") as f:
            data = f.read()
        records, pos = [], 0
        while pos + PENDING_RECORD.size + 4 <= len(data):
            index, status, trials, wins, total = PENDING_RECORD.unpack_from(data, pos)
            pos += PENDING_RECORD.size
            (length,) = struct.unpack_from(">I", data, pos)
            pos += 4
            payload = data[pos : pos + length]
            pos += length
            result = replace(
                underflow_result(8 * length),
                payload=payload,
                status=status,
                trials=trials,
                chsh=ChshStats(wins, total),
            )
            records.append((index, result))
        return records

    def next_time(self) -> int:
        period = self.cfg.period_ms
        earliest = -(-(self.clock.now_ms() + self.cfg.lead) // period) * period
        last = self.store.latest()
        if last is None:
            return earliest
        return max(last.time_ms + period, earliest)

    def step(self) -> Pulse:
        t = self.next_time()
        self.clock.sleep_until(t - self.cfg.lead)
        current = self.pending
        index = len(self.store) + 1
        nxt = self._fetch()
        self._save_pending([(index, current), (index + 1, nxt)])
        pulse = build_pulse(
            self.cfg,
            self.keys,
            self.store,
            current.payload,
            nxt.payload,
            t,
            current.status,
            current.chsh.s_bar,
            self.rng,
        )
        self.store.append(pulse)
        self._save_pending([(index + 1, nxt)])
        self.pending = nxt
        print(
            f"    Pulse {pulse.pulse_index}: {pulse.timestamp} status={pulse.status_code} "
            f"chsh={pulse.chsh} trials={current.trials}",
            flush=True,
        )
        return pulse

    def run(self, count: Optional[int] = None):
        produced = 0
        while not self._stop.is_set() and (count is None or produced < count):
            self.step()
            produced += 1

    def stop(self):
        self._stop.set()
