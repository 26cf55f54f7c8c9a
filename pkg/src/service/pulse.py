import hashlib
import struct
from dataclasses import dataclass, fields, replace

from .clock import parse_utc

HASH_BYTES = 64
ZERO_HASH = bytes(HASH_BYTES)

# field name, wire kind, JSON name; order is the canonical field order
FIELD_SPECS = [
    ("uri", "str", "uri"),
    ("version", "str", "version"),
    ("cipher_suite", "u64", "cipherSuite"),
    ("period_ms", "u64", "period"),
    ("certificate_id", "hash", "certificateId"),
    ("chain_index", "u64", "chainIndex"),
    ("pulse_index", "u64", "pulseIndex"),
    ("timestamp", "str", "timeStamp"),
    ("local_random_value", "hash", "localRandomValue"),
    ("external_source_id", "hash", "externalSourceId"),
    ("external_status_code", "u64", "externalStatusCode"),
    ("external_value", "hash", "externalValue"),
    ("previous", "hash", "previous"),
    ("hour", "hash", "hour"),
    ("day", "hash", "day"),
    ("month", "hash", "month"),
    ("year", "hash", "year"),
    ("precommitment_value", "hash", "precommitmentValue"),
    ("status_code", "u64", "statusCode"),
    ("type", "str", "type"),
    ("chsh", "str", "chsh"),
    ("method", "str", "method"),
    ("signature_rsa", "bytes", "signatureValue"),
    ("signature_pqc", "bytes", "signaturePqc"),
    ("output_value", "hash", "outputValue"),
]
FIELD_NAMES = [name for name, _, _ in FIELD_SPECS]
FIELD_KINDS = {name: kind for name, kind, _ in FIELD_SPECS}
SIGNED_FIELDS = 22
HASHED_FIELDS = 24


def encode_field(kind: str, value) -> bytes:
    if kind == "u64":
        raw = struct.pack(">Q", value)
    elif kind == "str":
        raw = value.encode("utf-8")
    else:
        raw = bytes(value)
    return struct.pack(">I", len(raw)) + raw


def decode_field(kind: str, raw: bytes):
    if kind == "u64":
        if len(raw) != 8:
            raise ValueError("integer fields are 8 bytes")
        return struct.unpack(">Q", raw)[0]
    if kind == "str":
        return raw.decode("utf-8")
    if kind == "hash" and len(raw) != HASH_BYTES:
        raise ValueError(f"hash fields are {HASH_BYTES} bytes, got {len(raw)}")
    return raw


@dataclass(frozen=True)
class Pulse:
    """
    One beacon record. Field order is the order of FIELD_SPECS; output_value hashes the
    first 24 fields and both signatures cover the hash of the first 22.
    """

    uri: str
    version: str
    cipher_suite: int
    period_ms: int
    certificate_id: bytes
    chain_index: int
    pulse_index: int
    timestamp: str
    local_random_value: bytes
    external_source_id: bytes
    external_status_code: int
    external_value: bytes
    previous: bytes
    hour: bytes
    day: bytes
    month: bytes
    year: bytes
    precommitment_value: bytes
    status_code: int
    type: str
    chsh: str
    method: str
    signature_rsa: bytes = b""
    signature_pqc: bytes = b""
    output_value: bytes = ZERO_HASH

    @property
    def time_ms(self) -> int:
        return parse_utc(self.timestamp)

    def canonical(self, count: int = len(FIELD_SPECS)) -> bytes:
        return b"".join(
            encode_field(kind, getattr(self, name)) for name, kind, _ in FIELD_SPECS[:count]
        )

    def signing_digest(self) -> bytes:
        return hashlib.sha512(self.canonical(SIGNED_FIELDS)).digest()

    def compute_output_value(self) -> bytes:
        return hashlib.sha512(self.canonical(HASHED_FIELDS)).digest()

    def encode(self) -> bytes:
        return self.canonical()

    @classmethod
    def decode(cls, data: bytes) -> "Pulse":
        values = {}
        pos = 0
        for name, kind, _ in FIELD_SPECS:
            if pos + 4 > len(data):
                raise ValueError("truncated pulse record")
            (length,) = struct.unpack(">I", data[pos : pos + 4])
            pos += 4
            if pos + length > len(data):
                raise ValueError("truncated pulse record")
            values[name] = decode_field(kind, data[pos : pos + length])
            pos += length
        if pos != len(data):
            raise ValueError("trailing bytes after pulse record")
        return cls(**values)

    def to_json(self) -> dict:
        out = {}
        for name, kind, key in FIELD_SPECS:
            value = getattr(self, name)
            out[key] = value.hex() if kind in ("hash", "bytes") else value
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Pulse":
        values = {}
        for name, kind, key in FIELD_SPECS:
            value = data[key]
            if kind in ("hash", "bytes"):
                value = bytes.fromhex(value)
            elif kind == "u64":
                value = int(value)
            values[name] = value
        return cls(**values)

    def with_field(self, name: str, value) -> "Pulse":
        return replace(self, **{name: value})


assert [f.name for f in fields(Pulse)] == FIELD_NAMES
