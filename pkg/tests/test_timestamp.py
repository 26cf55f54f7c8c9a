import pytest

from src.crypto.lattice_sig import keygen
from src.crypto.randomness import SeededRandomSource
from src.service.client import LocalTimestampClient
from src.service.timestamp import (
    TimestampAuthority,
    TimestampToken,
    stamp,
    transcript_digest,
    verify_token,
)


@pytest.fixture
def digest():
    return transcript_digest(b"commitments")


def test_stamp_and_verify(digest, clock, ts_keypair, rng):
    tok = stamp(digest, clock, ts_keypair, rng)
    assert tok.t_ms == clock.now_ms()
    assert tok.time == "2023-11-14T22:13:20.000Z"
    assert verify_token(tok, ts_keypair.pk)


def test_token_binds_time_and_digest(digest, clock, ts_keypair, rng):
    tok = stamp(digest, clock, ts_keypair, rng)
    assert not verify_token(TimestampToken(tok.digest, tok.t_ms - 1, tok.signature), ts_keypair.pk)
    other = transcript_digest(b"other commitments")
    assert not verify_token(TimestampToken(other, tok.t_ms, tok.signature), ts_keypair.pk)
    assert not verify_token(TimestampToken(digest[:32], tok.t_ms, tok.signature), ts_keypair.pk)


def test_wrong_authority(digest, clock, ts_keypair, small_params, rng):
    tok = stamp(digest, clock, ts_keypair, rng)
    assert not verify_token(tok, keygen(small_params, SeededRandomSource("rogue")).pk)


def test_digest_length(clock, ts_keypair):
    with pytest.raises(ValueError):
        stamp(b"short", clock, ts_keypair)


def test_token_encodings(digest, clock, ts_keypair, rng):
    tok = stamp(digest, clock, ts_keypair, rng)
    assert TimestampToken.decode(tok.encode()) == tok
    assert TimestampToken.from_json(tok.to_json()) == tok
    with pytest.raises(ValueError):
        TimestampToken.decode(tok.encode() + b"\x00")


def test_authority_uses_its_clock(digest, clock, ts_keypair, rng):
    service = LocalTimestampClient(TimestampAuthority(ts_keypair, clock, rng))
    first = service.stamp(digest)
    clock.advance(5_000)
    second = service.stamp(digest)
    assert second.t_ms - first.t_ms == 5_000
    assert verify_token(second, service.public_key())
