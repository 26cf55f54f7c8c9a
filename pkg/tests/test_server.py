import pytest
import requests

from src.errors import ServiceError
from src.service.client import BeaconClient, TimestampClient
from src.service.server import BeaconServer
from src.service.timestamp import TimestampAuthority, transcript_digest, verify_token


@pytest.fixture
def served_chain(chain_factory, beacon_keys, ts_keypair, clock, rng):
    store, _ = chain_factory(3)
    clock.set(store.get(2).time_ms)
    server = BeaconServer(
        store=store,
        authority=TimestampAuthority(ts_keypair, clock, rng),
        clock=clock,
        public_keys={"pqc": beacon_keys.pqc.pk, "legacy": beacon_keys.legacy.pk},
        host="localhost",
        port=0,
    ).start()
    yield store, server
    server.stop()


def test_pulse_endpoints(served_chain):
    store, server = served_chain
    client = BeaconClient(server.url)
    assert client.pulse(1, 1) == store.get(1)
    assert client.raw(1, 2) == store.get_raw(2)
    assert client.pulse(1, 9) is None
    assert client.pulse(4, 1) is None


def test_future_pulses_withheld(served_chain):
    store, server = served_chain
    client = BeaconClient(server.url)
    assert client.latest() == store.get(2)
    assert client.pulse(1, 3) is None
    assert client.raw(1, 3) is None
    assert client.first_at_or_after(store.get(1).time_ms + 1) == store.get(2)
    assert client.first_at_or_after(store.get(2).time_ms + 1) is None


def test_time_route_accepts_rfc3339(served_chain):
    store, server = served_chain
    p = store.get(2)
    response = requests.get(f"{server.url}/beacon/2.0/pulse/time/{p.timestamp}", timeout=10)
    assert response.status_code == 200
    assert response.json()["pulse"]["outputValue"] == p.output_value.hex()
    response = requests.get(f"{server.url}/beacon/2.0/pulse/time/yesterday", timeout=10)
    assert response.status_code == 400


def test_malformed_path(served_chain):
    _, server = served_chain
    response = requests.get(f"{server.url}/beacon/2.0/chain/x/pulse/1", timeout=10)
    assert response.status_code == 400


def test_public_keys(served_chain, beacon_keys):
    _, server = served_chain
    keys = BeaconClient(server.url).public_keys()
    assert keys["pqc"].certificate_id() == beacon_keys.pqc.pk.certificate_id()
    assert set(keys) == {"pqc", "legacy"}


def test_timestamp_endpoint(served_chain, ts_keypair):
    _, server = served_chain
    client = TimestampClient(server.url)
    tok = client.stamp(transcript_digest(b"proof"))
    assert verify_token(tok, client.public_key())
    assert client.public_key().certificate_id() == ts_keypair.pk.certificate_id()
    with pytest.raises(ServiceError):
        client.stamp(b"too short")


def test_beacon_without_authority(chain_factory, clock):
    store, _ = chain_factory(1)
    server = BeaconServer(store=store, clock=clock, port=0).start()
    try:
        with pytest.raises(ServiceError):
            TimestampClient(server.url).stamp(transcript_digest(b"x"))
        with pytest.raises(ServiceError):
            BeaconClient(server.url).public_keys()
    finally:
        server.stop()


def test_unreachable():
    with pytest.raises(ServiceError):
        BeaconClient("http://127.0.0.1:9", timeout=1).latest()
