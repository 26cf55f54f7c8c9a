import os
import pytest

from src.errors import ChainError
from src.service.clock import format_utc, parse_utc, period_start
from src.service.pulse import FIELD_NAMES, FIELD_SPECS, Pulse
from src.service.store import INDEX_RECORD, ChainStore


def test_pulse_fields(chain_factory):
    store, _ = chain_factory(1)
    p = store.get(1)
    assert len(FIELD_SPECS) == 25
    assert FIELD_NAMES[-1] == "output_value"
    data = p.to_json()
    assert data["pulseIndex"] == 1
    assert data["signaturePqc"] == p.signature_pqc.hex()
    assert Pulse.from_json(data) == p
    assert Pulse.decode(p.encode()) == p


def test_truncated_pulse(chain_factory):
    store, _ = chain_factory(1)
    data = store.get_raw(1)
    with pytest.raises(ValueError):
        Pulse.decode(data[:-1])
    with pytest.raises(ValueError):
        Pulse.decode(data + b"\x00")


def test_utc_format():
    t = 1_700_000_000_123
    assert format_utc(t) == "2023-11-14T22:13:20.123Z"
    assert parse_utc(format_utc(t)) == t
    with pytest.raises(ValueError):
        parse_utc("2023-11-14T22:13:20.123")


def test_period_start():
    t = parse_utc("2024-03-17T05:42:10.500Z")
    assert format_utc(period_start(t, "hour")) == "2024-03-17T05:00:00.000Z"
    assert format_utc(period_start(t, "day")) == "2024-03-17T00:00:00.000Z"
    assert format_utc(period_start(t, "month")) == "2024-03-01T00:00:00.000Z"
    assert format_utc(period_start(t, "year")) == "2024-01-01T00:00:00.000Z"
    with pytest.raises(ValueError):
        period_start(t, "week")


def test_append_rules(chain_factory, beacon_cfg):
    source, _ = chain_factory(3)
    p1, p2, p3 = source.pulses()
    store = ChainStore(None, beacon_cfg.chain_index)
    with pytest.raises(ChainError):
        store.append(p2)
    store.append(p1)
    with pytest.raises(ChainError):
        store.append(p2.with_field("timestamp", p1.timestamp))
    with pytest.raises(ChainError):
        store.append(p2.with_field("chain_index", 2))
    store.append(p2)
    store.append(p3)
    assert len(store) == 3


def test_release_rule(chain_factory):
    store, _ = chain_factory(3)
    p1, p2, _ = store.pulses()
    assert store.get(2, now_ms=p1.time_ms) is None
    assert store.get(2, now_ms=p2.time_ms) == p2
    assert store.latest(now_ms=p1.time_ms) == p1
    assert store.latest(now_ms=p1.time_ms - 1) is None
    assert store.first_at_or_after(p1.time_ms + 1) == p2
    assert store.first_at_or_after(p1.time_ms + 1, now_ms=p1.time_ms) is None
    assert store.get(0) is None and store.get(4) is None


def test_persistence(tmp_path, chain_factory, beacon_cfg):
    store, _ = chain_factory(3, store=ChainStore(str(tmp_path), beacon_cfg.chain_index))
    reopened = ChainStore(str(tmp_path), beacon_cfg.chain_index)
    assert len(reopened) == 3
    assert list(reopened.pulses()) == list(store.pulses())
    assert reopened.get_raw(2) == store.get_raw(2)


def test_incomplete_record_dropped(tmp_path, chain_factory, beacon_cfg):
    store, _ = chain_factory(2, store=ChainStore(str(tmp_path), beacon_cfg.chain_index))
    size = os.path.getsize(store.log_path)
    with open(store.log_path, "ab") as f:
        f.write(b"\x00\x00\x10\x00partial")
    reopened = ChainStore(str(tmp_path), beacon_cfg.chain_index)
    assert len(reopened) == 2
    assert os.path.getsize(store.log_path) == size


def test_index_rebuilt(tmp_path, chain_factory, beacon_cfg):
    store, _ = chain_factory(2, store=ChainStore(str(tmp_path), beacon_cfg.chain_index))
    os.remove(store.index_path)
    ChainStore(str(tmp_path), beacon_cfg.chain_index)
    assert os.path.getsize(store.index_path) == 2 * INDEX_RECORD.size
