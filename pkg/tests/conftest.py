import os
import pytest

from src.crypto.lattice_sig import SigParams, keygen
from src.crypto.randomness import SeededRandomSource
from src.entropy.bell_sim import BehaviorModel
from src.entropy.qpe import PefTable
from src.service.beacon import BeaconConfig, BeaconKeys, build_pulse
from src.service.clock import ManualClock
from src.service.store import ChainStore

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")
PARAMS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "params")


@pytest.fixture
def rng():
    return SeededRandomSource("tests")


@pytest.fixture(scope="session")
def small_params():
    q = 8380417
    return SigParams(
        n=64, q=q, k=2, l=2, eta=2, gamma1=2**17, gamma2=(q - 1) // 32, tau=16, beta=32
    ).validate()


@pytest.fixture(scope="session")
def beacon_keys(small_params):
    return BeaconKeys.generate(small_params, SeededRandomSource("beacon keys"))


@pytest.fixture(scope="session")
def ts_keypair(small_params):
    return keygen(small_params, SeededRandomSource("timestamp key"))


@pytest.fixture(scope="session")
def model():
    return BehaviorModel.load(os.path.join(DATA_DIR, "behavior_model.txt"))


@pytest.fixture(scope="session")
def pef_table():
    return PefTable.load(os.path.join(DATA_DIR, "pef_table.txt"))


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def beacon_cfg():
    return BeaconConfig(period_ms=60_000)


@pytest.fixture
def chain_factory(beacon_keys, beacon_cfg):
    """
    Builds a chain of signed pulses one period apart. Returns the store and the payloads;
    payload i+1 is precommitted by pulse i.
    """

    def make(count, store=None, start_ms=1_700_000_000_000, seed="chain"):
        rng = SeededRandomSource(seed)
        store = store if store is not None else ChainStore(None, beacon_cfg.chain_index)
        payloads = [rng.random_bytes(64) for _ in range(count + 1)]
        for i in range(count):
            pulse = build_pulse(
                beacon_cfg,
                beacon_keys,
                store,
                payloads[i],
                payloads[i + 1],
                start_ms + i * beacon_cfg.period_ms,
                chsh=2.0071,
                rng=rng,
            )
            store.append(pulse)
        return store, payloads

    return make
