import os
import threading
from dataclasses import dataclass
from typing import Optional
import numpy as np

from .config import RunConfig
from ..crypto.lattice_sig import SigKeypair, keygen, load_keypair, save_keypair
from ..crypto.randomness import RandomSource, SeededRandomSource, SystemRandomSource
from ..entropy.extractor import ToeplitzSeed
from ..entropy.pipeline import EntropyPipeline, PayloadQueue
from ..entropy.qpe import PefTable, QpeParams, determine_params
from ..entropy.bell_sim import BehaviorModel
from ..errors import ConfigError, ExtractorError
from ..service.beacon import BeaconConfig, BeaconEngine, BeaconKeys
from ..service.client import LocalBeaconClient, LocalTimestampClient
from ..service.clock import Clock, SystemClock
from ..service.server import BeaconServer
from ..service.store import ChainStore
from ..service.timestamp import TimestampAuthority

TIMESTAMP_KEY = "timestamp"


def make_rng(cfg: RunConfig, stream: str) -> RandomSource:
    """
    OS randomness, or a deterministic stream per purpose when sim_seed is set.
    """
    if cfg.sim_seed is None:
        return SystemRandomSource()
    return SeededRandomSource(f"{cfg.sim_seed}:{stream}")


def qpe_params(cfg: RunConfig) -> QpeParams:
    q = cfg.qpe
    return determine_params(
        q.k_exp, q.eps_h, q.eps_x, q.kappa, PefTable.load(cfg.pef_table), q.max_trials
    )


def generate_keys(cfg: RunConfig, rng: RandomSource) -> tuple[BeaconKeys, SigKeypair, ToeplitzSeed]:
    """
    Creates the beacon and timestamp keypairs and the extractor seed in cfg.keys_dir.
    """
    print(f"    Key directory: {cfg.keys_dir}")
    os.makedirs(cfg.keys_dir, exist_ok=True)
    keys = BeaconKeys.generate(cfg.sig_params, rng)
    keys.save(cfg.keys_dir)
    ts_kp = keygen(cfg.sig_params, rng)
    save_keypair(ts_kp, cfg.keys_dir, TIMESTAMP_KEY)
    seed = ToeplitzSeed.generate(cfg.seed_bits, rng)
    seed_dir = os.path.dirname(cfg.seed_file)
    if seed_dir:
        os.makedirs(seed_dir, exist_ok=True)
    seed.save(cfg.seed_file)
    print(f"    Beacon certificate id: {keys.pqc.pk.certificate_id().hex()[:32]}...")
    print(f"    Timestamp certificate id: {ts_kp.pk.certificate_id().hex()[:32]}...")
    print(f"    Extractor seed: {len(seed)} bits")
    return keys, ts_kp, seed


def load_beacon_keys(cfg: RunConfig) -> BeaconKeys:
    try:
        return BeaconKeys.load(cfg.keys_dir)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot load beacon keys from {cfg.keys_dir}, run keygen: {e}") from e


def load_timestamp_key(cfg: RunConfig) -> SigKeypair:
    try:
        return load_keypair(cfg.keys_dir, TIMESTAMP_KEY)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot load timestamp key from {cfg.keys_dir}, run keygen: {e}") from e


def load_seed(cfg: RunConfig) -> ToeplitzSeed:
    if not os.path.exists(cfg.seed_file):
        raise ConfigError(f"extractor seed {cfg.seed_file} is missing, run keygen")
    seed = ToeplitzSeed.load(cfg.seed_file)
    if len(seed) < cfg.seed_bits:
        raise ExtractorError(
            f"extractor seed has {len(seed)} bits, {cfg.seed_bits} needed for {cfg.qpe.max_trials} trials"
        )
    return seed


def build_pipeline(cfg: RunConfig, seed: ToeplitzSeed) -> EntropyPipeline:
    params = qpe_params(cfg)
    sim_rng = make_rng(cfg, "bell").numpy_generator()
    return EntropyPipeline(
        BehaviorModel.load(cfg.behavior_model),
        PefTable.load(cfg.pef_table),
        params,
        seed,
        sim_rng,
        m=cfg.extractor_m,
        rescale_mode=cfg.qpe.rescale_mode,
    )


def beacon_config(cfg: RunConfig) -> BeaconConfig:
    return BeaconConfig(
        uri=f"{cfg.beacon.url}/beacon/2.0/",
        period_ms=cfg.period_ms,
        chain_index=cfg.chain_index,
        lead_ms=cfg.lead_ms,
    )


@dataclass
class BeaconService:
    """
    Running beacon: payload queue, period scheduler thread and an optional HTTP server.
    """

    store: ChainStore
    engine: BeaconEngine
    queue: PayloadQueue
    keys: BeaconKeys
    clock: Clock
    server: Optional[BeaconServer] = None
    thread: Optional[threading.Thread] = None

    def start(self, count: Optional[int] = None) -> "BeaconService":
        self.thread = threading.Thread(target=self.engine.run, args=(count,), daemon=True)
        self.thread.start()
        return self

    def join(self, timeout: Optional[float] = None):
        if self.thread is not None:
            self.thread.join(timeout)

    def stop(self):
        self.engine.stop()
        self.queue.stop()
        self.join(timeout=max(5.0, 2 * self.engine.cfg.period_ms / 1000))
        if self.server is not None:
            self.server.stop()

    def client(self) -> LocalBeaconClient:
        return LocalBeaconClient(self.store, self.clock)


def start_beacon(
    cfg: RunConfig,
    keys: BeaconKeys,
    seed: ToeplitzSeed,
    clock: Optional[Clock] = None,
    http: bool = True,
    port: Optional[int] = None,
    count: Optional[int] = None,
) -> BeaconService:
    """
    Starts the entropy pipeline and the scheduler, which stops after count pulses if
    given. With http the chain is also served.
    """
    clock = clock or SystemClock()
    store = ChainStore(cfg.chain_dir, cfg.chain_index)
    payloads = PayloadQueue(build_pipeline(cfg, seed), cfg.queue_size).start()
    engine = BeaconEngine(beacon_config(cfg), keys, store, payloads, clock, make_rng(cfg, "sign"))
    server = None
    if http:
        server = BeaconServer(
            store=store,
            clock=clock,
            public_keys={"pqc": keys.pqc.pk, "legacy": keys.legacy.pk},
            host=cfg.beacon.host,
            port=cfg.beacon.port if port is None else port,
        ).start()
    return BeaconService(store, engine, payloads, keys, clock, server).start(count)


def start_timestamp(
    cfg: RunConfig, kp: SigKeypair, clock: Optional[Clock] = None, port: Optional[int] = None
) -> BeaconServer:
    authority = TimestampAuthority(kp, clock or SystemClock(), make_rng(cfg, "timestamp"))
    return BeaconServer(
        authority=authority,
        clock=authority.clock,
        host=cfg.timestamp.host,
        port=cfg.timestamp.port if port is None else port,
    ).start()


def local_timestamp(cfg: RunConfig, kp: SigKeypair, clock: Optional[Clock] = None) -> LocalTimestampClient:
    return LocalTimestampClient(TimestampAuthority(kp, clock or SystemClock(), make_rng(cfg, "timestamp")))


def stopping_rng(cfg: RunConfig) -> np.random.Generator:
    return make_rng(cfg, "stopping").numpy_generator()
