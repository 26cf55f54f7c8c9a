import os
import re
from dataclasses import dataclass, field
from typing import Optional

from ..crypto.lattice_sig import SigParams
from ..entropy.bell_sim import BehaviorModel, SpacetimeConfig, load_counts
from ..entropy.qpe import RESCALE_MODES, PefTable
from ..errors import ConfigError

POWER_OF_TWO = re.compile(r"^\s*2\s*\^\s*(-?\d+)\s*$")


def parse_error(value, name: str) -> float:
    """
    Error parameters may be given as floats or as "2^-64".
    """
    if isinstance(value, str):
        match = POWER_OF_TWO.match(value)
        if match is None:
            raise ConfigError(f"{name}: cannot parse {value!r}, use a float or 2^-N")
        return 2.0 ** int(match.group(1))
    return float(value)


@dataclass
class QpeSettings:
    k_exp: int = 512
    eps_h: float = 2.0**-64
    eps_x: float = 2.0**-100
    kappa: float = 2.0**-64
    max_trials: int = 9_640_000
    rescale_mode: str = "per_run"


@dataclass
class ServiceAddress:
    host: str = "localhost"
    port: int = 8080

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"


@dataclass
class BenchSettings:
    vertices: list[int] = field(default_factory=lambda: [50, 100, 150, 200, 250])
    lam: int = 64
    edge_factor: int = 3


@dataclass
class RunConfig:
    """
    Validated view of a parameter card. Relative paths are resolved against the working
    directory first and then against the folder above the card.
    """

    run_name: str
    period_ms: int
    behavior_model: str
    pef_table: str
    training_counts: Optional[str]
    qpe: QpeSettings
    extractor_m: int
    seed_file: str
    keys_dir: str
    chain_dir: Optional[str]
    chain_index: int
    queue_size: int
    lead_ms: Optional[int]
    beacon: ServiceAddress
    timestamp: ServiceAddress
    bench: BenchSettings
    sig_params: SigParams
    spacetime: SpacetimeConfig = field(default_factory=SpacetimeConfig.reference)
    sim_seed: Optional[int] = None
    challenge_wait_s: float = 180.0
    run_folder: Optional[str] = None

    @classmethod
    def from_params(cls, params: dict, base_dir: Optional[str] = None) -> "RunConfig":
        """
        Checks that every referenced table exists and parses, that lambda is positive and
        that the period is at least 100 ms.

        Args:
            params: Parameter card as loaded from YAML
            base_dir: Fallback directory for relative paths
        Raises:
            ConfigError: if the card is inconsistent
        """

        def resolve(path: Optional[str], must_exist: bool = True) -> Optional[str]:
            if path is None:
                return None
            path = os.path.expanduser(str(path))
            if not os.path.isabs(path) and not os.path.exists(path) and base_dir is not None:
                candidate = os.path.join(base_dir, path)
                if os.path.exists(candidate) or not must_exist:
                    path = candidate
            if must_exist and not os.path.exists(path):
                raise ConfigError(f"file {path} does not exist")
            return path

        period_ms = int(params.get("period_ms", 60_000))
        if period_ms < 100:
            raise ConfigError(f"period_ms must be at least 100, got {period_ms}")

        behavior_model = resolve(params.get("behavior_model", "data/behavior_model.txt"))
        pef_table = resolve(params.get("pef_table", "data/pef_table.txt"))
        training_counts = resolve(params.get("training_counts"))
        try:
            BehaviorModel.load(behavior_model)
            table = PefTable.load(pef_table)
            if training_counts is not None:
                load_counts(training_counts)
        except (ValueError, KeyError, OSError) as e:
            raise ConfigError(f"cannot parse table: {e}") from e
        if table.alpha <= 1:
            raise ConfigError(f"{pef_table}: alpha must exceed 1")

        qpe_params = params.get("qpe", {})
        qpe = QpeSettings(
            k_exp=int(qpe_params.get("k_exp", 512)),
            eps_h=parse_error(qpe_params.get("eps_h", "2^-64"), "eps_h"),
            eps_x=parse_error(qpe_params.get("eps_x", "2^-100"), "eps_x"),
            kappa=parse_error(qpe_params.get("kappa", "2^-64"), "kappa"),
            max_trials=int(float(qpe_params.get("max_trials", 9_640_000))),
            rescale_mode=qpe_params.get("rescale_mode", "per_run"),
        )
        if qpe.rescale_mode not in RESCALE_MODES:
            raise ConfigError(f"rescale_mode must be one of {RESCALE_MODES}")
        for name in ("eps_h", "eps_x", "kappa"):
            if not 0 < getattr(qpe, name) <= 1:
                raise ConfigError(f"{name} must lie in (0, 1]")

        extractor = params.get("extractor", {})
        extractor_m = int(extractor.get("m", qpe.k_exp))
        if extractor_m != qpe.k_exp:
            raise ConfigError(f"extractor m={extractor_m} differs from k_exp={qpe.k_exp}")
        keys_dir = resolve(params.get("keys", {}).get("dir", "keys"), must_exist=False)
        seed_file = resolve(
            extractor.get("seed_file", os.path.join(keys_dir, "toeplitz_seed.bin")), must_exist=False
        )

        beacon = params.get("beacon", {})
        ts = params.get("timestamp", {})
        bench = params.get("bench", {})
        bench_settings = BenchSettings(
            vertices=[int(v) for v in bench.get("vertices", [50, 100, 150, 200, 250])],
            lam=int(bench.get("lambda", 64)),
            edge_factor=int(bench.get("edge_factor", 3)),
        )
        if bench_settings.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {bench_settings.lam}")
        if min(bench_settings.vertices, default=4) < 4:
            raise ConfigError("bench vertex counts must be at least 4")

        try:
            sig_params = SigParams.from_dict(params.get("signature", {}))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid signature parameters: {e}") from e

        spacetime = params.get("spacetime")
        try:
            spacetime = (
                SpacetimeConfig.reference()
                if spacetime is None
                else SpacetimeConfig(**{k: float(v) for k, v in spacetime.items()})
            )
        except (TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f"invalid spacetime section: {e}") from e

        sim_seed = params.get("sim_seed")
        return cls(
            run_name=params.get("run_name", "run"),
            period_ms=period_ms,
            behavior_model=behavior_model,
            pef_table=pef_table,
            training_counts=training_counts,
            qpe=qpe,
            extractor_m=extractor_m,
            seed_file=seed_file,
            keys_dir=keys_dir,
            chain_dir=resolve(beacon.get("chain_dir"), must_exist=False),
            chain_index=int(beacon.get("chain_index", 1)),
            queue_size=int(beacon.get("queue_size", 2)),
            lead_ms=beacon.get("lead_ms"),
            beacon=ServiceAddress(beacon.get("host", "localhost"), int(beacon.get("port", 8080))),
            timestamp=ServiceAddress(ts.get("host", "localhost"), int(ts.get("port", 8081))),
            bench=bench_settings,
            sig_params=sig_params,
            spacetime=spacetime,
            sim_seed=None if sim_seed is None else int(sim_seed),
            challenge_wait_s=float(params.get("challenge_wait_s", max(180.0, 3 * period_ms / 1000))),
            run_folder=params.get("run_folder"),
        )

    @property
    def seed_bits(self) -> int:
        """
        Seed length covering the longest possible run, two output bits per trial.
        """
        return 2 * self.qpe.max_trials + self.extractor_m - 1
