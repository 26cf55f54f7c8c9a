import queue
import threading
import time
from dataclasses import dataclass
from typing import Optional
import numpy as np

from .bell_sim import BellSimulator, BehaviorModel, ChshStats, TrialBatch, update_stats_batch
from .extractor import ExtractorConfig, ToeplitzSeed, bits_to_bytes, extract, pack_raw
from .qpe import PefTable, QefLedger, QpeParams
from ..errors import ServiceError

STATUS_OK = 0
STATUS_EXHAUSTED = 1
STATUS_UNDERFLOW = 2


@dataclass
class GenerationResult:
    """
    Outcome of one generation run. On failure the payload is all zeros and status is
    non-zero.
    """

    payload: bytes
    status: int
    trials: int
    acc: float
    chsh: ChshStats
    duration: float
    eps_x: float
    batch: Optional[TrialBatch] = None

    @property
    def success(self) -> bool:
        return self.status == STATUS_OK

    def log_line(self) -> str:
        return (
            f"status={self.status} chsh={self.chsh.s_bar:.4f} trials={self.trials} "
            f"acc={self.acc:.3f} time={self.duration:.2f}s"
        )


class EntropyPipeline:
    """
    Produces beacon payloads: runs trials until the QEF ledger certifies enough entropy,
    then hashes the recorded output bits down to m bits with the Toeplitz extractor.
    """

    def __init__(
        self,
        model: BehaviorModel,
        table: PefTable,
        params: QpeParams,
        seed: ToeplitzSeed,
        rng: np.random.Generator,
        m: int = 512,
        rescale_mode: str = "per_run",
        batch_size: int = 1 << 18,
        keep_trials: bool = False,
    ):
        self.simulator = BellSimulator(model, rng)
        self.table = table
        self.params = params
        self.seed = seed
        self.m = m
        self.rescale_mode = rescale_mode
        self.batch_size = batch_size
        self.keep_trials = keep_trials
        self._lock = threading.Lock()

    @classmethod
    def from_params(cls, params: dict, qpe_params: QpeParams, seed: ToeplitzSeed, rng):
        return cls(
            BehaviorModel.load(params["behavior_model"]),
            PefTable.load(params["pef_table"]),
            qpe_params,
            seed,
            rng,
            m=params.get("extractor", {}).get("m", 512),
            rescale_mode=params.get("qpe", {}).get("rescale_mode", "per_run"),
        )

    def generate(self) -> GenerationResult:
        with self._lock:
            return self._generate()

    def _generate(self) -> GenerationResult:
        start = time.perf_counter()
        ledger = QefLedger(self.table, self.params, self.rescale_mode)
        stats = ChshStats()
        batches = []
        while ledger.status == "running":
            batch = self.simulator.trials(self.batch_size)
            used = ledger.update_batch(batch)
            batch = batch[:used]
            stats = update_stats_batch(stats, batch)
            batches.append(batch)
        trials = TrialBatch.concatenate(batches)

        if ledger.status == "success":
            raw = pack_raw(trials)
            cfg = ExtractorConfig(len(raw), self.m, self.params.k)
            bits = extract(raw, self.seed.for_config(cfg), cfg)
            payload, status, eps_x = bits_to_bytes(bits), STATUS_OK, cfg.eps_x
        else:
            payload, status, eps_x = bytes(self.m // 8), STATUS_EXHAUSTED, 1.0
        return GenerationResult(
            payload=payload,
            status=status,
            trials=ledger.trials,
            acc=ledger.acc,
            chsh=stats,
            duration=time.perf_counter() - start,
            eps_x=eps_x,
            batch=trials if self.keep_trials else None,
        )


class PayloadQueue:
    """
    Bounded look-ahead buffer filled by a background generation thread. The beacon needs
    the payload of the next period one period early for its precommitment.
    """

    def __init__(self, pipeline: EntropyPipeline, size: int = 2):
        if size < 1:
            raise ValueError("queue size must be positive")
        self.pipeline = pipeline
        self.queue = queue.Queue(maxsize=size)
        self._stop = threading.Event()
        self._thread = None
        self.error: Optional[BaseException] = None

    def start(self) -> "PayloadQueue":
        self._thread = threading.Thread(target=self._fill, daemon=True)
        self._thread.start()
        return self

    def _fill(self):
        try:
            while not self._stop.is_set():
                result = self.pipeline.generate()
                while not self._stop.is_set():
                    try:
                        self.queue.put(result, timeout=0.1)
                        break
                    except queue.Full:
                        continue
        except BaseException as e:
            self.error = e

    def get(self, timeout: Optional[float] = None) -> GenerationResult:
        """
        Next payload in generation order.

        Raises:
            ServiceError: if nothing arrives within the timeout or the generator died
        """
        if self.error is not None and self.queue.empty():
            raise ServiceError(f"payload generation failed: {self.error}")
        try:
            return self.queue.get(timeout=timeout)
        except queue.Empty:
            raise ServiceError("payload queue underflow")

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __len__(self) -> int:
        return self.queue.qsize()
