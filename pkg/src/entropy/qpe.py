import math
from dataclasses import dataclass, field
from typing import Optional
import numpy as np
import yaml
from scipy.stats import norm

from .bell_sim import BehaviorModel, Trial, TrialBatch
from .tables import load_table
from ..errors import LedgerError
from ..progress import progress

RESCALE_MODES = ("per_run", "per_trial")

# trials handled per vectorised step of a batch update
CHUNK = 1 << 16


@dataclass
class PefTable:
    """
    Probability estimation factors F'(ab|xy) with their power and rescaling.
    Args:
        f: Factors indexed [x, y, a, b]
        alpha: QEF power, > 1
        rescale: Overall rescaling factor, >= 1
    """

    f: np.ndarray
    alpha: float
    rescale: float = 1.0

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.float64).reshape(2, 2, 2, 2)
        if np.any(self.f <= 0):
            raise ValueError("estimation factors must be positive")
        if self.alpha <= 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if self.rescale < 1:
            raise ValueError(f"rescale must be at least 1, got {self.rescale}")

    @classmethod
    def load(cls, path: str) -> "PefTable":
        values, header = load_table(path)
        if "alpha" not in header:
            raise ValueError(f"{path}: missing 'alpha' header line")
        return cls(values, header["alpha"], header.get("rescale", 1.0))

    @classmethod
    def uniform(cls, value: float, alpha: float = 2.0, rescale: float = 1.0) -> "PefTable":
        return cls(np.full((2, 2, 2, 2), value), alpha, rescale)

    @property
    def log_f(self) -> np.ndarray:
        """
        log2 F' flattened in cell order 8x+4y+2a+b.
        """
        return np.log2(self.f.reshape(16))

    @property
    def log_rescale(self) -> float:
        return math.log2(self.rescale)

    def matches(self, other: "PefTable") -> bool:
        return (
            np.array_equal(self.f, other.f)
            and self.alpha == other.alpha
            and self.rescale == other.rescale
        )


@dataclass
class QpeParams:
    """
    Protocol parameters of one generation run.
    Args:
        k_exp: Target number of extracted bits
        eps_h: Smoothing error of the generation
        eps_x: Extraction error
        kappa: Lower bound on the success probability
        alpha: QEF power of the table the parameters were derived for
        k: Required smooth min-entropy in bits
        h_s: Success threshold in bits
        max_trials: Largest allowed number of trials N
    """

    k_exp: int
    eps_h: float
    eps_x: float
    kappa: float
    alpha: float
    k: float
    h_s: float
    max_trials: int = 9_640_000

    @property
    def threshold_bits(self) -> float:
        return self.h_s * (self.alpha - 1)

    def summary(self) -> dict:
        return {
            "k_exp": self.k_exp,
            "log2_eps_h": math.log2(self.eps_h),
            "log2_eps_x": math.log2(self.eps_x),
            "log2_kappa": math.log2(self.kappa),
            "alpha": self.alpha,
            "k": self.k,
            "h_s": self.h_s,
            "threshold_bits": self.threshold_bits,
            "max_trials": self.max_trials,
        }


def _check_error(name: str, value: float):
    if not 0 < value <= 1:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")


def determine_params(
    k_exp: int,
    eps_h: float,
    eps_x: float,
    kappa: float,
    table: PefTable,
    max_trials: int = 9_640_000,
) -> QpeParams:
    """
    Derives the entropy target k and the success threshold h_s.

    Args:
        k_exp: Number of bits to extract
        eps_h: Smoothing error
        eps_x: Extraction error
        kappa: Success-probability lower bound
        table: Estimation factors, only alpha is used
        max_trials: Largest allowed number of trials
    Returns:
        QpeParams
    """
    for name, value in (("eps_h", eps_h), ("eps_x", eps_x), ("kappa", kappa)):
        _check_error(name, value)
    if max_trials <= 0:
        raise ValueError("max_trials must be positive")
    alpha = table.alpha
    k = k_exp - 2 * math.log2(eps_x)
    if k <= 0:
        raise LedgerError(f"entropy target k = {k} is not positive")
    h_s = (
        k
        + math.log2(2 / eps_h**2) / (alpha - 1)
        + alpha / (alpha - 1) * math.log2(1 / kappa)
    )
    return QpeParams(k_exp, eps_h, eps_x, kappa, alpha, k, h_s, int(max_trials))


def min_entropy_bound(params: QpeParams, ledger: Optional["QefLedger"] = None) -> float:
    """
    Smooth min-entropy certified on success. Passing the ledger checks that the run did
    succeed.
    """
    if ledger is not None and ledger.status != "success":
        raise LedgerError(f"no entropy is certified for a run with status {ledger.status}")
    alpha = params.alpha
    return (
        params.h_s
        - math.log2(2 / params.eps_h**2) / (alpha - 1)
        + alpha / (alpha - 1) * math.log2(params.kappa)
    )


def soundness_error(params: QpeParams) -> float:
    """
    Distance of the extracted string from uniform, eps_x + 2 eps_h.
    """
    return params.eps_x + 2 * params.eps_h


@dataclass
class QefLedger:
    """
    Running QEF account of one generation run. The accumulator is the exactly rounded
    sum of count(cell) * log2 F'(cell) over the 16 cells minus the rescale penalty, so
    it depends only on how often each cell occurred and every update order gives the
    same bits.
    """

    table: PefTable
    params: QpeParams
    rescale_mode: str = "per_run"
    counts: np.ndarray = field(default_factory=lambda: np.zeros(16, dtype=np.int64))
    trials: int = 0
    acc: float = 0.0
    status: str = "running"

    def __post_init__(self):
        if self.rescale_mode not in RESCALE_MODES:
            raise ValueError(f"rescale_mode must be one of {RESCALE_MODES}")
        self._log_f = self.table.log_f
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(16)
        self.trials = int(self.counts.sum())
        self.acc = self._exact(self.counts, self.trials)

    @property
    def threshold_bits(self) -> float:
        return self.params.threshold_bits

    def increments(self) -> np.ndarray:
        """
        Per-trial contribution of each cell, rescale penalty included.
        """
        return self._log_f - self.table.log_rescale

    def _penalty(self, trials):
        if self.rescale_mode == "per_trial":
            return trials * self.table.log_rescale
        return self.table.log_rescale

    def _exact(self, counts: np.ndarray, trials: int) -> float:
        terms = (counts * self._log_f).tolist()
        terms.append(-self._penalty(trials))
        return math.fsum(terms)

    def _check_running(self):
        if self.status != "running":
            raise LedgerError(f"ledger is {self.status}, no further trials accepted")

    def _settle(self):
        if self.acc >= self.threshold_bits:
            self.status = "success"
        elif self.trials >= self.params.max_trials:
            self.status = "exhausted"

    def update(self, t: Trial) -> "QefLedger":
        self._check_running()
        self.counts[t.cell] += 1
        self.trials += 1
        self.acc = self._exact(self.counts, self.trials)
        self._settle()
        return self

    def update_batch(self, batch: TrialBatch) -> int:
        """
        Consumes trials in order until the ledger reaches a terminal status.

        Args:
            batch: Trials continuing the ledger's sequence
        Returns:
            Number of trials consumed from the front of the batch
        """
        self._check_running()
        cells = np.asarray(batch.cells, dtype=np.intp)
        eye = np.eye(16, dtype=np.int64)
        threshold = self.threshold_bits
        # vectorised prefix sums only nominate candidates; the decision is made exactly
        margin = 1e-6 * max(1.0, abs(threshold))
        consumed = 0
        for start in range(0, len(cells), CHUNK):
            chunk = cells[start : start + CHUNK]
            remaining = self.params.max_trials - self.trials
            if len(chunk) > remaining:
                chunk = chunk[:remaining]
            prefix = np.cumsum(eye[chunk], axis=0) + self.counts
            trials = self.trials + np.arange(1, len(chunk) + 1)
            approx = prefix @ self._log_f - self._penalty(trials)
            stop = None
            for i in np.flatnonzero(approx >= threshold - margin):
                if self._exact(prefix[i], int(trials[i])) >= threshold:
                    stop = int(i)
                    break
            end = stop if stop is not None else len(chunk) - 1
            self.counts = prefix[end].copy()
            self.trials = int(trials[end])
            self.acc = self._exact(self.counts, self.trials)
            consumed += end + 1
            self._settle()
            if self.status != "running":
                break
        return consumed

    def save(self, path: str):
        """
        Writes a checkpoint from which the run can resume bit-exactly.
        """
        state = {
            "rescale_mode": self.rescale_mode,
            "counts": [int(c) for c in self.counts],
            "status": self.status,
            "acc": float(self.acc).hex(),
            "params": {
                "k_exp": self.params.k_exp,
                "eps_h": float(self.params.eps_h).hex(),
                "eps_x": float(self.params.eps_x).hex(),
                "kappa": float(self.params.kappa).hex(),
                "max_trials": self.params.max_trials,
            },
        }
        with open(path, "w") as f:
            yaml.dump(state, f)

    @classmethod
    def load(cls, path: str, table: PefTable) -> "QefLedger":
        with open(path) as f:
            state = yaml.load(f, Loader=yaml.FullLoader)
        p = state["params"]
        params = determine_params(
            p["k_exp"],
            float.fromhex(p["eps_h"]),
            float.fromhex(p["eps_x"]),
            float.fromhex(p["kappa"]),
            table,
            p["max_trials"],
        )
        ledger = cls(table, params, state["rescale_mode"], np.array(state["counts"]))
        if ledger.acc != float.fromhex(state["acc"]):
            raise LedgerError(f"{path}: checkpoint does not match the estimation table")
        ledger.status = state["status"]
        return ledger


def ledger_update(ledger: QefLedger, t: Trial, table: Optional[PefTable] = None) -> QefLedger:
    if table is not None and not table.matches(ledger.table):
        raise ValueError("trial must be accounted with the ledger's own table")
    return ledger.update(t)


def increment_moments(model: BehaviorModel, table: PefTable) -> tuple[float, float]:
    """
    Mean and variance of log2 F' per trial under the model, by 16-cell summation.
    """
    p = model.joint()
    log_f = table.log_f
    mean = float(np.dot(p, log_f))
    var = float(np.dot(p, (log_f - mean) ** 2))
    return mean, var


def entropy_rate(model: BehaviorModel, table: PefTable) -> float:
    """
    Expected certified entropy per trial, E[log2 F'] / (alpha - 1).
    """
    return increment_moments(model, table)[0] / (table.alpha - 1)


def walk_parameters(
    model: BehaviorModel, table: PefTable, params: QpeParams, rescale_mode: str = "per_run"
) -> tuple[float, float, float]:
    """
    The account as a random walk: mean and variance of the per-trial increment and the
    level it has to reach, with the rescaling penalty applied per the mode.
    """
    mean, var = increment_moments(model, table)
    target = params.threshold_bits
    if rescale_mode == "per_trial":
        mean -= table.log_rescale
    else:
        target += table.log_rescale
    return mean, var, target


def expected_stopping(
    model: BehaviorModel, table: PefTable, params: QpeParams, rescale_mode: str = "per_run"
) -> float:
    """
    Planning estimate of the number of trials until success, target / E[increment].
    """
    drift, _, target = walk_parameters(model, table, params, rescale_mode)
    if drift <= 0:
        raise LedgerError(f"expected increment {drift:.3e} is not positive, the run cannot succeed")
    return target / drift


def success_probability(
    model: BehaviorModel, table: PefTable, params: QpeParams, rescale_mode: str = "per_run"
) -> float:
    """
    Normal approximation of the probability that the account after N trials clears the
    threshold.
    """
    drift, var, target = walk_parameters(model, table, params, rescale_mode)
    n = params.max_trials
    if var == 0:
        return float(n * drift >= target)
    return float(norm.sf(target, loc=n * drift, scale=math.sqrt(n * var)))


def simulate_stopping_counts(
    model: BehaviorModel,
    table: PefTable,
    params: QpeParams,
    runs: int,
    rng: np.random.Generator,
    rescale_mode: str = "per_run",
    chunk: int = 1 << 20,
    verbose: bool = False,
) -> np.ndarray:
    """
    Monte Carlo of the stopping count. Trials are drawn directly from the joint cell
    distribution and accumulated with a plain cumulative sum.

    Returns:
        Stopping counts, one per run; -1 marks a run that exhausted N trials
    """
    p = model.joint()
    cum = np.cumsum(p)
    cum[-1] = 1.0
    inc = table.log_f - (table.log_rescale if rescale_mode == "per_trial" else 0.0)
    start_acc = -table.log_rescale if rescale_mode == "per_run" else 0.0
    threshold = params.threshold_bits
    n_max = params.max_trials

    iterator = progress(range(runs), verbose, desc="stopping runs")
    result = np.full(runs, -1, dtype=np.int64)
    for r in iterator:
        acc = start_acc
        done = 0
        while done < n_max:
            size = min(chunk, n_max - done)
            cells = np.searchsorted(cum, rng.random(size), side="right")
            path = acc + np.cumsum(inc[cells])
            hit = np.flatnonzero(path >= threshold)
            if len(hit):
                result[r] = done + int(hit[0]) + 1
                break
            acc = float(path[-1])
            done += size
    return result
