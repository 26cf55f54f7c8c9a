import math
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional
import numpy as np

from .tables import load_table

SPEED_OF_LIGHT = 0.299792458  # m/ns


def cell_index(x: int, y: int, a: int, b: int) -> int:
    """
    Flat index of a trial outcome, 8x + 4y + 2a + b, shared by all 16-cell tables.
    """
    return 8 * x + 4 * y + 2 * a + b


@dataclass
class BehaviorModel:
    """
    Sampling model of the Bell test.
    Args:
        nu: Conditional distribution nu(ab|xy), shape (4, 4), rows xy = 2x+y, columns ab = 2a+b
        input_dist: Distribution over xy, shape (4,)
    """

    nu: np.ndarray
    input_dist: np.ndarray = field(default_factory=lambda: np.full(4, 0.25))

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=np.float64).reshape(4, 4)
        self.input_dist = np.asarray(self.input_dist, dtype=np.float64).reshape(4)
        if np.any(self.nu < 0) or np.any(self.nu > 1):
            raise ValueError("conditional probabilities must lie in [0, 1]")
        if np.any(np.abs(self.nu.sum(axis=1) - 1) > 1e-12):
            raise ValueError("every conditional row nu(.|xy) must sum to 1")
        if np.any(self.input_dist < 0) or abs(self.input_dist.sum() - 1) > 1e-12:
            raise ValueError("input distribution must be normalised")
        self._input_cum = self._cumulative(self.input_dist)
        self._nu_cum = np.stack([self._cumulative(row) for row in self.nu])

    @staticmethod
    def _cumulative(p: np.ndarray) -> np.ndarray:
        cum = np.cumsum(p)
        cum[-1] = 1.0
        return cum

    @classmethod
    def load(cls, path: str, input_dist: Optional[np.ndarray] = None) -> "BehaviorModel":
        values, _ = load_table(path)
        if input_dist is None:
            return cls(values.reshape(4, 4))
        return cls(values.reshape(4, 4), input_dist)

    @classmethod
    def deterministic(cls, a: int = 0, b: int = 0) -> "BehaviorModel":
        nu = np.zeros((4, 4))
        nu[:, 2 * a + b] = 1.0
        return cls(nu)

    def joint(self) -> np.ndarray:
        """
        Joint distribution p(xyab) over the 16 cells in cell_index order.
        """
        return (self.input_dist[:, None] * self.nu).reshape(16)

    def win_mask(self) -> np.ndarray:
        """
        Boolean mask over the 16 cells of the CHSH winning condition a xor b = x*y.
        """
        mask = np.zeros(16, dtype=bool)
        for x in (0, 1):
            for y in (0, 1):
                for a in (0, 1):
                    for b in (0, 1):
                        mask[cell_index(x, y, a, b)] = (a ^ b) == (x & y)
        return mask


@dataclass(frozen=True)
class Trial:
    x: int
    y: int
    a: int
    b: int
    index: int

    @property
    def cell(self) -> int:
        return cell_index(self.x, self.y, self.a, self.b)

    @property
    def wins(self) -> bool:
        return (self.a ^ self.b) == (self.x & self.y)


@dataclass
class TrialBatch:
    """
    Consecutive trials stored as arrays.
    Args:
        cells: uint8 cell indices 8x+4y+2a+b, in trial order
        first_index: 1-based index of the first trial
    """

    cells: np.ndarray
    first_index: int = 1

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def x(self) -> np.ndarray:
        return (self.cells >> 3) & 1

    @property
    def y(self) -> np.ndarray:
        return (self.cells >> 2) & 1

    @property
    def a(self) -> np.ndarray:
        return (self.cells >> 1) & 1

    @property
    def b(self) -> np.ndarray:
        return self.cells & 1

    @property
    def last_index(self) -> int:
        return self.first_index + len(self) - 1

    def __iter__(self) -> Iterator[Trial]:
        for i, c in enumerate(self.cells.tolist()):
            yield Trial((c >> 3) & 1, (c >> 2) & 1, (c >> 1) & 1, c & 1, self.first_index + i)

    def __getitem__(self, item: slice) -> "TrialBatch":
        start = item.start or 0
        return TrialBatch(self.cells[item], self.first_index + start)

    @classmethod
    def from_trials(cls, trials: list[Trial]) -> "TrialBatch":
        cells = np.array([t.cell for t in trials], dtype=np.uint8)
        return cls(cells, trials[0].index if trials else 1)

    @classmethod
    def concatenate(cls, batches: list["TrialBatch"]) -> "TrialBatch":
        if not batches:
            return cls(np.zeros(0, dtype=np.uint8))
        return cls(np.concatenate([b.cells for b in batches]), batches[0].first_index)


def next_trial(model: BehaviorModel, rng: np.random.Generator, index: int = 1) -> Trial:
    """
    Draws one trial: (x, y) from the input distribution, then (a, b) from nu(.|xy).
    Each draw maps a uniform u to the half-open cumulative interval containing it.

    Args:
        model: Behaviour model
        rng: Numpy random generator
        index: 1-based trial counter
    Returns:
        Trial
    """
    xy = int(np.searchsorted(model._input_cum, rng.random(), side="right"))
    ab = int(np.searchsorted(model._nu_cum[xy], rng.random(), side="right"))
    return Trial(xy >> 1, xy & 1, ab >> 1, ab & 1, index)


class BellSimulator:
    """
    Sequential trial source. Trials are handed out strictly in index order, either one
    at a time or in batches that continue the same index sequence.
    """

    def __init__(self, model: BehaviorModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self.next_index = 1

    def next_trial(self) -> Trial:
        trial = next_trial(self.model, self.rng, self.next_index)
        self.next_index += 1
        return trial

    def trials(self, count: int) -> TrialBatch:
        """
        Draws count trials with the same inverse-cdf rule as next_trial, vectorised.
        """
        m = self.model
        xy = np.searchsorted(m._input_cum, self.rng.random(count), side="right")
        u = self.rng.random(count)
        ab = (u[:, None] >= m._nu_cum[xy]).sum(axis=1)
        cells = (4 * xy + np.minimum(ab, 3)).astype(np.uint8)
        batch = TrialBatch(cells, self.next_index)
        self.next_index += count
        return batch


def chsh_value(win_prob: float) -> float:
    """
    CHSH value S = 8*omega - 4 of a winning probability omega.
    """
    if not 0.0 <= win_prob <= 1.0:
        raise ValueError(f"winning probability {win_prob} outside [0, 1]")
    return 8.0 * win_prob - 4.0


def expected_win_probability(model: BehaviorModel) -> float:
    return float(model.joint()[model.win_mask()].sum())


@dataclass(frozen=True)
class ChshStats:
    wins: int = 0
    total: int = 0

    @property
    def s_bar(self) -> float:
        if self.total == 0:
            return float("nan")
        return 8.0 * self.wins / self.total - 4.0

    def sigma(self) -> float:
        """
        Binomial standard error of s_bar.
        """
        if self.total == 0:
            return float("nan")
        p = self.wins / self.total
        return 8.0 * math.sqrt(p * (1 - p) / self.total)


def update_stats(stats: ChshStats, t: Trial) -> ChshStats:
    return ChshStats(stats.wins + int(t.wins), stats.total + 1)


def update_stats_batch(stats: ChshStats, batch: TrialBatch) -> ChshStats:
    wins = int(((batch.a ^ batch.b) == (batch.x & batch.y)).sum())
    return ChshStats(stats.wins + wins, stats.total + len(batch))


def running_chsh(batch: TrialBatch) -> np.ndarray:
    """
    Real-time CHSH value after every trial of the batch.
    """
    wins = np.cumsum((batch.a ^ batch.b) == (batch.x & batch.y))
    return 8.0 * wins / np.arange(1, len(batch) + 1) - 4.0


@dataclass
class SpacetimeConfig:
    """
    Geometry and delays of the two measurement stations.
    Args:
        dist_sa, dist_sb: Free-space distances source-Alice and source-Bob (m)
        path_sa, path_sb: Effective optical paths (m)
        t_e: Pair generation time (ns)
        t_qrng1, t_qrng2: Input bit generation times (ns)
        t_delay1, t_delay2: Delays between input generator and Pockels cell (ns)
        t_pc1, t_pc2: Pockels cell switching plus settling (ns)
        t_m1, t_m2: Detector output latencies (ns)
    """

    dist_sa: float
    dist_sb: float
    path_sa: float
    path_sb: float
    t_e: float
    t_qrng1: float
    t_qrng2: float
    t_delay1: float
    t_delay2: float
    t_pc1: float
    t_pc2: float
    t_m1: float
    t_m2: float
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def reference(cls) -> "SpacetimeConfig":
        """
        Configuration of the deployed set-up.
        """
        return cls(
            dist_sa=93.0, dist_sb=90.0, path_sa=191.0, path_sb=170.0, t_e=10.0,
            t_qrng1=96.0, t_qrng2=96.0, t_delay1=270.0, t_delay2=230.0,
            t_pc1=112.0, t_pc2=100.0, t_m1=55.0, t_m2=100.0,
        )


@dataclass(frozen=True)
class InequalityResult:
    name: str
    lhs_ns: float
    rhs_ns: float

    @property
    def slack_ns(self) -> float:
        return self.lhs_ns - self.rhs_ns

    @property
    def holds(self) -> bool:
        return self.lhs_ns > self.rhs_ns


def check_spacetime(cfg: SpacetimeConfig) -> list[InequalityResult]:
    """
    Evaluates the two locality and the two measurement-independence conditions.

    Returns:
        One result per inequality, in the order locality_1, locality_2,
        independence_a, independence_b
    """
    c = cfg.c
    separation = (cfg.dist_sa + cfg.dist_sb) / c
    path_diff = (cfg.path_sa - cfg.path_sb) / c
    return [
        InequalityResult(
            "locality_1",
            separation,
            cfg.t_e - path_diff + cfg.t_qrng1 + cfg.t_delay1 + cfg.t_pc1 + cfg.t_m2,
        ),
        InequalityResult(
            "locality_2",
            separation,
            cfg.t_e + path_diff + cfg.t_qrng2 + cfg.t_delay2 + cfg.t_pc2 + cfg.t_m1,
        ),
        InequalityResult(
            "independence_a", cfg.dist_sa / c, cfg.path_sa / c - cfg.t_delay1 - cfg.t_pc1
        ),
        InequalityResult(
            "independence_b", cfg.dist_sb / c, cfg.path_sb / c - cfg.t_delay2 - cfg.t_pc2
        ),
    ]


@dataclass
class SignallingReport:
    """
    Differences of one party's outcome marginals across the other party's settings.
    Non-zero entries are finite-size signalling of the raw frequencies.
    """

    nu_hat: np.ndarray
    alice: np.ndarray
    bob: np.ndarray

    @property
    def max_violation(self) -> float:
        return float(max(np.abs(self.alice).max(), np.abs(self.bob).max()))


def frequencies_from_counts(counts: np.ndarray) -> SignallingReport:
    """
    Conditional frequencies from raw training counts and the associated signalling report.

    Args:
        counts: Count table indexed [x, y, a, b]
    Returns:
        SignallingReport with nu_hat of shape (4, 4)
    """
    counts = np.asarray(counts, dtype=np.float64).reshape(2, 2, 2, 2)
    totals = counts.sum(axis=(2, 3), keepdims=True)
    if np.any(totals == 0):
        raise ValueError("every setting needs at least one count")
    freq = counts / totals
    p_a0 = freq[:, :, 0, :].sum(axis=-1)
    p_b0 = freq[:, :, :, 0].sum(axis=-2)
    alice = p_a0[:, 0] - p_a0[:, 1]
    bob = p_b0[0, :] - p_b0[1, :]
    return SignallingReport(freq.reshape(4, 4), alice, bob)


def load_counts(path: str) -> np.ndarray:
    return load_table(path)[0]


def dump_trials(batch: TrialBatch, path: str):
    """
    Writes trials as 4-bit records (x y a b from high to low bit), two per byte with the
    earlier trial in the low nibble, after a header of count and first index.
    """
    cells = batch.cells.astype(np.uint8)
    if len(cells) % 2:
        cells = np.append(cells, np.uint8(0))
    packed = (cells[0::2] | (cells[1::2] << 4)).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">QQ", len(batch), batch.first_index))
        f.write(packed.tobytes())


def load_trials(path: str) -> TrialBatch:
    with open(path, "rb") as f:
        count, first_index = struct.unpack(">QQ", f.read(16))
        packed = np.frombuffer(f.read(), dtype=np.uint8)
    if len(packed) != (count + 1) // 2:
        raise ValueError(f"{path}: expected {(count + 1) // 2} bytes of trial data")
    cells = np.empty(2 * len(packed), dtype=np.uint8)
    cells[0::2] = packed & 0x0F
    cells[1::2] = packed >> 4
    return TrialBatch(cells[:count], first_index)
