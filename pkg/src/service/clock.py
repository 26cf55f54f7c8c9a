import threading
import time
from abc import ABC, abstractmethod
from datetime import datetime, timezone

from ..errors import ServiceError

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS


class Clock(ABC):
    """
    Millisecond UTC time source. The beacon and the timestamp authority each own a
    separate instance.
    """

    @abstractmethod
    def now_ms(self) -> int:
        pass

    @abstractmethod
    def sleep_until(self, t_ms: int):
        pass


class SystemClock(Clock):
    def now_ms(self) -> int:
        try:
            return time.time_ns() // 1_000_000
        except OSError as e:
            raise ServiceError(f"system clock unavailable: {e}") from e

    def sleep_until(self, t_ms: int):
        delay = (t_ms - self.now_ms()) / 1000
        if delay > 0:
            time.sleep(delay)


class ManualClock(Clock):
    """
    Clock that only moves when told to; sleeping jumps straight to the wake-up time.
    """

    def __init__(self, start_ms: int = 1_700_000_000_000):
        self._now = int(start_ms)
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self._now

    def advance(self, delta_ms: int) -> int:
        with self._lock:
            self._now += int(delta_ms)
            return self._now

    def set(self, t_ms: int):
        with self._lock:
            self._now = int(t_ms)

    def sleep_until(self, t_ms: int):
        with self._lock:
            self._now = max(self._now, int(t_ms))


def format_utc(t_ms: int) -> str:
    """
    RFC 3339 rendering with millisecond precision, e.g. 2023-11-14T22:13:20.000Z.
    """
    dt = datetime.fromtimestamp(t_ms // 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{t_ms % 1000:03d}Z"


def parse_utc(text: str) -> int:
    if not text.endswith("Z"):
        raise ValueError(f"timestamp {text!r} is not in UTC")
    dt = datetime.strptime(text[:-1], "%Y-%m-%dT%H:%M:%S.%f").replace(tzinfo=timezone.utc)
    return int(dt.timestamp()) * 1000 + dt.microsecond // 1000


def period_start(t_ms: int, unit: str) -> int:
    """
    Start of the UTC hour, day, month or year containing t_ms.
    """
    if unit == "hour":
        return t_ms - t_ms % HOUR_MS
    if unit == "day":
        return t_ms - t_ms % DAY_MS
    dt = datetime.fromtimestamp(t_ms // 1000, tz=timezone.utc)
    if unit == "month":
        start = datetime(dt.year, dt.month, 1, tzinfo=timezone.utc)
    elif unit == "year":
        start = datetime(dt.year, 1, 1, tzinfo=timezone.utc)
    else:
        raise ValueError(f"Unknown period unit {unit}")
    return int(start.timestamp()) * 1000
