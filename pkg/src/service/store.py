import bisect
import os
import struct
import threading
from typing import Iterator, Optional

from .clock import period_start
from .pulse import Pulse
from ..errors import ChainError

INDEX_RECORD = struct.Struct(">QQQ")


class ChainStore:
    """
    Append-only pulse log of one chain. Records are length-prefixed canonical pulse
    encodings in <dir>/chain_<c>.log; <dir>/chain_<c>.idx holds (pulse_index, offset,
    time_ms) per record and is rebuilt from the log when the two disagree. Without a
    directory the store lives in memory only.

    Read methods take an optional now_ms; pulses timestamped after it are withheld.
    """

    def __init__(self, directory: Optional[str] = None, chain_index: int = 1):
        self.directory = directory
        self.chain_index = chain_index
        self._lock = threading.RLock()
        self._pulses: list[Pulse] = []
        self._raw: list[bytes] = []
        self._times: list[int] = []
        if directory is not None:
            os.makedirs(directory, exist_ok=True)
            self.log_path = os.path.join(directory, f"chain_{chain_index}.log")
            self.index_path = os.path.join(directory, f"chain_{chain_index}.idx")
            self._open()

    def _open(self):
        if not os.path.exists(self.log_path):
            open(self.log_path, "wb").close()
            open(self.index_path, "wb").close()
            return
        with open(self.log_path, "rb") as f:
            data = f.read()
        pos = 0
        offsets = []
        while pos < len(data):
            if pos + 4 > len(data):
                break
            (length,) = struct.unpack(">I", data[pos : pos + 4])
            if pos + 4 + length > len(data):
                break
            raw = data[pos + 4 : pos + 4 + length]
            pulse = Pulse.decode(raw)
            if pulse.pulse_index != len(self._pulses) + 1:
                raise ChainError(f"{self.log_path}: pulse {pulse.pulse_index} out of sequence")
            offsets.append(pos)
            self._pulses.append(pulse)
            self._raw.append(raw)
            self._times.append(pulse.time_ms)
            pos += 4 + length
        if pos != len(data):
            print(f"    Dropping {len(data) - pos} bytes of incomplete record in {self.log_path}")
            with open(self.log_path, "r+b") as f:
                f.truncate(pos)
        expected = b"".join(
            INDEX_RECORD.pack(p.pulse_index, off, t)
            for p, off, t in zip(self._pulses, offsets, self._times)
        )
        current = b""
        if os.path.exists(self.index_path):
            with open(self.index_path, "rb") as f:
                current = f.read()
        if current != expected:
            print(f"    Rebuilding index {self.index_path}")
            with open(self.index_path, "wb") as f:
                f.write(expected)

    def append(self, pulse: Pulse):
        """
        Appends the next pulse of the chain. Records are never modified afterwards.

        Raises:
            ChainError: wrong chain, index gap or non-increasing timestamp
        """
        with self._lock:
            if pulse.chain_index != self.chain_index:
                raise ChainError(f"pulse of chain {pulse.chain_index} in store of chain {self.chain_index}")
            if pulse.pulse_index != len(self._pulses) + 1:
                raise ChainError(
                    f"expected pulse index {len(self._pulses) + 1}, got {pulse.pulse_index}"
                )
            t = pulse.time_ms
            if self._times and t <= self._times[-1]:
                raise ChainError("pulse timestamps must strictly increase")
            raw = pulse.encode()
            if self.directory is not None:
                with open(self.log_path, "ab") as f:
                    offset = f.tell()
                    f.write(struct.pack(">I", len(raw)) + raw)
                    f.flush()
                    os.fsync(f.fileno())
                with open(self.index_path, "ab") as f:
                    f.write(INDEX_RECORD.pack(pulse.pulse_index, offset, t))
            self._pulses.append(pulse)
            self._raw.append(raw)
            self._times.append(t)

    def __len__(self) -> int:
        return len(self._pulses)

    def _released(self, now_ms: Optional[int]) -> int:
        if now_ms is None:
            return len(self._times)
        return bisect.bisect_right(self._times, now_ms)

    def get(self, pulse_index: int, now_ms: Optional[int] = None) -> Optional[Pulse]:
        with self._lock:
            if 1 <= pulse_index <= self._released(now_ms):
                return self._pulses[pulse_index - 1]
            return None

    def get_raw(self, pulse_index: int, now_ms: Optional[int] = None) -> Optional[bytes]:
        with self._lock:
            if 1 <= pulse_index <= self._released(now_ms):
                return self._raw[pulse_index - 1]
            return None

    def latest(self, now_ms: Optional[int] = None) -> Optional[Pulse]:
        with self._lock:
            count = self._released(now_ms)
            return self._pulses[count - 1] if count else None

    def first_at_or_after(self, t_ms: int, now_ms: Optional[int] = None) -> Optional[Pulse]:
        with self._lock:
            i = bisect.bisect_left(self._times, t_ms)
            if i < self._released(now_ms):
                return self._pulses[i]
            return None

    def first_in_period(self, t_ms: int, unit: str) -> Optional[Pulse]:
        """
        First stored pulse whose timestamp lies in the same UTC hour/day/month/year as t_ms.
        """
        with self._lock:
            i = bisect.bisect_left(self._times, period_start(t_ms, unit))
            if i < len(self._times) and self._times[i] <= t_ms:
                return self._pulses[i]
            return None

    def pulses(self, start: int = 1, end: Optional[int] = None) -> Iterator[Pulse]:
        end = len(self) if end is None else min(end, len(self))
        for i in range(max(start, 1), end + 1):
            yield self._pulses[i - 1]
