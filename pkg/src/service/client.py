from abc import ABC, abstractmethod
from typing import Optional
import requests

from .clock import Clock, SystemClock
from .pulse import Pulse
from .store import ChainStore
from .timestamp import TimestampAuthority, TimestampToken
from ..crypto.lattice_sig import PublicKey
from ..errors import ServiceError


class BeaconSource(ABC):
    """
    Read access to released pulses. Lookups return None for pulses that do not exist or
    are not yet released.
    """

    @abstractmethod
    def pulse(self, chain: int, index: int) -> Optional[Pulse]:
        pass

    @abstractmethod
    def latest(self) -> Optional[Pulse]:
        pass

    @abstractmethod
    def first_at_or_after(self, t_ms: int) -> Optional[Pulse]:
        pass


class TimestampService(ABC):
    @abstractmethod
    def stamp(self, digest: bytes) -> TimestampToken:
        pass

    @abstractmethod
    def public_key(self) -> PublicKey:
        pass


class _HttpClient:
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()

    def _request(self, method: str, path: str, **kwargs) -> Optional[requests.Response]:
        try:
            response = self.session.request(
                method, self.base_url + path, timeout=self.timeout, **kwargs
            )
        except requests.RequestException as e:
            raise ServiceError(f"{self.base_url} unreachable: {e}") from e
        if response.status_code == 404:
            return None
        if response.status_code != 200:
            raise ServiceError(f"{method} {path} failed with {response.status_code}: {response.text}")
        return response


class BeaconClient(_HttpClient, BeaconSource):
    def __init__(self, base_url: str, chain: int = 1, timeout: float = 10.0):
        super().__init__(base_url, timeout)
        self.chain = chain

    def _pulse(self, path: str) -> Optional[Pulse]:
        response = self._request("GET", path)
        return Pulse.from_json(response.json()["pulse"]) if response is not None else None

    def pulse(self, chain: int, index: int) -> Optional[Pulse]:
        return self._pulse(f"/beacon/2.0/chain/{chain}/pulse/{index}")

    def raw(self, chain: int, index: int) -> Optional[bytes]:
        response = self._request("GET", f"/beacon/2.0/chain/{chain}/pulse/{index}/raw")
        return response.content if response is not None else None

    def latest(self) -> Optional[Pulse]:
        return self._pulse(f"/beacon/2.0/chain/{self.chain}/pulse/last")

    def first_at_or_after(self, t_ms: int) -> Optional[Pulse]:
        return self._pulse(f"/beacon/2.0/pulse/time/{t_ms}")

    def public_keys(self) -> dict[str, PublicKey]:
        response = self._request("GET", "/beacon/2.0/keys")
        if response is None:
            raise ServiceError("beacon publishes no public keys")
        return {k: PublicKey.decode(bytes.fromhex(v)) for k, v in response.json().items()}


class TimestampClient(_HttpClient, TimestampService):
    def stamp(self, digest: bytes) -> TimestampToken:
        response = self._request("POST", "/timestamp", json={"digest": digest.hex()})
        if response is None:
            raise ServiceError("no timestamp authority at " + self.base_url)
        return TimestampToken.from_json(response.json()["token"])

    def public_key(self) -> PublicKey:
        response = self._request("GET", "/timestamp/key")
        if response is None:
            raise ServiceError("no timestamp authority at " + self.base_url)
        return PublicKey.decode(bytes.fromhex(response.json()["publicKey"]))


class LocalBeaconClient(BeaconSource):
    """
    In-process view of a chain store with the same release rule as the HTTP service.
    """

    def __init__(self, store: ChainStore, clock: Optional[Clock] = None):
        self.store = store
        self.clock = clock or SystemClock()

    def pulse(self, chain: int, index: int) -> Optional[Pulse]:
        if chain != self.store.chain_index:
            return None
        return self.store.get(index, self.clock.now_ms())

    def latest(self) -> Optional[Pulse]:
        return self.store.latest(self.clock.now_ms())

    def first_at_or_after(self, t_ms: int) -> Optional[Pulse]:
        return self.store.first_at_or_after(t_ms, self.clock.now_ms())


class LocalTimestampClient(TimestampService):
    def __init__(self, authority: TimestampAuthority):
        self.authority = authority

    def stamp(self, digest: bytes) -> TimestampToken:
        return self.authority.stamp(digest)

    def public_key(self) -> PublicKey:
        return self.authority.public_key
