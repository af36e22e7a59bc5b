"""Sensor-side pipeline: probe record -> peppered identifier -> batched upload."""

from __future__ import annotations

import enum
import json
import logging
import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Protocol

import httpx

from .anonymizer import (
    PEPPER_BYTES,
    MacAddress,
    SensorPepper,
    ServerPepper,
    anonymize,
    build_global_pepper,
    frame_index,
    identifier_hex,
)
from .pepper_service import PepperWindow

logger = logging.getLogger(__name__)

RSSI_MIN, RSSI_MAX = -120, 0
DEFAULT_QUEUE_CAPACITY = 100_000


class PepperFetchError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeRecord:
    """A captured probe request: capture time (unix seconds), RSSI, source MAC."""

    timestamp: int
    rssi: int
    source_mac: MacAddress

    def __post_init__(self):
        if not RSSI_MIN <= self.rssi <= RSSI_MAX:
            raise ValueError(f"rssi {self.rssi} outside [{RSSI_MIN}, {RSSI_MAX}] dBm")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")


@dataclass(frozen=True)
class AnonRecord:
    frame: int
    identifier: int
    rssi: int
    sensor_id: str

    def to_wire(self) -> dict:
        return {"frame": self.frame, "id_hex": identifier_hex(self.identifier), "rssi": self.rssi}


class DropReason(enum.Enum):
    MISSING_PEPPER = "missing_pepper"


@dataclass(frozen=True)
class Dropped:
    reason: DropReason
    frame: int


@dataclass(frozen=True)
class FlushResult:
    sent: int
    status: int | None
    ok: bool


def parse_probe_line(line: str) -> ProbeRecord:
    """Parse ``<unix_seconds> <rssi> <mac as 12 hex chars>``."""
    parts = line.split()
    if len(parts) != 3:
        raise ValueError("expected '<unix_seconds> <rssi> <mac>'")
    return ProbeRecord(int(parts[0]), int(parts[1]), MacAddress.parse(parts[2]))


def read_probe_records(path: str | Path) -> Iterator[ProbeRecord]:
    with open(path) as fh:
        for line in fh:
            if line.strip() and not line.lstrip().startswith("#"):
                yield parse_probe_line(line)


def load_sensor_pepper(path: str | Path) -> SensorPepper:
    """Read a sensor pepper stored as 16 raw bytes or 32 hex characters."""
    data = Path(path).read_bytes()
    if len(data) == PEPPER_BYTES:
        return SensorPepper(data)
    return SensorPepper.from_hex(data.decode("ascii"))


def next_refresh_delay(rng: random.Random, base: float = 60.0, jitter: float = 5.0) -> float:
    return base + rng.uniform(-jitter, jitter)


class PepperClient(Protocol):
    def fetch(self) -> PepperWindow: ...


class Uploader(Protocol):
    def upload(self, payload: dict) -> int: ...


class HttpPepperClient:
    """Fetches the pepper window over HTTP(S) with a bearer token."""

    def __init__(self, http: httpx.Client, token: str, cluster: str | None = None):
        self.http = http
        self.token = token
        self.cluster = cluster

    def fetch(self) -> PepperWindow:
        params = {"cluster": self.cluster} if self.cluster else None
        try:
            resp = self.http.get(
                "/v1/peppers", params=params, headers={"Authorization": f"Bearer {self.token}"}
            )
        except httpx.HTTPError as exc:
            raise PepperFetchError(f"pepper fetch failed: {exc}") from exc
        if resp.status_code != 200:
            raise PepperFetchError(f"pepper fetch returned HTTP {resp.status_code}")
        try:
            return PepperWindow.from_wire(resp.json())
        except (ValueError, KeyError, TypeError) as exc:
            raise PepperFetchError(f"bad pepper window: {exc}") from exc


class HttpUploader:
    """POSTs record batches; ``on_send`` sees the exact request body bytes."""

    def __init__(
        self,
        http: httpx.Client,
        token: str,
        on_send: Callable[[bytes], None] | None = None,
    ):
        self.http = http
        self.token = token
        self.on_send = on_send

    def upload(self, payload: dict) -> int:
        body = json.dumps(payload, separators=(",", ":")).encode()
        if self.on_send is not None:
            self.on_send(body)
        resp = self.http.post(
            "/v1/records",
            content=body,
            headers={"Authorization": f"Bearer {self.token}", "Content-Type": "application/json"},
        )
        return resp.status_code


class PepperCache:
    """Server peppers by frame; replaced wholesale so readers never see a torn window."""

    def __init__(self):
        self._entries: Mapping[int, bytearray] = {}
        self._lock = threading.Lock()

    def get(self, frame: int) -> bytes | None:
        buf = self._entries.get(frame)
        return None if buf is None else bytes(buf)

    def frames(self) -> list[int]:
        return sorted(self._entries)

    def __len__(self):
        return len(self._entries)

    def replace(self, peppers: Iterable[ServerPepper], current_frame: int) -> None:
        fresh = {p.frame: bytearray(p.value) for p in peppers if p.frame >= current_frame}
        with self._lock:
            old = self._entries
            # Scrub the old buffers before the new window becomes visible.
            for buf in old.values():
                buf[:] = bytes(len(buf))
            self._entries = fresh

    def purge_before(self, current_frame: int) -> None:
        with self._lock:
            kept = {}
            for frame, buf in self._entries.items():
                if frame >= current_frame:
                    kept[frame] = bytearray(buf)
                buf[:] = bytes(len(buf))
            self._entries = kept


class SensorAgent:
    def __init__(
        self,
        sensor_id: str,
        sensor_pepper: SensorPepper,
        pepper_client: PepperClient | None = None,
        uploader: Uploader | None = None,
        clock: Callable[[], float] = time.time,
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
    ):
        self.sensor_id = sensor_id
        self.sensor_pepper = sensor_pepper
        self.pepper_client = pepper_client
        self.uploader = uploader
        self.clock = clock
        self.queue_capacity = queue_capacity
        self.cache = PepperCache()
        self._queue: deque[AnonRecord] = deque()
        self._queue_lock = threading.Lock()
        self.dropped_missing_pepper = 0
        self.dropped_overflow = 0
        self.uploaded = 0

    def current_frame(self) -> int:
        return frame_index(int(self.clock()))

    def anonymize_record(self, rec: ProbeRecord) -> AnonRecord | Dropped:
        """Anonymize without queueing."""
        frame = frame_index(rec.timestamp)
        server = self.cache.get(frame)
        if server is None:
            return Dropped(DropReason.MISSING_PEPPER, frame)
        global_pepper = build_global_pepper(ServerPepper(frame, server), self.sensor_pepper)
        identifier = anonymize(global_pepper, rec.source_mac)
        return AnonRecord(frame, identifier, rec.rssi, self.sensor_id)

    def ingest_probe(self, rec: ProbeRecord) -> AnonRecord | Dropped:
        result = self.anonymize_record(rec)
        if isinstance(result, Dropped):
            self.dropped_missing_pepper += 1
            logger.debug("%s: no pepper for frame %d, record dropped", self.sensor_id, result.frame)
            return result
        with self._queue_lock:
            if len(self._queue) >= self.queue_capacity:
                self._queue.popleft()
                self.dropped_overflow += 1
            self._queue.append(result)
        return result

    def refresh_peppers(self, client: PepperClient | None = None) -> PepperCache:
        """Replace the cache with a freshly fetched window.

        On fetch failure the existing cache is kept (minus expired frames).
        """
        client = client or self.pepper_client
        now = self.current_frame()
        try:
            window = client.fetch()
        except PepperFetchError as exc:
            logger.warning("%s: keeping cached peppers: %s", self.sensor_id, exc)
            self.cache.purge_before(now)
            return self.cache
        self.cache.replace(window.entries, now)
        return self.cache

    @property
    def pending(self) -> int:
        return len(self._queue)

    def flush_batch(self, max_batch: int = 500) -> FlushResult:
        if max_batch < 1:
            raise ValueError("max_batch must be positive")
        with self._queue_lock:
            batch = [self._queue.popleft() for _ in range(min(max_batch, len(self._queue)))]
        if not batch:
            return FlushResult(0, None, True)
        payload = {"sensor_id": self.sensor_id, "records": [r.to_wire() for r in batch]}
        try:
            status = self.uploader.upload(payload)
        except httpx.HTTPError as exc:
            logger.warning("%s: upload failed: %s", self.sensor_id, exc)
            status = None
        if status == 204:
            self.uploaded += len(batch)
            return FlushResult(len(batch), status, True)

        with self._queue_lock:
            self._queue.extendleft(reversed(batch))
            while len(self._queue) > self.queue_capacity:
                self._queue.popleft()
                self.dropped_overflow += 1
        logger.warning("%s: upload returned %s, %d records requeued", self.sensor_id, status, len(batch))
        return FlushResult(0, status, False)

    def flush_all(self, max_batch: int = 500) -> int:
        sent = 0
        while self.pending:
            result = self.flush_batch(max_batch)
            if not result.ok:
                break
            sent += result.sent
        return sent


@dataclass
class SensorConfig:
    sensor_id: str
    pepper_url: str
    aggregator_url: str
    token: str
    sensor_pepper_path: str
    batch_size: int = 500
    refresh_seconds: float = 60.0
    refresh_jitter: float = 5.0

    @classmethod
    def from_env(cls, env=os.environ) -> "SensorConfig":
        return cls(
            sensor_id=env["SENSOR_ID"],
            pepper_url=env["SENSOR_PEPPER_URL"],
            aggregator_url=env["SENSOR_AGGREGATOR_URL"],
            token=env["SENSOR_TOKEN"],
            sensor_pepper_path=env["SENSOR_PEPPER_FILE"],
            batch_size=int(env.get("SENSOR_BATCH_SIZE", "500")),
            refresh_seconds=float(env.get("SENSOR_REFRESH_SECONDS", "60")),
            refresh_jitter=float(env.get("SENSOR_REFRESH_JITTER", "5")),
        )


def main(argv: list[str] | None = None) -> None:  # pragma: no cover - network I/O
    """Anonymize and upload a records file using env configuration."""
    import sys

    args = sys.argv[1:] if argv is None else argv
    if len(args) != 1:
        raise SystemExit("usage: python -m probeanon.sensor_agent RECORDS_FILE")
    config = SensorConfig.from_env()
    with httpx.Client(base_url=config.pepper_url) as ph, httpx.Client(
        base_url=config.aggregator_url
    ) as ah:
        agent = SensorAgent(
            config.sensor_id,
            load_sensor_pepper(config.sensor_pepper_path),
            HttpPepperClient(ph, config.token),
            HttpUploader(ah, config.token),
        )
        agent.refresh_peppers()
        for rec in read_probe_records(args[0]):
            agent.ingest_probe(rec)
            if agent.pending >= config.batch_size:
                agent.flush_batch(config.batch_size)
        agent.flush_all(config.batch_size)
        logger.info(
            "%s: uploaded %d, dropped %d (no pepper), %d (overflow)",
            agent.sensor_id,
            agent.uploaded,
            agent.dropped_missing_pepper,
            agent.dropped_overflow,
        )


if __name__ == "__main__":  # pragma: no cover
    main()
