"""Central ingestion of anonymized records and per-frame counting."""

from __future__ import annotations

import hmac
import json
import logging
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .anonymizer import ID_BITS

logger = logging.getLogger(__name__)

DEFAULT_RETENTION = 120
RSSI_RANGE = (-120, 0)

_ID_HEX = re.compile(r"[0-9a-f]{16}")
_SENSOR_ID = re.compile(r"[A-Za-z0-9_.\-]{1,64}")


class MalformedPayload(ValueError):
    pass


@dataclass(frozen=True)
class FrameStats:
    frame: int
    unique_ids: int
    total_records: int
    per_sensor_counts: dict[str, int]

    def to_wire(self) -> dict:
        return {
            "frame": self.frame,
            "unique_ids": self.unique_ids,
            "total_records": self.total_records,
            "per_sensor": dict(self.per_sensor_counts),
        }


@dataclass
class _FrameState:
    ids: set[int] = field(default_factory=set)
    total: int = 0
    per_sensor: Counter = field(default_factory=Counter)


def _strict_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedPayload(f"{name} must be an integer")
    return value


def parse_batch(payload) -> tuple[str, list[tuple[int, int, int]]]:
    """Validate an upload body; returns (sensor_id, [(frame, identifier, rssi)])."""
    if not isinstance(payload, dict) or set(payload) != {"sensor_id", "records"}:
        raise MalformedPayload("body must have exactly 'sensor_id' and 'records'")
    sensor_id = payload["sensor_id"]
    if not isinstance(sensor_id, str) or not _SENSOR_ID.fullmatch(sensor_id):
        raise MalformedPayload("invalid sensor_id")
    records = payload["records"]
    if not isinstance(records, list):
        raise MalformedPayload("records must be a list")
    parsed = []
    for rec in records:
        if not isinstance(rec, dict) or set(rec) != {"frame", "id_hex", "rssi"}:
            raise MalformedPayload("record must have exactly 'frame', 'id_hex', 'rssi'")
        frame = _strict_int(rec["frame"], "frame")
        rssi = _strict_int(rec["rssi"], "rssi")
        id_hex = rec["id_hex"]
        if frame < 0:
            raise MalformedPayload("frame must be non-negative")
        if not RSSI_RANGE[0] <= rssi <= RSSI_RANGE[1]:
            raise MalformedPayload("rssi out of range")
        if not isinstance(id_hex, str) or not _ID_HEX.fullmatch(id_hex):
            raise MalformedPayload("id_hex must be 16 lowercase hex characters")
        parsed.append((frame, int(id_hex, 16), rssi))
    return sensor_id, parsed


class Aggregator:
    """Per-frame distinct-identifier sets and record counters.

    ``id_bits`` below 64 keeps only the top bits of each identifier as the
    dedup key; it exists so tests can make collisions observable.
    """

    def __init__(
        self,
        id_bits: int = ID_BITS,
        retention: int = DEFAULT_RETENTION,
        snapshot_dir: str | Path | None = None,
    ):
        if not 1 <= id_bits <= ID_BITS:
            raise ValueError("id_bits must lie in [1, 64]")
        self.id_bits = id_bits
        self.retention = retention
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir is not None else None
        if self.snapshot_dir is not None:
            self.snapshot_dir.mkdir(parents=True, exist_ok=True)
        self._frames: dict[int, _FrameState] = {}
        self._newest: int | None = None
        self._lock = threading.Lock()

    def _key(self, identifier: int) -> int:
        return identifier >> (ID_BITS - self.id_bits)

    def accept_batch(self, payload) -> int:
        """Apply one upload atomically; returns the number of records applied."""
        sensor_id, records = parse_batch(payload)
        if not records:
            return 0
        applied = 0
        snapshot_lines: dict[int, list[str]] = {}
        with self._lock:
            newest = max(frame for frame, _, _ in records)
            if self._newest is None or newest > self._newest:
                self._newest = newest
            horizon = self._newest - self.retention
            for frame, identifier, rssi in records:
                if frame < horizon:
                    continue
                state = self._frames.setdefault(frame, _FrameState())
                state.ids.add(self._key(identifier))
                state.total += 1
                state.per_sensor[sensor_id] += 1
                applied += 1
                if self.snapshot_dir is not None:
                    snapshot_lines.setdefault(frame, []).append(
                        f"{frame} {identifier:016x} {sensor_id} {rssi}\n"
                    )
            for frame in [f for f in self._frames if f < horizon]:
                del self._frames[frame]
            # Written under the lock so each frame file stays append-ordered.
            for frame, lines in snapshot_lines.items():
                with open(self.snapshot_dir / f"{frame}.log", "a") as fh:
                    fh.writelines(lines)
        if applied < len(records):
            logger.debug("ignored %d records older than retention", len(records) - applied)
        return applied

    def frame_stats(self, frame: int) -> FrameStats:
        with self._lock:
            state = self._frames.get(frame)
            if state is None:
                return FrameStats(frame, 0, 0, {})
            return FrameStats(frame, len(state.ids), state.total, dict(state.per_sensor))

    def identifiers(self, frame: int) -> frozenset[int]:
        """Dedup keys seen in ``frame``."""
        with self._lock:
            state = self._frames.get(frame)
            return frozenset(state.ids) if state else frozenset()

    def frames(self) -> list[int]:
        with self._lock:
            return sorted(self._frames)


def create_app(aggregator: Aggregator, token: str) -> FastAPI:
    app = FastAPI(title="aggregator")

    def authorized(request: Request) -> bool:
        scheme, _, presented = request.headers.get("authorization", "").partition(" ")
        return scheme.lower() == "bearer" and hmac.compare_digest(
            presented.encode(), token.encode()
        )

    @app.post("/v1/records")
    async def records(request: Request):
        if not authorized(request):
            return JSONResponse({"detail": "unauthorized"}, status_code=401)
        try:
            payload = json.loads(await request.body())
            aggregator.accept_batch(payload)
        except (json.JSONDecodeError, UnicodeDecodeError, MalformedPayload) as exc:
            return JSONResponse({"detail": f"malformed payload: {exc}"}, status_code=400)
        return Response(status_code=204)

    @app.get("/v1/frames/{frame}")
    def frame(frame: int, request: Request):
        if not authorized(request):
            return JSONResponse({"detail": "unauthorized"}, status_code=401)
        return aggregator.frame_stats(frame).to_wire()

    return app


def main() -> None:  # pragma: no cover - binds a socket
    import uvicorn

    token = os.environ.get("AGGREGATOR_TOKEN", "")
    if not token:
        raise SystemExit("AGGREGATOR_TOKEN must be set")
    aggregator = Aggregator(
        retention=int(os.environ.get("AGGREGATOR_RETENTION", DEFAULT_RETENTION)),
        snapshot_dir=os.environ.get("AGGREGATOR_SNAPSHOT_DIR") or None,
    )
    uvicorn.run(
        create_app(aggregator, token),
        host=os.environ.get("AGGREGATOR_HOST", "127.0.0.1"),
        port=int(os.environ.get("AGGREGATOR_PORT", "8081")),
    )


if __name__ == "__main__":  # pragma: no cover
    main()
