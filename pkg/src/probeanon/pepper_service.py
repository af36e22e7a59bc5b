"""Central pepper service: a rolling window of per-minute server peppers.

The window always covers the current frame and the 19 that follow it, so a
sensor that fetched recently still holds peppers for upcoming frames. Peppers
for frames that fall out of the window are overwritten and dropped.
"""

from __future__ import annotations

import hmac
import logging
import os
import random
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .anonymizer import PEPPER_BYTES, ServerPepper, frame_index

logger = logging.getLogger(__name__)

WINDOW_SIZE = 20
DEFAULT_CLUSTER = "default"


class ServiceNotReady(RuntimeError):
    """No rotation has happened yet."""


class EntropySource:
    """Pepper generator: OS randomness, or a seeded schedule for simulations.

    The seeded mode derives each pepper from (seed, cluster, frame) alone, so
    the whole schedule is reproducible regardless of rotation order.
    """

    def __init__(self, seed: int | None = None):
        self.seed = seed

    @classmethod
    def os_random(cls) -> "EntropySource":
        return cls(None)

    @classmethod
    def seeded(cls, seed: int) -> "EntropySource":
        return cls(seed)

    @property
    def mode(self) -> str:
        return "os" if self.seed is None else "seeded"

    def draw(self, frame: int, cluster: str = DEFAULT_CLUSTER) -> bytes:
        if self.seed is None:
            return secrets.token_bytes(PEPPER_BYTES)
        key = f"{self.seed}/{cluster}/{frame}".encode()
        return random.Random(key).randbytes(PEPPER_BYTES)

    @classmethod
    def from_spec(cls, spec: str) -> "EntropySource":
        """Parse ``os`` or ``seeded:<int>``."""
        if spec == "os":
            return cls.os_random()
        kind, _, seed = spec.partition(":")
        if kind != "seeded" or not seed:
            raise ValueError(f"unknown entropy mode {spec!r}")
        return cls.seeded(int(seed))


@dataclass(frozen=True)
class PepperWindow:
    """Immutable snapshot of WINDOW_SIZE peppers for consecutive frames."""

    entries: tuple[ServerPepper, ...]

    def __post_init__(self):
        if len(self.entries) != WINDOW_SIZE:
            raise ValueError(f"a pepper window holds exactly {WINDOW_SIZE} entries")
        start = self.entries[0].frame
        for offset, entry in enumerate(self.entries):
            if entry.frame != start + offset:
                raise ValueError("pepper window frames must be consecutive")

    @property
    def start(self) -> int:
        return self.entries[0].frame

    @property
    def frames(self) -> range:
        return range(self.start, self.start + WINDOW_SIZE)

    def get(self, frame: int) -> ServerPepper | None:
        if frame in self.frames:
            return self.entries[frame - self.start]
        return None

    def to_wire(self, generated_at: int) -> dict:
        return {
            "generated_at": int(generated_at),
            "peppers": [{"frame": p.frame, "pepper_hex": p.hex} for p in self.entries],
        }

    @classmethod
    def from_wire(cls, body: dict) -> "PepperWindow":
        if set(body) != {"generated_at", "peppers"}:
            raise ValueError("unexpected pepper window fields")
        entries = []
        for item in body["peppers"]:
            if set(item) != {"frame", "pepper_hex"}:
                raise ValueError("unexpected pepper entry fields")
            entries.append(ServerPepper.from_hex(int(item["frame"]), item["pepper_hex"]))
        return cls(tuple(entries))


class PepperService:
    """Holds one rolling window per sensor cluster.

    Rotation is serialised by a lock; readers pick up the current immutable
    snapshot without locking, so they never see a half-rotated window.
    """

    def __init__(
        self,
        entropy: EntropySource | None = None,
        clusters: Iterable[str] = (DEFAULT_CLUSTER,),
    ):
        self.entropy = entropy or EntropySource.os_random()
        self.clusters = tuple(clusters)
        if not self.clusters:
            raise ValueError("at least one cluster is required")
        self._lock = threading.Lock()
        self._buffers: dict[str, dict[int, bytearray]] = {c: {} for c in self.clusters}
        self._snapshots: dict[str, PepperWindow] = {}

    @property
    def initialized(self) -> bool:
        return bool(self._snapshots)

    @property
    def current_frame(self) -> int | None:
        window = self._snapshots.get(self.clusters[0])
        return None if window is None else window.start

    def rotate(self, now: int) -> PepperWindow:
        """Slide every cluster's window to [now, now + 19].

        Peppers already generated for frames still in range are kept. If the
        entropy source fails, nothing changes.
        """
        with self._lock:
            current = self.current_frame
            if current is not None and now < current:
                raise ValueError(f"cannot rotate back from frame {current} to {now}")
            wanted = range(now, now + WINDOW_SIZE)

            fresh: dict[str, dict[int, bytearray]] = {}
            for cluster in self.clusters:
                held = self._buffers[cluster]
                fresh[cluster] = {
                    f: bytearray(self.entropy.draw(f, cluster)) for f in wanted if f not in held
                }

            for cluster in self.clusters:
                held = self._buffers[cluster]
                for f in [f for f in held if f < now]:
                    buf = held.pop(f)
                    buf[:] = bytes(len(buf))
                held.update(fresh[cluster])
                self._snapshots[cluster] = PepperWindow(
                    tuple(ServerPepper(f, bytes(held[f])) for f in wanted)
                )
            if current != now:
                logger.info("rotated pepper window to frame %d", now)
            return self._snapshots[self.clusters[0]]

    def ensure_current(self, now: int) -> None:
        """Rotate forward if ``now`` is past the window start."""
        current = self.current_frame
        if current is not None and now > current:
            self.rotate(now)

    def get_window(self, cluster: str = DEFAULT_CLUSTER) -> PepperWindow:
        if not self.initialized:
            raise ServiceNotReady("pepper service has not rotated yet")
        try:
            return self._snapshots[cluster]
        except KeyError:
            raise KeyError(f"unknown cluster {cluster!r}") from None

    def lookup(self, frame: int, cluster: str = DEFAULT_CLUSTER) -> ServerPepper | None:
        return self.get_window(cluster).get(frame)


def _authorized(request: Request, token: str) -> bool:
    header = request.headers.get("authorization", "")
    scheme, _, presented = header.partition(" ")
    return scheme.lower() == "bearer" and hmac.compare_digest(presented.encode(), token.encode())


def create_app(
    service: PepperService,
    token: str,
    clock: Callable[[], float] = time.time,
) -> FastAPI:
    """HTTP front end: ``GET /v1/peppers[?cluster=ID]`` with a bearer token."""
    app = FastAPI(title="pepper service")

    @app.get("/v1/peppers")
    def peppers(request: Request, cluster: str = DEFAULT_CLUSTER):
        if not _authorized(request, token):
            return JSONResponse({"detail": "unauthorized"}, status_code=401)
        if not service.initialized:
            return JSONResponse({"detail": "no pepper window yet"}, status_code=503)
        now = int(clock())
        service.ensure_current(frame_index(now))
        try:
            window = service.get_window(cluster)
        except KeyError:
            return JSONResponse({"detail": "unknown cluster"}, status_code=404)
        return window.to_wire(now)

    return app


@dataclass
class PepperServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    token: str = ""
    entropy: str = "os"
    clusters: list[str] = field(default_factory=lambda: [DEFAULT_CLUSTER])

    @classmethod
    def from_env(cls, env=os.environ) -> "PepperServiceConfig":
        return cls(
            host=env.get("PEPPER_HOST", "127.0.0.1"),
            port=int(env.get("PEPPER_PORT", "8080")),
            token=env.get("PEPPER_TOKEN", ""),
            entropy=env.get("PEPPER_ENTROPY", "os"),
            clusters=[c for c in env.get("PEPPER_CLUSTERS", DEFAULT_CLUSTER).split(",") if c],
        )


def main() -> None:  # pragma: no cover - binds a socket
    import uvicorn

    config = PepperServiceConfig.from_env()
    if not config.token:
        raise SystemExit("PEPPER_TOKEN must be set")
    service = PepperService(EntropySource.from_spec(config.entropy), config.clusters)
    service.rotate(frame_index(int(time.time())))
    uvicorn.run(create_app(service, config.token), host=config.host, port=config.port)


if __name__ == "__main__":  # pragma: no cover
    main()
