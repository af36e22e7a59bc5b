"""In-process multi-sensor simulation of the whole pipeline.

A seeded pepper service, an aggregator and N sensor agents talk over the
real HTTP handlers (via the ASGI test transport). Every request and response
body is tapped at the server boundary so the privacy scan sees exactly what
crossed the wire.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request, Response

from . import aggregator as agg_mod
from . import pepper_service as pepper_mod
from .anonymizer import FRAME_SECONDS, ID_BITS, MacAddress, SensorPepper
from .collision_math import BucketConfig, exact_collision_rate
from .sensor_agent import AnonRecord, HttpPepperClient, HttpUploader, ProbeRecord, SensorAgent

with warnings.catch_warnings():
    warnings.filterwarnings("ignore", message="Using `httpx` with `starlette.testclient`")
    from fastapi.testclient import TestClient

logger = logging.getLogger(__name__)

FRAME_MS = FRAME_SECONDS * 1000
# Frame of 2023-11-14T22:13:20Z; any fixed origin works.
START_FRAME = 28_333_333
TOKEN = "simulation-token"
_PEPPER_HEX = re.compile(r"[0-9a-f]{32}")


class SimClock:
    """Shared simulated wall clock in milliseconds; sensors add a fixed offset."""

    def __init__(self, now_ms: float = 0.0):
        self.now_ms = now_ms

    def seconds(self, offset_ms: float = 0.0) -> float:
        return (self.now_ms + offset_ms) / 1000.0


class TrafficTap:
    """Records (service, path, request body, response status, response body)."""

    def __init__(self):
        self.exchanges: list[tuple[str, str, bytes, int, bytes]] = []

    def attach(self, app: FastAPI, service: str) -> None:
        @app.middleware("http")
        async def tap(request: Request, call_next):
            body = await request.body()
            response = await call_next(request)
            chunks = [chunk async for chunk in response.body_iterator]
            payload = b"".join(chunks)
            self.exchanges.append((service, request.url.path, body, response.status_code, payload))
            headers = {k: v for k, v in response.headers.items() if k.lower() != "content-length"}
            return Response(payload, status_code=response.status_code, headers=headers)

    def blobs(self) -> list[bytes]:
        out = []
        for _, _, request_body, _, response_body in self.exchanges:
            out.extend((request_body, response_body))
        return out


class _LogCapture(logging.Handler):
    def __init__(self):
        super().__init__(logging.DEBUG)
        self.lines: list[str] = []

    def emit(self, record):
        self.lines.append(self.format(record))


def mac_forms(mac: MacAddress) -> list[bytes]:
    """Byte encodings under which a MAC could leak into a payload or log."""
    h = mac.octets.hex()
    colon = ":".join(h[i : i + 2] for i in range(0, 12, 2))
    return [mac.octets, h.encode(), colon.encode(), colon.replace(":", "-").encode()]


def scan_for_macs(blobs: list[bytes], macs: list[MacAddress]) -> int:
    """Count blobs containing any MAC in any of its encodings (case-insensitive)."""
    raw = {m.octets for m in macs}
    text: dict[int, set[bytes]] = {}
    for m in macs:
        for form in mac_forms(m)[1:]:
            text.setdefault(len(form), set()).add(form)
    hits = 0
    for blob in blobs:
        lowered = blob.lower()
        found = any(blob[i : i + 6] in raw for i in range(len(blob) - 5))
        for width, forms in text.items():
            if found:
                break
            found = any(lowered[i : i + width] in forms for i in range(len(lowered) - width + 1))
        hits += found
    return hits


def check_pepper_wire(exchanges, sensor_pepper: SensorPepper) -> list[str]:
    """Schema check on pepper-service traffic; returns violations."""
    problems = []
    sensor_hex = sensor_pepper.value.hex()
    for service, path, request_body, status, response_body in exchanges:
        if service != "pepper":
            continue
        if request_body:
            problems.append(f"pepper service received a request body on {path}")
        if sensor_hex.encode() in request_body.lower() or sensor_pepper.value in request_body:
            problems.append("sensor pepper sent to pepper service")
        if status != 200:
            continue
        body = json.loads(response_body)
        if set(body) != {"generated_at", "peppers"} or len(body["peppers"]) != pepper_mod.WINDOW_SIZE:
            problems.append("pepper window does not match the wire schema")
            continue
        for entry in body["peppers"]:
            if set(entry) != {"frame", "pepper_hex"} or not _PEPPER_HEX.fullmatch(entry["pepper_hex"]):
                problems.append("pepper entry does not match the wire schema")
            elif entry["pepper_hex"] == sensor_hex:
                problems.append("pepper service emitted the sensor pepper")
    return problems


def sensor_offsets(sensors: int, skew_ms: float) -> list[float]:
    """Worst-case clock error envelope: sensors alternate between +skew and -skew."""
    return [skew_ms if i % 2 == 0 else -skew_ms for i in range(sensors)]


@dataclass
class FrameReport:
    frame: int
    ground_truth: int
    unique_ids: int
    total_records: int


@dataclass
class SimulationReport:
    sensors: int
    devices: int
    frames: int
    overlap: float
    clock_skew_ms: float
    seed: int
    frame_reports: list[FrameReport] = field(default_factory=list)
    multi_sensor_events: int = 0
    cross_sensor_agreement: float = 1.0
    cross_frame_linkage: float = 0.0
    frame_intersections: list[int] = field(default_factory=list)
    expected_chance_intersection: float = 0.0
    boundary_events: int = 0
    boundary_mismatches: int = 0
    boundary_mismatch_fraction: float = 0.0
    expected_boundary_mismatch_fraction: float = 0.0
    dropped_missing_pepper: int = 0
    privacy_hits: int = 0
    privacy_problems: list[str] = field(default_factory=list)
    scanned_blobs: int = 0

    @property
    def privacy_ok(self) -> bool:
        return self.privacy_hits == 0 and not self.privacy_problems

    def to_dict(self) -> dict:
        out = asdict(self)
        out["privacy_ok"] = self.privacy_ok
        return out


def _distinct_macs(rng: random.Random, count: int) -> list[MacAddress]:
    seen: set[bytes] = set()
    while len(seen) < count:
        seen.add(rng.randbytes(6))
    return [MacAddress(b) for b in sorted(seen)]


def simulate(
    sensors: int = 3,
    devices: int = 1000,
    frames: int = 2,
    overlap: float = 1.0,
    clock_skew_ms: float = 0.0,
    seed: int = 0,
    boundary_events: int = 100_000,
    batch_size: int = 500,
    workdir: str | Path | None = None,
) -> SimulationReport:
    """Run the multi-sensor pipeline and report counting and privacy metrics.

    Every device emits one probe request per frame, heard by each sensor it
    is visible to. With ``overlap`` = 1 every sensor sees every device;
    otherwise a device is seen by its home sensor plus each other sensor
    with probability ``overlap``.

    The boundary experiment draws ``boundary_events`` probe requests, each at
    a uniform time within half a frame of a frame boundary, heard by all
    sensors, and counts the events on which the sensors' identifiers differ.
    """
    if sensors < 1 or devices < 1 or frames < 1:
        raise ValueError("sensors, devices and frames must be positive")
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    if clock_skew_ms < 0 or clock_skew_ms * 2 >= FRAME_MS:
        raise ValueError("clock skew must lie in [0, 30000) ms")

    rng = random.Random(seed)
    report = SimulationReport(sensors, devices, frames, overlap, clock_skew_ms, seed)
    sensor_pepper = SensorPepper(random.Random(f"sensor-pepper/{seed}").randbytes(16))

    capture = _LogCapture()
    pkg_logger = logging.getLogger("probeanon")
    previous_level = pkg_logger.level
    pkg_logger.addHandler(capture)
    pkg_logger.setLevel(logging.DEBUG)

    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="probeanon-sim-")
        workdir = tmp.name
    snapshot_dir = Path(workdir) / "snapshots"

    try:
        clock = SimClock(START_FRAME * FRAME_MS)
        service = pepper_mod.PepperService(pepper_mod.EntropySource.seeded(seed))
        service.rotate(START_FRAME)
        aggregator = agg_mod.Aggregator(snapshot_dir=snapshot_dir)
        tap = TrafficTap()
        pepper_app = pepper_mod.create_app(service, TOKEN, clock=clock.seconds)
        agg_app = agg_mod.create_app(aggregator, TOKEN)
        tap.attach(pepper_app, "pepper")
        tap.attach(agg_app, "aggregator")

        with TestClient(pepper_app) as pepper_http, TestClient(agg_app) as agg_http:
            offsets = sensor_offsets(sensors, clock_skew_ms)
            agents = [
                SensorAgent(
                    f"sensor-{i}",
                    sensor_pepper,
                    HttpPepperClient(pepper_http, TOKEN),
                    HttpUploader(agg_http, TOKEN),
                    clock=(lambda off=off: clock.seconds(off)),
                )
                for i, off in enumerate(offsets)
            ]
            macs = _distinct_macs(rng, devices)

            for agent in agents:
                agent.refresh_peppers()
            if sensors >= 2 and boundary_events > 0:
                _boundary_experiment(report, agents, offsets, macs, rng, boundary_events)

            visibility = [
                [s for s in range(sensors) if s == d % sensors or rng.random() < overlap]
                for d in range(devices)
            ]
            ids_by_frame: dict[int, dict[int, list]] = {}
            for f in range(START_FRAME, START_FRAME + frames):
                clock.now_ms = f * FRAME_MS
                for agent in agents:
                    agent.refresh_peppers()
                seen = ids_by_frame.setdefault(f, {})
                for d, mac in enumerate(macs):
                    t_ms = f * FRAME_MS + rng.uniform(0, FRAME_MS)
                    rssi = rng.randint(-95, -30)
                    for s in visibility[d]:
                        ts = math.floor((t_ms + offsets[s]) / 1000)
                        result = agents[s].ingest_probe(ProbeRecord(ts, rssi, mac))
                        seen.setdefault(d, []).append(
                            result.identifier if isinstance(result, AnonRecord) else None
                        )
                for agent in agents:
                    agent.flush_all(batch_size)

            for f in range(START_FRAME, START_FRAME + frames):
                stats = agg_http.get(
                    f"/v1/frames/{f}", headers={"Authorization": f"Bearer {TOKEN}"}
                ).json()
                report.frame_reports.append(
                    FrameReport(f, devices, stats["unique_ids"], stats["total_records"])
                )

        multi = [obs for per in ids_by_frame.values() for obs in per.values() if len(obs) >= 2]
        report.multi_sensor_events = len(multi)
        if multi:
            agree = sum(1 for obs in multi if None not in obs and len(set(obs)) == 1)
            report.cross_sensor_agreement = agree / len(multi)

        linked = compared = 0
        for f in range(START_FRAME, START_FRAME + frames - 1):
            a, b = ids_by_frame[f], ids_by_frame[f + 1]
            for d in a:
                if a[d][0] is not None and b.get(d, [None])[0] is not None:
                    compared += 1
                    linked += a[d][0] == b[d][0]
            report.frame_intersections.append(
                len(aggregator.identifiers(f) & aggregator.identifiers(f + 1))
            )
        report.cross_frame_linkage = linked / compared if compared else 0.0
        report.expected_chance_intersection = devices * devices / 2.0**ID_BITS
        report.dropped_missing_pepper = sum(a.dropped_missing_pepper for a in agents)

        blobs = tap.blobs()
        if snapshot_dir.exists():
            blobs += [p.read_bytes() for p in sorted(snapshot_dir.glob("*.log"))]
        blobs += [line.encode() for line in capture.lines]
        report.scanned_blobs = len(blobs)
        report.privacy_hits = scan_for_macs(blobs, macs)
        report.privacy_problems = check_pepper_wire(tap.exchanges, sensor_pepper)
    finally:
        pkg_logger.removeHandler(capture)
        pkg_logger.setLevel(previous_level)
        if tmp is not None:
            tmp.cleanup()
    return report


def _boundary_experiment(report, agents, offsets, macs, rng, events) -> None:
    # Boundaries START_FRAME+1 .. START_FRAME+18 keep both neighbouring frames,
    # even after skew, inside the window fetched at START_FRAME.
    mismatches = 0
    for _ in range(events):
        boundary = rng.randint(START_FRAME + 1, START_FRAME + pepper_mod.WINDOW_SIZE - 2)
        t_ms = boundary * FRAME_MS + rng.uniform(-FRAME_MS / 2, FRAME_MS / 2)
        mac = macs[rng.randrange(len(macs))]
        ids = set()
        for agent, off in zip(agents, offsets):
            ts = math.floor((t_ms + off) / 1000)
            result = agent.anonymize_record(ProbeRecord(ts, -60, mac))
            ids.add(result.identifier if isinstance(result, AnonRecord) else None)
        mismatches += len(ids) != 1 or None in ids
    spread = max(offsets) - min(offsets)
    report.boundary_events = events
    report.boundary_mismatches = mismatches
    report.boundary_mismatch_fraction = mismatches / events
    report.expected_boundary_mismatch_fraction = spread / FRAME_MS


# ---------------------------------------------------------------------------
# Bridge between the collision formulas and the counting pipeline
# ---------------------------------------------------------------------------


class LocalPepperClient:
    def __init__(self, service: pepper_mod.PepperService):
        self.service = service

    def fetch(self) -> pepper_mod.PepperWindow:
        return self.service.get_window()


class LocalUploader:
    def __init__(self, aggregator: agg_mod.Aggregator):
        self.aggregator = aggregator

    def upload(self, payload: dict) -> int:
        try:
            self.aggregator.accept_batch(payload)
        except agg_mod.MalformedPayload:
            return 400
        return 204


@dataclass
class BridgeResult:
    n: int
    id_bits: int
    trials: int
    mean_rate: float
    std_error: float
    expected_rate: float

    @property
    def z_score(self) -> float:
        if self.std_error == 0:
            return 0.0 if self.mean_rate == self.expected_rate else math.inf
        return (self.mean_rate - self.expected_rate) / self.std_error


def collision_bridge(n: int, id_bits: int, trials: int, seed: int = 0) -> BridgeResult:
    """Observed undercount (n - unique_ids)/n with dedup keys cut to ``id_bits``.

    Each trial hashes n distinct MACs in a fresh frame (fresh server pepper)
    and reads the aggregator's unique count for that frame.
    """
    rng = random.Random(seed)
    service = pepper_mod.PepperService(pepper_mod.EntropySource.seeded(seed))
    aggregator = agg_mod.Aggregator(id_bits=id_bits)
    sensor_pepper = SensorPepper(rng.randbytes(16))
    clock = SimClock()
    agent = SensorAgent(
        "bridge",
        sensor_pepper,
        LocalPepperClient(service),
        LocalUploader(aggregator),
        clock=clock.seconds,
        queue_capacity=n + 1,
    )
    rates = []
    for t in range(trials):
        frame = START_FRAME + t
        clock.now_ms = frame * FRAME_MS
        service.rotate(frame)
        agent.refresh_peppers()
        for mac in _distinct_macs(rng, n):
            agent.ingest_probe(ProbeRecord(frame * FRAME_SECONDS + rng.randrange(FRAME_SECONDS), -60, mac))
        agent.flush_all(max(n, 1))
        rates.append((n - aggregator.frame_stats(frame).unique_ids) / n)

    mean = sum(rates) / trials
    if trials > 1:
        var = sum((r - mean) ** 2 for r in rates) / (trials - 1)
        se = math.sqrt(var / trials)
    else:
        se = 0.0
    expected = exact_collision_rate(BucketConfig(n, 2**id_bits)).value
    return BridgeResult(n, id_bits, trials, mean, se, expected)
