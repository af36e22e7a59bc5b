import re
import threading

import pytest

from probeanon.pepper_service import (
    WINDOW_SIZE,
    EntropySource,
    PepperService,
    PepperWindow,
    ServiceNotReady,
    create_app,
)

from .conftest import AUTH, F0, TOKEN


class FailingEntropy(EntropySource):
    def draw(self, frame, cluster="default"):
        raise OSError("entropy pool unavailable")


class TestRotation:
    def test_window_shape(self, service):
        window = service.rotate(F0)
        assert [p.frame for p in window.entries] == list(range(F0, F0 + WINDOW_SIZE))
        assert all(len(p.value) == 16 for p in window.entries)

    def test_idempotent(self, service):
        assert service.rotate(F0) == service.rotate(F0)

    def test_slide_keeps_19(self, service):
        a = service.rotate(F0)
        b = service.rotate(F0 + 1)
        assert a.entries[1:] == b.entries[:-1]
        assert b.entries[-1].frame == F0 + WINDOW_SIZE

    def test_expired_frame_not_found(self, service):
        service.rotate(F0)
        service.rotate(F0 + 1)
        assert service.lookup(F0) is None
        assert service.lookup(F0 - 1) is None
        assert service.lookup(F0 + 1) is not None

    def test_expired_buffers_overwritten(self, service):
        service.rotate(F0)
        buf = service._buffers["default"][F0]
        assert any(buf)
        service.rotate(F0 + 3)
        assert bytes(buf) == bytes(16)

    def test_jump_past_window(self, service):
        service.rotate(F0)
        window = service.rotate(F0 + 100)
        assert window.start == F0 + 100
        assert set(service._buffers["default"]) == set(range(F0 + 100, F0 + 100 + WINDOW_SIZE))

    def test_backwards_rejected(self, service):
        service.rotate(F0 + 5)
        with pytest.raises(ValueError):
            service.rotate(F0)

    def test_uninitialized(self, service):
        with pytest.raises(ServiceNotReady):
            service.get_window()

    def test_entropy_failure_keeps_previous_window(self, service):
        before = service.rotate(F0)
        service.entropy = FailingEntropy()
        with pytest.raises(OSError):
            service.rotate(F0 + 1)
        assert service.get_window() == before
        assert service.lookup(F0) is not None

    def test_seeded_schedule_reproducible(self):
        a = PepperService(EntropySource.seeded(9))
        b = PepperService(EntropySource.seeded(9))
        a.rotate(F0)
        a.rotate(F0 + 5)
        assert b.rotate(F0 + 5) == a.get_window()

    def test_peppers_distinct(self, service):
        window = service.rotate(F0)
        assert len({p.value for p in window.entries}) == WINDOW_SIZE

    def test_os_random_differs_between_services(self):
        a = PepperService(EntropySource.os_random()).rotate(F0)
        b = PepperService(EntropySource.os_random()).rotate(F0)
        assert a != b

    def test_clusters_independent(self):
        svc = PepperService(EntropySource.seeded(3), clusters=("north", "south"))
        svc.rotate(F0)
        north, south = svc.get_window("north"), svc.get_window("south")
        assert north.frames == south.frames
        assert not {p.value for p in north.entries} & {p.value for p in south.entries}

    def test_entropy_spec(self):
        assert EntropySource.from_spec("os").mode == "os"
        assert EntropySource.from_spec("seeded:5").seed == 5
        with pytest.raises(ValueError):
            EntropySource.from_spec("dev-random")


def test_window_invariant_under_concurrent_reads(service):
    service.rotate(F0)
    seen, errors = [], []
    stop = threading.Event()

    def reader():
        while not stop.is_set():
            w = service.get_window()
            frames = [p.frame for p in w.entries]
            if frames != list(range(w.start, w.start + WINDOW_SIZE)):
                errors.append(frames)
            seen.append(w.start)

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for f in range(F0 + 1, F0 + 200):
        service.rotate(f)
    stop.set()
    for t in threads:
        t.join()
    assert not errors
    assert all(F0 <= s < F0 + 200 for s in seen)


class TestWindowType:
    def test_requires_20_consecutive(self, service):
        entries = service.rotate(F0).entries
        with pytest.raises(ValueError):
            PepperWindow(entries[:-1])
        with pytest.raises(ValueError):
            PepperWindow(entries[:10] + entries[11:] + entries[:1])

    def test_wire_round_trip(self, service):
        window = service.rotate(F0)
        assert PepperWindow.from_wire(window.to_wire(123)) == window

    def test_wire_rejects_extra_fields(self, service):
        body = service.rotate(F0).to_wire(0)
        body["sensor_pepper"] = "00" * 16
        with pytest.raises(ValueError):
            PepperWindow.from_wire(body)


class TestEndpoint:
    def test_authorized_get(self, service, clock, client_for):
        service.rotate(F0)
        client = client_for(create_app(service, TOKEN, clock))
        resp = client.get("/v1/peppers", headers=AUTH)
        assert resp.status_code == 200
        body = resp.json()
        assert set(body) == {"generated_at", "peppers"}
        assert body["generated_at"] == F0 * 60
        assert len(body["peppers"]) == WINDOW_SIZE
        assert body["peppers"][0]["frame"] == F0
        for entry in body["peppers"]:
            assert set(entry) == {"frame", "pepper_hex"}
            assert re.fullmatch(r"[0-9a-f]{32}", entry["pepper_hex"])

    @pytest.mark.parametrize(
        "headers",
        [{}, {"Authorization": "Bearer nope"}, {"Authorization": f"Basic {TOKEN}"}],
    )
    def test_unauthorized(self, service, clock, client_for, headers):
        service.rotate(F0)
        client = client_for(create_app(service, TOKEN, clock))
        assert client.get("/v1/peppers", headers=headers).status_code == 401

    def test_not_ready(self, service, clock, client_for):
        client = client_for(create_app(service, TOKEN, clock))
        assert client.get("/v1/peppers", headers=AUTH).status_code == 503

    def test_first_frame_tracks_clock(self, service, clock, client_for):
        service.rotate(F0)
        client = client_for(create_app(service, TOKEN, clock))
        clock.now = (F0 + 2) * 60 + 30
        body = client.get("/v1/peppers", headers=AUTH).json()
        assert body["peppers"][0]["frame"] == F0 + 2
        assert service.lookup(F0 + 1) is None

    def test_cluster_parameter(self, clock, client_for):
        svc = PepperService(EntropySource.seeded(3), clusters=("default", "east"))
        svc.rotate(F0)
        client = client_for(create_app(svc, TOKEN, clock))
        east = client.get("/v1/peppers", params={"cluster": "east"}, headers=AUTH).json()
        default = client.get("/v1/peppers", headers=AUTH).json()
        assert east["peppers"] != default["peppers"]
        assert client.get("/v1/peppers", params={"cluster": "x"}, headers=AUTH).status_code == 404
