"""Peppered, truncated SHA-256 mapping of MAC addresses to 64-bit identifiers."""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass

FRAME_SECONDS = 60
PEPPER_BYTES = 16
MAC_BYTES = 6
ID_BITS = 64

_HEX_SEPARATORS = re.compile(r"[:\-.]")


@dataclass(frozen=True, repr=False)
class MacAddress:
    """A 48-bit MAC address, octets in transmission order."""

    octets: bytes

    def __post_init__(self):
        if not isinstance(self.octets, (bytes, bytearray)) or len(self.octets) != MAC_BYTES:
            raise ValueError("a MAC address is exactly 6 bytes")
        object.__setattr__(self, "octets", bytes(self.octets))

    @classmethod
    def parse(cls, text: str) -> "MacAddress":
        """Accept ``aabbccddeeff`` or the ``aa:bb:cc:dd:ee:ff`` / dashed forms."""
        digits = _HEX_SEPARATORS.sub("", text.strip())
        if len(digits) != 2 * MAC_BYTES:
            raise ValueError("a MAC address needs 12 hex digits")
        return cls(bytes.fromhex(digits))

    def __repr__(self):
        # Keep raw addresses out of logs and tracebacks.
        return "MacAddress(<redacted>)"


@dataclass(frozen=True, repr=False)
class SensorPepper:
    """Fixed 128-bit pepper known only to sensors."""

    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, (bytes, bytearray)) or len(self.value) != PEPPER_BYTES:
            raise ValueError("a sensor pepper is exactly 16 bytes")
        object.__setattr__(self, "value", bytes(self.value))

    @classmethod
    def from_hex(cls, text: str) -> "SensorPepper":
        return cls(bytes.fromhex(text.strip()))

    def __repr__(self):
        return "SensorPepper(<redacted>)"


@dataclass(frozen=True, repr=False)
class ServerPepper:
    """Time-varying 128-bit pepper, valid for exactly one frame."""

    frame: int
    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, (bytes, bytearray)) or len(self.value) != PEPPER_BYTES:
            raise ValueError("a server pepper is exactly 16 bytes")
        if self.frame < 0:
            raise ValueError("frame index must be non-negative")
        object.__setattr__(self, "value", bytes(self.value))

    @classmethod
    def from_hex(cls, frame: int, text: str) -> "ServerPepper":
        return cls(frame, bytes.fromhex(text))

    @property
    def hex(self) -> str:
        return self.value.hex()

    def __repr__(self):
        return f"ServerPepper(frame={self.frame}, <redacted>)"


def frame_index(unix_seconds: int) -> int:
    """One-minute frame containing ``unix_seconds``."""
    if unix_seconds < 0:
        raise ValueError("timestamps before the epoch are not supported")
    return int(unix_seconds) // FRAME_SECONDS


def build_global_pepper(server: ServerPepper, sensor: SensorPepper) -> bytes:
    """Server pepper followed by sensor pepper (32 bytes)."""
    return server.value + sensor.value


def anonymize(global_pepper: bytes, mac: MacAddress) -> int:
    """First 8 bytes of SHA-256(global_pepper || mac), as a big-endian integer."""
    if len(global_pepper) != 2 * PEPPER_BYTES:
        raise ValueError("the global pepper is exactly 32 bytes")
    digest = hashlib.sha256(global_pepper + mac.octets).digest()
    return int.from_bytes(digest[:8], "big")


def identifier_hex(identifier: int) -> str:
    return f"{identifier:016x}"


def bit_flip_fraction(a: int, b: int, bits: int = ID_BITS) -> float:
    return bin(a ^ b).count("1") / bits


def measure_avalanche(pairs: int = 1000, seed: int = 0) -> float:
    """Mean fraction of identifier bits that flip when only the pepper changes.

    Draws ``pairs`` random (pepper A, pepper B, MAC) triples with A != B and
    averages the Hamming distance between the two identifiers.
    """
    rng = random.Random(seed)
    total = 0.0
    for _ in range(pairs):
        mac = MacAddress(rng.randbytes(MAC_BYTES))
        a = rng.randbytes(2 * PEPPER_BYTES)
        b = rng.randbytes(2 * PEPPER_BYTES)
        while b == a:
            b = rng.randbytes(2 * PEPPER_BYTES)
        total += bit_flip_fraction(anonymize(a, mac), anonymize(b, mac))
    return total / pairs
