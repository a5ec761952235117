"""Shared value types: operation kinds, the tunable pair, and scenario constants."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Iterator

PAGE_SIZE = 4096
KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB


class Op(str, Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True, order=True)
class Configuration:
    """Per-OSC tunables: pages per RPC extent and the in-flight RPC cap."""

    rpc_window_pages: int
    rpcs_in_flight: int

    def __post_init__(self) -> None:
        if self.rpc_window_pages <= 0 or self.rpcs_in_flight <= 0:
            raise ValueError(f"configuration values must be positive: {self}")

    def as_tuple(self) -> tuple[int, int]:
        return (self.rpc_window_pages, self.rpcs_in_flight)

    def __str__(self) -> str:
        return f"({self.rpc_window_pages},{self.rpcs_in_flight})"


DEFAULT_WINDOWS = (16, 32, 64, 128, 256, 512, 1024)
DEFAULT_INFLIGHTS = (1, 2, 4, 8, 16, 32)


@dataclass(frozen=True)
class ConfigSpace:
    windows: tuple[int, ...] = DEFAULT_WINDOWS
    inflights: tuple[int, ...] = DEFAULT_INFLIGHTS

    def __post_init__(self) -> None:
        if not self.windows or not self.inflights:
            raise ValueError("configuration space must be nonempty")
        if any(v <= 0 for v in self.windows + self.inflights):
            raise ValueError("configuration values must be positive")
        object.__setattr__(self, "windows", tuple(sorted(set(self.windows))))
        object.__setattr__(self, "inflights", tuple(sorted(set(self.inflights))))

    def __iter__(self) -> Iterator[Configuration]:
        # ascending window, then ascending in-flight cap
        for w in self.windows:
            for r in self.inflights:
                yield Configuration(w, r)

    def __len__(self) -> int:
        return len(self.windows) * len(self.inflights)

    def __contains__(self, theta: object) -> bool:
        return (
            isinstance(theta, Configuration)
            and theta.rpc_window_pages in self.windows
            and theta.rpcs_in_flight in self.inflights
        )

    def validate(self, theta: Configuration) -> Configuration:
        if theta not in self:
            raise ValueError(f"configuration {theta} is outside the configuration space")
        return theta


@dataclass
class Scenario:
    """Topology and timing constants for one simulated cluster.

    Every physical constant lives here so experiments can vary them from a
    JSON scenario file instead of editing code.
    """

    n_osts: int = 4
    n_clients: int = 1
    link_bandwidth: float = 25e9 / 8  # bytes/s per client NIC
    base_latency: float = 0.2e-3
    disk_bandwidth: float = 500e6  # bytes/s per OST
    per_rpc_overhead: float = 0.5e-3
    max_dirty_pages: int = 8192
    dirty_high_watermark: float = 0.75
    age_timeout: float = 1.0
    readahead_pages: int = 1024
    stripe_size: int = 1 * MiB
    llite_request_overhead: float = 20e-6
    llite_copy_bandwidth: float = 4e9
    queue_depth: int = 4
    windows: tuple[int, ...] = DEFAULT_WINDOWS
    inflights: tuple[int, ...] = DEFAULT_INFLIGHTS
    default_config: tuple[int, int] = (256, 8)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.windows = tuple(self.windows)
        self.inflights = tuple(self.inflights)
        self.default_config = tuple(self.default_config)
        if self.n_osts < 1 or self.n_clients < 1:
            raise ValueError("need at least one OST and one client")
        if not 0 < self.dirty_high_watermark <= 1:
            raise ValueError("dirty_high_watermark must be in (0, 1]")
        if self.stripe_size % PAGE_SIZE:
            raise ValueError("stripe_size must be page aligned")
        for name in ("link_bandwidth", "disk_bandwidth", "llite_copy_bandwidth", "age_timeout"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        self.space.validate(self.default)

    @property
    def space(self) -> ConfigSpace:
        return ConfigSpace(self.windows, self.inflights)

    @property
    def default(self) -> Configuration:
        return Configuration(*self.default_config)

    @property
    def high_watermark_pages(self) -> int:
        return int(self.max_dirty_pages * self.dirty_high_watermark)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["windows"] = list(self.windows)
        d["inflights"] = list(self.inflights)
        d["default_config"] = list(self.default_config)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
