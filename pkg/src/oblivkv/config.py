"""Deployment parameters: tree geometry, epoch shape and proxy knobs.

Config files are flat JSON objects whose keys mirror the usual parameter
table (``N, Z, S, A, L, R, b_read, b_write, delta``) plus a few extras
(``block_size``, ``stash_bound``, ``full_checkpoint_every``, ``workers``,
``integrity``, ``max_txns_per_epoch``, ``gc_windows``, ``seed``).
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError

DEFAULT_BLOCK_SIZE = 4096


@dataclass(frozen=True)
class Geometry:
    """Ring ORAM tree shape. Levels run 0 (root) .. L (leaves)."""

    L: int = 7
    Z: int = 4
    S: int = 6
    A: int = 3
    N: int = 500
    block_size: int = DEFAULT_BLOCK_SIZE

    @property
    def n_buckets(self) -> int:
        return (1 << (self.L + 1)) - 1

    @property
    def n_leaves(self) -> int:
        return 1 << self.L

    @property
    def slots(self) -> int:
        return self.Z + self.S

    @property
    def capacity(self) -> int:
        # half the real slots of the tree; the rest is eviction headroom
        return self.Z * self.n_buckets // 2

    def validate(self) -> "Geometry":
        for name in ("Z", "S", "A", "N"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.L < 0 or self.L > 24:
            raise ConfigError("L must be in [0, 24]")
        if self.N > self.capacity:
            raise ConfigError(
                f"N={self.N} exceeds capacity {self.capacity} for L={self.L}, Z={self.Z}"
            )
        if self.block_size < 64:
            raise ConfigError("block_size must be at least 64 bytes")
        return self


@dataclass(frozen=True)
class EpochConfig:
    """R read batches of b_read slots, one write batch of b_write slots."""

    R: int = 4
    b_read: int = 32
    b_write: int = 32
    delta: float = 0.05

    @property
    def accesses(self) -> int:
        return self.R * self.b_read + self.b_write

    def validate(self) -> "EpochConfig":
        if self.R <= 0 or self.b_read <= 0 or self.b_write <= 0 or self.delta <= 0:
            raise ConfigError("R, b_read, b_write and delta must be strictly positive")
        if self.b_read >= 1 << 16 or self.R >= 1 << 16:
            raise ConfigError("R and b_read must fit in 16 bits")
        return self


def _default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-linux
        return os.cpu_count() or 1


@dataclass(frozen=True)
class ProxyConfig:
    geometry: Geometry = field(default_factory=Geometry)
    epoch: EpochConfig = field(default_factory=EpochConfig)
    stash_bound: int = 64
    full_checkpoint_every: int = 8
    workers: int = field(default_factory=_default_workers)
    integrity: bool = True
    max_txns_per_epoch: int = 1024
    gc_windows: int = 2
    seed: int | None = None

    def validate(self) -> "ProxyConfig":
        self.geometry.validate()
        self.epoch.validate()
        if self.stash_bound <= 0:
            raise ConfigError("stash_bound must be positive")
        if self.full_checkpoint_every <= 0 or self.workers <= 0 or self.gc_windows <= 0:
            raise ConfigError("full_checkpoint_every, workers and gc_windows must be positive")
        if self.max_txns_per_epoch <= 0 or self.max_txns_per_epoch % 8:
            raise ConfigError("max_txns_per_epoch must be a positive multiple of 8")
        return self

    def with_(self, **kw: Any) -> "ProxyConfig":
        """Return a copy with flat keys (``L``, ``R``, ``stash_bound`` ...) replaced."""
        return from_mapping({**to_mapping(self), **kw})


_GEOM = {f.name for f in fields(Geometry)}
_EPOCH = {f.name for f in fields(EpochConfig)}
_PROXY = {f.name for f in fields(ProxyConfig)} - {"geometry", "epoch"}


def from_mapping(data: dict[str, Any]) -> ProxyConfig:
    unknown = set(data) - _GEOM - _EPOCH - _PROXY
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    geom = Geometry(**{k: data[k] for k in _GEOM if k in data})
    epoch = EpochConfig(**{k: data[k] for k in _EPOCH if k in data})
    rest = {k: data[k] for k in _PROXY if k in data}
    return ProxyConfig(geometry=geom, epoch=epoch, **rest).validate()


def to_mapping(cfg: ProxyConfig) -> dict[str, Any]:
    out = {**asdict(cfg.geometry), **asdict(cfg.epoch)}
    out.update({k: getattr(cfg, k) for k in _PROXY})
    return out


def load_config(path: str | Path) -> ProxyConfig:
    with open(path) as fh:
        return from_mapping(json.load(fh))


def small_config(**kw: Any) -> ProxyConfig:
    """Compact deployment used by the crash sweep and most tests."""
    base = dict(L=4, Z=4, S=6, A=3, N=40, block_size=256, R=3, b_read=8, b_write=8,
                stash_bound=64, full_checkpoint_every=4, workers=8, seed=7)
    base.update(kw)
    return from_mapping(base)


__all__ = [
    "Geometry", "EpochConfig", "ProxyConfig", "from_mapping", "to_mapping",
    "load_config", "small_config", "replace",
]
