"""Sequential Ring ORAM core.

The core owns all metadata (position map, per-slot keys, valid bits, access
counts) and the stash, and makes every random choice. Physical I/O is
delegated to a ``Physical`` layer:

* ``DirectPhysical`` talks to storage immediately. It is the sequential
  reference implementation.
* ``executor.BufferedPhysical`` defers reads into ``SlotRef`` handles and
  buffers bucket writes until the epoch ends.

Because physical layers never draw randomness and never influence metadata,
the same seed and logical input produce the same choices under either layer.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Union

import numpy as np

from . import kernels
from .config import Geometry
from .crypto import Sealer, SlotId
from .errors import ConfigError, NotFound

_BLOCK_HDR = struct.Struct("<qqI")
BLOCK_HEADER = _BLOCK_HDR.size


@dataclass(frozen=True)
class Block:
    """A real object: key, timestamp of the transaction that wrote it, value."""

    key: int
    writer_ts: int
    value: bytes

    def pack(self) -> bytes:
        return _BLOCK_HDR.pack(self.key, self.writer_ts, len(self.value)) + self.value

    @classmethod
    def unpack(cls, raw: bytes) -> "Block":
        key, ts, n = _BLOCK_HDR.unpack_from(raw)
        if BLOCK_HEADER + n > len(raw):
            raise ValueError("block length field exceeds plaintext")
        return cls(key, ts, bytes(raw[BLOCK_HEADER:BLOCK_HEADER + n]))


@dataclass(frozen=True)
class SlotRef:
    """Handle for a real block whose physical read has not completed yet."""

    bucket: int
    slot: int


Payload = Union[Block, SlotRef, None]


@dataclass
class StashEntry:
    leaf: int
    data: Block | SlotRef


@dataclass(frozen=True)
class SeqOp:
    """One physical operation of the sequential algorithm."""

    kind: str  # "read" | "write"
    bucket: int
    slot: int  # -1 for writes
    reason: str  # "access" | "evict" | "reshuffle" | "replay"
    leaf: int = -1


@dataclass
class TreeMeta:
    """Proxy-side metadata for every bucket plus the position map."""

    slot_key: np.ndarray  # (nb, Z+S) int64, key or -1
    valid: np.ndarray  # (nb, Z+S) bool
    count: np.ndarray  # (nb,) invalid slots since the last write
    version: np.ndarray  # (nb,) storage write version
    wtag: np.ndarray  # (nb,) freshness tag of the current version
    posmap: np.ndarray  # (N,) leaf
    present: np.ndarray  # (N,) bool

    @classmethod
    def fresh(cls, geom: Geometry, rng: np.random.Generator) -> "TreeMeta":
        nb, w = geom.n_buckets, geom.slots
        return cls(
            slot_key=np.full((nb, w), -1, dtype=np.int64),
            valid=np.ones((nb, w), dtype=bool),
            count=np.zeros(nb, dtype=np.int64),
            version=np.zeros(nb, dtype=np.int64),
            wtag=np.zeros(nb, dtype=np.int64),
            posmap=rng.integers(0, geom.n_leaves, size=geom.N, dtype=np.int64),
            present=np.zeros(geom.N, dtype=bool),
        )

    def copy(self) -> "TreeMeta":
        return TreeMeta(*(getattr(self, f).copy() for f in self.__dataclass_fields__))

    def equals(self, other: "TreeMeta", versions: bool = True) -> bool:
        names = list(self.__dataclass_fields__)
        if not versions:
            names = [n for n in names if n not in ("version", "wtag")]
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)


class Physical(Protocol):
    def read(self, bucket: int, slot: int, real: bool) -> Payload: ...

    def write_bucket(self, bucket: int, contents: list[Payload], stamp: int) -> None: ...


def block_plaintext(p: Payload) -> bytes:
    return p.pack() if isinstance(p, Block) else b""


class DirectPhysical:
    """Synchronous storage access. Every bucket write bumps the stored version."""

    def __init__(self, meta: TreeMeta, client, sealer: Sealer, tag: int = 0):
        self.meta = meta
        self.client = client
        self.sealer = sealer
        self.tag = tag

    def read(self, bucket: int, slot: int, real: bool) -> Payload:
        v = int(self.meta.version[bucket])
        env = self.client.read_slot(bucket, slot, v)
        raw = self.sealer.open(env, SlotId(bucket, slot, v, int(self.meta.wtag[bucket])))
        return Block.unpack(raw) if real else None

    def write_bucket(self, bucket: int, contents: list[Payload], stamp: int) -> None:
        v = int(self.meta.version[bucket]) + 1
        envs = [self.sealer.seal(block_plaintext(p), SlotId(bucket, s, v, self.tag))
                for s, p in enumerate(contents)]
        self.client.write_bucket(bucket, v, stamp, envs)
        self.meta.version[bucket] = v
        self.meta.wtag[bucket] = self.tag


class NullPhysical:
    """Metadata-only layer: no storage, no payloads. Used for long fuzz runs."""

    def read(self, bucket: int, slot: int, real: bool) -> Payload:
        return SlotRef(bucket, slot) if real else None

    def write_bucket(self, bucket: int, contents: list[Payload], stamp: int) -> None:
        pass


class RingOram:
    """Ring ORAM over keys ``0..N-1``.

    ``trace`` (a list, optional) receives a ``SeqOp`` for every physical
    operation in algorithm order. ``on_path`` is called with the leaf of every
    logical access, real or dummy.
    """

    def __init__(
        self,
        geom: Geometry,
        physical: Physical,
        rng: np.random.Generator,
        meta: TreeMeta | None = None,
        stash: dict[int, StashEntry] | None = None,
        evict_count: int = 0,
        trace: list[SeqOp] | None = None,
        on_path: Callable[[int], None] | None = None,
    ):
        self.g = geom.validate()
        self.physical = physical
        self.rng = rng
        self.meta = meta if meta is not None else TreeMeta.fresh(geom, rng)
        self.stash: dict[int, StashEntry] = stash if stash is not None else {}
        self.evict_count = evict_count
        self.trace = trace
        self.on_path = on_path
        self.stash_high = len(self.stash)
        self.evictions = 0
        self.reshuffles = 0
        # keys whose position changed and buckets whose slot map changed
        self.dirty_keys: set[int] = set()
        self.dirty_buckets: set[int] = set()

    # -- helpers ---------------------------------------------------------------

    def _emit(self, kind: str, bucket: int, slot: int, reason: str, leaf: int = -1) -> None:
        if self.trace is not None:
            self.trace.append(SeqOp(kind, bucket, slot, reason, leaf))

    def _check_key(self, key: int) -> None:
        if not 0 <= key < self.g.N:
            raise NotFound(f"key {key} outside key space [0, {self.g.N})")

    def _fresh_leaf(self) -> int:
        return int(self.rng.integers(0, self.g.n_leaves))

    def _touch_stash(self) -> None:
        if len(self.stash) > self.stash_high:
            self.stash_high = len(self.stash)

    def path(self, leaf: int) -> np.ndarray:
        return kernels.path_buckets(leaf, self.g.L)

    def _read(self, b: int, s: int, reason: str, leaf: int = -1) -> Payload:
        m = self.meta
        key = int(m.slot_key[b, s])
        assert m.valid[b, s], f"read of invalid slot ({b}, {s})"
        m.valid[b, s] = False
        m.count[b] += 1
        self._emit("read", b, s, reason, leaf)
        data = self.physical.read(b, s, key >= 0)
        if key >= 0:
            m.slot_key[b, s] = -1
            self.dirty_buckets.add(b)
            self.stash[key] = StashEntry(int(m.posmap[key]), data)
        return data

    # -- logical operations ----------------------------------------------------

    def access(self, key: int | None, new: Block | None = None) -> StashEntry | None:
        """Read path for ``key`` (``None`` is a dummy access on a random path).

        The key is remapped and its block, if any, ends up in the stash.
        Writing ``new`` replaces the stash copy. Returns the stash entry or
        ``None`` for dummy accesses and never-written keys.
        """
        g, m = self.g, self.meta
        if key is None:
            leaf = self._fresh_leaf()
        else:
            self._check_key(key)
            leaf = int(m.posmap[key])
        if self.on_path is not None:
            self.on_path(leaf)
        path = self.path(leaf)
        u = self.rng.random(g.L + 1)
        slots, _ = kernels.select_path_slots(m.slot_key, m.valid, path, -1 if key is None else key, u)
        if (slots < 0).any():
            raise AssertionError("no valid dummy on path; reshuffle invariant broken")
        for b, s in zip(path.tolist(), slots.tolist()):
            self._read(b, s, "access", leaf)
        entry = None
        if key is not None:
            m.posmap[key] = self._fresh_leaf()
            self.dirty_keys.add(key)
            entry = self.stash.get(key)
            if new is not None:
                entry = self.stash[key] = StashEntry(int(m.posmap[key]), new)
                m.present[key] = True
            elif entry is not None:
                entry.leaf = int(m.posmap[key])
        self._touch_stash()
        self._advance()
        self._reshuffle_path(path)
        return entry

    def dummiless_write(self, key: int, block: Block) -> None:
        """Place a new version in the stash without a read path."""
        self._check_key(key)
        m = self.meta
        if key not in self.stash and m.present[key]:
            path = self.path(int(m.posmap[key]))
            rows = m.slot_key[path]
            hit = np.argwhere(rows == key)
            for lv, s in hit.tolist():
                # old copy stays physically in place but is now a dummy
                m.slot_key[path[lv], s] = -1
                self.dirty_buckets.add(int(path[lv]))
        m.posmap[key] = self._fresh_leaf()
        m.present[key] = True
        self.dirty_keys.add(key)
        self.stash[key] = StashEntry(int(m.posmap[key]), block)
        self._touch_stash()
        self._advance()

    def dummy_write(self) -> None:
        """Padding slot of a write batch: only the eviction cadence advances."""
        self._advance()

    def _advance(self) -> None:
        self.evict_count += 1
        if self.evict_count % self.g.A == 0:
            self.evict_path()

    def _reshuffle_path(self, path: np.ndarray) -> None:
        for b in path.tolist():
            if self.meta.count[b] >= self.g.S:
                self.early_reshuffle(b)

    # -- eviction ----------------------------------------------------------------

    def evict_target(self, g: int | None = None) -> int:
        """Leaf of the ``g``-th eviction (default: the one about to fire)."""
        if g is None:
            g = self.evict_count // self.g.A - 1
        L = self.g.L
        return kernels.bit_reverse(g % (1 << L), L) if L else 0

    def evict_path(self, target: int | None = None) -> None:
        g, m = self.g, self.meta
        leaf = self.evict_target() if target is None else target
        path = self.path(leaf)
        u = self.rng.random((g.L + 1, g.Z))
        picks = kernels.read_phase_slots(m.slot_key, m.valid, path, g.Z, u)
        for b, row in zip(path.tolist(), picks):
            for s in row.tolist():
                if s >= 0:
                    self._read(b, s, "evict", leaf)
        self.evictions += 1
        keys = list(self.stash)
        leaves = np.fromiter((self.stash[k].leaf for k in keys), dtype=np.int64, count=len(keys))
        levels = kernels.evict_assign(leaves, leaf, g.L, g.Z)
        for lv, b in enumerate(path.tolist()):
            chosen = [keys[i] for i in np.flatnonzero(levels == lv).tolist()]
            self._write(b, chosen, "evict", leaf)
        self._touch_stash()

    def early_reshuffle(self, b: int) -> None:
        g, m = self.g, self.meta
        u = self.rng.random((1, g.Z))
        picks = kernels.read_phase_slots(m.slot_key, m.valid, np.array([b], dtype=np.int64), g.Z, u)
        for s in picks[0].tolist():
            if s >= 0:
                self._read(b, s, "reshuffle")
        keys = list(self.stash)
        leaves = np.fromiter((self.stash[k].leaf for k in keys), dtype=np.int64, count=len(keys))
        chosen = [keys[i] for i in kernels.bucket_fill(leaves, b, g.L, g.Z).tolist()]
        self._write(b, chosen, "reshuffle")
        self.reshuffles += 1

    def _write(self, b: int, keys: list[int], reason: str, leaf: int = -1) -> None:
        g, m = self.g, self.meta
        perm = self.rng.permutation(g.slots)
        contents: list[Payload] = [None] * g.slots
        m.slot_key[b, :] = -1
        for key, s in zip(keys, perm.tolist()):
            contents[s] = self.stash.pop(key).data
            m.slot_key[b, s] = key
        m.valid[b, :] = True
        m.count[b] = 0
        self.dirty_buckets.add(b)
        self._emit("write", b, -1, reason, leaf)
        self.physical.write_bucket(b, contents, self.evict_count)

    # -- recovery support --------------------------------------------------------

    def replay_read(self, b: int, s: int) -> None:
        """Re-issue a logged physical read verbatim."""
        self._read(b, s, "replay")
        self._touch_stash()

    def remap(self, key: int) -> None:
        self._check_key(key)
        self.meta.posmap[key] = self._fresh_leaf()
        self.dirty_keys.add(key)
        if key in self.stash:
            self.stash[key].leaf = int(self.meta.posmap[key])

    def catch_up(self, n: int) -> None:
        for _ in range(n):
            self._advance()

    def reshuffle_all(self) -> None:
        for b in np.flatnonzero(self.meta.count >= self.g.S).tolist():
            self.early_reshuffle(b)

    # -- inspection --------------------------------------------------------------

    def lookup(self, key: int) -> Block | SlotRef | None:
        """Where the current version of ``key`` lives (stash data or tree slot)."""
        self._check_key(key)
        if key in self.stash:
            return self.stash[key].data
        hit = np.argwhere(self.meta.slot_key[self.path(int(self.meta.posmap[key]))] == key)
        if len(hit):
            lv, s = hit[0].tolist()
            return SlotRef(int(self.path(int(self.meta.posmap[key]))[lv]), s)
        return None

    def check_path_invariant(self) -> None:
        m = self.meta
        seen: dict[int, int] = {}
        for b, s in np.argwhere(m.slot_key >= 0).tolist():
            key = int(m.slot_key[b, s])
            if key in seen or key in self.stash:
                raise AssertionError(f"key {key} stored twice")
            seen[key] = b
            if b not in set(self.path(int(m.posmap[key])).tolist()):
                raise AssertionError(f"key {key} in bucket {b} off its path")
        for key, e in self.stash.items():
            if e.leaf != m.posmap[key]:
                raise AssertionError(f"stash leaf of {key} disagrees with position map")
        stored = set(seen) | set(self.stash)
        if stored != set(np.flatnonzero(m.present).tolist()):
            raise AssertionError("present flags disagree with stored keys")


def validate_value(value: bytes, sealer_capacity: int) -> None:
    if BLOCK_HEADER + len(value) > sealer_capacity:
        raise ConfigError(f"value of {len(value)} bytes exceeds {sealer_capacity - BLOCK_HEADER}")


def initial_contents(geom: Geometry) -> Iterable[list[Payload]]:
    for _ in range(geom.n_buckets):
        yield [None] * geom.slots


__all__ = [
    "Block", "SlotRef", "StashEntry", "SeqOp", "TreeMeta", "Physical", "DirectPhysical",
    "NullPhysical", "RingOram", "BLOCK_HEADER", "block_plaintext", "validate_value",
    "initial_contents", "Payload",
]
