"""Randomized encryption with freshness-bound MACs for everything the proxy stores.

Tree slots are sealed into fixed-size envelopes bound to
``(bucket, slot, write_version, write_tag)``; durability records are sealed
with variable length and bound to ``(record_type, counter)``. With integrity
disabled (honest-but-curious server) sealing degrades to AES-CTR without a tag.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import ConfigError, IntegrityError

GCM_NONCE = 12
GCM_TAG = 16
CTR_NONCE = 16


@dataclass(frozen=True)
class SlotId:
    bucket: int
    slot: int
    version: int
    tag: int

    def aad(self) -> bytes:
        return struct.pack("<BIHqq", 1, self.bucket, self.slot, self.version, self.tag)


@dataclass(frozen=True)
class RecordId:
    record_type: int
    counter: int

    def aad(self) -> bytes:
        return struct.pack("<BBQ", 2, self.record_type, self.counter)


FreshnessId = SlotId | RecordId


@dataclass(frozen=True)
class ProxyKeys:
    """Secrets that survive proxy crashes: the cipher key and the RNG seed."""

    secret: bytes
    seed: int

    @classmethod
    def generate(cls, seed: int | None = None) -> "ProxyKeys":
        if seed is None:
            seed = int.from_bytes(os.urandom(16), "little")
        return cls(os.urandom(32), seed)

    def save(self, path) -> None:
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as fh:
            json.dump({"secret": self.secret.hex(), "seed": self.seed}, fh)

    @classmethod
    def load(cls, path) -> "ProxyKeys":
        with open(path) as fh:
            d = json.load(fh)
        return cls(bytes.fromhex(d["secret"]), int(d["seed"]))


class Sealer:
    """Seals and opens envelopes. Thread-safe after construction."""

    def __init__(self, keys: ProxyKeys, block_size: int, integrity: bool = True):
        self.block_size = block_size
        self.integrity = integrity
        self._key = keys.secret
        self._gcm = AESGCM(keys.secret) if integrity else None
        self.overhead = GCM_NONCE + GCM_TAG if integrity else CTR_NONCE
        if block_size <= self.overhead:
            raise ConfigError("block size smaller than envelope overhead")

    @property
    def capacity(self) -> int:
        """Plaintext bytes that fit in one tree envelope."""
        return self.block_size - self.overhead

    def seal(self, plaintext: bytes, fid: FreshnessId) -> bytes:
        if isinstance(fid, SlotId):
            if len(plaintext) > self.capacity:
                raise ConfigError(f"plaintext of {len(plaintext)} bytes exceeds capacity {self.capacity}")
            plaintext = plaintext.ljust(self.capacity, b"\0")
        return self._encrypt(plaintext, fid.aad())

    def open(self, envelope: bytes, expected: FreshnessId) -> bytes:
        if isinstance(expected, SlotId) and len(envelope) != self.block_size:
            raise IntegrityError(f"envelope length {len(envelope)} != {self.block_size}")
        return self._decrypt(envelope, expected.aad())

    # records may carry a plaintext section that is authenticated but not hidden
    def seal_record(self, payload: bytes, fid: RecordId, public: bytes = b"") -> bytes:
        return self._encrypt(payload, fid.aad() + public)

    def open_record(self, envelope: bytes, fid: RecordId, public: bytes = b"") -> bytes:
        return self._decrypt(envelope, fid.aad() + public)

    def _encrypt(self, data: bytes, aad: bytes) -> bytes:
        if self._gcm is not None:
            nonce = os.urandom(GCM_NONCE)
            return nonce + self._gcm.encrypt(nonce, data, aad)
        nonce = os.urandom(CTR_NONCE)
        enc = Cipher(algorithms.AES(self._key), modes.CTR(nonce)).encryptor()
        return nonce + enc.update(data) + enc.finalize()

    def _decrypt(self, envelope: bytes, aad: bytes) -> bytes:
        if self._gcm is not None:
            if len(envelope) < GCM_NONCE + GCM_TAG:
                raise IntegrityError("truncated envelope")
            try:
                return self._gcm.decrypt(envelope[:GCM_NONCE], envelope[GCM_NONCE:], aad)
            except InvalidTag:
                raise IntegrityError("MAC verification failed") from None
        dec = Cipher(algorithms.AES(self._key), modes.CTR(envelope[:CTR_NONCE])).decryptor()
        return dec.update(envelope[CTR_NONCE:]) + dec.finalize()
