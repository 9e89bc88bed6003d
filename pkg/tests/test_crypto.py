from __future__ import annotations

import pytest

from oblivkv.crypto import ProxyKeys, RecordId, Sealer, SlotId
from oblivkv.errors import ConfigError, IntegrityError


@pytest.fixture(params=[True, False], ids=["gcm", "ctr"])
def sealer(request):
    return Sealer(ProxyKeys.generate(1), 128, integrity=request.param)


def test_roundtrip_pads_to_block(sealer):
    sid = SlotId(3, 1, 7, 9)
    env = sealer.seal(b"hello", sid)
    assert len(env) == 128
    assert sealer.open(env, sid).rstrip(b"\0") == b"hello"


def test_equal_plaintexts_give_distinct_envelopes(sealer):
    sid = SlotId(0, 0, 0, 0)
    assert sealer.seal(b"", sid) != sealer.seal(b"", sid)


def test_capacity_enforced(sealer):
    with pytest.raises(ConfigError):
        sealer.seal(b"x" * (sealer.capacity + 1), SlotId(0, 0, 0, 0))


@pytest.mark.parametrize("other", [SlotId(3, 2, 7, 9), SlotId(3, 1, 6, 9), SlotId(3, 1, 7, 8), SlotId(4, 1, 7, 9)])
def test_gcm_binds_coordinates(other):
    s = Sealer(ProxyKeys.generate(1), 128)
    env = s.seal(b"v", SlotId(3, 1, 7, 9))
    with pytest.raises(IntegrityError):
        s.open(env, other)


def test_gcm_detects_bit_flip():
    s = Sealer(ProxyKeys.generate(1), 128)
    sid = SlotId(0, 0, 0, 0)
    env = bytearray(s.seal(b"v", sid))
    env[40] ^= 1
    with pytest.raises(IntegrityError):
        s.open(bytes(env), sid)


def test_wrong_length_rejected(sealer):
    with pytest.raises(IntegrityError):
        sealer.open(b"\0" * 127, SlotId(0, 0, 0, 0))


def test_records_bind_public_section():
    s = Sealer(ProxyKeys.generate(2), 128)
    rid = RecordId(2, 55)
    env = s.seal_record(b"secret", rid, public=b"pub")
    assert s.open_record(env, rid, public=b"pub") == b"secret"
    with pytest.raises(IntegrityError):
        s.open_record(env, rid, public=b"puB")
    with pytest.raises(IntegrityError):
        s.open_record(env, RecordId(2, 56), public=b"pub")


def test_keys_save_load(tmp_path):
    k = ProxyKeys.generate(42)
    p = tmp_path / "keys.json"
    k.save(p)
    assert ProxyKeys.load(p) == k
    assert (p.stat().st_mode & 0o777) == 0o600


def test_block_too_small():
    with pytest.raises(ConfigError):
        Sealer(ProxyKeys.generate(1), 20)
