from __future__ import annotations

import json

import pytest

from oblivkv.config import ProxyConfig, from_mapping, load_config, small_config, to_mapping
from oblivkv.errors import ConfigError


def test_defaults_validate():
    cfg = ProxyConfig().validate()
    assert cfg.geometry.N <= cfg.geometry.capacity
    assert cfg.epoch.accesses == cfg.epoch.R * cfg.epoch.b_read + cfg.epoch.b_write


def test_mapping_roundtrip(tmp_path):
    cfg = small_config(seed=3)
    assert from_mapping(to_mapping(cfg)) == cfg
    p = tmp_path / "c.json"
    p.write_text(json.dumps(to_mapping(cfg)))
    assert load_config(p) == cfg


@pytest.mark.parametrize("bad", [dict(N=10_000), dict(Z=0), dict(R=0), dict(block_size=16),
                                 dict(max_txns_per_epoch=12), dict(stash_bound=0)])
def test_invalid(bad):
    with pytest.raises(ConfigError):
        small_config(**bad).validate()


def test_unknown_key():
    with pytest.raises(ConfigError):
        from_mapping({"bogus": 1})
