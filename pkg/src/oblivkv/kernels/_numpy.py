"""Pure-numpy kernels. Reference path and fallback when numba is disabled."""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def bit_reverse(value: int, bits: int) -> int:
    out = 0
    for _ in range(bits):
        out = (out << 1) | (value & 1)
        value >>= 1
    return out


def _bit_reverse_array(values: np.ndarray, bits: np.ndarray) -> np.ndarray:
    values = values.astype(np.int64)
    out = np.zeros_like(values)
    for i in range(int(bits.max(initial=0))):
        live = bits > i
        out = np.where(live, (out << 1) | ((values >> i) & 1), out)
    return out


def path_buckets(leaf: int, L: int) -> np.ndarray:
    levels = np.arange(L + 1, dtype=np.int64)
    return (((1 << L) + leaf) >> (L - levels)) - 1


def select_path_slots(slot_key, valid, path, key, u):
    """Slot to read in each bucket of ``path``: the key's slot where it lives,
    otherwise the ``floor(u * n)``-th valid dummy. Returns (slots, hit_level)."""
    keys = slot_key[path]
    ok = valid[path]
    if key >= 0:
        hit = (keys == key) & ok
    else:
        hit = np.zeros_like(ok)
    hit_rows = hit.any(axis=1)
    dummies = ok & (keys == -1)
    n = dummies.sum(axis=1)
    pick = np.floor(u[: len(path)] * n).astype(np.int64)
    dslot = np.argmax(np.cumsum(dummies, axis=1) > pick[:, None], axis=1)
    slots = np.where(hit_rows, np.argmax(hit, axis=1), np.where(n > 0, dslot, -1))
    hit_level = int(np.argmax(hit_rows)) if hit_rows.any() else -1
    return slots.astype(np.int64), hit_level


def read_phase_slots(slot_key, valid, buckets, Z, u):
    """Eviction read phase: every valid real slot plus random valid dummies,
    Z slots per bucket in total. Row i is padded with -1."""
    out = np.full((len(buckets), Z), -1, dtype=np.int64)
    for r, b in enumerate(buckets):
        keys = slot_key[b]
        ok = valid[b]
        reals = np.flatnonzero(ok & (keys >= 0))
        cand = np.flatnonzero(ok & (keys == -1))
        need = min(Z - len(reals), len(cand))
        for i in range(need):
            j = i + int(u[r, i] * (len(cand) - i))
            cand[i], cand[j] = cand[j], cand[i]
        row = np.concatenate([reals, cand[:need]])
        out[r, : len(row)] = row
    return out


def common_depth(leaves: np.ndarray, target: int, L: int) -> np.ndarray:
    x = np.bitwise_xor(leaves.astype(np.int64), target)
    width = np.zeros_like(x)
    nz = x > 0
    width[nz] = np.floor(np.log2(x[nz])).astype(np.int64) + 1
    return L - width


def evict_assign(leaves: np.ndarray, target: int, L: int, Z: int) -> np.ndarray:
    """Greedy deepest-first placement of stash blocks onto the target path.
    Returns the level assigned to each block, or -1 if it stays stashed."""
    depth = common_depth(leaves, target, L)
    level = np.full(len(leaves), -1, dtype=np.int64)
    for lv in range(L, -1, -1):
        cand = np.flatnonzero((level < 0) & (depth >= lv))[:Z]
        level[cand] = lv
    return level


def bucket_fill(leaves: np.ndarray, bucket: int, L: int, Z: int) -> np.ndarray:
    """Indices of the first Z stash blocks whose path crosses ``bucket``."""
    lv = int(np.floor(np.log2(bucket + 1)))
    j = bucket + 1 - (1 << lv)
    return np.flatnonzero((leaves.astype(np.int64) >> (L - lv)) == j)[:Z]


def evict_counts(count: int, L: int) -> np.ndarray:
    """Evict paths among the first ``count`` that touch each bucket."""
    b = np.arange((1 << (L + 1)) - 1, dtype=np.int64)
    lv = np.floor(np.log2(b + 1)).astype(np.int64)
    j = b + 1 - (1 << lv)
    r = _bit_reverse_array(j, lv)
    period = np.int64(1) << lv
    return np.where(count > r, (count - 1 - r) // period + 1, 0).astype(np.int64)


def slot_reuse_scan(buckets, slots, is_write, n_buckets, n_slots) -> np.ndarray:
    """Indices of read events that repeat a slot since the bucket's last write."""
    buckets = np.asarray(buckets, dtype=np.int64)
    slots = np.asarray(slots, dtype=np.int64)
    is_write = np.asarray(is_write, dtype=bool)
    if len(buckets) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(buckets, kind="stable")
    w = is_write[order].astype(np.int64)
    b_sorted = buckets[order]
    csum = np.cumsum(w)
    starts = np.r_[0, np.flatnonzero(np.diff(b_sorted)) + 1]
    group_base = np.repeat(csum[starts] - w[starts], np.diff(np.r_[starts, len(order)]))
    gen_sorted = csum - group_base - w
    gen = np.empty_like(gen_sorted)
    gen[order] = gen_sorted
    reads = np.flatnonzero(~is_write)
    key = (buckets[reads] * (gen.max() + 1) + gen[reads]) * n_slots + slots[reads]
    korder = np.argsort(key, kind="stable")
    ks = key[korder]
    dup = np.r_[False, ks[1:] == ks[:-1]]
    return np.sort(reads[korder[dup]])
