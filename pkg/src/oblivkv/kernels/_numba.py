"""numba-compiled kernels. Same contracts as ``_numpy``; results must match bit for bit."""
from __future__ import annotations

import numpy as np
from numba import njit

BACKEND = "numba"


@njit(cache=True)
def _bit_reverse(value, bits):
    out = 0
    for _ in range(bits):
        out = (out << 1) | (value & 1)
        value >>= 1
    return out


def bit_reverse(value: int, bits: int) -> int:
    return int(_bit_reverse(value, bits))


@njit(cache=True)
def path_buckets(leaf, L):
    out = np.empty(L + 1, dtype=np.int64)
    node = (1 << L) + leaf
    for lv in range(L, -1, -1):
        out[lv] = node - 1
        node >>= 1
    return out


@njit(cache=True)
def _select_path_slots(slot_key, valid, path, key, u):
    n_lv = path.shape[0]
    width = slot_key.shape[1]
    slots = np.full(n_lv, -1, dtype=np.int64)
    hit_level = -1
    for i in range(n_lv):
        b = path[i]
        found = -1
        if key >= 0:
            for s in range(width):
                if valid[b, s] and slot_key[b, s] == key:
                    found = s
                    break
        if found >= 0:
            slots[i] = found
            if hit_level < 0:
                hit_level = i
            continue
        n = 0
        for s in range(width):
            if valid[b, s] and slot_key[b, s] == -1:
                n += 1
        if n == 0:
            continue
        pick = np.int64(np.floor(u[i] * n))
        for s in range(width):
            if valid[b, s] and slot_key[b, s] == -1:
                if pick == 0:
                    slots[i] = s
                    break
                pick -= 1
    return slots, hit_level


def select_path_slots(slot_key, valid, path, key, u):
    slots, hit = _select_path_slots(slot_key, valid, path, np.int64(key), u)
    return slots, int(hit)


@njit(cache=True)
def read_phase_slots(slot_key, valid, buckets, Z, u):
    width = slot_key.shape[1]
    out = np.full((buckets.shape[0], Z), -1, dtype=np.int64)
    cand = np.empty(width, dtype=np.int64)
    for r in range(buckets.shape[0]):
        b = buckets[r]
        k = 0
        for s in range(width):
            if valid[b, s] and slot_key[b, s] >= 0:
                out[r, k] = s
                k += 1
        n = 0
        for s in range(width):
            if valid[b, s] and slot_key[b, s] == -1:
                cand[n] = s
                n += 1
        need = min(Z - k, n)
        for i in range(need):
            j = i + np.int64(u[r, i] * (n - i))
            tmp = cand[i]
            cand[i] = cand[j]
            cand[j] = tmp
        for i in range(need):
            out[r, k + i] = cand[i]
    return out


@njit(cache=True)
def _bit_length(x):
    n = 0
    while x > 0:
        x >>= 1
        n += 1
    return n


@njit(cache=True)
def common_depth(leaves, target, L):
    out = np.empty(leaves.shape[0], dtype=np.int64)
    for i in range(leaves.shape[0]):
        out[i] = L - _bit_length(leaves[i] ^ target)
    return out


@njit(cache=True)
def evict_assign(leaves, target, L, Z):
    n = leaves.shape[0]
    depth = common_depth(leaves, target, L)
    level = np.full(n, -1, dtype=np.int64)
    for lv in range(L, -1, -1):
        free = Z
        for i in range(n):
            if free == 0:
                break
            if level[i] < 0 and depth[i] >= lv:
                level[i] = lv
                free -= 1
    return level


@njit(cache=True)
def _bucket_fill(leaves, bucket, L, Z):
    lv = _bit_length(bucket + 1) - 1
    j = bucket + 1 - (1 << lv)
    out = np.empty(min(Z, leaves.shape[0]), dtype=np.int64)
    k = 0
    for i in range(leaves.shape[0]):
        if k == out.shape[0]:
            break
        if (leaves[i] >> (L - lv)) == j:
            out[k] = i
            k += 1
    return out[:k]


def bucket_fill(leaves, bucket, L, Z):
    return _bucket_fill(leaves.astype(np.int64), np.int64(bucket), L, Z)


@njit(cache=True)
def evict_counts(count, L):
    nb = (1 << (L + 1)) - 1
    out = np.zeros(nb, dtype=np.int64)
    for b in range(nb):
        lv = _bit_length(b + 1) - 1
        r = _bit_reverse(b + 1 - (1 << lv), lv)
        if count > r:
            out[b] = (count - 1 - r) // (1 << lv) + 1
    return out


@njit(cache=True)
def _slot_reuse_scan(buckets, slots, is_write, n_buckets, n_slots):
    seen = np.zeros((n_buckets, n_slots), dtype=np.bool_)
    out = np.empty(buckets.shape[0], dtype=np.int64)
    k = 0
    for i in range(buckets.shape[0]):
        b = buckets[i]
        if is_write[i]:
            seen[b, :] = False
        else:
            s = slots[i]
            if seen[b, s]:
                out[k] = i
                k += 1
            seen[b, s] = True
    return out[:k]


def slot_reuse_scan(buckets, slots, is_write, n_buckets, n_slots):
    return _slot_reuse_scan(
        np.asarray(buckets, dtype=np.int64), np.asarray(slots, dtype=np.int64),
        np.asarray(is_write, dtype=np.bool_), n_buckets, n_slots,
    )
