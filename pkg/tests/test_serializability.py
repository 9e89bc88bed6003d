from __future__ import annotations

from oblivkv.serializability import HistoryTxn, check, final_state, serialization_graph


def test_empty_history():
    v = check([])
    assert v.serializable and v.replay_ok and v.cycle == []


def test_write_skew_cycle_is_found():
    # both read x and y from the initial state, then each writes one of them
    t1 = HistoryTxn(1, ((0, 0), (1, 0)), ((0, b"a"),))
    t2 = HistoryTxn(2, ((0, 0), (1, 0)), ((1, b"b"),))
    v = check([t1, t2])
    assert not v.serializable
    kinds = {k for _, _, k in v.cycle}
    assert kinds == {"rw"}
    assert {a for a, _, _ in v.cycle} == {1, 2}
    assert not v.replay_ok


def test_serial_history_ok():
    t1 = HistoryTxn(1, (), ((0, b"a"),))
    t2 = HistoryTxn(2, ((0, 1),), ((0, b"b"),))
    t3 = HistoryTxn(3, ((0, 2),), ())
    assert check([t3, t1, t2])
    g = serialization_graph([t1, t2, t3])
    assert g.edges[1, 2]["kind"] in ("ww", "wr")
    assert final_state([t1, t2, t3]) == {0: (b"b", 2)}


def test_stale_read_breaks_replay():
    t1 = HistoryTxn(1, (), ((0, b"a"),))
    t2 = HistoryTxn(2, ((0, 0),), ())
    v = check([t1, t2])
    assert not v.replay_ok
