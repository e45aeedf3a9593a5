import itertools

import pytest
from hypothesis import given, settings, strategies as st

from fcbgp.binding import encode_binding
from fcbgp.sync import (
    VIEW_TAGS,
    BindingVersionView,
    RbcInstance,
    SyncAction,
    SyncConfig,
    SyncRecord,
    Tag,
    build_network,
    decode_ranges,
    decode_supply,
    decode_sync_record,
    encode_ranges,
    encode_supply,
    encode_sync_record,
    leader_for_round,
    max_faults,
    rbc_broadcast,
    reconcile,
    region_sync,
)
from fcbgp.wire_codec import MalformedMessageError

A = 7


def test_leader_examples_and_cycle():
    m = [10, 20, 30]
    assert leader_for_round(0, m) == 10
    assert leader_for_round(4, m) == 20
    members = list(range(100, 107))
    assert sorted(leader_for_round(v, members) for v in range(5, 12)) == members
    with pytest.raises(ValueError):
        leader_for_round(0, [])


def test_reconcile_cases():
    L, me = 99, 1
    assert reconcile(BindingVersionView({A: 3}), BindingVersionView({A: 5}), me, L) == \
        [SyncAction("request-missing", A, 4, 5, L)]
    assert reconcile(BindingVersionView({A: 3}), BindingVersionView({A: 3}), me, L) == []
    assert reconcile(BindingVersionView({A: 7}), BindingVersionView({A: 5}), me, L) == \
        [SyncAction("send-newer", A, 7, 7, L)]
    assert reconcile(BindingVersionView(), BindingVersionView({A: 2}), me, L)[0].lo == 1


def test_view_semantics_and_codec():
    v = BindingVersionView({1: 3})
    v.raise_to(1, 2)
    v.raise_to(2, 5)
    assert v.entries == {1: 3, 2: 5}
    assert BindingVersionView({1: 0}) == BindingVersionView()
    assert BindingVersionView.decode(v.encode()) == v
    assert len(v.encode()) == 4 + 8 * 2
    dup = bytes.fromhex("00000002" "00000001" "00000001" "00000001" "00000002")
    with pytest.raises(MalformedMessageError):
        BindingVersionView.decode(dup)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(list(Tag)), st.integers(0, 2**32 - 1), st.integers(1, 2**32 - 1),
       st.integers(1, 2**32 - 1), st.binary(max_size=64))
def test_sync_record_roundtrip(tag, rnd, leader, sender, payload):
    rec = SyncRecord(tag, rnd, leader, sender, payload)
    data = encode_sync_record(rec)
    assert decode_sync_record(data) == rec
    with pytest.raises(MalformedMessageError):
        decode_sync_record(data[:-1] if payload else data + b"\x00")


def test_ranges_and_supply_codecs():
    assert decode_ranges(encode_ranges([(1, 2, 3), (4, 5, 6)])) == [(1, 2, 3), (4, 5, 6)]
    net = build_network([[1, 2, 3, 4]])
    msgs = [net.issue(1, 2), net.issue(1, 3)]
    assert decode_supply(encode_supply(msgs)) == msgs


def test_thresholds():
    assert [max_faults(n) for n in (1, 3, 4, 6, 7, 10)] == [0, 0, 1, 1, 2, 3]
    inst = RbcInstance(0, 1, [1, 2, 3, 4])
    assert (inst.f, inst.echo_quorum) == (1, 3)
    inst7 = RbcInstance(0, 1, range(1, 8))
    assert (inst7.f, inst7.echo_quorum) == (2, 5)


def test_rbc_honest_leader_all_deliver():
    members = [1, 2, 3, 4]
    for seed in range(20):
        got = rbc_broadcast(1, b"view", members, seed=seed)
        assert got == {m: b"view" for m in members}


def test_rbc_silent_leader_nobody_delivers():
    got = rbc_broadcast(1, b"view", [1, 2, 3, 4], byzantine={1: "silent"})
    assert set(got.values()) == {None}


def test_rbc_equivocation_agreement_exhaustive():
    members = [1, 2, 3, 4]
    correct = [2, 3, 4]
    for r in range(len(correct) + 1):
        for alt in itertools.combinations(correct, r):
            for seed in range(60):
                got = rbc_broadcast(1, b"P", members, byzantine={1: "equivocate"},
                                    alt_payload=b"Q", alt_receivers=alt, seed=seed)
                delivered = {p for p in got.values() if p is not None}
                assert len(delivered) <= 1, (alt, seed, got)


def test_rbc_byzantine_member_cannot_split_honest_leader():
    members = list(range(1, 8))
    for seed in range(30):
        got = rbc_broadcast(1, b"P", members, byzantine={6: "equivocate", 7: "silent"}, seed=seed)
        assert set(got.values()) == {b"P"}


def test_two_regions_no_faults_converge_to_union_max():
    cfg = SyncConfig(period=40, seed=3)
    net, res = region_sync([[1, 2, 3, 4], [5, 6, 7, 8]], issues_per_node=5, max_rounds=2,
                           config=cfg)
    assert res.converged and res.rounds_after_issue <= 2
    want = {a: 5 for a in range(1, 9)}
    for node in net.nodes.values():
        assert node.view.entries == want


def test_single_region_converges():
    net, res = region_sync([[1, 2, 3, 4]], issues_per_node=3, max_rounds=2,
                           config=SyncConfig(loss_rate=0.5, seed=1))
    assert res.converged


def test_silent_leader_recovered_by_next_leader():
    # the period leaves room for one repair exchange plus the leader's forward
    cfg = SyncConfig(period=60, check_window=25, loss_rate=0.6, seed=5)
    net = build_network([[1, 2, 3, 4]], cfg, byzantine={1: "silent"})
    net.schedule_issues(4, 10)
    net.start(first_at=20)
    net.run_until(20 + 59)
    delivered = [r for r in net.trace if r["event"] == "rbc-deliver"]
    assert delivered == []
    assert net.run_rounds(1) == 1
    assert net.consistent()


def test_relay_corner_case():
    net = build_network([[1, 2, 3, 4]], SyncConfig(period=40, seed=2),
                        unreachable=[(1, 4)])
    for _ in range(3):
        net.issue(1, 2)
    net.start(first_at=10)
    net.run_until(10 + 39)  # round 0, leader 1
    assert net.nodes[4].view.get(1) == 0
    assert net.nodes[2].view.get(1) == 3
    net.run_until(10 + 79)  # round 1, leader 2 relays
    assert net.nodes[4].view.get(1) == 3
    assert net.consistent()


def test_region_cut_with_relay_converges_later():
    r1, r2 = [1, 2, 3, 4], [5, 6, 7, 8]
    cut = [(a, b) for a in r1 for b in r2 if (a, b) != (4, 5)]
    cfg = SyncConfig(period=40, seed=4)
    net, res = region_sync([r1, r2], issues_per_node=3, max_rounds=12, config=cfg,
                           unreachable=cut)
    assert res.converged
    assert res.rounds_after_issue > 1
    free, res_free = region_sync([r1, r2], issues_per_node=3, max_rounds=12, config=cfg)
    assert res_free.rounds_after_issue < res.rounds_after_issue


def test_installation_does_not_wait_for_rbc():
    # leader of round 0 is silent, so no broadcast can complete before round 1
    net = build_network([[1, 2, 3, 4]], SyncConfig(period=40, seed=1), byzantine={1: "silent"})
    net.start(first_at=0)
    net.run_until(5)
    net.issue(2, 3)
    net.run_until(20)
    installs = [r for r in net.trace if r["event"] == "install"]
    assert {r["as"] for r in installs} == {1, 3, 4} - {1}
    assert all(r["result"] == "installed" for r in installs)
    assert not [r for r in net.trace if r["event"] == "rbc-deliver"]
    assert net.nodes[3].engine.rules.get(net.prefixes[2], net.prefixes[3]) is not None


def test_check_payloads_carry_views_only():
    seen = []
    net = build_network([[1, 2, 3, 4], [5, 6, 7]], SyncConfig(period=40, loss_rate=0.4, seed=8),
                        on_send=lambda s, d, rec: seen.append(rec))
    bodies = []
    for a in (1, 5, 6):
        bodies += [encode_binding(net.issue(a, 2)) for _ in range(2)]
    net.start(first_at=10)
    net.run_rounds(3)
    view_recs = [r for r in seen if r.tag in VIEW_TAGS]
    assert view_recs
    for rec in view_recs:
        view = BindingVersionView.decode(rec.payload)
        assert len(rec.payload) == 4 + 8 * len(view.entries)
        assert len(view.entries) <= len(net.members)
        for body in bodies:
            assert body[-64:] not in rec.payload
    assert any(r.tag == Tag.SUPPLY for r in seen)
