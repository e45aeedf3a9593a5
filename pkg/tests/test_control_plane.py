import random
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from conftest import P, make_trust
from fcbgp.control_plane import BgpSpeaker, PathClass, Rel, RibEntry, classify_path, \
    expected_pathlets, select_route
from fcbgp.fc_core import Pathlet, sign_fc
from fcbgp.wire_codec import BgpUpdate, decode_update, encode_update

A, B, C, K, D, E = 1, 2, 3, 4, 5, 6


def chain_fcs(keys, path, receiver, signers=None):
    out = []
    for prev, cur, nxt in expected_pathlets(path, receiver):
        if signers is None or cur in signers:
            out.append(sign_fc(cur, Pathlet(prev, cur, nxt, P), keys[cur]))
    return out


@pytest.fixture(scope="module")
def fig():
    return make_trust({A: ([P], True), B: ([], True), C: ([], True), K: ([], False),
                       D: ([], True), E: ([], False)})


def test_partially_trusted_behind_legacy(fig):
    trust, keys = fig
    path = [A, B, C, K]
    fcs = chain_fcs(keys, path, D, signers={A, B, C})
    assert classify_path(path, fcs, P, D, trust) == PathClass.PARTIALLY_TRUSTED


def test_missing_origin_fc_is_suspicious(fig):
    trust, keys = fig
    assert classify_path([A, E], [], P, D, trust) == PathClass.SUSPICIOUS


def test_all_legacy_is_legacy():
    trust, _ = make_trust({10: ([P], False), 11: ([], False)})
    assert classify_path([10, 11], [], P, D, trust) == PathClass.LEGACY


def test_fully_covered_is_trusted(fig):
    trust, keys = fig
    path = [A, B, C]
    assert classify_path(path, chain_fcs(keys, path, D), P, D, trust) == PathClass.TRUSTED


def test_wrong_origin_is_suspicious(fig):
    trust, keys = fig
    path = [B, C]
    fcs = chain_fcs(keys, path, D)
    assert classify_path(path, fcs, P, D, trust) == PathClass.SUSPICIOUS


def test_bad_or_foreign_fc_is_suspicious(fig):
    trust, keys = fig
    path = [A, B, C]
    fcs = chain_fcs(keys, path, D)
    forged = [fcs[0], fcs[1], sign_fc(C, Pathlet(B, C, E, P), keys[C])]
    assert classify_path(path, forged, P, D, trust) == PathClass.SUSPICIOUS
    dup = fcs + [fcs[0]]
    assert classify_path(path, dup, P, D, trust) == PathClass.SUSPICIOUS


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2))
def test_removing_a_fc_never_exceeds_partial(fig, drop):
    trust, keys = fig
    path = [A, B, C]
    fcs = chain_fcs(keys, path, D)
    assert classify_path(path, fcs, P, D, trust) == PathClass.TRUSTED
    fewer = fcs[:drop] + fcs[drop + 1:]
    assert classify_path(path, fewer, P, D, trust) <= PathClass.PARTIALLY_TRUSTED


def entry(cls, length, via):
    return RibEntry(P, tuple(range(100, 100 + length)), (), via, cls)


def test_select_route_examples():
    assert select_route([entry(PathClass.TRUSTED, 5, 9), entry(PathClass.LEGACY, 3, 9)]).as_path \
        == tuple(range(100, 105))
    assert len(select_route([entry(PathClass.TRUSTED, 3, 9), entry(PathClass.TRUSTED, 5, 9)])
               .as_path) == 3
    cands = [entry(PathClass.TRUSTED, 3, 20), entry(PathClass.TRUSTED, 3, 10)]
    for _ in range(10):
        random.shuffle(cands)
        assert select_route(cands).received_from == 10
    with pytest.raises(ValueError):
        select_route([])


def build(trust, keys, links):
    sp = {a: BgpSpeaker(a, trust, keys[a]) for a in keys}
    for x, y in links:
        sp[x].neighbors[y] = Rel.PEER
        sp[y].neighbors[x] = Rel.PEER
    return sp


def pump(speakers, initial):
    """Deliver exports in FIFO order through the wire codec until quiet."""
    q = deque(initial)
    while q:
        frm, exp = q.popleft()
        upd = decode_update(encode_update(exp.update))
        for out in speakers[exp.neighbor].receive(upd, frm):
            q.append((exp.neighbor, out))


def start(speakers, asn):
    return [(asn, e) for e in speakers[asn].originate(P)]


def test_export_appends_own_fc(fig):
    trust, keys = fig
    sp = build(trust, keys, [(A, B), (B, C), (C, D)])
    first = sp[A].originate(P)
    assert [e.update.fcs[0].hops for e in first] == [(0, A, B)]
    pump(sp, [(A, e) for e in first])
    best_c = sp[C].best(P)
    upd = sp[C].export_route(best_c, D)
    assert upd.as_path == (A, B, C)
    assert upd.fcs[-1].hops == (B, C, D)
    hits = sp[C].fc_cache.hits
    assert sp[C].export_route(best_c, D).fcs[-1] == upd.fcs[-1]
    assert sp[C].fc_cache.hits == hits + 1
    assert sp[D].best(P).classification == PathClass.TRUSTED


def test_four_as_line_is_trusted_everywhere(fig):
    trust, keys = fig
    sp = build(trust, {a: keys[a] for a in (A, B, C, D)}, [(A, B), (B, C), (C, D)])
    pump(sp, start(sp, A))
    for a, want in [(B, (A,)), (C, (A, B)), (D, (A, B, C))]:
        assert sp[a].best(P).as_path == want
        assert sp[a].best(P).classification == PathClass.TRUSTED


def test_withdraw_only_route_propagates(fig):
    trust, keys = fig
    sp = build(trust, {a: keys[a] for a in (A, B, C)}, [(A, B), (B, C)])
    pump(sp, start(sp, A))
    out = sp[B].process_withdraw(P, A)
    assert [(e.neighbor, e.update.kind.name) for e in out] == [(C, "WITHDRAW")]
    assert sp[B].best(P) is None
    assert sp[B].process_withdraw(P, A) == []


def test_withdraw_best_exports_runner_up(fig):
    trust, keys = fig
    # diamond: A-B-D and A-C-E(legacy)-D
    sp = build(trust, keys, [(A, B), (B, D), (A, C), (C, E), (E, D), (D, K)])
    pump(sp, start(sp, A))
    assert sp[D].best(P).as_path == (A, B)
    out = sp[D].process_withdraw(P, B)
    assert sp[D].best(P).as_path == (A, C, E)
    to_k = [e.update for e in out if e.neighbor == K]
    assert to_k and to_k[0].as_path == (A, C, E, D)
    assert to_k[0].fcs[-1].hops == (E, D, K)


def test_suspicious_arrival_does_not_reexport(fig):
    trust, keys = fig
    sp = build(trust, keys, [(A, B), (B, D), (E, D), (D, C)])
    pump(sp, start(sp, A))
    fake = BgpUpdate.announce(P, [A, E])
    entry_, out = sp[D].process_update(fake, E)
    assert entry_.classification == PathClass.SUSPICIOUS
    assert out == []


def test_loop_and_first_hop_drop(fig):
    trust, keys = fig
    sp = build(trust, keys, [(A, B), (B, C)])
    assert sp[B].process_update(BgpUpdate.announce(P, [A, B, C]), C) == (None, [])
    assert sp[B].process_update(BgpUpdate.announce(P, [A]), C) == (None, [])
    assert [e["reason"] for e in sp[B].events if e["action"] == "drop"] == ["loop", "first-hop-mismatch"]


def test_new_peer_gets_full_table(fig):
    trust, keys = fig
    sp = build(trust, keys, [(A, B)])
    pump(sp, start(sp, A))
    out = sp[B].add_neighbor(C)
    assert len(out) == 1 and out[0].neighbor == C
    assert [f.hops for f in out[0].update.fcs] == [(0, A, B), (A, B, C)]


def test_minimal_revalidation_reuses_downstream_fcs():
    ids = dict(A=1, B=2, C=3, D=4, E=5, F=6)
    trust, keys = make_trust({v: ([P] if k == "A" else [], True) for k, v in ids.items()})
    sp = build(trust, keys, [(1, 2), (2, 3), (1, 6), (6, 3), (3, 4), (4, 5)])
    sp[3].neighbors.pop(6)
    sp[6].neighbors.pop(3)
    pump(sp, start(sp, 1))
    before = {a: sp[a].fc_cache.signed for a in (3, 4)}
    assert sp[5].best(P).as_path == (1, 2, 3, 4)
    fc_cd = sp[4].best(P).fcs[-1]
    pump(sp, [(3, e) for e in sp[3].remove_neighbor(2)])
    pump(sp, [(3, e) for e in sp[3].add_neighbor(6)] + [(6, e) for e in sp[6].add_neighbor(3)])
    assert sp[5].best(P).as_path == (1, 6, 3, 4)
    assert sp[5].best(P).classification == PathClass.TRUSTED
    # D's hop (C, D, E) is unchanged so D signs nothing new
    assert sp[4].fc_cache.signed == before[4]
    assert sp[3].fc_cache.signed == before[3] + 1
    assert fc_cd.hops == (2, 3, 4)


def test_determinism(fig):
    def run():
        trust, keys = fig
        sp = build(trust, keys, [(A, B), (B, C), (C, K), (K, D), (E, D)])
        pump(sp, start(sp, A))
        return [sp[a].dump_events() for a in sorted(sp)]
    assert run() == run()


def test_legacy_speaker_passes_attribute(fig):
    trust, keys = fig
    sp = build(trust, keys, [(A, B), (B, C), (C, K), (K, D)])
    pump(sp, start(sp, A))
    from_c = sp[C].export_route(sp[C].best(P), K)
    from_k = sp[K].export_route(sp[K].best(P), D)
    assert from_k.fc_attr.encode() == from_c.fc_attr.encode()
    assert sp[D].best(P).classification == PathClass.PARTIALLY_TRUSTED
