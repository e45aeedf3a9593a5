import random
from fractions import Fraction

import pytest

from conftest import net
from fcbgp.analysis import filtering_counts
from fcbgp.control_plane import PathClass
from fcbgp.events import BudgetExhausted, EventLoop
from fcbgp.simnet import (
    AdversaryScript,
    FakePath,
    ObservedFcPool,
    ScenarioError,
    Simulation,
    Topology,
    build_simulation,
    bundled_scenario,
    check_expectations,
    hijack_attempt,
    hijack_predicate,
    inject_unwanted_traffic,
    line_topology,
    linear_instance,
    load_scenario,
    parse_scenario,
    splice_attack_search,
)
from helpers import converged_with_adversaries, random_topology


def test_event_loop_orders_by_time_then_enqueue():
    loop = EventLoop()
    seen = []
    for delay, tag in [(3, "c"), (1, "a"), (3, "d"), (1, "b")]:
        loop.schedule(delay, 0, tag)
    loop.run(lambda ev: seen.append(ev.kind))
    assert seen == ["a", "b", "c", "d"]
    with pytest.raises(ValueError):
        loop.schedule(-1, 0, "x")


def test_budget_exhausted_reports_residual():
    sim = Simulation(line_topology([1, 2, 3], deployed=[1, 2, 3]))
    sim.originate(1, sim.topo.ases[1].prefixes[0], at=50)
    with pytest.raises(BudgetExhausted) as exc:
        sim.run_until_quiescent(budget=10)
    assert exc.value.residual == 1


def test_four_as_line_trusted_shortest():
    sim = Simulation(line_topology([1, 2, 3, 4], deployed=[1, 2, 3, 4]))
    p = sim.topo.ases[1].prefixes[0]
    sim.originate(1, p)
    trace = sim.run_until_quiescent()
    for a, path in [(2, (1,)), (3, (1, 2)), (4, (1, 2, 3))]:
        assert sim.speakers[a].best(p).as_path == path
        assert sim.best_class(a, p) == PathClass.TRUSTED
    assert trace.where(action="classify", **{"class": "Trusted"})


def run_bundled(name, seed=0):
    sc = load_scenario(bundled_scenario(name))
    sc.seed = seed
    sim = build_simulation(sc)
    return sc, sim, sim.run_until_quiescent()


def test_partial_deployment_scenario():
    sc, sim, trace = run_bundled("partial_deployment")
    p = net("10.0.0.0/24")
    assert sim.speakers[5].best(p).classification == PathClass.PARTIALLY_TRUSTED
    fake = [r for r in trace.where(action="classify") if r["as"] == 5 and r["path"] == [1, 6]]
    assert fake and fake[0]["class"] == "Suspicious"
    assert check_expectations(sim, sc) == []


def test_regional_sync_scenario():
    sc, sim, trace = run_bundled("regional_sync")
    assert check_expectations(sim, sc) == []
    assert trace.where(event="rbc-deliver")
    assert sim.sync.consistent()


def test_determinism():
    digests = {run_bundled("regional_sync", seed=4)[2].digest() for _ in range(3)}
    assert len(digests) == 1


def test_fake_without_origin_fc_is_suspicious():
    topo = line_topology([1, 2, 3], deployed=[1, 2, 3])
    topo.add_as(9)
    topo.add_link(9, 3)
    sim = Simulation(topo)
    p = topo.ases[1].prefixes[0]
    sim.add_adversary(AdversaryScript(9, [FakePath(p, (1,), at=10)]))
    sim.originate(1, p)
    trace = sim.run_until_quiescent()
    rec = [r for r in trace.where(action="classify") if r["as"] == 3 and r["path"] == [1, 9]]
    assert rec and rec[0]["class"] == "Suspicious"
    assert sim.speakers[3].best(p).as_path == (1, 2)


def test_forwarding_consistency_and_reentry():
    topo = line_topology([1, 2, 3, 4, 5], deployed=[1, 2, 3, 4, 5])
    topo.add_as(6)  # legacy detour AS
    topo.add_link(5, 6)
    topo.add_link(6, 3)
    sim = Simulation(topo)
    dst, src = topo.ases[1].prefixes[0], topo.ases[5].prefixes[0]
    sim.originate(1, dst)
    sim.run_until_quiescent()
    assert sim.speakers[5].best(dst).as_path == (1, 2, 3, 4)
    sim.issue_binding(5, dst)
    sim.run_until_quiescent()
    ok = sim.walk_packet(src, dst, 5)
    assert ok.delivered and ok.hops == (5, 4, 3, 2, 1)
    detour = sim.walk_packet(src, dst, 5, path=(6, 3))
    assert (detour.delivered, detour.stopped_at, detour.reason) == (False, 3, "wrong-inbound")


def test_splice_search_small_topologies():
    rng = random.Random(11)
    for _ in range(3):
        topo = random_topology(rng, rng.randint(5, 6))
        adv = rng.choice(sorted(topo.ases))
        sim = converged_with_adversaries(topo, [adv])
        for a in sorted(topo.ases):
            p = topo.ases[a].prefixes[0]
            found = splice_attack_search(sim, adv, sim.pools[adv], p, max_len=5)
            assert all(f.genuine for f in found)
            if a == adv:
                assert any(f.claimed_path == () for f in found)


def test_empty_pool_only_self_origin():
    rng = random.Random(2)
    topo = random_topology(rng, 5)
    sim = converged_with_adversaries(topo, [3])
    empty = ObservedFcPool(3)
    for a in sorted(topo.ases):
        found = splice_attack_search(sim, 3, empty, topo.ases[a].prefixes[0], max_len=5)
        if a == 3:
            assert {f.claimed_path for f in found} == {()}
        else:
            assert found == []


def test_two_non_colluding_adversaries():
    rng = random.Random(5)
    topo = random_topology(rng, 6)
    sim = converged_with_adversaries(topo, [2, 5])
    assert sim.pools[2] is not sim.pools[5]
    for adv in (2, 5):
        for a in sorted(topo.ases):
            found = splice_attack_search(sim, adv, sim.pools[adv], topo.ases[a].prefixes[0],
                                         max_len=5)
            assert all(f.genuine for f in found)


@pytest.mark.parametrize("k, l, want", [(2, 2, True), (3, 1, True), (3, 2, False),
                                        (4, 1, False), (4, 3, False)])
def test_hijack_examples(k, l, want):
    assert hijack_attempt(6, k, l) is want


def test_hijack_matches_predicate_up_to_eight():
    for n in range(3, 9):
        for k in range(1, n + 1):
            for l in range(1, n):
                assert hijack_attempt(n, k, l) == hijack_predicate(n, k, l), (n, k, l)


def test_exhaustive_attachment_never_beats_best_option():
    for k in (1, 2, 3):
        for l in (1, 2):
            assert hijack_attempt(6, k, l, exhaustive=True) == hijack_attempt(6, k, l)


def labels_by_type(res):
    return {u.label: u.delivered for u in res.units}


def test_unwanted_all_deployed_only_type_iii_survives():
    sim, path = linear_instance([2, 3, 4, 2], [True] * 4)
    res = inject_unwanted_traffic(sim, path)
    for label, delivered in labels_by_type(res).items():
        assert delivered == label.startswith("III"), label


def test_unwanted_none_deployed_all_survive():
    sim, path = linear_instance([2, 3, 4, 2], [False] * 4)
    res = inject_unwanted_traffic(sim, path)
    assert res.filtered == 0 and res.total == 2 + 1 + 2 + 3 + 1


def test_unwanted_mixed_matches_closed_form():
    degrees, deployed = [3, 2, 4, 3], [True, False, True, False]
    sim, path = linear_instance(degrees, deployed)
    res = inject_unwanted_traffic(sim, path)
    y, m = filtering_counts(degrees, deployed)
    assert (res.filtered, res.total) == (y, m)
    assert Fraction(res.filtered, res.total) == Fraction(y, m)


def test_taxonomy_per_position():
    degrees = [3, 4, 3]
    sim, path = linear_instance(degrees, [True] * 3)
    res = inject_unwanted_traffic(sim, path)
    by = labels_by_type(res)
    # A_0 passes only entry via A_1, interior passes only entry via A_{k+1}, A_n only itself
    assert [k for k, v in by.items() if v] == ["III@0<-2", "III@1<-3", "III@2<-self"]


def test_scenario_errors():
    with pytest.raises(ScenarioError):
        parse_scenario({"ases": [{"asn": 1}], "links": [[1, 2]]})
    with pytest.raises(ScenarioError):
        parse_scenario({"ases": [{"prefixes": []}]})
    with pytest.raises(ScenarioError):
        parse_scenario({"ases": [{"asn": 1, "prefixes": ["10.0.0.1/24"]}]})
    with pytest.raises(ScenarioError):
        bundled_scenario("does-not-exist")
    topo = Topology()
    topo.add_as(1)
    with pytest.raises(ScenarioError):
        topo.add_link(1, 1)
