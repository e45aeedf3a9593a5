"""Builders shared by the simulator and acceptance tests."""

import random

from fcbgp.simnet import AdversaryScript, Simulation, Topology


def random_topology(rng: random.Random, n: int, *, deployed: bool = True,
                    extra_links: int | None = None) -> Topology:
    """Connected random graph on ASNs 1..n; every AS owns one /24."""
    topo = Topology()
    for a in range(1, n + 1):
        topo.add_as(a, [f"10.2.{a}.0/24"], deployed=deployed)
    order = list(range(1, n + 1))
    rng.shuffle(order)
    for i in range(1, n):
        topo.add_link(order[i], order[rng.randrange(i)])
    extra = rng.randint(0, n) if extra_links is None else extra_links
    for _ in range(extra):
        a, b = rng.sample(range(1, n + 1), 2)
        if b not in topo.links[a]:
            topo.add_link(a, b)
    return topo


def converged_with_adversaries(topo: Topology, adversaries, seed: int = 0) -> Simulation:
    sim = Simulation(topo, key_seed=seed)
    for a in adversaries:
        sim.add_adversary(AdversaryScript(a))
    for a in sorted(topo.ases):
        sim.originate(a, topo.ases[a].prefixes[0])
    sim.run_until_quiescent()
    return sim
