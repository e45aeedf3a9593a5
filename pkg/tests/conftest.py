import ipaddress

import pytest

from fcbgp.trust_base import TrustBase


def net(text):
    return ipaddress.ip_network(text)


P = net("10.0.0.0/24")
P2 = net("10.0.1.0/24")
A, B, C, D = 65001, 65002, 65003, 65004


def make_trust(spec, seed=0):
    """``spec`` maps asn -> (prefixes, deployed). Returns (frozen trust, keys)."""
    trust = TrustBase()
    keys = {}
    for asn, (prefixes, deployed) in spec.items():
        keys[asn] = trust.register_generated(asn, prefixes, deployed=deployed, seed=seed)
    return trust.freeze(), keys


@pytest.fixture(scope="session")
def abcd():
    return make_trust({A: ([P], True), B: ([P2], True), C: ([], True), D: ([], True)})


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
