import pytest
from hypothesis import given, settings, strategies as st

from conftest import A, B, C, P, make_trust, net
from fcbgp.trust_base import (
    TrustBase,
    TrustError,
    TrustFileError,
    UnknownASError,
    check_asn,
    derive_key,
    dump_trust_lines,
    parse_prefix,
    parse_trust_lines,
)


def test_lookup_owner_examples():
    trust, _ = make_trust({A: ([P], True), 65010: ([net("10.9.0.0/16"), net("10.8.0.0/16")], False)})
    assert trust.lookup_owner(P) == A
    assert trust.lookup_owner(net("192.0.2.0/24")) is None
    assert trust.lookup_owner(net("10.9.0.0/16")) == 65010
    assert trust.lookup_owner(net("10.8.0.0/16")) == 65010


def test_ownership_is_a_partition():
    t = TrustBase()
    t.register_generated(A, [P], deployed=True)
    with pytest.raises(TrustError):
        t.register_generated(B, [P], deployed=True)


def test_deployed_needs_key_and_frozen_rejects_writes():
    t = TrustBase()
    with pytest.raises(TrustError):
        t.register(A, [P], deployed=True, public_key=None)
    t.register(B, [], deployed=False)
    t.freeze()
    with pytest.raises(TrustError):
        t.register_generated(C, [], deployed=True)


def test_is_deployed():
    trust, _ = make_trust({A: ([], True), B: ([], False)})
    assert trust.is_deployed(A)
    assert not trust.is_deployed(B)
    assert not trust.is_deployed(4242)


def test_verify_key_roundtrip_and_mismatch():
    trust, keys = make_trust({A: ([], True), B: ([], True)})
    digest = bytes(range(32))
    sig = keys[A].sign(digest)
    assert trust.verify_key(A, sig, digest)
    assert not trust.verify_key(B, sig, digest)
    with pytest.raises(UnknownASError):
        trust.verify_key(4242, sig, digest)


def test_every_flipped_digest_bit_fails():
    trust, keys = make_trust({A: ([], True)})
    digest = bytes(range(32))
    sig = keys[A].sign(digest)
    for i in range(len(digest) * 8):
        flipped = bytearray(digest)
        flipped[i // 8] ^= 1 << (i % 8)
        assert not trust.verify_key(A, sig, bytes(flipped))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 2**32 - 1), st.integers(1, 2**32 - 1), st.binary(min_size=1, max_size=64))
def test_cross_key_verification_never_succeeds(a, b, msg):
    if a == b:
        return
    ka, pa = derive_key(a, 3)
    _, pb = derive_key(b, 3)
    t = TrustBase()
    t.register(a, [], deployed=True, public_key=pa)
    t.register(b, [], deployed=True, public_key=pb)
    sig = ka.sign(msg)
    assert t.verify_key(a, sig, msg)
    assert not t.verify_key(b, sig, msg)


def test_derive_key_is_deterministic():
    assert derive_key(A, 5)[1] == derive_key(A, 5)[1]
    assert derive_key(A, 5)[1] != derive_key(A, 6)[1]


def test_asn_and_prefix_checks():
    with pytest.raises(ValueError):
        check_asn(0)
    assert check_asn(0, allow_null=True) == 0
    with pytest.raises(ValueError):
        check_asn(2**32)
    with pytest.raises(ValueError):
        parse_prefix("10.0.0.1/24")  # host bits set


def test_trust_file_parse_and_dump_roundtrip():
    text = """
    # comment line
    65001|10.0.0.0/24|1|auto
    65002|10.0.1.0/24,10.0.2.0/24|0|-
    65003||1|auto   # trailing comment
    """
    trust, keys = parse_trust_lines(text.splitlines(), seed=9)
    assert sorted(keys) == [65001, 65003]
    assert trust.lookup_owner(net("10.0.2.0/24")) == 65002
    assert trust.deployed_ases() == [65001, 65003]
    dumped = dump_trust_lines(trust)
    again, _ = parse_trust_lines(dumped)
    assert dump_trust_lines(again) == dumped


@pytest.mark.parametrize("line, lineno", [
    ("65001|10.0.0.0/24|1", 1),
    ("x|10.0.0.0/24|1|auto", 1),
    ("65001|10.0.0.0/24|yes|auto", 1),
    ("65001|10.0.0.0/24|1|-", 1),
    ("65001|10.0.0.0/24|1|zz", 1),
])
def test_trust_file_errors_carry_line_numbers(line, lineno):
    with pytest.raises(TrustFileError) as exc:
        parse_trust_lines([line])
    assert exc.value.lineno == lineno


def test_duplicate_prefix_in_file_reports_second_line():
    with pytest.raises(TrustFileError) as exc:
        parse_trust_lines(["1|10.0.0.0/24|0|-", "2|10.0.0.0/24|0|-"])
    assert exc.value.lineno == 2
