import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from quicknat.errors import ContractViolation, DuplicateRule, InvalidRule, RuleNotFound
from quicknat.packet import KEEP, ip_to_int
from quicknat.rules import (FROM_POOL, WILDCARD, NatRule, NatType, RuleBook, RuleTableSet,
                            linear_lookup, precedence_order, qns_lookup)

PUB = ip_to_int("203.0.113.7")
HOST = ip_to_int("192.168.88.32")


def snat(net, plen, port=WILDCARD, target=FROM_POOL):
    return NatRule(NatType.SNAT, ip_to_int(net), plen, port, PUB, target)


def table(*rules):
    t = RuleTableSet()
    for r in rules:
        t.insert(r)
    return t


def test_insert_goes_to_prefix_sub_table():
    t = table(snat("192.168.88.0", 24))
    assert t.flag(NatType.SNAT, 24)
    assert not t.flag(NatType.SNAT, 32) and not t.flag(NatType.DNAT, 24)
    assert len(t.sub_table(NatType.SNAT, 24)) == 1


def test_exact_port_rule_lands_in_32():
    r = snat("192.168.88.32", 32, 5000)
    t = table(r)
    assert t.flag(NatType.SNAT, 32)
    assert list(t.sub_table(NatType.SNAT, 32).values()) == [r]


def test_host_bits_normalized():
    r = snat("192.168.88.77", 24)
    assert r.match_ip == ip_to_int("192.168.88.0")


def test_duplicate_rule():
    t = table(snat("192.168.88.0", 24))
    with pytest.raises(DuplicateRule):
        t.insert(snat("192.168.88.5", 24, WILDCARD, 1234))


@pytest.mark.parametrize("plen", [0, 33, -1])
def test_invalid_prefix(plen):
    with pytest.raises(InvalidRule):
        snat("10.0.0.0", plen)


def test_pool_only_for_snat():
    with pytest.raises(InvalidRule):
        NatRule(NatType.DNAT, PUB, 32, 80, HOST, FROM_POOL)
    NatRule(NatType.DNAT, PUB, 32, 80, HOST, KEEP)


def test_port_zero_rejected_as_exact_match():
    with pytest.raises(InvalidRule):
        snat("10.0.0.0", 8, 0)


def test_delete_clears_flag():
    t = table(snat("192.168.88.0", 24))
    t.delete(NatType.SNAT, ip_to_int("192.168.88.0"), 24, WILDCARD)
    assert not t.flag(NatType.SNAT, 24)
    assert t.lookup(NatType.SNAT, HOST, 5000) is None


def test_delete_missing():
    with pytest.raises(RuleNotFound):
        RuleTableSet().delete(NatType.SNAT, HOST, 32, 5000)


def test_delete_one_of_two_keeps_flag():
    t = table(snat("192.168.88.0", 24), snat("10.1.2.0", 24))
    t.delete(NatType.SNAT, ip_to_int("10.1.2.0"), 24)
    assert t.flag(NatType.SNAT, 24)


def test_lan_wildcard_24():
    r = snat("192.168.88.0", 24)
    assert qns_lookup(table(r), NatType.SNAT, HOST, 5000) is r


def test_empty_tables():
    assert qns_lookup(RuleTableSet(), NatType.SNAT, HOST, 5000) is None
    assert linear_lookup([], NatType.SNAT, HOST, 5000) is None


def test_longer_prefix_is_preciser():
    r32 = snat("192.168.88.32", 32, 5000, 40000)
    r24 = snat("192.168.88.0", 24)
    t = table(r24, r32)
    assert qns_lookup(t, NatType.SNAT, HOST, 5000) is r32
    assert qns_lookup(t, NatType.SNAT, HOST, 5001) is r24


def test_prefix_dominates_port_specificity():
    exact24 = snat("192.168.88.0", 24, 5000, 40000)
    wild32 = snat("192.168.88.32", 32)
    assert qns_lookup(table(exact24, wild32), NatType.SNAT, HOST, 5000) is wild32


def test_exact_before_wildcard_within_prefix():
    wild = snat("192.168.88.0", 24)
    exact = snat("192.168.88.0", 24, 5000, 40000)
    assert qns_lookup(table(wild, exact), NatType.SNAT, HOST, 5000) is exact


def test_nat_types_are_separate():
    t = table(snat("192.168.88.0", 24))
    assert qns_lookup(t, NatType.DNAT, HOST, 5000) is None


def test_linear_matches_qns_when_sorted():
    r24 = snat("192.168.88.0", 24)
    r16 = snat("192.168.0.0", 16)
    rules = precedence_order([r16, r24])
    assert linear_lookup(rules, NatType.SNAT, HOST, 5000) is r24


def test_linear_first_match_in_insertion_order():
    r16 = snat("192.168.0.0", 16)
    r24 = snat("192.168.88.0", 24)
    assert linear_lookup([r16, r24], NatType.SNAT, HOST, 1) is r16


def test_linear_10k_target_last():
    rules = [snat(f"10.{i // 256}.{i % 256}.1", 32, 22) for i in range(9999)]
    target = snat("192.168.88.0", 24)
    rules.append(target)
    assert linear_lookup(rules, NatType.SNAT, HOST, 5000) is target


def test_probe_trace_order_and_bound():
    rules = [snat("192.168.88.0", 24)] + [snat(f"10.0.{m}.0", m) for m in range(8, 33)]
    t = table(*rules)
    trace = []
    t.lookup(NatType.SNAT, ip_to_int("172.16.0.1"), 80, trace)
    prefixes = [p[0] for p in trace]
    assert prefixes == sorted(prefixes, reverse=True)
    assert [p[2] for p in trace[:2]] == [80, 0]
    assert len(trace) <= 64


def test_frozen_snapshot_is_read_only():
    book = RuleBook([snat("192.168.88.0", 24)])
    with pytest.raises(ContractViolation):
        book.current.insert(snat("10.0.0.0", 8))


def test_rulebook_publishes_new_generation():
    book = RuleBook([snat("192.168.88.0", 24)])
    old = book.current
    new = book.update(insert=[snat("192.168.88.32", 32, 5000, 40000)])
    assert new is book.current and new.generation == old.generation + 1
    assert old.lookup(NatType.SNAT, HOST, 5000).prefix_len == 24
    assert new.lookup(NatType.SNAT, HOST, 5000).prefix_len == 32


def test_rulebook_update_all_or_nothing():
    book = RuleBook([snat("192.168.88.0", 24)])
    old = book.current
    with pytest.raises(DuplicateRule):
        book.update(insert=[snat("10.0.0.0", 8), snat("192.168.88.0", 24)])
    assert book.current is old


# --- property tests against the brute-force oracle ------------------------

def random_rule(rng, nets):
    plen = rng.choice([8, 16, 20, 24, 28, 31, 32])
    base = rng.choice(nets) | rng.getrandbits(32 - 12)
    port = WILDCARD if rng.random() < 0.5 else rng.choice([22, 80, 443, 5000, rng.randrange(1, 65536)])
    ntype = NatType.SNAT if rng.random() < 0.8 else NatType.DNAT
    target = FROM_POOL if ntype is NatType.SNAT else KEEP
    return NatRule(ntype, base, plen, port, PUB, target)


def random_table(rng, n):
    nets = [ip_to_int(n) for n in ("192.168.0.0", "10.0.0.0", "172.16.0.0")]
    rules, keys = [], set()
    while len(rules) < n:
        r = random_rule(rng, nets)
        if r.key not in keys:
            keys.add(r.key)
            rules.append(r)
    return rules, nets


def random_query(rng, rules, nets):
    if rng.random() < 0.7:
        r = rng.choice(rules)
        ip = r.match_ip | (rng.getrandbits(32) & ~r.mask & 0xFFFFFFFF)
        port = r.match_port if (r.match_port is not WILDCARD and rng.random() < 0.7) else rng.choice([22, 80, 5000, rng.randrange(1, 65536)])
    else:
        ip = rng.choice(nets) | rng.getrandbits(20)
        port = rng.randrange(1, 65536)
    return ip, port


def test_qns_matches_brute_force_1000x1000():
    rng = random.Random(1234)
    rules, nets = random_table(rng, 1000)
    t = table(*rules)
    for _ in range(1000):
        ip, port = random_query(rng, rules, nets)
        for nt in NatType:
            assert t.lookup(nt, ip, port) is oracles.brute_force_lookup(rules, nt, ip, port)


def test_determinism_under_insertion_order():
    rng = random.Random(5)
    rules, nets = random_table(rng, 300)
    shuffled = rules[:]
    rng.shuffle(shuffled)
    a, b = table(*rules), table(*shuffled)
    for _ in range(500):
        ip, port = random_query(rng, rules, nets)
        assert a.lookup(NatType.SNAT, ip, port) is b.lookup(NatType.SNAT, ip, port)


ops = st.lists(st.tuples(st.booleans(), st.integers(0, 40)), max_size=120)


@settings(max_examples=60, deadline=None)
@given(ops)
def test_flag_coherence(operations):
    rng = random.Random(0)
    pool, _ = random_table(rng, 41)
    t = RuleTableSet()
    present = set()
    for is_insert, idx in operations:
        r = pool[idx]
        if is_insert:
            if idx in present:
                with pytest.raises(DuplicateRule):
                    t.insert(r)
            else:
                t.insert(r)
                present.add(idx)
        else:
            if idx in present:
                t.delete(r.nat_type, r.match_ip, r.prefix_len, r.match_port)
                present.discard(idx)
            else:
                with pytest.raises(RuleNotFound):
                    t.delete(r.nat_type, r.match_ip, r.prefix_len, r.match_port)
        for nt in NatType:
            for m in range(1, 33):
                assert t.flag(nt, m) == bool(t.sub_table(nt, m))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 65535), st.integers(0, 10**6))
def test_probe_count_bound(ip, port, seed):
    rng = random.Random(seed)
    rules = [snat(f"10.0.0.0", m) for m in range(1, 33)]
    rules += [snat("10.0.0.0", m, 80, 1) for m in range(1, 33)]
    rng.shuffle(rules)
    t = table(*rules)
    trace = []
    t.lookup(NatType.SNAT, ip, port, trace)
    assert len(trace) <= 64


def test_vectorized_oracle_agrees_with_scalar_oracle():
    rng = random.Random(77)
    rules, nets = random_table(rng, 200)
    queries = [random_query(rng, rules, nets) for _ in range(300)]
    for nt in NatType:
        fast = oracles.vectorized_lookup(rules, nt, queries)
        slow = [oracles.brute_force_lookup(rules, nt, ip, port) for ip, port in queries]
        assert all(a is b for a, b in zip(fast, slow))
