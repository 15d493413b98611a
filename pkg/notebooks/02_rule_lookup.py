"""
Longest-prefix rule lookup with per-prefix hash tables
======================================================

Rules live in one hash table per (NAT type, prefix length). A lookup walks
the non-empty tables from /32 down and tries the exact port before the
wildcard in each.
"""

# %%
from quicknat import FROM_POOL, WILDCARD, NatRule, NatType, RuleTableSet, ip_to_int
from quicknat.rules import linear_lookup, precedence_order

pub = ip_to_int("203.0.113.7")
lan = NatRule(NatType.SNAT, ip_to_int("192.168.88.0"), 24, WILDCARD, pub, FROM_POOL)
ssh = NatRule(NatType.SNAT, ip_to_int("10.1.2.3"), 32, 22, pub, FROM_POOL)
print(lan)
print(ssh)

tables = RuleTableSet()
for r in (lan, ssh):
    tables.insert(r)
print("non-empty SNAT tables:", [m for m in range(1, 33) if tables.flag(NatType.SNAT, m)])

# %%
# Every probe can be recorded: (prefix length, masked address, port key, hit).
trace = []
hit = tables.lookup(NatType.SNAT, ip_to_int("192.168.88.32"), 5000, trace)
for probe in trace:
    print(probe)
print("->", hit)

# %%
# A linear scan over the same rules in precedence order gives the same answer.
ordered = precedence_order([ssh, lan])
print(linear_lookup(ordered, NatType.SNAT, ip_to_int("192.168.88.32"), 5000) is hit)
