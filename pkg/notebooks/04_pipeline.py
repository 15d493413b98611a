"""
Running synthetic traffic through the NAT
=========================================

Generate a seeded trace, translate it with several worker threads and check
that every flow leaves with one public endpoint and its packets in order.
"""

# %%
import collections

import numpy as np

from quicknat import (FROM_POOL, WILDCARD, ConnTable, Direction, NatContext, NatPool, NatRule,
                      NatType, PoolConfig, RuleBook, TrafficSpec, five_tuple, generate,
                      ip_to_int, parse, run_pipeline)
from quicknat.traffic import payload_marker

spec = TrafficSpec(n_flows=500, packets_per_flow=8, private_subnet="192.168.88.0/24", seed=3)
pub = ip_to_int("203.0.113.7")
rules = RuleBook([NatRule(NatType.SNAT, ip_to_int("192.168.88.0"), 24, WILDCARD, pub, FROM_POOL)])
ctx = NatContext(rules, ConnTable(), NatPool(PoolConfig((pub,)), seed=3))


class Keep:
    def __init__(self):
        self.out = []

    def write(self, rec):
        self.out.append(bytes(rec.data))


sink = Keep()
stats = run_pipeline(((Direction.OUTBOUND, r) for r in generate(spec)), sink, 4, ctx)
print(stats.total)

# %%
per_flow = collections.defaultdict(list)
endpoints = collections.defaultdict(set)
for data in sink.out:
    fid, seq = payload_marker(data)
    t = five_tuple(parse(data))
    per_flow[fid].append(seq)
    endpoints[fid].add((t.src_ip, t.src_port))
print("flows in order:", all(s == sorted(s) for s in per_flow.values()))
print("one endpoint per flow:", all(len(e) == 1 for e in endpoints.values()))
print("packets per worker:", np.array([w.packets_in for w in stats.workers]))
