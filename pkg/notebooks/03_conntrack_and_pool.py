"""
Connection pairs and the endpoint pool
======================================

The first packet of a flow leases a public port and installs two records,
one per direction. Expiry gives the lease back.
"""

# %%
from quicknat import ConnTable, FiveTuple, NatPool, PoolConfig, Proto, ip_to_int

clock_now = [1000.0]
pool = NatPool(PoolConfig((ip_to_int("203.0.113.7"),), (40000, 40009)), seed=1)
ct = ConnTable(udp_idle=60, clock=lambda: clock_now[0], on_release=pool.release)

flow = FiveTuple(ip_to_int("192.168.88.32"), ip_to_int("198.51.100.9"), 5000, 53, Proto.UDP)
lease = pool.allocate(Proto.UDP, hint=flow)
print("leased", lease)

public = flow._replace(src_ip=lease.ip, src_port=lease.port)
record, won = ct.insert_pair(flow, public.reversed(), lease=lease)
print("won:", won)
print("outbound rewrite:", record.apply(flow))
print("reply rewrite:   ", ct.lookup(public.reversed()).apply(public.reversed()))

# %%
print(pool.stats()["udp"])
clock_now[0] += 61
print("evicted", ct.expire(), "pair(s)")
print(pool.stats()["udp"])
