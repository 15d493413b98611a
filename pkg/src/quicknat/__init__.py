"""Userspace NAT/NAPT with prefix-partitioned hash rule lookup."""

from .conntrack import ConnRecord, ConnTable, RecordDirection
from .datapath import (Direction, NatContext, PipelineStats, Verdict, dispatch,
                       process_packet, run_pipeline)
from .errors import *  # noqa: F401,F403
from .packet import (KEEP, FiveTuple, LinkMode, PacketView, Proto, Side, five_tuple,
                     incr_csum_update, int_to_ip, ip_to_int, parse, rewrite)
from .pool import Lease, NatPool, PoolConfig
from .rules import (FROM_POOL, WILDCARD, NatRule, NatType, RuleBook, RuleTableSet,
                    linear_lookup, qns_lookup)
from .traffic import TrafficSpec, generate

__version__ = "0.1.0"
