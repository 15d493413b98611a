"""Line-oriented NAT configuration.

    # comment
    snat <ip>/<prefix> <port|*> -> <ip> <port|pool>
    dnat <ip>/<prefix> <port|*> -> <ip> <port|*>
    pool <ip>[,<ip>...] ports <lo>-<hi>
    policy miss <forward|drop>
    policy fragment <forward|drop>
    timeout tcp <secs>
    timeout udp <secs>
    workers <n>

A document is validated as a whole: every error is collected with its line
number and nothing is applied unless the whole text is clean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .conntrack import DEFAULT_TCP_IDLE, DEFAULT_UDP_IDLE
from .datapath import Verdict
from .errors import ConfigError, InvalidRule
from .packet import KEEP, int_to_ip, ip_to_int
from .pool import PoolConfig
from .rules import FROM_POOL, WILDCARD, NatRule, NatType

_VERDICT_WORDS = {"forward": Verdict.PASS_THROUGH, "drop": Verdict.DROP}


@dataclass
class ConfigDocument:
    rules: list = field(default_factory=list)
    pool: PoolConfig | None = None
    miss_verdict: Verdict = Verdict.PASS_THROUGH
    fragment_verdict: Verdict = Verdict.PASS_THROUGH
    tcp_idle: float = DEFAULT_TCP_IDLE
    udp_idle: float = DEFAULT_UDP_IDLE
    workers: int = 1

    def effective_pool(self) -> PoolConfig | None:
        """The declared pool, or one built from the pool rules' addresses."""
        if self.pool is not None:
            return self.pool
        ips = []
        for r in self.rules:
            if r.rewrite_port is FROM_POOL and r.rewrite_ip not in ips:
                ips.append(r.rewrite_ip)
        return PoolConfig(tuple(ips)) if ips else None


def _ip(text: str) -> int:
    if text.count(".") != 3:
        raise ValueError(f"invalid address {text!r}")
    try:
        return ip_to_int(text)
    except OSError:
        raise ValueError(f"invalid address {text!r}") from None


def _port(text: str, what: str) -> int:
    if not text.isdigit() or not 1 <= int(text) <= 0xFFFF:
        raise ValueError(f"invalid port {text!r} ({what})")
    return int(text)


def _rule(words: list[str]) -> NatRule:
    if len(words) != 6 or words[3] != "->":
        raise ValueError(f"syntax error: expected '{words[0]} <ip>/<prefix> <port|*> -> <ip> <port>'")
    nat_type = NatType(words[0])
    net, _, plen = words[1].partition("/")
    match_ip = _ip(net)
    if not plen.isdigit() or not 1 <= int(plen) <= 32:
        raise ValueError(f"invalid prefix {words[1]!r}")
    match_port = WILDCARD if words[2] == "*" else _port(words[2], "match")
    rewrite_ip = _ip(words[4])
    target = words[5]
    if nat_type is NatType.SNAT:
        rewrite_port = FROM_POOL if target == "pool" else _port(target, "snat target")
    else:
        rewrite_port = KEEP if target == "*" else _port(target, "dnat target")
    return NatRule(nat_type, match_ip, int(plen), match_port, rewrite_ip, rewrite_port)


def parse_config(text: str) -> ConfigDocument:
    doc = ConfigDocument()
    errors: list[tuple[int, str]] = []
    seen: dict = {}
    pool_line = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        kw = words[0].lower()
        try:
            if kw in ("snat", "dnat"):
                words[0] = kw
                rule = _rule(words)
                if rule.key in seen:
                    raise ValueError(f"duplicate rule (first defined on line {seen[rule.key]})")
                seen[rule.key] = lineno
                doc.rules.append(rule)
            elif kw == "pool":
                if len(words) != 4 or words[2] != "ports":
                    raise ValueError("syntax error: expected 'pool <ip>[,<ip>...] ports <lo>-<hi>'")
                if pool_line is not None:
                    raise ValueError(f"pool already declared on line {pool_line}")
                ips = tuple(_ip(w) for w in words[1].split(","))
                lo, sep, hi = words[3].partition("-")
                if not sep:
                    raise ValueError(f"invalid port range {words[3]!r}")
                doc.pool = PoolConfig(ips, (_port(lo, "pool"), _port(hi, "pool")))
                pool_line = lineno
            elif kw == "policy":
                if len(words) != 3 or words[1] not in ("miss", "fragment") \
                        or words[2] not in _VERDICT_WORDS:
                    raise ValueError("syntax error: expected 'policy <miss|fragment> <forward|drop>'")
                setattr(doc, f"{words[1]}_verdict", _VERDICT_WORDS[words[2]])
            elif kw == "timeout":
                if len(words) != 3 or words[1] not in ("tcp", "udp"):
                    raise ValueError("syntax error: expected 'timeout <tcp|udp> <secs>'")
                try:
                    secs = float(words[2])
                except ValueError:
                    secs = -1.0
                if not secs > 0:
                    raise ValueError(f"invalid timeout {words[2]!r}")
                setattr(doc, f"{words[1]}_idle", secs)
            elif kw == "workers":
                if len(words) != 2 or not words[1].isdigit() or int(words[1]) < 1:
                    raise ValueError("syntax error: expected 'workers <n>' with n >= 1")
                doc.workers = int(words[1])
            else:
                raise ValueError(f"unknown statement {words[0]!r}")
        except (ValueError, InvalidRule) as exc:
            errors.append((lineno, str(exc)))

    if not errors and doc.pool is not None:
        for r in doc.rules:
            if r.rewrite_port is FROM_POOL and r.rewrite_ip not in doc.pool.public_ips:
                errors.append((seen[r.key], f"pool target {int_to_ip(r.rewrite_ip)} "
                                            f"is not in the declared pool"))
    if errors:
        raise ConfigError(errors)
    return doc


def format_config(doc: ConfigDocument) -> str:
    """Serialize *doc* back to config text; ``parse_config`` inverts it."""
    lines = [str(r) for r in doc.rules]
    if doc.pool is not None:
        ips = ",".join(int_to_ip(ip) for ip in doc.pool.public_ips)
        lo, hi = doc.pool.port_range
        lines.append(f"pool {ips} ports {lo}-{hi}")
    words = {v: k for k, v in _VERDICT_WORDS.items()}
    lines.append(f"policy miss {words[doc.miss_verdict]}")
    lines.append(f"policy fragment {words[doc.fragment_verdict]}")
    lines.append(f"timeout tcp {doc.tcp_idle!r}")
    lines.append(f"timeout udp {doc.udp_idle!r}")
    lines.append(f"workers {doc.workers}")
    return "\n".join(lines) + "\n"

