"""Exception hierarchy shared by all quicknat modules."""


class NatError(Exception):
    """Base class for every error raised by quicknat."""


class ContractViolation(NatError):
    """An operation was called outside its precondition."""


class MalformedPacket(NatError):
    """Buffer too short for the headers it declares."""


class InvalidRule(NatError):
    pass


class DuplicateRule(NatError):
    pass


class RuleNotFound(NatError, KeyError):
    pass


class TableFull(NatError):
    """Connection table reached its configured capacity."""


class KeyConflict(NatError):
    """The reply key of a new pair is already held by another connection."""


class PoolExhausted(NatError):
    pass


class DoubleRelease(NatError):
    pass


class PcapError(NatError):
    pass


class BadMagic(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


class ConfigError(NatError):
    """Configuration rejected; ``errors`` holds every ``(line, message)`` found."""

    def __init__(self, errors):
        self.errors = list(errors)
        first = self.errors[0] if self.errors else (0, "invalid configuration")
        super().__init__(f"line {first[0]}: {first[1]}"
                         + (f" (+{len(self.errors) - 1} more)" if len(self.errors) > 1 else ""))
