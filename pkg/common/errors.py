"""
Exception hierarchy for DrowsyWatch
"""
from typing import Optional, Tuple


class DrowsyWatchError(Exception):
    """Base class for all DrowsyWatch errors"""


class RangeError(DrowsyWatchError, ValueError):
    """A reading or parameter lies outside its allowed range"""

    def __init__(self, field: str, value, allowed: Tuple[float, float]):
        self.field = field
        self.value = value
        self.allowed = allowed
        super().__init__(f"{field}={value!r} outside allowed range {allowed[0]}..{allowed[1]}")


class ParseError(DrowsyWatchError, ValueError):
    """Malformed line in a replay or label file"""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class OrderError(DrowsyWatchError, ValueError):
    """Timestamps went backwards"""

    def __init__(self, position: Optional[int], detail: str = 'timestamp regression'):
        self.position = position
        self.detail = detail
        where = f"line {position}: " if position is not None else ''
        super().__init__(f"{where}{detail}")


class InvalidScenario(DrowsyWatchError, ValueError):
    """Simulation scenario parameters are inconsistent"""


class ConfigError(DrowsyWatchError, ValueError):
    """Configuration values violate their invariants"""


class InsufficientData(DrowsyWatchError):
    """Not enough intervals or coverage to compute a result"""


class ModeError(DrowsyWatchError):
    """Engine mode requirements not met"""


# Secure store

class WeakParams(DrowsyWatchError, ValueError):
    """Key-derivation cost below the documented minimum"""


class AuthError(DrowsyWatchError):
    """Authentication failed: wrong key or tampered ciphertext"""

    def __init__(self, seq_no: Optional[int] = None, detail: str = 'authentication failed'):
        self.seq_no = seq_no
        self.detail = detail
        where = f"chunk {seq_no}: " if seq_no is not None else ''
        super().__init__(f"{where}{detail}")


class NotFound(DrowsyWatchError, KeyError):
    """Preference name not present in the store"""

    def __str__(self):
        return f"preference not found: {self.args[0]}" if self.args else 'preference not found'


class StoreIoError(DrowsyWatchError, OSError):
    """Store file could not be read or written"""


# Link protocol

class FrameError(DrowsyWatchError):
    """Wire frame could not be decoded"""


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class BadCrc(FrameError):
    pass


class Oversize(FrameError):
    pass


class UnknownMessageType(FrameError):
    pass


class ProtocolError(DrowsyWatchError):
    """Message arrived in a state that does not accept it"""


class ConsentError(DrowsyWatchError):
    """Sensor kind not covered by the granted consent scopes"""


class ClosedSession(DrowsyWatchError):
    """Operation on a link session that is already closed"""


class UsageError(DrowsyWatchError):
    """Command-line usage problem (bad flag combination, missing passphrase)"""
