"""Exception hierarchy shared by the proxy, the storage server and the harness."""


class OblivError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OblivError, ValueError):
    """Invalid geometry, batch configuration or oversized payload."""


class IntegrityError(OblivError):
    """A storage response failed MAC or freshness verification.

    Raised when the server tampers with, replays or withholds data. The proxy
    treats this as a denial of service and halts.
    """


class ProtocolError(OblivError):
    """Malformed request, version gap or unknown bucket at the storage server."""


class NotFound(OblivError, KeyError):
    """A requested record or key does not exist."""


class StashOverflow(OblivError):
    """The stash exceeded the configured bound and cannot be checkpointed."""


class TxnAborted(OblivError):
    """The transaction was aborted (conflict, batch exhaustion, epoch end or crash)."""

    def __init__(self, ts: int, reason: str = ""):
        super().__init__(f"transaction {ts} aborted: {reason}" if reason else f"transaction {ts} aborted")
        self.ts = ts
        self.reason = reason


class Crash(OblivError):
    """Injected proxy crash. All volatile proxy state must be discarded."""

    def __init__(self, point: str, epoch: int, batch: int):
        super().__init__(f"crash at {point} (epoch={epoch}, batch={batch})")
        self.point = point
        self.epoch = epoch
        self.batch = batch
