class IsacError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(IsacError):
    """Invalid scene, manifest or parameter override."""


class CodecError(IsacError):
    """Malformed, truncated or incompatible artifact file."""


class StageError(IsacError):
    """A pipeline stage failed; carries the stage name and receiver."""

    def __init__(self, stage: str, message: str, rx_id: int | None = None):
        self.stage = stage
        self.rx_id = rx_id
        where = f"{stage}" if rx_id is None else f"{stage} (rx {rx_id})"
        super().__init__(f"[{where}] {message}")


class LosMissingError(IsacError):
    """No CIR tap exceeded the dynamic LOS threshold."""


class UnreliablePhaseError(IsacError):
    """LOS magnitude too low to extract a frequency-offset phase."""


class SyncError(IsacError):
    """Synchronization cannot continue (e.g. nothing to reuse)."""


class LocalizationError(IsacError):
    """Degenerate bistatic geometry: the target cannot be localized."""
