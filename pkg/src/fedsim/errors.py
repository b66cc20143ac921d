"""Exception types shared across the simulation lab."""


class FedSimError(Exception):
    """Base class for all errors raised by fedsim."""


class ShapeError(FedSimError):
    """Vector length or batch dimension mismatch."""


class NumericError(FedSimError):
    """Non-finite value where a finite one is required.

    Carries optional (round, client, step) context for failures inside a
    federated run.
    """

    def __init__(self, message, round_index=None, client_id=None, step=None):
        parts = [message]
        if round_index is not None:
            parts.append(f"round={round_index}")
        if client_id is not None:
            parts.append(f"client={client_id}")
        if step is not None:
            parts.append(f"step={step}")
        super().__init__(" ".join(parts))
        self.round_index = round_index
        self.client_id = client_id
        self.step = step


class PartitionError(FedSimError):
    """Non-IID partition failed (e.g. empty-client re-draw budget exhausted)."""


class CodecError(FedSimError):
    """Malformed, truncated or out-of-range wire payload."""


class ConfigError(FedSimError):
    """Invalid configuration or plan file: unknown key or range violation."""
