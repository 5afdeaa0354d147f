"""Exception hierarchy shared by every module."""


class RelevanceDriftError(Exception):
    """Base class for all package errors."""


class EmptyInput(RelevanceDriftError, ValueError):
    pass


class InsufficientData(RelevanceDriftError, ValueError):
    pass


class BadArgument(RelevanceDriftError, ValueError):
    pass


class BadData(RelevanceDriftError, ValueError):
    pass


class SignatureNotFound(RelevanceDriftError):
    """No sign-unique feature exists for a scenario."""

    def __init__(self, scenario_id, message=None):
        self.scenario_id = scenario_id
        super().__init__(message or f"no sign-unique feature for scenario {scenario_id!r}")


class ConfigError(RelevanceDriftError):
    pass


class StateError(RelevanceDriftError):
    """Required artifacts are missing or inconsistent."""


class ProvenanceError(RelevanceDriftError):
    """Test-partition rows reached a training, corruption or calibration path."""
