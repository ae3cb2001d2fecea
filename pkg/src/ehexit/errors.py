class EhexitError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class ConfigError(EhexitError):
    exit_code = 2


class InputError(EhexitError):
    exit_code = 2


class StateError(EhexitError):
    pass


class NumericalError(EhexitError):
    pass


class SimulationFault(EhexitError):
    """A selector or the simulator broke an energy invariant."""


class TrainingFault(EhexitError):
    pass
