class BeaconError(Exception):
    """
    Base class for operational failures of the randomness service. Every subclass carries
    the exit status used by the command line interface.
    """

    exit_code = 1


class ConfigError(BeaconError):
    exit_code = 2


class RandomnessError(BeaconError):
    exit_code = 3


class SigningError(BeaconError):
    exit_code = 4


class ExtractorError(BeaconError):
    exit_code = 5


class LedgerError(BeaconError):
    exit_code = 6


class ChainError(BeaconError):
    exit_code = 7


class ServiceError(BeaconError):
    exit_code = 8


class WitnessError(BeaconError):
    exit_code = 9


class GraphError(BeaconError):
    exit_code = 10


class VerificationError(BeaconError):
    exit_code = 11
