"""Exception hierarchy.

Each error carries the CLI exit code it maps to: 2 for configuration
errors, 3 for data errors, 4 for numerical degeneracy.
"""


class TSMError(Exception):
    exit_code = 1


class ConfigError(TSMError):
    exit_code = 2


class DataError(TSMError):
    exit_code = 3


class NumericalError(TSMError):
    exit_code = 4


class DegenerateDistribution(NumericalError):
    pass


class InvalidWeight(DataError):
    pass


class InvalidProbability(ConfigError):
    pass


class TooFewTiles(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class EnsembleMismatch(ConfigError):
    pass


class NoPositives(DataError):
    pass


class NoNegatives(DataError):
    pass


class NoSamples(DataError):
    pass


class MissingPrevalence(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


class InfeasiblePlan(ConfigError):
    pass
