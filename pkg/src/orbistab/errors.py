"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
2 for configuration problems, 3 for numerical failures and 4 for failed
validation checks.
"""

from __future__ import annotations


class OrbistabError(Exception):
    exit_code = 3


class ConfigError(OrbistabError):
    exit_code = 2


class UnknownModel(ConfigError):
    pass


class ConfigConflict(ConfigError):
    pass


# numerical failures
class SingularMass(OrbistabError):
    pass


class NoBracket(OrbistabError):
    pass


class NonSmooth(OrbistabError):
    pass


class DomainExceeded(OrbistabError):
    pass


class AlphaVanished(OrbistabError):
    pass


class NoReturn(OrbistabError):
    pass


class RegularityLost(OrbistabError):
    pass


class NotMonotone(OrbistabError):
    pass


class StepUnderflow(OrbistabError):
    pass


class OutsideTube(OrbistabError):
    pass


class NewtonDiverged(OrbistabError):
    pass


class IntegratorFailure(OrbistabError):
    pass


class NoConvergence(OrbistabError):
    pass


class DegenerateDenominator(OrbistabError):
    pass


class NonfiniteState(OrbistabError):
    pass


class TubeExit(OrbistabError):
    pass


# validation failures
class ValidationError(OrbistabError):
    exit_code = 4


class DefectivePsi(ValidationError):
    pass


class NoDominance(ValidationError):
    pass


class NonSimpleZero(ValidationError):
    pass


class GainTooSmall(ValidationError):
    pass
