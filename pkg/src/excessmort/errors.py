"""Exception hierarchy shared by all modules.

Two families matter for the CLI exit codes: data/usage problems
(:class:`DataError`, exit code 2) and numerical impossibilities
(:class:`NumericalError`, exit code 4). Plain I/O failures are left to the
standard :class:`OSError` family (exit code 3).
"""


class ExcessMortError(Exception):
    """Base class for every error raised by this package."""


class DataError(ExcessMortError):
    """Invalid, inconsistent, or missing input data."""


class NumericalError(ExcessMortError):
    """A computation is undefined for the given inputs."""


# panel -----------------------------------------------------------------

class MissingColumn(DataError):
    """An input file lacks one of its required columns."""


class NegativeCount(DataError):
    """A death count is negative."""


class DuplicateDay(DataError):
    """Two mortality rows share the same (unit, date) key."""


class UnknownUnit(DataError):
    """A unit id is referenced but not defined (or lacks covariates)."""


class UnknownYear(DataError):
    """A year outside the panel's coverage was requested."""


class IncompleteCoverage(DataError):
    """One or more units are missing entire years of mortality data."""


class InvalidCovariate(DataError):
    """A covariate value is missing or violates its range invariant."""


class InvalidPeriod(DataError):
    """A period is ill-formed or overlaps another configured period."""


class ZeroPopulation(NumericalError):
    """A death rate was requested for a unit with population zero."""


# forest ----------------------------------------------------------------

class TooFewRows(DataError):
    """Not enough rows to split or to satisfy the leaf-size floor."""


class DimensionMismatch(DataError):
    """Vector or matrix shapes do not line up."""


class EmptyTestSet(DataError):
    """MSE evaluation was requested on an empty test set."""


# counterfactual --------------------------------------------------------

class UnitWithoutCovariates(DataError):
    """A prediction was requested for a unit with no covariate vector."""


class MixedPeriods(DataError):
    """Estimates from different periods were aggregated together."""


class NonPositiveReferenceExcess(NumericalError):
    """Displacement ratio is undefined when the reference excess is <= 0."""


# spatial ---------------------------------------------------------------

class FewerThanTwoUnits(DataError):
    """Spatial operations need at least two units."""


class CoincidentCentroids(DataError):
    """Two distinct units share the same centroid (distance zero)."""


class ZeroVariance(NumericalError):
    """Standardization is undefined for a constant vector."""


class ZeroWeights(NumericalError):
    """The weights matrix has no nonzero entries."""


class InvalidPermCount(DataError):
    """The requested number of permutations is not a positive integer."""


# synth -----------------------------------------------------------------

class InfeasibleHarvesting(DataError):
    """The displacement share would drive an intensity below zero."""


class MisalignedTruth(DataError):
    """Estimates and synthetic truth do not cover the same keys."""


# cli -------------------------------------------------------------------

class EmptyEstimates(DataError):
    """A map export was requested for an empty estimate list."""


class EmptyRecords(DataError):
    """A cluster export was requested with no records."""
