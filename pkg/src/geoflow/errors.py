"""Exception hierarchy shared by all geoflow modules."""


class GeoflowError(Exception):
    """Base class for every error raised by geoflow."""


class DuplicatePoles(GeoflowError, ValueError):
    pass


class ZeroResidue(GeoflowError, ValueError):
    pass


class EvaluationAtPole(GeoflowError, ValueError):
    pass


class ResiduesNotInOneOverKZ(GeoflowError, ValueError):
    """Some residue is not of the form m/k with m an integer."""


class NonRealResidues(GeoflowError, ValueError):
    """A real-periods quantity was requested for a connection with complex residues."""


class StepTooLarge(GeoflowError, ValueError):
    pass


class SegmentHitsPole(GeoflowError, ValueError):
    pass


class KUndefined(GeoflowError, ValueError):
    """No k <= 64 makes every k * Re(residue) an integer."""


class StartAtPole(GeoflowError, ValueError):
    pass


class ConfigError(GeoflowError, ValueError):
    """Malformed or inconsistent JSON configuration."""
