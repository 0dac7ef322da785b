"""Exception hierarchy shared across the package."""


class LibrotorError(Exception):
    """Base class for all librotor-specific errors."""


class NoNetCoolingError(LibrotorError):
    """Anti-Stokes rate does not exceed the Stokes rate at this detuning."""


class SpringInstabilityError(LibrotorError):
    """Optical-spring radicand went negative; coupling too strong for the
    weak-coupling frequency formula."""


class UncalibratedFrequencyError(LibrotorError):
    """Requested frequency lies outside the calibrated detector grid."""


class DegenerateFitError(LibrotorError):
    """Normal equations are singular; the fit window cannot constrain the model."""


class UnderdeterminedScanError(LibrotorError):
    """Fewer usable scan points than free parameters allow."""


class CalibrationError(LibrotorError):
    """Shot/dark calibration traces are mutually inconsistent."""


class UnphysicalAsymmetryError(LibrotorError):
    """Fitted anti-Stokes area exceeds the Stokes area (or is too negative)."""


class SidebandOutsideBandError(LibrotorError):
    """A requested sideband falls outside the synthesis/analysis grid."""


class ConfigError(LibrotorError):
    """Invalid configuration file or malformed input data."""
