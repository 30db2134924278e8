"""Exception hierarchy shared by the library, the stages and the CLI."""


class SymnetError(Exception):
    """Base class for every error raised by symnet"""

    exit_code = 2

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


class InputError(SymnetError, ValueError):
    """Malformed numeric input (dimensions, non-finite entries)"""


class ParameterError(SymnetError, ValueError):
    """A quantization or algorithm parameter is out of range"""


class ConfigError(SymnetError):
    """Invalid or incomplete network configuration file"""


class FormatError(SymnetError):
    """Unreadable, truncated or version-mismatched artifact file"""


class CertificateError(SymnetError):
    """A storage-function certificate failed a check"""

    exit_code = 1


class UnsupportedCertificateError(CertificateError):
    """Certificate data has no closed-form composition"""


class DwellTimeViolation(SymnetError):
    """A switch was requested before the dwell time expired"""


class NetworkError(SymnetError):
    """Interconnection is ill-formed or abstractions do not match"""


class SynthesisInfeasible(SymnetError):
    """The safety game has an empty winning domain"""

    exit_code = 1


class RefinementError(SymnetError):
    """A concrete state is not covered by the controller domain"""

    exit_code = 1


class InvariantViolation(SymnetError):
    """An internal postcondition failed; indicates a bug"""

    exit_code = 1
