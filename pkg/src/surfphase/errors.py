"""Exception types shared across the package.

The command line front end maps these onto process exit codes: configuration
problems exit with 2, solver failures with 3 and capacity limits with 4.
Everything else is a plain traceback.
"""


class SurfphaseError(Exception):
    """Base class for all package errors."""


class ConfigError(SurfphaseError):
    """Invalid or inconsistent run configuration / input data."""

    exit_code = 2


class SolverError(SurfphaseError):
    """Iterative solver failed to reach the requested residual."""

    exit_code = 3

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CapacityError(SurfphaseError):
    """A mesh or run exceeded the configured size limits."""

    exit_code = 4


class DegenerateTriangleError(SurfphaseError):
    """Triangle area vanished relative to the mesh scale."""


class PoleSingularityError(SurfphaseError):
    """Rotation frame requested too close to the singular pole -e3."""


class OracleDomainError(SurfphaseError):
    """Sharp-interface trajectory left its admissible angle range."""


class OracleIntegrationError(SurfphaseError):
    """Reference integration violated its conserved quantity."""


EXIT_OK = 0


def exit_code_for(exc: BaseException) -> int:
    """Exit code the CLI should use for ``exc`` (0 is never returned)."""
    if isinstance(exc, (SolverError, CapacityError)):
        return exc.exit_code
    if isinstance(exc, SurfphaseError):
        # everything else points at bad input of some kind
        return ConfigError.exit_code
    return 1
