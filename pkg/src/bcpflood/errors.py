"""Exception hierarchy shared across the pipeline.

The CLI maps these onto process exit codes: 1 for bad parameters/usage,
2 for data, geometry, or manifest problems, 3 for internal invariant
failures.
"""


class BcpFloodError(Exception):
    """Base class; unexpected internal failures exit with code 3."""

    exit_code = 3


class ParameterError(BcpFloodError, ValueError):
    """A user-supplied parameter is outside its documented domain."""

    exit_code = 1


class ContractError(BcpFloodError):
    """A caller violated an API precondition (programming error)."""

    exit_code = 3


class DegenerateVarianceError(ContractError):
    """Variance-ratio integral requested with zero total variation."""


class DataError(BcpFloodError):
    """Problem with input data files or their contents."""

    exit_code = 2


class GeometryError(DataError):
    """Raster grids or georeferences do not line up."""


class ManifestError(DataError):
    """A stack manifest is inconsistent or violates its filter."""


class SceneSpecError(DataError):
    """A synthetic scene specification is invalid."""


class InsufficientDataError(DataError):
    """Too few valid observations to run the analysis."""


class DegenerateHistogramError(DataError):
    """All pixel values identical; no threshold can be derived."""
