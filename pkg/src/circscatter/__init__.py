"""Divide-and-conquer inverse scattering from far-field measurements.

A classifier picks the boundary family from the measured far-field
channels, then a per-family regressor recovers the boundary coefficients
and the surface impedance.  The networks are circular-padding 1D
convolutional stacks with hand-written forward and backward passes.
"""

import os

# CIRCSCATTER_THREADS caps BLAS threading; it must land in the
# environment before numpy loads its BLAS, hence this runs first.
_threads = os.environ.get("CIRCSCATTER_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .errors import (
    CircScatterError,
    DegenerateShapeError,
    FormatError,
    LayoutError,
    NumericError,
    SamplingStuckError,
    ValidationError,
)
from .geometry import (
    BoundaryShape,
    ScatterConfig,
    ShapeClass,
    boundary_discrepancy,
    boundary_grid,
    eval_curve,
    sample_shape,
    validate_shape,
)

__version__ = "0.1.0"
