"""Real-time consistent interpolation of interval-valued time series.

Each incoming interval (timestamp, centroid, half-width) immediately yields a
new polynomial section that passes through the interval and joins the
previous section smoothly. Sections come from a learnable policy: a myopic
minimum-curvature rule, a three-parameter cost-to-go, or a GRU-driven target.
"""

__version__ = "0.1.0"

from .core import (Interval, IntervalSequence, RtiError, SplineConfig, Spline,  # noqa: E402
                   ValidationError, NumericalError)
from .policy import MyopicParams, ParametrizedParams, RnnParams, evaluate_policy  # noqa: E402
from .rti import ReconstructionResult, reconstruct, stream_step, unroll  # noqa: E402

__all__ = [
    "Interval", "IntervalSequence", "RtiError", "SplineConfig", "Spline", "ValidationError", "NumericalError",
    "MyopicParams", "ParametrizedParams", "RnnParams", "evaluate_policy",
    "ReconstructionResult", "reconstruct", "stream_step", "unroll",
]
