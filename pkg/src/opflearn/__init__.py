"""AC OPF dataset generation over the feasible load space.

Load profiles are sampled uniformly (hit-and-run) from a convex polytope
that shrinks as a convex relaxation certifies regions of it infeasible.
"""

from .errors import OpfLearnError
from .netio import NetworkModel, build_model, bundled_case, load_model, parse_matpower

__version__ = "0.1.0"

__all__ = [
    "NetworkModel", "OpfLearnError", "build_model", "bundled_case", "load_model",
    "parse_matpower", "__version__",
]
