"""Earth mover distance estimation on doubling metrics through sibling-linked
hierarchical trees, dominating-tree families and Cauchy sketches."""

__version__ = "0.1.0"

from .metric import Distribution, FiniteMetric, MetricError, load_metric  # noqa: E402
from .slhst import Slhst, build_slhst, slhst_distance  # noqa: E402
from .transport import eemd_exact, emd_exact, emd_slhst  # noqa: E402
from .encoding import Encoding, EncodingMismatch, approx_emd, estimate_emd_linear  # noqa: E402
from .pipeline import OracleStore, PreprocessContainer, encode, estimate, preprocess, query, simulate_protocol  # noqa: E402

__all__ = [
    "Distribution",
    "Encoding",
    "EncodingMismatch",
    "FiniteMetric",
    "MetricError",
    "OracleStore",
    "PreprocessContainer",
    "Slhst",
    "approx_emd",
    "build_slhst",
    "eemd_exact",
    "emd_exact",
    "emd_slhst",
    "encode",
    "estimate",
    "estimate_emd_linear",
    "load_metric",
    "preprocess",
    "query",
    "simulate_protocol",
    "slhst_distance",
]
