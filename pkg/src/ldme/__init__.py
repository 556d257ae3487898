"""List-decodable mean estimation in nearly linear time.

Given N points of which an alpha-fraction are inliers with covariance bounded
by sigma^2 I, `output_list` produces O(1/alpha) candidate means, one of which
is O(sigma/sqrt(alpha)) close to the true mean. The cost evaluations reduce to
generalized packing/covering SDPs under Ky-Fan norms, solved by a
multiplicative-weights loop built on fast fantope projections, a refined power
method and JL sketching. A brute-force oracle suite validates every fast path,
and a semirandom planted-partition pipeline exercises the estimator end to end.
"""

from .estimator import EstimationProblem, descend_cost, output_list
from .cost import CostQuery, approx_cost
from .sdp import SdpInstance, packing_covering_decision, solver_loop, verify_certificate

__all__ = [
    "EstimationProblem",
    "descend_cost",
    "output_list",
    "CostQuery",
    "approx_cost",
    "SdpInstance",
    "packing_covering_decision",
    "solver_loop",
    "verify_certificate",
]

__version__ = "0.1.0"
