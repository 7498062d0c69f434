"""Twin-beam photon-number statistics: detection model, EM reconstruction,
and integrated-intensity quasi-distributions."""

__version__ = "0.1.0"

from .detection import (  # noqa: E402
    CoincidenceDistribution,
    DetectionChain,
    detected_statistics,
    forward_map,
    k_coeff_finite,
    k_coeff_infinite,
)
from .em import EMConfig, EMResult, kl_divergence, reconstruct  # noqa: E402
from .intensity import grid_scan, negativity_report, quasi_distribution  # noqa: E402
from .pnd import (  # noqa: E402
    JointPND,
    Marginal,
    covariance,
    make_gaussian_pairs,
    make_poisson_pairs,
    marginals,
    s_coefficient,
)
from .sampler import SimulationConfig, simulate  # noqa: E402

__all__ = [
    "CoincidenceDistribution", "DetectionChain", "EMConfig", "EMResult", "JointPND",
    "Marginal", "SimulationConfig", "covariance", "detected_statistics", "forward_map",
    "grid_scan", "k_coeff_finite", "k_coeff_infinite", "kl_divergence",
    "make_gaussian_pairs", "make_poisson_pairs", "marginals", "negativity_report",
    "quasi_distribution", "reconstruct", "s_coefficient", "simulate",
]
