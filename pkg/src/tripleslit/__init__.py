"""Triple-slit third-order interference simulator and analysis toolkit."""

from tripleslit.hierarchy import (
    COMBINATIONS,
    DegenerateRegimeError,
    KappaEstimate,
    ProbabilityOctet,
    SlitCombination,
    kappa,
    pairwise_interference,
    sorkin_delta,
    sorkin_epsilon,
    sorkin_term,
)
from tripleslit.detection_laws import BORN, DetectionLaw, detect

__all__ = [
    "BORN",
    "COMBINATIONS",
    "DegenerateRegimeError",
    "DetectionLaw",
    "KappaEstimate",
    "ProbabilityOctet",
    "SlitCombination",
    "detect",
    "kappa",
    "pairwise_interference",
    "sorkin_delta",
    "sorkin_epsilon",
    "sorkin_term",
]

__version__ = "0.1.0"
