"""Error estimates for kappa: sample and Allan variances, linear propagation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from tripleslit.hierarchy import (
    LABELS,
    PAIRS,
    DegenerateRegimeError,
    KappaEstimate,
    ProbabilityOctet,
    default_delta_floor,
    pairwise_interference,
    sorkin_delta,
    sorkin_epsilon,
)

ERROR_METHODS = ("standard", "allan")
_METHOD_TAG = {"standard": "standard-variance", "allan": "allan-variance"}

# sign of each octet entry (bitmask order) in the third-order term
EPSILON_COEFFS = np.array([-1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0])


class SignAmbiguityError(ValueError):
    """A pairwise term is too close to zero for its sign to be trusted."""


def _as_series(series: Sequence[float]) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"need a 1D series of length >= 2, got shape {x.shape}")
    return x


def standard_variance(series: Sequence[float]) -> float:
    return float(np.var(_as_series(series), ddof=1))


def allan_variance(series: Sequence[float]) -> float:
    """Half the mean squared difference of successive samples."""
    x = _as_series(series)
    d = np.diff(x)
    return float(np.dot(d, d) / (2 * (x.size - 1)))


def variance(series: Sequence[float], method: str) -> float:
    if method == "standard":
        return standard_variance(series)
    if method == "allan":
        return allan_variance(series)
    raise ValueError(f"error method must be one of {ERROR_METHODS}, got {method!r}")


@dataclass(frozen=True)
class SeriesSummary:
    mean: float
    std: float
    std_error: float
    n: int
    band_lo: float
    band_hi: float
    method: str

    def to_json(self, position_m: float | None = None) -> dict:
        return {
            "position_m": position_m,
            "mean": self.mean,
            "std": self.std,
            "std_error": self.std_error,
            "method": self.method,
            "n_runs": self.n,
        }


def summarize(series: Sequence[float], error_method: str = "standard") -> tuple[SeriesSummary, KappaEstimate]:
    """Mean, sample std (n-1) and standard error of a kappa series.

    The standard error uses the chosen variance (sample or Allan) divided by
    the number of runs.
    """
    x = _as_series(series)
    mean = float(np.mean(x))
    std = math.sqrt(standard_variance(x))
    std_error = math.sqrt(variance(x, error_method) / x.size)
    summary = SeriesSummary(mean, std, std_error, int(x.size), mean - std, mean + std, error_method)
    return summary, KappaEstimate(mean, std_error, _METHOD_TAG[error_method], int(x.size))


def kappa_gradient(octet: ProbabilityOctet, sign_tol: float | None = None) -> np.ndarray:
    """d(kappa)/d(P_S) for all eight entries, bitmask order.

    The sign of each pairwise term is frozen at its value in ``octet``;
    terms with magnitude at or below ``sign_tol`` (default 1e-9 of the
    largest entry) raise :class:`SignAmbiguityError`.
    """
    floor = default_delta_floor(octet)
    if sign_tol is None:
        sign_tol = floor
    delta = sorkin_delta(octet)
    if delta <= floor:
        raise DegenerateRegimeError(delta, floor)
    eps = sorkin_epsilon(octet)

    d_delta = np.zeros(8)
    for pair in PAIRS:
        term = pairwise_interference(octet, pair)
        if abs(term) <= sign_tol:
            raise SignAmbiguityError(
                f"pairwise term I_{pair.label} = {term!r} is within {sign_tol!r} of zero"
            )
        s = math.copysign(1.0, term)
        d_delta[pair.mask] += s
        for lab in pair.members:
            d_delta[1 << LABELS.index(lab)] -= s
        d_delta[0] += s
    return (EPSILON_COEFFS * delta - eps * d_delta) / delta ** 2


def propagate_kappa_error(octet: ProbabilityOctet, sigmas: Sequence[float],
                          sign_tol: float | None = None) -> float:
    """First-order (Gaussian) standard error of kappa from independent
    per-combination standard errors ``sigmas`` (bitmask order)."""
    sig = np.asarray(sigmas, dtype=float)
    if sig.shape != (8,) or np.any(sig < 0) or not np.all(np.isfinite(sig)):
        raise ValueError("sigmas must be 8 finite nonnegative numbers")
    if not np.any(sig):
        return 0.0
    grad = kappa_gradient(octet, sign_tol)
    return float(math.sqrt(np.sum((grad * sig) ** 2)))


def combination_sigmas(octets: Sequence[ProbabilityOctet], method: str = "standard") -> np.ndarray:
    """Per-combination spread across runs, from the sample or Allan variance."""
    table = np.array([o.values for o in octets])
    if table.shape[0] < 2:
        raise ValueError("need at least 2 runs")
    return np.array([math.sqrt(variance(table[:, m], method)) for m in range(8)])


def propagated_estimate(octets: Sequence[ProbabilityOctet], method: str = "standard") -> tuple[float, KappaEstimate]:
    """Propagate per-combination run-to-run spreads through kappa.

    Returns the single-run kappa uncertainty and a :class:`KappaEstimate` for
    the mean-octet kappa whose sigma is that uncertainty over sqrt(n_runs).
    """
    mean_octet = ProbabilityOctet(np.mean([o.values for o in octets], axis=0))
    sigma_single = propagate_kappa_error(mean_octet, combination_sigmas(octets, method))
    k = sorkin_epsilon(mean_octet) / sorkin_delta(mean_octet)
    n = len(octets)
    return sigma_single, KappaEstimate(k, sigma_single / math.sqrt(n), "propagated", n)


def estimate_dict(est: KappaEstimate) -> dict:
    return asdict(est)
