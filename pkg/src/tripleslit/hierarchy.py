"""Inclusion-exclusion interference terms for slit subsets.

Every subset of the three slits is indexed by a bitmask (A=1, B=2, C=4), so
the empty set (all slits closed, the background measurement) has index 0 and
the full triple has index 7.

Sums and the kappa ratio are evaluated in exact rational arithmetic on the
stored values and rounded once at the end.  The third-order term is a small
difference of large numbers, so this removes cancellation error, makes the
general N-path term agree bit for bit with the dedicated formulas, and makes
kappa exactly invariant under any exact rescaling of the octet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

LABELS = ("A", "B", "C")
METHODS = ("standard-variance", "allan-variance", "propagated")


class DegenerateRegimeError(ValueError):
    """Raised when the pairwise interference sum is too small to normalize by.

    This signals classical (non-interfering) data rather than a violation of
    the square law.
    """

    def __init__(self, delta: float, floor: float):
        self.delta = delta
        self.floor = floor
        super().__init__(
            f"pairwise interference sum delta={delta!r} <= floor={floor!r}; "
            "no interference to normalize against"
        )


@dataclass(frozen=True, order=True)
class SlitCombination:
    """A subset of the slits {A, B, C}, stored as a bitmask."""

    mask: int

    def __post_init__(self):
        if not 0 <= self.mask < 8:
            raise ValueError(f"slit mask must be in [0, 8), got {self.mask}")

    @classmethod
    def parse(cls, text: str) -> "SlitCombination":
        """Parse ``"0"`` (or ``""``) for the empty set, else letters like ``"BC"``."""
        text = text.strip().upper()
        if text in ("0", "", "EMPTY"):
            return cls(0)
        mask = 0
        for ch in text:
            if ch not in LABELS:
                raise ValueError(f"unknown slit label {ch!r} in {text!r}")
            bit = 1 << LABELS.index(ch)
            if mask & bit:
                raise ValueError(f"slit {ch!r} repeated in {text!r}")
            mask |= bit
        return cls(mask)

    @classmethod
    def of(cls, members: Iterable[str]) -> "SlitCombination":
        return cls.parse("".join(members) or "0")

    @property
    def members(self) -> tuple[str, ...]:
        return tuple(lab for i, lab in enumerate(LABELS) if self.mask >> i & 1)

    @property
    def label(self) -> str:
        return "".join(self.members) or "0"

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __contains__(self, slit: str) -> bool:
        return slit in self.members

    def __iter__(self):
        return iter(self.members)

    def __str__(self) -> str:
        return self.label


COMBINATIONS: tuple[SlitCombination, ...] = tuple(SlitCombination(m) for m in range(8))
EMPTY = COMBINATIONS[0]
PAIRS = tuple(SlitCombination.parse(s) for s in ("AB", "BC", "AC"))

CombinationKey = Union[SlitCombination, str, int]


def as_combination(key: CombinationKey) -> SlitCombination:
    if isinstance(key, SlitCombination):
        return key
    if isinstance(key, (int, np.integer)):
        return SlitCombination(int(key))
    return SlitCombination.parse(key)


def _exact(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"value must be finite, got {value!r}")
    return Fraction(v)


class ProbabilityOctet:
    """The eight measured values P_S, stored in bitmask order.

    Values may be counts, count rates or optical power, as long as one unit is
    used throughout.  Index with a :class:`SlitCombination`, a label such as
    ``"AB"`` (``"0"`` for the background) or the bitmask integer.

    Inputs are kept exactly (``Fraction`` inputs stay rational, floats are
    converted without rounding); :attr:`values` is the float view.
    """

    __slots__ = ("_values", "_exact")

    def __init__(self, values: Sequence[Real]):
        values = list(values) if not isinstance(values, np.ndarray) else values.tolist()
        if len(values) != 8:
            raise ValueError(f"an octet needs exactly 8 values, got {len(values)}")
        exact = tuple(_exact(v) for v in values)
        if any(v < 0 for v in exact):
            raise ValueError(f"octet values must be nonnegative: {[float(v) for v in exact]}")
        arr = np.array([float(v) for v in exact])
        arr.flags.writeable = False
        self._values = arr
        self._exact = exact

    @classmethod
    def from_mapping(cls, mapping: Mapping[CombinationKey, Real]) -> "ProbabilityOctet":
        values: list = [None] * 8
        for key, val in mapping.items():
            values[as_combination(key).mask] = val
        missing = [COMBINATIONS[m].label for m, v in enumerate(values) if v is None]
        if missing:
            raise ValueError(f"octet is missing combinations: {', '.join(missing)}")
        return cls(values)

    @classmethod
    def from_single_and_pairs(cls, single: float, pair: float, triple: float,
                              background: float = 0.0) -> "ProbabilityOctet":
        """Symmetric octet: every single slit, every pair equal."""
        vals = [background, single, single, pair, single, pair, pair, triple]
        return cls(vals)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def exact(self) -> tuple[Fraction, ...]:
        return self._exact

    def __getitem__(self, key: CombinationKey) -> float:
        return float(self._values[as_combination(key).mask])

    def __iter__(self):
        return iter(self._values.tolist())

    def __len__(self) -> int:
        return 8

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProbabilityOctet):
            return NotImplemented
        return self._exact == other._exact

    def __hash__(self) -> int:
        return hash(self._exact)

    def __repr__(self) -> str:
        inner = ", ".join(f"{c.label}={v!r}" for c, v in zip(COMBINATIONS, self._values.tolist()))
        return f"ProbabilityOctet({inner})"

    def scaled(self, factor: Real) -> "ProbabilityOctet":
        """Exact rescaling by ``factor``."""
        f = _exact(factor)
        return ProbabilityOctet([v * f for v in self._exact])

    def as_dict(self) -> dict[str, float]:
        return {c.label: float(v) for c, v in zip(COMBINATIONS, self._values)}


@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    sigma: float
    method: str
    n_runs: int

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.n_runs < 1:
            raise ValueError(f"n_runs must be >= 1, got {self.n_runs}")


def _pairwise_exact(v: Sequence[Fraction], pair: SlitCombination) -> Fraction:
    i, j = (1 << LABELS.index(s) for s in pair.members)
    return v[pair.mask] - v[i] - v[j] + v[0]


def _epsilon_exact(v: Sequence[Fraction]) -> Fraction:
    return v[7] - v[3] - v[5] - v[6] + v[1] + v[2] + v[4] - v[0]


def _delta_exact(v: Sequence[Fraction]) -> Fraction:
    return sum((abs(_pairwise_exact(v, p)) for p in PAIRS), Fraction(0))


def pairwise_interference(octet: ProbabilityOctet, pair: CombinationKey) -> float:
    """Background-corrected second-order term ``P_ij - P_i - P_j + P_0``."""
    pair = as_combination(pair)
    if len(pair) != 2:
        raise ValueError(f"pairwise interference needs a 2-slit combination, got {pair.label!r}")
    return float(_pairwise_exact(octet.exact, pair))


def sorkin_epsilon(octet: ProbabilityOctet) -> float:
    """Third-order term P_ABC - P_AB - P_AC - P_BC + P_A + P_B + P_C - P_0."""
    return float(_epsilon_exact(octet.exact))


def sorkin_delta(octet: ProbabilityOctet) -> float:
    return float(_delta_exact(octet.exact))


def default_delta_floor(octet: ProbabilityOctet) -> float:
    return 1e-9 * float(np.max(octet.values))


def kappa(octet: ProbabilityOctet, delta_floor: float | None = None) -> float:
    """Third-order term normalized by the summed pairwise magnitudes.

    ``delta_floor`` defaults to 1e-9 of the largest octet entry; at or below
    it a :class:`DegenerateRegimeError` is raised.
    """
    if delta_floor is None:
        delta_floor = default_delta_floor(octet)
    if delta_floor < 0:
        raise ValueError(f"delta_floor must be >= 0, got {delta_floor}")
    delta = _delta_exact(octet.exact)
    if delta <= Fraction(delta_floor):
        raise DegenerateRegimeError(float(delta), delta_floor)
    return float(_epsilon_exact(octet.exact) / delta)


def sorkin_term(order: int, subset_probabilities: Mapping[int, Real] | Sequence[Real]) -> float:
    """Order-N interference term: sum over subsets S of (-1)^(N-|S|) P_S.

    ``subset_probabilities`` is indexed by subset bitmask (0 .. 2**N - 1),
    either as a sequence or as a mapping; the empty subset is included.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    n = 1 << order
    if isinstance(subset_probabilities, Mapping):
        missing = [m for m in range(n) if m not in subset_probabilities]
        if missing:
            raise KeyError(f"missing subset probabilities for masks {missing}")
        probs = [_exact(subset_probabilities[m]) for m in range(n)]
    else:
        probs = [_exact(p) for p in subset_probabilities]
        if len(probs) != n:
            raise KeyError(f"order {order} needs {n} subset values, got {len(probs)}")
    total = Fraction(0)
    for mask, p in enumerate(probs):
        total += -p if (order - bin(mask).count("1")) % 2 else p
    return float(total)


def restrict(octet: ProbabilityOctet, slits: CombinationKey) -> list[Fraction]:
    """Subset values of ``octet`` restricted to ``slits``, re-indexed 0 .. 2**k - 1."""
    members = [LABELS.index(s) for s in as_combination(slits).members]
    out = []
    for sub in range(1 << len(members)):
        mask = sum(1 << members[k] for k in range(len(members)) if sub >> k & 1)
        out.append(octet.exact[mask])
    return out


def square_law_subsets(amplitudes: Sequence[complex], background: float = 0.0) -> list[float]:
    """|sum of amplitudes over S|^2 + background for every subset S (bitmask order)."""
    amps = np.asarray(amplitudes, dtype=complex)
    out = []
    for mask in range(1 << len(amps)):
        total = sum((amps[k] for k in range(len(amps)) if mask >> k & 1), 0j)
        out.append(abs(total) ** 2 + background if mask else background)
    return out
