"""Scalar 1D diffraction through the triple slit.

Fields are normalized so that, under the square law, integrating the
intensity over the whole detector plane gives the power transmitted per unit
incident irradiance (per unit slit height).  The vertical direction is
collapsed by the cylindrical lens, so everything here is one-dimensional.

Two propagators are provided.  ``fraunhofer`` is the far-field closed form
(sum of sinc envelopes with linear phases).  ``fresnel`` integrates the
paraxial Fresnel kernel numerically over each open slit; in the far field it
tends to the Fraunhofer result times a pure phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, special

from tripleslit.detection_laws import BORN, DetectionLaw, detect
from tripleslit.hierarchy import (
    COMBINATIONS,
    LABELS,
    CombinationKey,
    ProbabilityOctet,
    SlitCombination,
    as_combination,
)

PROPAGATORS = ("fresnel", "fraunhofer")
TRANSMITTANCE_MAX = 1.5


class QuadratureError(RuntimeError):
    def __init__(self, residual: float, level: int):
        self.residual = residual
        self.level = level
        super().__init__(
            f"Fresnel quadrature did not converge after {2 ** level} intervals "
            f"(relative residual {residual:.3e})"
        )


class OutOfModelError(ValueError):
    pass


@dataclass(frozen=True)
class SlitGeometry:
    """Slit mask, wavelength and detector geometry; lengths in meters.

    Defaults: 30 um slits on a 100 um pitch, 810 nm, detector fibre (62.5 um
    core) 180 mm behind the slits, blocking mask 50 um in front of the slit
    mask with 53 um openings.
    """

    slit_centers: tuple[float, float, float] = (-100e-6, 0.0, 100e-6)
    slit_widths: tuple[float, float, float] = (30e-6, 30e-6, 30e-6)
    wavelength: float = 810e-9
    screen_distance: float = 0.18
    aperture_width: float = 62.5e-6
    mask_gap: float = 50e-6
    opening_width: float = 53e-6
    transmittance: tuple[float, float, float] = (1.0, 1.0, 1.0)
    propagator: str = "fresnel"

    def __post_init__(self):
        for name in ("slit_centers", "slit_widths", "transmittance"):
            val = tuple(float(v) for v in getattr(self, name))
            if len(val) != 3:
                raise ValueError(f"{name} needs 3 values (A, B, C), got {len(val)}")
            object.__setattr__(self, name, val)
        c, w = self.slit_centers, self.slit_widths
        if any(not (wi > 0) for wi in w):
            raise ValueError(f"slit widths must be > 0, got {w}")
        if not (c[0] < c[1] < c[2]):
            raise ValueError(f"slit centers must be strictly increasing, got {c}")
        for k in range(2):
            edge_gap = (c[k + 1] - w[k + 1] / 2) - (c[k] + w[k] / 2)
            if edge_gap <= 0:
                raise ValueError(f"slits {LABELS[k]} and {LABELS[k + 1]} overlap")
        for t in self.transmittance:
            if not 0 <= t <= TRANSMITTANCE_MAX:
                raise ValueError(f"transmittance must be in [0, {TRANSMITTANCE_MAX}], got {t}")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be > 0")
        if not self.screen_distance > 1e3 * self.wavelength:
            raise ValueError("screen_distance must be much larger than the wavelength")
        if not self.aperture_width > 0:
            raise ValueError("aperture_width must be > 0")
        if self.mask_gap < 0:
            raise ValueError("mask_gap must be >= 0")
        if self.propagator not in PROPAGATORS:
            raise ValueError(f"propagator must be one of {PROPAGATORS}, got {self.propagator!r}")

    @property
    def span(self) -> float:
        """Outer edge to outer edge of the slit group."""
        c, w = self.slit_centers, self.slit_widths
        return (c[2] + w[2] / 2) - (c[0] - w[0] / 2)

    @property
    def fringe_period(self) -> float:
        """lambda * L / d for the mean slit pitch d."""
        pitch = (self.slit_centers[2] - self.slit_centers[0]) / 2
        return self.wavelength * self.screen_distance / pitch

    @property
    def fraunhofer_distance(self) -> float:
        return self.span ** 2 / self.wavelength

    def with_(self, **changes) -> "SlitGeometry":
        return replace(self, **changes)


@dataclass(frozen=True)
class FieldProfile:
    positions: np.ndarray
    amplitude: np.ndarray
    open_set: SlitCombination

    def __post_init__(self):
        if np.any(np.diff(self.positions) <= 0):
            raise ValueError("positions must be strictly increasing")
        if not np.all(np.isfinite(self.amplitude)):
            raise ValueError("amplitudes must be finite")


def _romberg(integrand, a: float, b: float, rtol: float, min_level: int, max_level: int):
    """Trapezoid rule on [a, b] with interval doubling and Richardson extrapolation.

    ``integrand`` maps a 1D array of abscissae to an array whose last axis
    runs over them.  Stops when successive extrapolated estimates differ by
    less than ``rtol`` relative to the largest estimate magnitude.
    """
    h = b - a
    ends = integrand(np.array([a, b]))
    trap = 0.5 * h * (ends[..., 0] + ends[..., 1])
    rows = [[trap]]
    for level in range(1, max_level + 1):
        n_new = 1 << (level - 1)
        h /= 2
        mids = a + h * (2 * np.arange(n_new) + 1)
        trap = 0.5 * trap + h * integrand(mids).sum(axis=-1)
        row = [trap]
        for k in range(1, level + 1):
            prev = rows[-1][k - 1] if k - 1 < len(rows[-1]) else None
            if prev is None:
                break
            row.append(row[k - 1] + (row[k - 1] - prev) / (4 ** k - 1))
        best, last = row[-1], rows[-1][-1]
        rows.append(row)
        if level >= min_level:
            scale = np.max(np.abs(best))
            change = np.max(np.abs(best - last))
            residual = change / scale if scale > 0 else 0.0
            if residual < rtol:
                return best
    raise QuadratureError(float(residual), max_level)


def slit_fields(geom: SlitGeometry, x, propagator: str | None = None,
                rtol: float = 1e-9) -> np.ndarray:
    """Unit-transmittance field of each slit at detector positions ``x``.

    Returns a complex array of shape (3, len(x)).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    propagator = propagator or geom.propagator
    lam_l = geom.wavelength * geom.screen_distance
    norm = 1.0 / math.sqrt(lam_l)
    out = np.empty((3, x.size), dtype=complex)
    for j, (c, w) in enumerate(zip(geom.slit_centers, geom.slit_widths)):
        if propagator == "fraunhofer":
            # np.sinc(u) = sin(pi u) / (pi u)
            out[j] = norm * w * np.sinc(w * x / lam_l) * np.exp(2j * np.pi * c * x / lam_l)
        elif propagator == "fresnel":
            def kernel(xi, x=x):
                d = x[:, None] - xi[None, :]
                return np.exp(-1j * np.pi * d * d / lam_l)

            out[j] = norm * _romberg(kernel, c - w / 2, c + w / 2, rtol=rtol,
                                     min_level=4, max_level=16)
        else:
            raise ValueError(f"unknown propagator {propagator!r}")
    return out


def combine(unit_fields: np.ndarray, open_set: CombinationKey,
            transmittance: Sequence[float]) -> np.ndarray:
    """Field of an open subset as the amplitude-weighted sum of single-slit fields."""
    open_set = as_combination(open_set)
    total = np.zeros(unit_fields.shape[1:], dtype=complex)
    for j, lab in enumerate(LABELS):
        if lab in open_set.members:
            total = total + math.sqrt(transmittance[j]) * unit_fields[j]
    return total


def fraunhofer_field(geom: SlitGeometry, open_set: CombinationKey, x):
    out = combine(slit_fields(geom, x, "fraunhofer"), open_set, geom.transmittance)
    return complex(out[0]) if np.ndim(x) == 0 else out


def fresnel_field(geom: SlitGeometry, open_set: CombinationKey, x, rtol: float = 1e-9):
    """Fresnel-kernel field at ``x``; each slit integrated until the relative change
    between doublings drops below ``rtol`` (:class:`QuadratureError` otherwise)."""
    out = combine(slit_fields(geom, x, "fresnel", rtol=rtol), open_set, geom.transmittance)
    return complex(out[0]) if np.ndim(x) == 0 else out


def field_profile(geom: SlitGeometry, open_set: CombinationKey, positions) -> FieldProfile:
    positions = np.asarray(positions, dtype=float)
    amp = combine(slit_fields(geom, positions), open_set, geom.transmittance)
    return FieldProfile(positions, amp, as_combination(open_set))


def aperture_nodes(x_center: float, width: float, n: int = 48) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights spanning the detector aperture."""
    t, wts = np.polynomial.legendre.leggauss(n)
    return x_center + 0.5 * width * t, 0.5 * width * wts


def _integrate_aperture(unit_fields, weights, open_set, transmittance, law) -> float:
    if as_combination(open_set).mask == 0:
        return 0.0
    return float(np.dot(weights, detect(combine(unit_fields, open_set, transmittance), law)))


def detected_probability(geom: SlitGeometry, open_set: CombinationKey, x_center: float,
                         law: DetectionLaw = BORN, n_nodes: int = 48) -> float:
    """Detection law integrated over the fibre aperture centred on ``x_center``."""
    nodes, weights = aperture_nodes(x_center, geom.aperture_width, n_nodes)
    fields = slit_fields(geom, nodes)
    return _integrate_aperture(fields, weights, open_set, geom.transmittance, law)


TransmittanceTable = Mapping[SlitCombination, tuple[float, float, float]]


def transmittance_table(geom: SlitGeometry) -> dict[SlitCombination, tuple[float, float, float]]:
    """Per-combination slit transmittances, all equal to the geometry's nominal values."""
    return {c: tuple(geom.transmittance) for c in COMBINATIONS}


def expected_octet(geom: SlitGeometry, x_center: float, law: DetectionLaw = BORN,
                   background: float = 0.0, table: TransmittanceTable | None = None,
                   n_nodes: int = 48) -> ProbabilityOctet:
    """Octet of aperture-integrated probabilities, each combination with its own
    slit transmittances (``table``), plus a constant background."""
    if background < 0:
        raise ValueError("background must be >= 0")
    table = table or transmittance_table(geom)
    nodes, weights = aperture_nodes(x_center, geom.aperture_width, n_nodes)
    fields = slit_fields(geom, nodes)
    vals = [_integrate_aperture(fields, weights, c, table[c], law) + background
            for c in COMBINATIONS]
    return ProbabilityOctet(vals)


def ideal_octet(geom: SlitGeometry, x_center: float, law: DetectionLaw = BORN,
                background: float = 0.0) -> ProbabilityOctet:
    return expected_octet(geom, x_center, law, background)


def central_maximum(geom: SlitGeometry, law: DetectionLaw = BORN) -> float:
    """Detector position of the central maximum of the all-open pattern."""
    nodes_t, wts_t = np.polynomial.legendre.leggauss(48)
    full = SlitCombination(7)

    def neg_prob(x):
        nodes = x + 0.5 * geom.aperture_width * nodes_t
        f = combine(slit_fields(geom, nodes), full, geom.transmittance)
        return -float(np.dot(0.5 * geom.aperture_width * wts_t, detect(f, law)))

    half = 0.5 * geom.fringe_period
    grid = np.linspace(-half, half, 41)
    start = grid[int(np.argmin([neg_prob(x) for x in grid]))]
    step = grid[1] - grid[0]
    res = optimize.minimize_scalar(neg_prob, bounds=(start - step, start + step),
                                   method="bounded", options={"xatol": 1e-12})
    return float(res.x)


def _gap_intensity(xi: np.ndarray, lo: float, hi: float, gap: float, wavelength: float) -> np.ndarray:
    # unit plane wave through [lo, hi], Fresnel-propagated across the gap
    scale = math.sqrt(2.0 / (wavelength * gap))
    s1, c1 = special.fresnel(scale * (lo - xi))
    s2, c2 = special.fresnel(scale * (hi - xi))
    return 0.5 * ((c2 - c1) ** 2 + (s2 - s1) ** 2)


def gap_transmitted_power(opening_width: float, slit_width: float, gap: float,
                          shift: float, wavelength: float, n_nodes: int = 1024) -> float:
    """Power through a slit centred at 0 behind an opening centred at ``shift``.

    A unit plane wave leaves the opening and propagates ``gap`` to the slit
    plane; the returned value is the intensity integrated over the slit.
    """
    lo, hi = shift - opening_width / 2, shift + opening_width / 2
    if gap == 0:
        a, b = max(lo, -slit_width / 2), min(hi, slit_width / 2)
        return max(0.0, b - a)
    t, wts = np.polynomial.legendre.leggauss(n_nodes)
    xi = 0.5 * slit_width * t
    return float(np.dot(0.5 * slit_width * wts, _gap_intensity(xi, lo, hi, gap, wavelength)))


def effective_transmission(opening_width: float, slit_width: float, gap: float,
                           shift: float, wavelength: float) -> float:
    """Slit transmission with the blocking opening shifted, relative to centred.

    Exactly 1 for zero shift, and for zero gap as long as the opening still
    covers the slit.
    """
    if not opening_width > slit_width:
        raise ValueError("opening_width must exceed slit_width")
    if gap < 0:
        raise ValueError("gap must be >= 0")
    margin = (opening_width - slit_width) / 2
    if abs(shift) > margin:
        raise OutOfModelError(
            f"shift {shift:g} m exceeds the overlap margin {margin:g} m; "
            "the opening no longer covers the slit"
        )
    if shift == 0 or gap == 0:
        return 1.0
    t0 = gap_transmitted_power(opening_width, slit_width, gap, 0.0, wavelength)
    ts = gap_transmitted_power(opening_width, slit_width, gap, shift, wavelength)
    return ts / t0
