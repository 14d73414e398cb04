"""Source and detector models, drift, and per-combination transmittance faults.

Every stochastic function takes an explicit ``numpy.random.Generator``; the
models themselves are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from tripleslit.hierarchy import LABELS, CombinationKey, SlitCombination, as_combination


class OverRangeError(ValueError):
    pass


class CannotTerminateError(ValueError):
    pass


@dataclass(frozen=True)
class PowerMeterModel:
    """Photodiode power meter with a quadratic full-scale nonlinearity."""

    full_scale: float = 2.5e-6
    nonlinearity_fraction: float = 0.005
    noise_sigma: float = 1e-9

    def __post_init__(self):
        if not self.full_scale > 0:
            raise ValueError("full_scale must be > 0")
        if self.nonlinearity_fraction < 0:
            raise ValueError("nonlinearity_fraction must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class ApdModel:
    """Non-paralyzable avalanche photodiode."""

    dead_time: float = 50e-9
    dark_rate: float = 100.0
    efficiency: float = 0.6

    def __post_init__(self):
        if self.dead_time < 0:
            raise ValueError("dead_time must be >= 0")
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be >= 0")
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must be in [0, 1]")


@dataclass(frozen=True)
class LaserSource:
    """Attenuated laser, calibrated by what reaches the detector.

    ``peak_power`` / ``peak_rate`` are the optical power and photon rate
    collected with all three slits open at the central maximum; ``background_*``
    is stray light reaching the detector whatever the slit setting.
    """

    peak_power: float = 2.0e-6
    peak_rate: float = 160_000.0
    background_power: float = 2.0e-8
    background_rate: float = 200.0

    def __post_init__(self):
        for name in ("peak_power", "peak_rate", "background_power", "background_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class HeraldedSource:
    """Photon-pair source; the trigger photon heralds the signal photon.

    ``signal_efficiency`` is the probability that a heralded photon gives a
    coincidence when all slits are open and the detector sits at the central
    maximum.  Other settings scale it by their relative detection probability.
    """

    pair_rate: float = 200_000.0
    trigger_efficiency: float = 0.2
    signal_efficiency: float = 1.5e-3
    trigger_quota: int = 30_000_000

    def __post_init__(self):
        if self.pair_rate < 0:
            raise ValueError("pair_rate must be >= 0")
        for name in ("trigger_efficiency", "signal_efficiency"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if int(self.trigger_quota) != self.trigger_quota or self.trigger_quota < 1:
            raise ValueError("trigger_quota must be a positive integer")

    @property
    def trigger_rate(self) -> float:
        return self.pair_rate * self.trigger_efficiency


DRIFT_KINDS = ("constant", "linear", "sinusoidal", "random-walk")


@dataclass(frozen=True)
class DriftModel:
    """Multiplicative source-flux drift m(t).

    linear: 1 + slope*t.  sinusoidal: 1 + amplitude*sin(2 pi t / period).
    random-walk: log m takes Gaussian steps of ``step_sigma * sqrt(dt)``.
    """

    kind: str = "constant"
    slope: float = 0.0
    amplitude: float = 0.0
    period: float = 600.0
    step_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"drift kind must be one of {DRIFT_KINDS}, got {self.kind!r}")
        if self.kind == "sinusoidal":
            if not 0 <= self.amplitude < 1:
                raise ValueError("sinusoidal drift amplitude must be in [0, 1)")
            if not self.period > 0:
                raise ValueError("drift period must be > 0")
        if self.step_sigma < 0:
            raise ValueError("step_sigma must be >= 0")

    @property
    def is_stochastic(self) -> bool:
        return self.kind == "random-walk"

    def check_horizon(self, horizon: float) -> None:
        """Raise unless the flux multiplier stays positive on [0, horizon]."""
        if self.kind == "linear" and 1 + self.slope * horizon <= 0:
            raise ValueError(
                f"linear drift slope {self.slope} drives the flux to zero before t={horizon:g} s"
            )

    def mean_multiplier(self, t0: float, t1: float) -> float:
        """Average multiplier over [t0, t1] for the deterministic kinds."""
        if self.kind in ("constant", "random-walk"):
            return 1.0
        if self.kind == "linear":
            return 1.0 + self.slope * 0.5 * (t0 + t1)
        w = 2 * math.pi / self.period
        if t1 == t0:
            return 1.0 + self.amplitude * math.sin(w * t0)
        return 1.0 + self.amplitude * (math.cos(w * t0) - math.cos(w * t1)) / (w * (t1 - t0))

    def step(self, log_level: float, dt: float, rng: np.random.Generator) -> float:
        """Advance the random-walk log-multiplier by ``dt`` seconds."""
        if self.kind != "random-walk" or self.step_sigma == 0 or dt <= 0:
            return log_level
        return log_level + self.step_sigma * math.sqrt(dt) * rng.standard_normal()


@dataclass(frozen=True)
class TransmittanceFault:
    """Multiply one slit's transmittance, only while one combination is measured."""

    combination: SlitCombination
    slit: str
    multiplier: float

    def __post_init__(self):
        object.__setattr__(self, "combination", as_combination(self.combination))
        if self.slit not in LABELS:
            raise ValueError(f"unknown slit {self.slit!r}")
        if self.slit not in self.combination.members:
            raise ValueError(
                f"fault slit {self.slit} is not open in combination {self.combination.label}"
            )
        if not 0.5 <= self.multiplier <= 1.5:
            raise ValueError(f"fault multiplier {self.multiplier} outside [0.5, 1.5]")


def power_meter_reading(true_power: float, model: PowerMeterModel,
                        rng: np.random.Generator | None = None) -> float:
    """Reading P(1 + f P / full_scale) plus Gaussian noise (when ``rng`` is given).

    Readings are floored at zero.
    """
    if true_power < 0 or true_power > model.full_scale:
        raise OverRangeError(
            f"power {true_power:g} W outside the meter range [0, {model.full_scale:g}] W"
        )
    reading = true_power * (1.0 + model.nonlinearity_fraction * true_power / model.full_scale)
    if rng is not None and model.noise_sigma > 0:
        reading += model.noise_sigma * rng.standard_normal()
    return max(reading, 0.0)


def apd_observed_rate(true_rate: float, model: ApdModel) -> float:
    if true_rate < 0:
        raise ValueError("true_rate must be >= 0")
    detected = model.efficiency * true_rate
    return detected / (1.0 + detected * model.dead_time) + model.dark_rate


def poisson_counts(mean_rate: float, duration: float, rng: np.random.Generator) -> int:
    mean = mean_rate * duration
    if not math.isfinite(mean):
        raise ValueError("mean_rate * duration must be finite")
    return int(rng.poisson(mean))


def heralded_measurement(source: HeraldedSource, signal_success_prob: float,
                         rng: np.random.Generator, flux_multiplier: float = 1.0,
                         quota: int | None = None) -> tuple[int, int, float]:
    """Count until the trigger detector reaches its quota.

    Returns (triggers, coincidences, elapsed seconds).  Each trigger yields a
    coincidence with probability ``signal_success_prob``; the waiting time
    for ``quota`` triggers of a Poisson process is Gamma distributed.
    """
    if not 0 <= signal_success_prob <= 1:
        raise ValueError("signal_success_prob must be in [0, 1]")
    quota = int(source.trigger_quota if quota is None else quota)
    rate = source.trigger_rate * flux_multiplier
    if rate <= 0:
        raise CannotTerminateError("trigger rate is zero; the trigger quota can never be reached")
    coincidences = int(rng.binomial(quota, signal_success_prob))
    elapsed = float(rng.gamma(quota, 1.0 / rate))
    return quota, coincidences, elapsed


Table = Mapping[SlitCombination, tuple[float, float, float]]


def apply_fault(table: Table, faults: Iterable[TransmittanceFault]) -> dict[SlitCombination, tuple[float, float, float]]:
    """Copy of ``table`` with each fault applied only inside its own combination."""
    out = {c: tuple(t) for c, t in table.items()}
    for fault in faults:
        if fault.slit not in fault.combination.members:
            raise ValueError(
                f"fault slit {fault.slit} is not open in combination {fault.combination.label}"
            )
        row = list(out[fault.combination])
        row[LABELS.index(fault.slit)] *= fault.multiplier
        out[fault.combination] = tuple(row)
    return out


def misalignment_fault(geom, combination: CombinationKey, slit: str, shift: float) -> TransmittanceFault:
    """Fault produced by shifting one blocking-mask opening by ``shift`` meters."""
    from tripleslit.optics import effective_transmission

    k = LABELS.index(slit)
    ratio = effective_transmission(geom.opening_width, geom.slit_widths[k], geom.mask_gap,
                                   shift, geom.wavelength)
    return TransmittanceFault(as_combination(combination), slit, ratio)


@dataclass(frozen=True)
class Instruments:
    """Everything between the slit plane and the recorded numbers."""

    power_meter: PowerMeterModel = field(default_factory=PowerMeterModel)
    apd: ApdModel = field(default_factory=ApdModel)
    laser: LaserSource = field(default_factory=LaserSource)
    heralded: HeraldedSource = field(default_factory=HeraldedSource)
    drift: DriftModel = field(default_factory=DriftModel)
    faults: tuple[TransmittanceFault, ...] = ()
    noise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "faults", tuple(self.faults))


IDEAL = Instruments(
    power_meter=PowerMeterModel(nonlinearity_fraction=0.0, noise_sigma=0.0),
    apd=ApdModel(dead_time=0.0, dark_rate=0.0, efficiency=1.0),
    laser=LaserSource(background_power=0.0, background_rate=0.0),
    noise=False,
)
