"""Measurement sessions: randomized combination order, repeated runs, scans.

Random streams
--------------
Every run draws from ``SeedSequence(master_seed, spawn_key=(position_index,
0, run_index))``; the random-walk drift of a session uses ``spawn_key=
(position_index, 1)``.  Runs are therefore reproducible individually and a
position scan can be split across workers without changing any number.

Session clock
-------------
The clock starts at zero and advances by each measurement's duration plus
``dead_interval`` (the time it takes to move the blocking mask).  Drift is a
function of this clock, so the order of the eight settings matters whenever
the flux drifts.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence, TextIO

import numpy as np

from tripleslit.detection_laws import BORN, DetectionLaw
from tripleslit.hierarchy import (
    COMBINATIONS,
    DegenerateRegimeError,
    KappaEstimate,
    ProbabilityOctet,
    SlitCombination,
    kappa,
)
from tripleslit.instruments import (
    CannotTerminateError,
    Instruments,
    apd_observed_rate,
    apply_fault,
    heralded_measurement,
    poisson_counts,
    power_meter_reading,
)
from tripleslit.optics import SlitGeometry, central_maximum, expected_octet, transmittance_table
from tripleslit.stats import summarize

MODES = ("power-meter", "attenuated-apd", "heralded")
CSV_HEADER = ("run", "combination", "raw_value", "normalizer")


class RunDegenerateError(DegenerateRegimeError):
    def __init__(self, run_index: int, position: float, cause: DegenerateRegimeError):
        self.run_index = run_index
        self.position = position
        self.delta = cause.delta
        self.floor = cause.floor
        ValueError.__init__(self, f"run {run_index} at x={position!r} m: {cause}")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class RunPlan:
    """How a session is measured.

    Timed modes (``power-meter``, ``attenuated-apd``) use ``integration_time``
    per setting; ``heralded`` counts until ``trigger_quota`` triggers.  An
    empty ``positions`` means the central maximum.
    """

    mode: str = "attenuated-apd"
    n_runs: int = 100
    integration_time: float | None = 1.0
    trigger_quota: int | None = None
    positions: tuple[float, ...] = ()
    master_seed: int = 0
    dead_interval: float = 1.0
    randomize_order: bool = True

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(float(p) for p in self.positions))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.n_runs) != self.n_runs or self.n_runs < 1:
            raise ValueError("n_runs must be a positive integer")
        if self.mode == "heralded":
            if self.trigger_quota is None or self.integration_time is not None:
                raise ValueError("heralded mode needs trigger_quota and no integration_time")
            if int(self.trigger_quota) != self.trigger_quota or self.trigger_quota < 1:
                raise ValueError("trigger_quota must be a positive integer")
        else:
            if self.integration_time is None or self.trigger_quota is not None:
                raise ValueError(f"{self.mode} mode needs integration_time and no trigger_quota")
            if not self.integration_time > 0:
                raise ValueError("integration_time must be > 0")
        if self.dead_interval < 0:
            raise ValueError("dead_interval must be >= 0")


@dataclass(frozen=True)
class MeasurementRecord:
    run_index: int
    combination: SlitCombination
    raw_value: float
    normalizer: float
    timestamp_index: int

    def __post_init__(self):
        if not self.raw_value >= 0:
            raise ValueError(f"raw_value must be >= 0, got {self.raw_value}")
        if not self.normalizer > 0:
            raise ValueError(f"normalizer must be > 0, got {self.normalizer}")

    @property
    def value(self) -> float:
        return self.raw_value / self.normalizer


@dataclass
class KappaSeries:
    position: float
    kappa_values: list[float] = field(default_factory=list)
    records: list[MeasurementRecord] = field(default_factory=list)
    octets: list[ProbabilityOctet] = field(default_factory=list)


def octet_from_records(records: Sequence[MeasurementRecord]) -> ProbabilityOctet:
    values = [math.nan] * 8
    for rec in records:
        values[rec.combination.mask] = Fraction(rec.raw_value) / Fraction(rec.normalizer)
    return ProbabilityOctet(values)


@lru_cache(maxsize=64)
def _calibration(geom: SlitGeometry, law: DetectionLaw) -> tuple[float, float]:
    anchor = central_maximum(geom, law)
    return anchor, expected_octet(geom, anchor, law)[7]


@lru_cache(maxsize=1024)
def _expected_probabilities(geom: SlitGeometry, law: DetectionLaw, position: float,
                            faults: tuple) -> ProbabilityOctet:
    table = apply_fault(transmittance_table(geom), faults)
    return expected_octet(geom, position, law, table=table)


def anchor_position(geom: SlitGeometry, law: DetectionLaw = BORN) -> float:
    """Default detector position: the central maximum of the all-open pattern."""
    return _calibration(geom, law)[0]


def run_seed(master_seed: int, position_index: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(position_index, 0, run_index))


def drift_seed(master_seed: int, position_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(position_index, 1))


def session_horizon(instruments: Instruments, plan: RunPlan) -> float:
    per = plan.integration_time
    if plan.mode == "heralded":
        rate = instruments.heralded.trigger_rate
        per = plan.trigger_quota / rate if rate > 0 else math.inf
    return plan.n_runs * 8 * (per + plan.dead_interval)


def measurement_order(rng: np.random.Generator, randomize: bool = True) -> np.ndarray:
    """Bitmasks in the order they are measured within one run.

    A uniform draw over all 8! orderings when ``randomize``; otherwise the
    fixed bitmask order 0, A, B, AB, C, AC, BC, ABC.
    """
    return rng.permutation(8) if randomize else np.arange(8)


def run_experiment(geom: SlitGeometry, law: DetectionLaw, instruments: Instruments,
                   plan: RunPlan, position: float, position_index: int = 0) -> KappaSeries:
    """Measure ``plan.n_runs`` octets at ``position`` and compute kappa for each."""
    instruments.drift.check_horizon(session_horizon(instruments, plan))
    _, peak_prob = _calibration(geom, law)
    probs = _expected_probabilities(geom, law, float(position), instruments.faults).values
    rel = probs / peak_prob

    drift = instruments.drift
    drift_rng = np.random.default_rng(drift_seed(plan.master_seed, position_index))
    log_level = 0.0
    clock = 0.0
    since_last = 0.0
    series = KappaSeries(float(position))

    for run in range(plan.n_runs):
        rng = np.random.default_rng(run_seed(plan.master_seed, position_index, run))
        order = measurement_order(rng, plan.randomize_order)
        noise_rng = rng if instruments.noise else None
        records = []
        for step, mask in enumerate(order):
            mask = int(mask)
            log_level = drift.step(log_level, since_last, drift_rng)
            walk = math.exp(log_level)
            if plan.mode == "heralded":
                raw, norm, duration = _heralded(instruments, plan, rel[mask], walk * _point(drift, clock), noise_rng)
            else:
                duration = plan.integration_time
                m = walk * drift.mean_multiplier(clock, clock + duration)
                if plan.mode == "power-meter":
                    raw, norm = _power_meter(instruments, rel[mask], m, noise_rng), 1.0
                else:
                    raw, norm = _apd(instruments, rel[mask], m, duration, noise_rng), duration
            records.append(MeasurementRecord(run, COMBINATIONS[mask], raw, norm, step))
            clock += duration + plan.dead_interval
            since_last = duration + plan.dead_interval

        octet = octet_from_records(records)
        try:
            k = kappa(octet)
        except DegenerateRegimeError as exc:
            raise RunDegenerateError(run, float(position), exc) from exc
        series.kappa_values.append(k)
        series.records.extend(records)
        series.octets.append(octet)
    return series


def _point(drift, t: float) -> float:
    return drift.mean_multiplier(t, t)


def _power_meter(ins: Instruments, rel: float, multiplier: float, rng) -> float:
    true_power = ins.laser.peak_power * rel * multiplier + ins.laser.background_power
    return power_meter_reading(true_power, ins.power_meter, rng)


def _apd(ins: Instruments, rel: float, multiplier: float, duration: float, rng) -> float:
    true_rate = ins.laser.peak_rate * rel * multiplier + ins.laser.background_rate
    observed = apd_observed_rate(true_rate, ins.apd)
    if rng is None:
        return observed * duration
    return float(poisson_counts(observed, duration, rng))


def _heralded(ins: Instruments, plan: RunPlan, rel: float, multiplier: float, rng):
    source = ins.heralded
    p = min(1.0, source.signal_efficiency * rel)
    quota = plan.trigger_quota
    if rng is None:
        rate = source.trigger_rate * multiplier
        if rate <= 0:
            raise CannotTerminateError("trigger rate is zero; the trigger quota can never be reached")
        return quota * p, float(quota), quota / rate
    triggers, coincidences, elapsed = heralded_measurement(source, p, rng, multiplier, quota)
    return float(coincidences), float(triggers), elapsed


def position_scan(geom: SlitGeometry, law: DetectionLaw, instruments: Instruments,
                  plan: RunPlan, positions: Sequence[float],
                  error_method: str = "standard") -> list[tuple[float, KappaEstimate]]:
    """One summarized kappa per position, each from its own seeded session."""
    if len(positions) == 0:
        raise ValueError("need at least one position")
    out = []
    for i, x in enumerate(positions):
        series = run_experiment(geom, law, instruments, plan, x, position_index=i)
        if len(series.kappa_values) >= 2:
            _, est = summarize(series.kappa_values, error_method)
        else:
            est = KappaEstimate(series.kappa_values[0], 0.0, "standard-variance", 1)
        out.append((float(x), est))
    return out


def write_octets_csv(stream: TextIO, rows: Iterable[tuple[int, str, float, float]],
                     comments: Sequence[str] = ()) -> None:
    """Write measurement rows in the ingestion schema; floats use repr for exact round trips."""
    for line in comments:
        for part in str(line).splitlines():
            stream.write(f"# {part}\n")
    stream.write(",".join(CSV_HEADER) + "\n")
    for run, label, raw, norm in rows:
        stream.write(f"{int(run)},{label},{float(raw)!r},{float(norm)!r}\n")


def records_to_rows(records: Iterable[MeasurementRecord], run_offset: int = 0):
    for rec in records:
        yield rec.run_index + run_offset, rec.combination.label, rec.raw_value, rec.normalizer


def ingest_octets(source: str | os.PathLike | TextIO) -> list[tuple[int, ProbabilityOctet]]:
    """Read ``run,combination,raw_value,normalizer`` rows into one octet per run.

    Lines starting with ``#`` before the header are ignored.  Runs come back in
    order of first appearance.  Problems raise :class:`IngestError` naming the
    file row.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return ingest_octets(io.StringIO(fh.read()))

    lines = source.read().splitlines()
    start = 0
    while start < len(lines) and (lines[start].startswith("#") or not lines[start].strip()):
        start += 1
    if start >= len(lines):
        raise IngestError("no header row found")
    header = tuple(h.strip() for h in lines[start].split(","))
    if header != CSV_HEADER:
        raise IngestError(f"row {start + 1}: header must be {','.join(CSV_HEADER)!r}, got {lines[start]!r}")

    runs: dict[int, dict[int, Fraction]] = {}
    first_row: dict[int, int] = {}
    reader = csv.reader(lines[start + 1:])
    for offset, fields in enumerate(reader):
        rowno = start + 2 + offset
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != 4:
            raise IngestError(f"row {rowno}: expected 4 fields, got {len(fields)}")
        try:
            run = int(fields[0])
        except ValueError:
            raise IngestError(f"row {rowno}: run must be an integer, got {fields[0]!r}") from None
        try:
            comb = SlitCombination.parse(fields[1]) if fields[1].strip() else None
        except ValueError:
            comb = None
        if comb is None or fields[1].strip().upper() not in {c.label for c in COMBINATIONS}:
            raise IngestError(f"row {rowno}: unknown combination {fields[1]!r}")
        try:
            raw, norm = float(fields[2]), float(fields[3])
        except ValueError:
            raise IngestError(f"row {rowno}: raw_value and normalizer must be decimal numbers") from None
        if not math.isfinite(raw) or raw < 0:
            raise IngestError(f"row {rowno}: raw_value must be finite and >= 0, got {fields[2]!r}")
        if not math.isfinite(norm) or norm <= 0:
            raise IngestError(f"row {rowno}: normalizer must be finite and > 0, got {fields[3]!r}")
        slots = runs.setdefault(run, {})
        first_row.setdefault(run, rowno)
        if comb.mask in slots:
            raise IngestError(f"row {rowno}: duplicate combination {comb.label} in run {run}")
        slots[comb.mask] = Fraction(raw) / Fraction(norm)

    out = []
    for run, slots in runs.items():
        missing = [COMBINATIONS[m].label for m in range(8) if m not in slots]
        if missing:
            raise IngestError(
                f"run {run} (from row {first_row[run]}): missing combination(s) {', '.join(missing)}"
            )
        out.append((run, ProbabilityOctet([slots[m] for m in range(8)])))
    return out
