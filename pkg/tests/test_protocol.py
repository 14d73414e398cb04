import io
import itertools
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripleslit.detection_laws import BORN
from tripleslit.hierarchy import COMBINATIONS, kappa
from tripleslit.instruments import (
    IDEAL,
    DriftModel,
    HeraldedSource,
    Instruments,
    TransmittanceFault,
)
from tripleslit.optics import SlitGeometry, expected_octet
from tripleslit.protocol import (
    IngestError,
    MeasurementRecord,
    RunDegenerateError,
    RunPlan,
    anchor_position,
    ingest_octets,
    measurement_order,
    octet_from_records,
    position_scan,
    records_to_rows,
    run_experiment,
    write_octets_csv,
)
from tripleslit.stats import propagated_estimate

GEOM = SlitGeometry()


def apd_plan(**kw):
    return RunPlan(**{"mode": "attenuated-apd", "n_runs": 10, **kw})


def test_plan_needs_one_stopping_rule():
    with pytest.raises(ValueError):
        RunPlan(mode="heralded", trigger_quota=None, integration_time=1.0)
    with pytest.raises(ValueError):
        RunPlan(mode="power-meter", integration_time=1.0, trigger_quota=10)
    with pytest.raises(ValueError):
        RunPlan(mode="telescope")
    with pytest.raises(ValueError):
        RunPlan(n_runs=0)
    RunPlan(mode="heralded", integration_time=None, trigger_quota=10)


@pytest.mark.parametrize("mode", ["power-meter", "attenuated-apd"])
def test_ideal_born_session_is_null(mode):
    series = run_experiment(GEOM, BORN, IDEAL, apd_plan(mode=mode, master_seed=5), anchor_position(GEOM))
    assert len(series.kappa_values) == 10
    assert max(abs(k) for k in series.kappa_values) <= 1e-10


def test_ideal_instruments_report_the_optics_exactly():
    x = anchor_position(GEOM)
    series = run_experiment(GEOM, BORN, IDEAL, apd_plan(n_runs=1), x)
    probs = expected_octet(GEOM, x, BORN).values
    measured = series.octets[0].values
    np.testing.assert_allclose(measured / measured[7], probs / probs[7], rtol=1e-14)
    assert measured[7] == pytest.approx(IDEAL.laser.peak_rate, rel=1e-12)


def test_same_seed_same_session():
    ins = Instruments(drift=DriftModel("random-walk", step_sigma=1e-4))
    plan = apd_plan(master_seed=11)
    a = run_experiment(GEOM, BORN, ins, plan, 0.0)
    b = run_experiment(GEOM, BORN, ins, plan, 0.0)
    assert a.kappa_values == b.kappa_values
    assert a.records == b.records
    c = run_experiment(GEOM, BORN, ins, replace(plan, master_seed=12), 0.0)
    assert c.kappa_values != a.kappa_values


def test_runs_reproducible_individually():
    ins = Instruments()
    long = run_experiment(GEOM, BORN, ins, apd_plan(n_runs=6), 0.0)
    short = run_experiment(GEOM, BORN, ins, apd_plan(n_runs=3), 0.0)
    assert long.kappa_values[:3] == short.kappa_values


def test_background_is_measured_not_synthesized():
    series = run_experiment(GEOM, BORN, Instruments(), apd_plan(n_runs=3), 0.0)
    backgrounds = [r for r in series.records if r.combination.mask == 0]
    assert len(backgrounds) == 3
    assert len({r.raw_value for r in backgrounds}) > 1
    assert all(r.raw_value > 0 for r in backgrounds)


def test_each_run_measures_every_combination_once():
    series = run_experiment(GEOM, BORN, Instruments(), apd_plan(n_runs=20), 0.0)
    for run in range(20):
        masks = sorted(r.combination.mask for r in series.records if r.run_index == run)
        assert masks == list(range(8))
    orders = {tuple(r.combination.mask for r in series.records if r.run_index == run) for run in range(20)}
    assert len(orders) > 1


def test_fixed_order_when_not_randomized():
    rng = np.random.default_rng(0)
    assert measurement_order(rng, False).tolist() == list(range(8))


def test_measurement_order_uniform_over_slots():
    rng = np.random.default_rng(2024)
    n = 40_000
    counts = np.zeros((8, 8))
    for _ in range(n):
        counts[np.arange(8), measurement_order(rng)] += 1
    expected = n / 8
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # 49 degrees of freedom; the 0.9999 quantile is about 100
    assert chi2 < 100


def test_every_ordering_reachable():
    rng = np.random.default_rng(99)
    seen = set()
    target = 40320
    for _ in range(1_000_000):
        seen.add(measurement_order(rng).tobytes())
        if len(seen) == target:
            break
    assert len(seen) == target


def test_heralded_desk_scale_null():
    ins = Instruments(heralded=HeraldedSource(trigger_quota=300_000))
    plan = RunPlan(mode="heralded", n_runs=60, integration_time=None, trigger_quota=300_000, master_seed=3)
    series = run_experiment(GEOM, BORN, ins, plan, anchor_position(GEOM))
    k = np.array(series.kappa_values)
    se = k.std(ddof=1) / np.sqrt(len(k))
    assert abs(k.mean()) < 4 * se
    for r in series.records:
        assert r.normalizer == 300_000


def test_heralded_cannot_terminate_without_triggers():
    from tripleslit.instruments import CannotTerminateError

    ins = Instruments(heralded=HeraldedSource(pair_rate=0.0, trigger_quota=10))
    plan = RunPlan(mode="heralded", n_runs=1, integration_time=None, trigger_quota=10)
    with pytest.raises(CannotTerminateError):
        run_experiment(GEOM, BORN, ins, plan, 0.0)


def test_fault_breaks_the_null_only_through_one_combination():
    fault = TransmittanceFault("BC", "B", 0.97)
    ins = replace(IDEAL, faults=(fault,))
    x = anchor_position(GEOM)
    series = run_experiment(GEOM, BORN, ins, apd_plan(n_runs=2), x)
    clean = run_experiment(GEOM, BORN, IDEAL, apd_plan(n_runs=2), x)
    assert abs(series.kappa_values[0]) > 1e-3
    diff = series.octets[0].values != clean.octets[0].values
    assert diff.tolist() == [m == 6 for m in range(8)]


def test_dark_position_is_degenerate():
    # every slit contributes zero where the single-slit envelope vanishes
    geom = SlitGeometry(propagator="fraunhofer", slit_widths=(30e-6,) * 3)
    envelope_zero = geom.wavelength * geom.screen_distance / 30e-6
    flat = replace(IDEAL, laser=replace(IDEAL.laser, background_rate=50.0))
    with pytest.raises(RunDegenerateError) as info:
        run_experiment(replace(geom, aperture_width=1e-12), BORN, flat, apd_plan(n_runs=1), envelope_zero)
    assert info.value.run_index == 0


def test_position_scan_ideal_and_faulted():
    positions = np.linspace(-2e-3, 2e-3, 5)
    ideal = position_scan(GEOM, BORN, IDEAL, apd_plan(n_runs=2), positions)
    assert [x for x, _ in ideal] == positions.tolist()
    assert all(abs(est.kappa) <= 1e-10 for _, est in ideal)
    faulted = position_scan(GEOM, BORN, replace(IDEAL, faults=(TransmittanceFault("BC", "B", 0.97),)),
                            apd_plan(n_runs=2), positions)
    values = [est.kappa for _, est in faulted]
    assert max(values) - min(values) > 1e-3
    with pytest.raises(ValueError):
        position_scan(GEOM, BORN, IDEAL, apd_plan(), [])


def test_anchor_is_the_triple_maximum():
    x0 = anchor_position(GEOM)
    p0 = expected_octet(GEOM, x0, BORN)[7]
    for dx in (-2e-5, -5e-6, 5e-6, 2e-5):
        assert expected_octet(GEOM, x0 + dx, BORN)[7] < p0
    assert abs(x0) < 1e-6


def test_linear_drift_biases_fixed_order_more_than_random_order():
    horizon = 4 * 8 * 2.0
    ins = replace(IDEAL, drift=DriftModel("linear", slope=0.01 / horizon))
    x = anchor_position(GEOM)
    fixed = run_experiment(GEOM, BORN, ins, apd_plan(mode="power-meter", n_runs=4, randomize_order=False), x)
    assert all(k == pytest.approx(fixed.kappa_values[0], rel=0.2) for k in fixed.kappa_values)
    means = []
    for seed in range(30):
        plan = apd_plan(mode="power-meter", n_runs=4, master_seed=seed)
        means.append(np.mean(run_experiment(GEOM, BORN, ins, plan, x).kappa_values))
    assert abs(np.mean(means)) < abs(np.mean(fixed.kappa_values))


def test_linear_drift_allan_below_standard():
    n_runs = 40
    horizon = n_runs * 8 * 2.0
    ins = replace(IDEAL, drift=DriftModel("linear", slope=0.01 / horizon))
    series = run_experiment(GEOM, BORN, ins, apd_plan(mode="power-meter", n_runs=n_runs), 0.0)
    _, allan = propagated_estimate(series.octets, "allan")
    _, standard = propagated_estimate(series.octets, "standard")
    assert allan.sigma < standard.sigma


def test_linear_drift_must_stay_positive():
    ins = replace(IDEAL, drift=DriftModel("linear", slope=-1.0))
    with pytest.raises(ValueError):
        run_experiment(GEOM, BORN, ins, apd_plan(), 0.0)


# ingestion ----------------------------------------------------------------------

def rows_for(run, values, norm=1.0):
    return [(run, c.label, v, norm) for c, v in zip(COMBINATIONS, values)]


SQUARE = [0.0, 1.0, 1.0, 4.0, 1.0, 4.0, 4.0, 9.0]


def csv_text(rows, comments=()):
    buf = io.StringIO()
    write_octets_csv(buf, rows, comments)
    return buf.getvalue()


def test_ingest_single_run():
    runs = ingest_octets(io.StringIO(csv_text(rows_for(0, SQUARE), ["seed=1"])))
    assert len(runs) == 1 and runs[0][0] == 0
    assert runs[0][1].values.tolist() == SQUARE


def test_ingest_missing_combination_names_it():
    rows = [r for r in rows_for(4, SQUARE) if r[1] != "AC"]
    with pytest.raises(IngestError, match="run 4.*AC"):
        ingest_octets(io.StringIO(csv_text(rows)))


def test_ingest_ten_runs():
    rows = list(itertools.chain.from_iterable(rows_for(r, SQUARE, norm=2.0) for r in range(10)))
    runs = ingest_octets(io.StringIO(csv_text(rows)))
    assert [r for r, _ in runs] == list(range(10))
    assert all(o.values.tolist() == [v / 2 for v in SQUARE] for _, o in runs)


@pytest.mark.parametrize("bad_line, message", [
    ("0,AB,1.0,1.0", "duplicate"),
    ("1,AB,-1.0,1.0", "raw_value"),
    ("1,AB,1.0,0", "normalizer"),
    ("1,AD,1.0,1.0", "combination"),
    ("x,AB,1.0,1.0", "run"),
    ("1,AB,abc,1.0", "decimal"),
    ("1,AB,1.0", "4 fields"),
])
def test_ingest_rejects_bad_rows(bad_line, message):
    text = csv_text(rows_for(0, SQUARE)) + bad_line + "\n"
    with pytest.raises(IngestError, match=f"row 10: .*{message}"):
        ingest_octets(io.StringIO(text))


def test_ingest_requires_header():
    with pytest.raises(IngestError, match="header"):
        ingest_octets(io.StringIO("run,comb,raw,norm\n0,A,1,1\n"))
    with pytest.raises(IngestError):
        ingest_octets(io.StringIO("# only comments\n"))


def test_csv_round_trip_bit_exact(tmp_path):
    series = run_experiment(GEOM, BORN, Instruments(), apd_plan(n_runs=5, master_seed=8), 1e-4)
    path = tmp_path / "octets.csv"
    with open(path, "w") as fh:
        write_octets_csv(fh, records_to_rows(series.records), ["seed=8"])
    runs = ingest_octets(path)
    assert [kappa(o) for _, o in runs] == series.kappa_values


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1e6, allow_subnormal=False))
def test_exact_scaling_of_raw_values_keeps_kappa(c):
    series = run_experiment(GEOM, BORN, Instruments(), apd_plan(n_runs=1, master_seed=4), 0.0)
    scaled = [MeasurementRecord(r.run_index, r.combination, Fraction(r.raw_value) * Fraction(c),
                                r.normalizer, r.timestamp_index) for r in series.records]
    assert kappa(octet_from_records(scaled)) == series.kappa_values[0]
