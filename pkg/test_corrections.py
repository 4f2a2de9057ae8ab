#!/usr/bin/env python3
"""
Tests for the drift, power and hardware-delay corrections.

Most oracles come from the simulator with selected error sources switched on.

Run with pytest or directly: python test_corrections.py
"""
import math
import os
from dataclasses import replace

import numpy as np
import pytest

from uwb_errors import ConfigError, MalformedRecordError
from config_loader import load_scene
from ranging_model import AnchorObservation, ExchangeRecord, PowerCurve, default_tick, power_error, rx_power
from exchange_simulator import simulate_exchange, simulate_session, true_tof
from corrections import (
    DelayCalibration,
    SceneCalibration,
    anchor_drift_error,
    correct_record,
    correct_session,
    drift_error,
    interpolate_drift,
    offset_k,
    tdoa_corrected,
    tdoa_with_offset,
    toa_corrected,
    toa_two_message,
)
from scene_fixtures import DESK4_POSITIONS, SCENES_DIR, default_curve, default_tick_scene, make_scene

P = DESK4_POSITIONS
TICK = default_tick()


def _one(scene, seed=0):
    return simulate_exchange(scene, 0.0, np.random.default_rng(seed))


def _calibration(scene):
    cal = SceneCalibration.from_scene(scene)
    return cal.curves, cal.delays


def _geometric_tdoa(anchor_id, positions=P):
    return true_tof(positions[2], positions[anchor_id]) - true_tof(positions[1], positions[anchor_id])


def test_drift_error():
    assert drift_error(1.000001e-3, 1.0e-3) == pytest.approx(1e-9, rel=1e-6)
    assert drift_error(1e-3, 1e-3) == 0.0
    assert drift_error(1.0e-3, 1.000001e-3) == pytest.approx(-1e-9, rel=1e-6)
    with pytest.raises(MalformedRecordError):
        drift_error(0.0, 1e-3)
    with pytest.raises(MalformedRecordError):
        drift_error(1e-3, -1e-3)


def test_interpolate_drift():
    assert interpolate_drift(1e-9, 1e-3, 0.5e-3) == pytest.approx(5e-10, rel=1e-12)
    assert interpolate_drift(1e-9, 1e-3, 0.0) == 0.0
    assert interpolate_drift(1e-9, 1e-3, 1e-3) == 1e-9
    with pytest.raises(MalformedRecordError):
        interpolate_drift(1e-9, 0.0, 0.0)
    with pytest.raises(MalformedRecordError):
        interpolate_drift(1e-9, 1e-3, 2e-3)


def test_two_message_toa_zero_error():
    scene = make_scene()
    curves, delays = _calibration(scene)
    assert abs(toa_two_message(_one(scene), curves, delays) - 1.5134 / 299792458.0) <= TICK


def test_two_message_toa_cancels_known_delays():
    scene = make_scene(delays={1: 10e-9, 2: 10e-9})
    curves, delays = _calibration(scene)
    plain = toa_two_message(_one(make_scene()), *_calibration(make_scene()))
    assert abs(toa_two_message(_one(scene), curves, delays) - plain) <= 2e-15


def test_two_message_toa_suffers_from_tag_drift():
    scene = make_scene(drifts={2: 10e-6})
    curves, delays = _calibration(scene)
    rec = _one(scene)
    tof = true_tof(P[1], P[2])
    error = toa_two_message(rec, curves, delays) - tof
    # a fast tag overstates its reply time by 10 ppm of 0.3 ms
    assert error == pytest.approx(-0.5 * 10e-6 * scene.tag_response_delay, abs=1e-13)
    assert abs(toa_corrected(rec, curves, delays) - tof) <= 2e-15 + 1e-13


def test_corrected_toa_with_tag_drift_at_default_tick():
    scene = default_tick_scene(drifts={2: 10e-6})
    curves, delays = _calibration(scene)
    assert abs(toa_corrected(_one(scene), curves, delays) - true_tof(P[1], P[2])) <= 2 * TICK + 1e-13


def test_power_error_sign_is_subtracted():
    scene = make_scene(curve=default_curve())
    curves, delays = _calibration(scene)
    rec = _one(scene)
    tof = true_tof(P[1], P[2])
    actual = rx_power(scene.tx_power_dbm, 1.5134, scene.radio.center_frequency)
    e = power_error(default_curve(), actual)
    assert e < 0
    raw = 0.5 * (rec.dt12_r - rec.dt12_t)
    assert raw - tof == pytest.approx(e, abs=1e-14)
    assert abs(toa_corrected(rec, curves, delays) - tof) <= 1e-14


def test_tdoa_with_offset():
    scene = make_scene()
    curves, _ = _calibration(scene)
    rec = _one(scene)
    for s in (3, 4):
        expected = scene.tag_response_delay + true_tof(P[1], P[2]) + _geometric_tdoa(s)
        assert abs(tdoa_with_offset(rec.anchor(s), curves) - expected) <= 3e-16
    obs = AnchorObservation(station_id=3, t1=0.0, t2=0.3e-3, t3=1e-3, p1=-70.0, p2=-70.0)
    assert tdoa_with_offset(obs, {3: default_curve()}) == pytest.approx(obs.dt12, abs=1e-18)


def test_anchor_drift_error():
    rec = _one(default_tick_scene())
    assert abs(anchor_drift_error(rec, 3)) <= 2 * TICK
    rec = _one(default_tick_scene(drifts={3: 2e-6}))
    # the fast anchor measures the longer window
    assert abs(anchor_drift_error(rec, 3) - (-2e-9)) <= 2 * TICK
    broken = replace(rec, anchors=(replace(rec.anchor(3), t3=math.nan), rec.anchor(4)))
    with pytest.raises(MalformedRecordError):
        anchor_drift_error(broken, 3)


def test_offset_k():
    scene = make_scene()
    curves, delays = _calibration(scene)
    rec = _one(scene)
    t_toa = toa_corrected(rec, curves, delays)
    k = offset_k(rec, curves, delays, t_toa)
    assert abs(k - (true_tof(P[1], P[2]) + scene.tag_response_delay)) <= 5e-16

    heavier = DelayCalibration({**delays.delays, 2: 10e-9})
    assert offset_k(rec, curves, heavier, t_toa) - k == pytest.approx(20e-9, rel=1e-9)

    positions = dict(P)
    positions[2] = positions[1]
    coincident = make_scene(positions=positions)
    rec = _one(coincident)
    curves, delays = _calibration(coincident)
    k = offset_k(rec, curves, delays, toa_corrected(rec, curves, delays))
    assert abs(k - coincident.tag_response_delay) <= 5e-16


def test_offset_k_tracks_simulated_tag_delay():
    ks = []
    for scene in (make_scene(), make_scene(delays={2: 10e-9})):
        curves, delays = _calibration(scene)
        rec = _one(scene)
        ks.append(offset_k(rec, curves, delays, toa_corrected(rec, curves, delays)))
    assert ks[1] - ks[0] == pytest.approx(20e-9, abs=1e-15)


def test_tdoa_corrected_geometry():
    scene = make_scene()
    curves, delays = _calibration(scene)
    rec = _one(scene)
    expected = (math.dist((0.0, 1.5134), (1.27, 1.643)) - math.dist((0.0, 0.0), (1.27, 1.643))) / 299792458.0
    assert abs(tdoa_corrected(rec, 3, curves, delays) - expected) <= 1e-15
    assert abs(tdoa_corrected(rec, 4, curves, delays) - _geometric_tdoa(4)) <= 1e-15


def test_tdoa_zero_when_tag_sits_on_reference():
    positions = dict(P)
    positions[2] = positions[1]
    scene = make_scene(positions=positions)
    curves, delays = _calibration(scene)
    rec = _one(scene)
    for s in (3, 4):
        assert abs(tdoa_corrected(rec, s, curves, delays)) <= 1e-15


def test_tdoa_independent_of_response_delay():
    drifts = {2: 12e-6, 3: -7e-6, 4: 15e-6}
    for rd in (0.1e-3, 0.3e-3, 0.5e-3, 0.9e-3):
        scene = default_tick_scene(drifts=drifts, tag_response_delay=rd)
        curves, delays = _calibration(scene)
        rec = _one(scene)
        for s in (3, 4):
            assert abs(tdoa_corrected(rec, s, curves, delays) - _geometric_tdoa(s)) <= 3 * TICK + 1e-13


def test_drift_cancellation_over_random_scenes():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        drifts = {i: rng.uniform(-20e-6, 20e-6) for i in (1, 2, 3, 4)}
        offsets = {i: rng.uniform(0.0, 1.0) for i in (1, 2, 3, 4)}
        rd = rng.uniform(0.1e-3, 0.9e-3)
        scene = default_tick_scene(drifts=drifts, offsets=offsets, tag_response_delay=rd)
        m = correct_record(_one(scene), SceneCalibration.from_scene(scene))
        assert abs(m.t_toa - true_tof(P[1], P[2])) <= 2 * TICK + 1e-13
        for s in (3, 4):
            assert abs(m.t_tdoa[s] - _geometric_tdoa(s)) <= 2 * TICK + 1e-13


def test_full_error_budget_scene():
    scene = load_scene(os.path.join(SCENES_DIR, 'desk4.yaml'))
    corrected = correct_session(simulate_session(scene, 5, seed=3), SceneCalibration.from_scene(scene))
    tag = scene.tag
    # message 2 leaves tof + reply + E1 + 2B after message 1, reply counted on the tag clock
    k_expected = (true_tof(P[1], P[2]) + scene.tag_response_delay / (1.0 + tag.clock.frequency_offset)
                  + 2 * tag.hardware_delay)
    assert len(corrected) == 5
    for m in corrected:
        assert abs(m.t_toa - true_tof(P[1], P[2])) <= 3 * TICK + 1e-12
        for s in (3, 4):
            assert abs(m.t_tdoa[s] - _geometric_tdoa(s)) <= 3 * TICK + 1e-12
        assert not m.failures
        assert abs(m.k - k_expected) <= 1e-9


def test_correct_record_is_pure_and_reports_anchor_failures():
    scene = make_scene()
    cal = SceneCalibration.from_scene(scene)
    rec = _one(scene)
    assert correct_record(rec, cal) == correct_record(rec, cal)

    broken = replace(rec, anchors=(replace(rec.anchor(3), t3=math.nan), rec.anchor(4)))
    m = correct_record(broken, cal)
    assert abs(m.t_toa - true_tof(P[1], P[2])) <= 1e-15
    assert math.isnan(m.t_tdoa[3])
    assert 3 in m.failures
    assert set(m.valid_tdoa()) == {4}


def test_missing_reference_stamp_aborts_record():
    scene = make_scene()
    rec = replace(_one(scene), t3_r=math.nan)
    with pytest.raises(MalformedRecordError):
        correct_record(rec, SceneCalibration.from_scene(scene))


def test_missing_curve_is_configuration_error():
    scene = make_scene()
    cal = SceneCalibration.from_scene(scene, curves={1: PowerCurve.flat_zero()})
    with pytest.raises(ConfigError):
        correct_record(_one(scene), cal)


def test_results_invariant_to_calibrated_delays():
    base = correct_record(_one(default_tick_scene()), SceneCalibration.from_scene(default_tick_scene()))
    for delays in ({1: 100e-9, 2: 0.0}, {1: 0.0, 2: 100e-9, 3: 50e-9}, {1: 37e-9, 2: 81e-9, 3: 12e-9, 4: 99e-9}):
        scene = default_tick_scene(delays=delays)
        m = correct_record(_one(scene), SceneCalibration.from_scene(scene))
        assert abs(m.t_toa - base.t_toa) <= 2 * TICK
        for s in (3, 4):
            assert abs(m.t_tdoa[s] - base.t_tdoa[s]) <= 2 * TICK


def test_power_curve_round_trip_and_flat_negative_control():
    scene = make_scene(curve=default_curve())
    rec = _one(scene)
    matched = correct_record(rec, SceneCalibration.from_scene(scene))
    tof = true_tof(P[1], P[2])
    assert abs(matched.t_toa * 299792458.0 - tof * 299792458.0) <= 1e-5
    for s in (3, 4):
        assert abs((matched.t_tdoa[s] - _geometric_tdoa(s)) * 299792458.0) <= 1e-5

    flat = {i: PowerCurve.flat_zero() for i in (1, 2, 3, 4)}
    unmatched = correct_record(rec, SceneCalibration.from_scene(scene, curves=flat))
    actual = rx_power(scene.tx_power_dbm, 1.5134, scene.radio.center_frequency)
    injected = abs(power_error(default_curve(), actual))
    assert abs(unmatched.t_toa - tof) >= 0.9 * injected


def _hand_record(t2_t):
    # binary-exact windows: dT13 is identical at reference and tag
    return ExchangeRecord(round_idx=0, reference_id=1, tag_id=2,
                          t1_r=0.0, t2_r=0.0003, t3_r=0.0009765625, p2_r=-70.0,
                          t1_t=0.5, t2_t=t2_t, t3_t=0.5009765625, p1_t=-70.0, p3_t=-70.0)


def test_two_message_equals_corrected_without_drift():
    rec = _hand_record(0.50029)
    assert drift_error(rec.dt13_r, rec.dt13_t) == 0.0
    curves = {1: default_curve(), 2: default_curve()}
    delays = DelayCalibration({1: 1e-9, 2: 2e-9})
    assert toa_two_message(rec, curves, delays) == toa_corrected(rec, curves, delays)


def test_negative_toa_is_reported_not_rejected():
    rec = _hand_record(0.50031)
    cal = SceneCalibration(curves={1: PowerCurve.flat_zero(), 2: PowerCurve.flat_zero()},
                           delays=DelayCalibration({1: 0.0, 2: 0.0}))
    m = correct_record(rec, cal)
    assert m.t_toa < 0
    assert m.negative_toa
    assert m.t_tdoa == {}


def main():
    print("=" * 60)
    print("CORRECTIONS TESTS")
    print("=" * 60)
    tests = [v for k, v in sorted(globals().items()) if k.startswith('test_') and callable(v)]
    for test in tests:
        test()
        print(f"✅ PASS {test.__name__}")
    print("=" * 60)
    print(f"✓ {len(tests)} tests passed")


if __name__ == "__main__":
    main()
