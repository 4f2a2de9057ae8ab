#!/usr/bin/env python3
"""
Tests for the Levenberg-Marquardt position solver and its grid oracle.

Run with pytest or directly: python test_solver.py
"""
import math
from dataclasses import replace

import numpy as np
import pytest

from uwb_errors import ConfigError, DegenerateGeometryError, SingularGeometryError
from corrections import SceneCalibration, correct_record
from exchange_simulator import simulate_exchange
from position_solver import (
    MeasurementSet,
    SolveMode,
    SolverConfig,
    brute_force_solve,
    build_measurement_set,
    initial_guess,
    jacobian,
    residuals,
    solve_position,
    solve_session,
)
from scene_fixtures import make_scene

DESK = {1: (0.0, 0.0), 2: (0.0, 1.5134), 3: (1.27, 1.643), 4: (1.1439, 0.0385)}
TRUTH = DESK[2]
SQUARE = {1: (0.0, 0.0), 2: (2.0, 0.0), 3: (2.0, 2.0), 4: (0.0, 2.0)}
BOUNDS = ((-0.5, 2.0), (-0.5, 2.2))


def _dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def toa_set(tag, stations=(1, 3, 4), geometry=DESK, noise=None):
    noise = noise or {}
    ranges = {i: _dist(tag, geometry[i]) + noise.get(i, 0.0) for i in stations}
    return MeasurementSet(SolveMode.TOA_ONLY, ranges, {}, {i: geometry[i] for i in stations})


def fused_set(tag, reference=1, anchors=(3, 4), geometry=DESK, noise=None):
    noise = noise or {}
    ref = geometry[reference]
    toa = {reference: _dist(tag, ref) + noise.get(reference, 0.0)}
    tdoa = {j: _dist(tag, geometry[j]) - _dist(ref, geometry[j]) + noise.get(j, 0.0) for j in anchors}
    used = {i: geometry[i] for i in (reference,) + tuple(anchors)}
    return MeasurementSet(SolveMode.FUSED, toa, tdoa, used, reference_id=reference)


def test_residuals_at_truth_vanish():
    for ms in (toa_set(TRUTH), fused_set(TRUTH)):
        assert np.allclose(residuals(ms, TRUTH), 0.0, atol=1e-15)


def test_residual_examples():
    ms = MeasurementSet(SolveMode.TOA_ONLY, {1: 1.0, 3: 1.0, 4: 1.0}, {}, {i: DESK[i] for i in (1, 3, 4)})
    assert residuals(ms, (0.0, 0.0))[0] == 1.0

    ms = fused_set(TRUTH)
    at_reference = residuals(ms, DESK[1])
    assert at_reference[1] == pytest.approx(ms.tdoa_ranges[3], abs=1e-15)
    assert at_reference[2] == pytest.approx(ms.tdoa_ranges[4], abs=1e-15)


def test_jacobian_examples():
    ms = toa_set((1.0, 1.0), geometry=SQUARE, stations=(1, 2, 3))
    row = jacobian(ms, (3.5, 0.0))[1]
    assert row == pytest.approx([-1.0, 0.0])

    ms = fused_set((0.5, 0.5))
    moved = dict(ms.geometry)
    moved[1] = (0.2, -0.3)
    shifted = MeasurementSet(ms.mode, ms.toa_ranges, ms.tdoa_ranges, moved, reference_id=1)
    candidate = (0.6, 0.7)
    assert np.array_equal(jacobian(ms, candidate)[1:], jacobian(shifted, candidate)[1:])
    assert not np.allclose(residuals(ms, candidate)[1:], residuals(shifted, candidate)[1:])


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(8)
    for ms in (toa_set(TRUTH), fused_set(TRUTH)):
        for _ in range(100):
            c = rng.uniform(-0.3, 1.8, size=2)
            h = 1e-7
            numeric = np.column_stack([
                (residuals(ms, c + h * e) - residuals(ms, c - h * e)) / (2 * h)
                for e in np.eye(2)
            ])
            analytic = jacobian(ms, c)
            assert np.linalg.norm(analytic - numeric) <= 1e-6 * np.linalg.norm(analytic)


def test_jacobian_singular_at_station():
    with pytest.raises(SingularGeometryError) as info:
        jacobian(toa_set(TRUTH), DESK[3])
    assert info.value.details['station_id'] == 3
    with pytest.raises(SingularGeometryError):
        solve_position(toa_set(TRUTH), initial=DESK[1])


def test_initial_guess():
    cx, cy = initial_guess(DESK)
    assert cx == pytest.approx((0 + 0 + 1.27 + 1.1439) / 4)
    assert cy == pytest.approx((0 + 1.5134 + 1.643 + 0.0385) / 4)
    assert initial_guess({7: (0.3, -0.2)}) == pytest.approx((0.3, -0.2))
    assert initial_guess(SQUARE) == pytest.approx((1.0, 1.0))
    with pytest.raises(ConfigError):
        initial_guess({})


def test_exact_recovery_both_modes():
    for ms in (toa_set(TRUTH), fused_set(TRUTH)):
        est = solve_position(ms)
        assert est.converged
        assert _dist(est.position, TRUTH) <= 1e-9
        assert est.residual_norm <= 1e-9
        assert est.gradient_norm <= SolverConfig().gradient_tolerance
        assert est.mode is ms.mode


def test_cost_history_decreases():
    rng = np.random.default_rng(1)
    noise = {i: rng.normal(0, 0.02) for i in (1, 3, 4)}
    est = solve_position(toa_set((0.6, 0.9), noise=noise))
    history = est.cost_history
    assert len(history) >= 2
    assert all(b < a for a, b in zip(history, history[1:]))


def test_collinear_stations_have_two_basins():
    line = {1: (0.0, 0.0), 2: (1.0, 0.0), 3: (2.5, 0.0)}
    tag = (0.8, 1.2)
    ms = toa_set(tag, stations=(1, 2, 3), geometry=line)
    above = solve_position(ms, initial=(1.0, 0.5))
    below = solve_position(ms, initial=(1.0, -0.5))
    assert above.position == pytest.approx(tag, abs=1e-9)
    assert below.position == pytest.approx((tag[0], -tag[1]), abs=1e-9)

    bounds = ((-0.5, 2.5), (-1.5, 1.5))
    grid = np.array(brute_force_solve(ms, bounds, 0.01))
    assert min(_dist(grid, tag), _dist(grid, (tag[0], -tag[1]))) <= 0.02


def test_degenerate_geometry():
    with pytest.raises(DegenerateGeometryError):
        MeasurementSet(SolveMode.FUSED, {1: 1.0}, {3: 0.1}, DESK, reference_id=1)
    with pytest.raises(DegenerateGeometryError):
        MeasurementSet(SolveMode.TOA_ONLY, {1: 1.0, 3: 1.0}, {}, DESK)
    line = {1: (0.0, 0.0), 2: (1.0, 0.0), 3: (2.5, 0.0)}
    ms = toa_set((0.5, 0.0), stations=(1, 2, 3), geometry=line)
    with pytest.raises(DegenerateGeometryError):
        solve_position(ms, initial=(0.3, 0.0))


def test_measurement_set_validation():
    with pytest.raises(ConfigError):
        MeasurementSet(SolveMode.TOA_ONLY, {1: 1.0, 3: 1.0, 9: 1.0}, {}, DESK)
    with pytest.raises(ConfigError):
        MeasurementSet(SolveMode.FUSED, {1: 1.0}, {3: 0.1, 4: 0.1}, DESK)
    with pytest.raises(ConfigError):
        SolverConfig(max_iterations=0)


def test_non_convergence_is_flagged():
    rng = np.random.default_rng(3)
    noise = {i: rng.normal(0, 0.05) for i in (1, 3, 4)}
    est = solve_position(toa_set((0.6, 0.9), noise=noise), SolverConfig(max_iterations=1))
    assert est.iterations == 1
    assert not est.converged


def test_brute_force_exact_and_modes_agree():
    tag = (0.5, 0.8)
    bounds = ((0.0, 1.5), (0.0, 1.5))
    toa_cell = brute_force_solve(toa_set(tag), bounds, 0.05)
    fused_cell = brute_force_solve(fused_set(tag), bounds, 0.05)
    assert toa_cell == pytest.approx(tag, abs=1e-9)
    assert fused_cell == toa_cell
    with pytest.raises(ConfigError):
        brute_force_solve(toa_set(tag), bounds, 0.0)


def test_solver_agrees_with_grid_on_noisy_instances():
    rng = np.random.default_rng(50)
    step = 0.01
    for k in range(50):
        tag = (rng.uniform(0.2, 1.0), rng.uniform(0.3, 1.3))
        noise = {i: rng.normal(0, 0.01) for i in (1, 3, 4)}
        builder = toa_set if k % 2 else fused_set
        ms = builder(tag, noise=noise)
        est = solve_position(ms)
        grid = brute_force_solve(ms, BOUNDS, step)
        assert abs(est.position[0] - grid[0]) <= 2 * step
        assert abs(est.position[1] - grid[1]) <= 2 * step


def test_translation_and_rotation_equivariance():
    rng = np.random.default_rng(5)
    noise = {i: rng.normal(0, 0.01) for i in (1, 3, 4)}
    for ms in (toa_set((0.6, 0.9), noise=noise), fused_set((0.6, 0.9), noise=noise)):
        base = np.array(solve_position(ms).position)
        v = (3.0, -2.0)
        moved = np.array(solve_position(ms.translated(v)).position)
        assert moved == pytest.approx(base + np.array(v), abs=1e-8)

        angle = 0.7
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        turned = np.array(solve_position(ms.rotated(angle)).position)
        assert turned == pytest.approx(rot @ base, abs=1e-8)


def test_covariance_matches_monte_carlo_spread():
    rng = np.random.default_rng(1000)
    tag, sigma = (0.7, 1.1), 0.02
    positions, reported = [], []
    for _ in range(1000):
        noise = {i: rng.normal(0, sigma) for i in SQUARE}
        est = solve_position(toa_set(tag, stations=(1, 2, 3, 4), geometry=SQUARE, noise=noise))
        positions.append(est.position)
        reported.append(np.diag(est.covariance_matrix))
    spread = np.var(np.array(positions), axis=0, ddof=1)
    mean_reported = np.mean(reported, axis=0)
    for s, r in zip(spread, mean_reported):
        assert 0.5 <= s / r <= 2.0
    est = solve_position(toa_set(tag, stations=(1, 2, 3, 4), geometry=SQUARE, noise={1: 0.01}))
    assert est.covariance_matrix == pytest.approx(est.covariance_matrix.T)


def test_weights_downweight_a_row():
    tag = (0.7, 1.1)
    ms = toa_set(tag, stations=(1, 2, 3, 4), geometry=SQUARE, noise={3: 0.05})
    plain = solve_position(ms)
    weighted = solve_position(ms, SolverConfig(weights=(1.0, 1.0, 1e-8, 1.0)))
    assert _dist(plain.position, tag) > 1e-3
    assert _dist(weighted.position, tag) < 1e-5
    with pytest.raises(ConfigError):
        solve_position(ms, SolverConfig(weights=(1.0, 1.0)))


def test_build_measurement_set_from_corrected_record():
    scene = make_scene()
    m = correct_record(simulate_exchange(scene, 0.0, np.random.default_rng(0)), SceneCalibration.from_scene(scene))
    ms = build_measurement_set(m, scene, SolveMode.FUSED)
    assert ms.reference_id == 1
    assert sorted(ms.tdoa_ranges) == [3, 4]
    est = solve_position(ms)
    assert _dist(est.position, TRUTH) <= 1e-6

    one_anchor = replace(m, t_tdoa={3: m.t_tdoa[3], 4: math.nan})
    with pytest.raises(DegenerateGeometryError):
        build_measurement_set(one_anchor, scene, SolveMode.FUSED)
    with pytest.raises(ConfigError):
        build_measurement_set(None, scene, SolveMode.TOA_ONLY)


def test_solve_session_keeps_order():
    sets = [replace(toa_set(TRUTH), round_idx=k) for k in range(3)]
    assert [e.round_idx for e in solve_session(sets)] == [0, 1, 2]


def main():
    print("=" * 60)
    print("POSITION SOLVER TESTS")
    print("=" * 60)
    tests = [v for k, v in sorted(globals().items()) if k.startswith('test_') and callable(v)]
    for test in tests:
        test()
        print(f"✅ PASS {test.__name__}")
    print("=" * 60)
    print(f"✓ {len(tests)} tests passed")


if __name__ == "__main__":
    main()
