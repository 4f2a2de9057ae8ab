"""
2D tag position from corrected ranges.

Two measurement layouts are supported:
  - toa:   one range per station (two-way ranging with each station as reference)
  - fused: one reference range plus one range difference per anchor,
           relative to the reference station

Both are solved with Levenberg-Marquardt on residual = measured - model.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from uwb_errors import (
    ConfigError,
    DegenerateGeometryError,
    SingularGeometryError,
    CONFIG_INVALID,
    DEGENERATE_GEOMETRY,
    SINGULAR_GEOMETRY,
)
from ranging_model import C0

logger = logging.getLogger('PositionSolver')

Point = Tuple[float, float]

# Candidate closer than this to a station has no defined range gradient (m)
COINCIDENCE_EPS = 1e-12
MAX_DAMPING = 1e16


class SolveMode(str, Enum):
    TOA_ONLY = 'toa'
    FUSED = 'fused'


@dataclass(frozen=True)
class MeasurementSet:
    """Ranges (m) for one round, with the 2D station positions they refer to."""
    mode: SolveMode
    toa_ranges: Mapping[int, float]
    tdoa_ranges: Mapping[int, float]
    geometry: Mapping[int, Point]
    reference_id: Optional[int] = None
    round_idx: int = 0

    def __post_init__(self):
        n_toa, n_tdoa = len(self.toa_ranges), len(self.tdoa_ranges)
        if self.mode is SolveMode.TOA_ONLY:
            if n_tdoa:
                raise ConfigError(CONFIG_INVALID, "toa measurement set cannot carry range differences")
            if n_toa < 3:
                raise DegenerateGeometryError(DEGENERATE_GEOMETRY,
                                              f"round {self.round_idx}: 2D trilateration needs >= 3 ranges, got {n_toa}",
                                              {'round_idx': self.round_idx})
        else:
            if n_toa < 1 or n_tdoa < 2:
                raise DegenerateGeometryError(DEGENERATE_GEOMETRY,
                                              f"round {self.round_idx}: fused fix needs >= 1 range and >= 2 "
                                              f"range differences, got {n_toa} and {n_tdoa}",
                                              {'round_idx': self.round_idx})
            if self.reference_id is None:
                raise ConfigError(CONFIG_INVALID, "fused measurement set needs reference_id")
        referenced = set(self.toa_ranges) | set(self.tdoa_ranges)
        if self.reference_id is not None:
            referenced.add(self.reference_id)
        missing = sorted(referenced - set(self.geometry))
        if missing:
            raise ConfigError(CONFIG_INVALID, f"stations {missing} missing from geometry", {'stations': missing})

    @property
    def row_ids(self) -> List[Tuple[str, int]]:
        """Row layout: TOA rows by station id, then TDOA rows by anchor id."""
        return [('toa', i) for i in sorted(self.toa_ranges)] + [('tdoa', j) for j in sorted(self.tdoa_ranges)]

    def translated(self, v: Point) -> 'MeasurementSet':
        geometry = {i: (p[0] + v[0], p[1] + v[1]) for i, p in self.geometry.items()}
        return MeasurementSet(self.mode, self.toa_ranges, self.tdoa_ranges, geometry, self.reference_id, self.round_idx)

    def rotated(self, angle: float) -> 'MeasurementSet':
        c, s = math.cos(angle), math.sin(angle)
        geometry = {i: (c * p[0] - s * p[1], s * p[0] + c * p[1]) for i, p in self.geometry.items()}
        return MeasurementSet(self.mode, self.toa_ranges, self.tdoa_ranges, geometry, self.reference_id, self.round_idx)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    initial_damping: float = 1e-3
    weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        for name in ('max_iterations', 'gradient_tolerance', 'step_tolerance', 'initial_damping'):
            if not getattr(self, name) > 0:
                raise ConfigError(CONFIG_INVALID, f"solver.{name} must be positive", {'key': name})
        if self.weights is not None and any(not w > 0 for w in self.weights):
            raise ConfigError(CONFIG_INVALID, "solver.weights must be positive", {'key': 'weights'})


@dataclass(frozen=True)
class PositionEstimate:
    position: Point
    residual_norm: float
    iterations: int
    converged: bool
    covariance: Tuple[Tuple[float, float], Tuple[float, float]]
    gradient_norm: float = 0.0
    cost_history: Tuple[float, ...] = ()
    mode: SolveMode = SolveMode.TOA_ONLY
    round_idx: int = 0

    @property
    def covariance_matrix(self) -> np.ndarray:
        return np.array(self.covariance)


def _distance(candidate: np.ndarray, station: Point) -> float:
    return math.hypot(candidate[0] - station[0], candidate[1] - station[1])


def residuals(measurements: MeasurementSet, candidate: Sequence[float]) -> np.ndarray:
    """
    Measured minus modelled range per row (m).

    TOA rows model |c - x_i|; TDOA rows model |c - x_j| - |x_ref - x_j|.
    """
    c = np.asarray(candidate, dtype=float)
    geometry = measurements.geometry
    rows = []
    for i in sorted(measurements.toa_ranges):
        rows.append(measurements.toa_ranges[i] - _distance(c, geometry[i]))
    if measurements.tdoa_ranges:
        ref = geometry[measurements.reference_id]
        for j in sorted(measurements.tdoa_ranges):
            baseline = math.hypot(ref[0] - geometry[j][0], ref[1] - geometry[j][1])
            rows.append(measurements.tdoa_ranges[j] - (_distance(c, geometry[j]) - baseline))
    return np.array(rows)


def jacobian(measurements: MeasurementSet, candidate: Sequence[float]) -> np.ndarray:
    """
    Derivative of residuals with respect to the candidate, rows x 2.

    Raises:
        SingularGeometryError: Candidate coincides with a station of some row
    """
    c = np.asarray(candidate, dtype=float)
    rows = []
    for _, station_id in measurements.row_ids:
        p = measurements.geometry[station_id]
        d = _distance(c, p)
        if d < COINCIDENCE_EPS:
            raise SingularGeometryError(SINGULAR_GEOMETRY,
                                        f"candidate ({c[0]}, {c[1]}) coincides with station {station_id}",
                                        {'station_id': station_id})
        rows.append([-(c[0] - p[0]) / d, -(c[1] - p[1]) / d])
    return np.array(rows)


def initial_guess(geometry: Mapping[int, Point]) -> Point:
    """Centroid of the given station positions."""
    if not geometry:
        raise ConfigError(CONFIG_INVALID, "initial_guess needs at least one station")
    pts = np.array(list(geometry.values()), dtype=float)
    centroid = pts.mean(axis=0)
    return float(centroid[0]), float(centroid[1])


def _row_weights(measurements: MeasurementSet, config: SolverConfig) -> np.ndarray:
    n_rows = len(measurements.toa_ranges) + len(measurements.tdoa_ranges)
    if config.weights is None:
        return np.ones(n_rows)
    if len(config.weights) != n_rows:
        raise ConfigError(CONFIG_INVALID,
                          f"solver.weights has {len(config.weights)} entries for {n_rows} rows", {'key': 'weights'})
    return np.sqrt(np.asarray(config.weights, dtype=float))


def solve_position(measurements: MeasurementSet, config: Optional[SolverConfig] = None,
                   initial: Optional[Point] = None) -> PositionEstimate:
    """
    Levenberg-Marquardt fit of the tag position.

    Args:
        measurements: Ranges and geometry of one round
        config: Solver settings (defaults apply when None)
        initial: Starting point (centroid of the geometry when None)

    Returns:
        PositionEstimate; converged=False when the iteration budget ran out

    Raises:
        DegenerateGeometryError: Jacobian at the solution has rank < 2
        SingularGeometryError: Starting point coincides with a station
    """
    config = config or SolverConfig()
    sqrt_w = _row_weights(measurements, config)
    x = np.asarray(initial if initial is not None else initial_guess(measurements.geometry), dtype=float)

    r = residuals(measurements, x) * sqrt_w
    J = jacobian(measurements, x) * sqrt_w[:, None]
    cost = 0.5 * float(r @ r)
    history = [cost]
    damping = config.initial_damping
    iterations = 0

    while iterations < config.max_iterations:
        g = J.T @ r
        if np.linalg.norm(g) <= config.gradient_tolerance:
            break
        iterations += 1
        normal = J.T @ J
        damped = normal + damping * np.diag(np.diag(normal))
        step = np.linalg.lstsq(damped, -g, rcond=None)[0]
        if np.linalg.norm(step) <= config.step_tolerance:
            break

        candidate = x + step
        try:
            r_new = residuals(measurements, candidate) * sqrt_w
            J_new = jacobian(measurements, candidate) * sqrt_w[:, None]
        except SingularGeometryError:
            damping *= 10.0
            continue
        cost_new = 0.5 * float(r_new @ r_new)
        logger.debug("LM iter %d: cost %.6g -> %.6g, damping %.3g", iterations, cost, cost_new, damping)
        if cost_new < cost:
            x, r, J, cost = candidate, r_new, J_new, cost_new
            history.append(cost)
            damping = max(damping / 10.0, 1e-15)
        else:
            damping *= 10.0
            if damping > MAX_DAMPING:
                break

    gradient_norm = float(np.linalg.norm(J.T @ r))
    converged = gradient_norm <= config.gradient_tolerance

    if np.linalg.matrix_rank(J) < 2:
        raise DegenerateGeometryError(DEGENERATE_GEOMETRY,
                                      f"round {measurements.round_idx}: geometry does not fix a 2D position",
                                      {'round_idx': measurements.round_idx})

    dof = max(1, len(r) - 2)
    sigma2 = float(r @ r) / dof
    cov = sigma2 * np.linalg.inv(J.T @ J)
    cov = 0.5 * (cov + cov.T)

    if not converged:
        logger.warning("Round %d (%s): no convergence after %d iterations (gradient %.3g)",
                       measurements.round_idx, measurements.mode.value, iterations, gradient_norm)

    return PositionEstimate(
        position=(float(x[0]), float(x[1])),
        residual_norm=float(np.linalg.norm(r)),
        iterations=iterations,
        converged=converged,
        covariance=((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))),
        gradient_norm=gradient_norm,
        cost_history=tuple(history),
        mode=measurements.mode,
        round_idx=measurements.round_idx,
    )


def brute_force_solve(measurements: MeasurementSet, bounds: Tuple[Tuple[float, float], Tuple[float, float]],
                      grid_step: float) -> Point:
    """
    Exhaustive grid minimizer of the squared residual norm.

    Args:
        measurements: Ranges and geometry
        bounds: ((x_min, x_max), (y_min, y_max))
        grid_step: Grid spacing (m)

    Returns:
        Grid point with the smallest squared residual norm
    """
    if not grid_step > 0:
        raise ConfigError(CONFIG_INVALID, "grid_step must be positive")
    (x0, x1), (y0, y1) = bounds
    xs = np.arange(x0, x1 + 0.5 * grid_step, grid_step)
    ys = np.arange(y0, y1 + 0.5 * grid_step, grid_step)
    X, Y = np.meshgrid(xs, ys, indexing='ij')
    geometry = measurements.geometry

    cost = np.zeros_like(X)
    for i in sorted(measurements.toa_ranges):
        px, py = geometry[i]
        cost += (measurements.toa_ranges[i] - np.hypot(X - px, Y - py)) ** 2
    if measurements.tdoa_ranges:
        rx, ry = geometry[measurements.reference_id]
        for j in sorted(measurements.tdoa_ranges):
            px, py = geometry[j]
            baseline = math.hypot(rx - px, ry - py)
            cost += (measurements.tdoa_ranges[j] - (np.hypot(X - px, Y - py) - baseline)) ** 2

    idx = np.unravel_index(np.argmin(cost), cost.shape)
    return float(X[idx]), float(Y[idx])


def build_measurement_set(corrected, scene, mode: SolveMode, twr_sweep: Optional[Sequence] = None) -> MeasurementSet:
    """
    Ranges for one round.

    Args:
        corrected: CorrectedMeasurement of the fused exchange (fused mode)
        scene: Scene supplying station positions
        mode: SolveMode
        twr_sweep: CorrectedMeasurements of the round's two-way sweep (toa mode)

    Returns:
        MeasurementSet in meters
    """
    if mode is SolveMode.TOA_ONLY:
        if not twr_sweep:
            raise ConfigError(CONFIG_INVALID, "toa mode needs the round's two-way sweep")
        toa = {m.reference_id: m.t_toa * C0 for m in twr_sweep}
        geometry = {i: scene.station(i).xy for i in toa}
        return MeasurementSet(mode, toa, {}, geometry, round_idx=twr_sweep[0].round_idx)

    tdoa = {a: t * C0 for a, t in corrected.valid_tdoa().items()}
    toa = {corrected.reference_id: corrected.t_toa * C0}
    geometry = {i: scene.station(i).xy for i in set(toa) | set(tdoa)}
    return MeasurementSet(mode, toa, tdoa, geometry, reference_id=corrected.reference_id,
                          round_idx=corrected.round_idx)


def solve_session(sets: Sequence[MeasurementSet], config: Optional[SolverConfig] = None) -> List[PositionEstimate]:
    """Solve every set independently, preserving order."""
    estimates = [solve_position(s, config) for s in sets]
    n_conv = sum(1 for e in estimates if e.converged)
    logger.info("Solved %d sets, %d converged", len(estimates), n_conv)
    return estimates
