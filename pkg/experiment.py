"""
Experiment orchestration: simulate -> correct -> solve -> aggregate.

Runs the two positioning modes over a simulated session and reports, per mode,
the mean position, per-axis standard deviation and covariance of the fixes,
plus the mean difference between the modes.
"""
import json
import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config_loader import get_config_value, load_scene, read_experiment_file
from uwb_errors import ConfigError, StatisticsError, UwbError, CONFIG_INVALID, NOT_ENOUGH_SAMPLES
from exchange_simulator import Scene, simulate_session, simulate_twr_session
from corrections import SceneCalibration, correct_session
from position_solver import (
    PositionEstimate,
    SolveMode,
    SolverConfig,
    build_measurement_set,
    solve_position,
)
import record_io

logger = logging.getLogger('Experiment')

Point = Tuple[float, float]

# Mean difference between the two modes measured on real transceivers (m)
HARDWARE_MODE_DIFFERENCE = (0.0023, 0.0006)


def parse_modes(value) -> Tuple[SolveMode, ...]:
    """Accept 'toa', 'fused', 'both' or a list of mode names."""
    if isinstance(value, str):
        value = ['toa', 'fused'] if value == 'both' else [value]
    try:
        modes = tuple(SolveMode(str(v).lower()) for v in value)
    except ValueError:
        raise ConfigError(CONFIG_INVALID, f"unknown mode in {value!r} (use toa, fused or both)", {'key': 'modes'})
    if not modes:
        raise ConfigError(CONFIG_INVALID, "at least one mode is required", {'key': 'modes'})
    return tuple(sorted(set(modes), key=lambda m: m.value == 'fused'))


@dataclass(frozen=True)
class ExperimentConfig:
    scene_path: str
    n_rounds: int = 1000
    modes: Tuple[SolveMode, ...] = (SolveMode.TOA_ONLY, SolveMode.FUSED)
    seed: int = 20240601
    out_dir: Optional[str] = 'output'
    diagnostics: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ConfigError(CONFIG_INVALID, f"n_rounds must be >= 1, got {self.n_rounds}", {'key': 'n_rounds'})
        if self.seed < 0:
            raise ConfigError(CONFIG_INVALID, "seed must be >= 0", {'key': 'seed'})
        if not os.path.exists(self.scene_path):
            raise ConfigError(CONFIG_INVALID, f"scene file not found: {self.scene_path}", {'key': 'scene'})

    @classmethod
    def from_file(cls, path: str) -> 'ExperimentConfig':
        """
        Load an experiment YAML file.

        Missing keys fall back to DEFAULT_ROUNDS, DEFAULT_SEED and OUT_DIR from .config.
        """
        data = read_experiment_file(path)
        solver_entry = data.get('solver') or {}
        weights = solver_entry.get('weights')
        try:
            solver = SolverConfig(
                max_iterations=int(solver_entry.get('max_iterations', 100)),
                gradient_tolerance=float(solver_entry.get('gradient_tolerance', 1e-10)),
                step_tolerance=float(solver_entry.get('step_tolerance', 1e-12)),
                initial_damping=float(solver_entry.get('initial_damping', 1e-3)),
                weights=tuple(float(w) for w in weights) if weights else None,
            )
            return cls(scene_path=data['scene'],
                       n_rounds=int(data.get('n_rounds', get_config_value('DEFAULT_ROUNDS', 1000, int))),
                       modes=parse_modes(data.get('modes', 'both')),
                       seed=int(data.get('seed', get_config_value('DEFAULT_SEED', 20240601, int))),
                       out_dir=str(data.get('out_dir', get_config_value('OUT_DIR', 'output', str))),
                       diagnostics=bool(data.get('diagnostics', False)),
                       solver=solver)
        except (TypeError, ValueError) as e:
            raise ConfigError(CONFIG_INVALID, f"{path}: {e}", {'path': path})


@dataclass(frozen=True)
class ModeStatistics:
    """Per-mode summary; mean needs one usable fix, stddev and covariance need two."""
    mode: SolveMode
    mean: Optional[Point]
    stddev: Optional[Point]
    covariance: Optional[Tuple[Tuple[float, float], Tuple[float, float]]]
    used_rounds: int
    excluded_rounds: int
    truth_deviation: Optional[Point] = None

    def to_dict(self) -> dict:
        return {
            'mean': list(self.mean) if self.mean is not None else None,
            'stddev': list(self.stddev) if self.stddev is not None else None,
            'covariance': [list(row) for row in self.covariance] if self.covariance is not None else None,
            'used_rounds': self.used_rounds,
            'excluded_rounds': self.excluded_rounds,
            'truth_deviation': list(self.truth_deviation) if self.truth_deviation is not None else None,
        }


@dataclass(frozen=True)
class ExperimentReport:
    scene_name: str
    n_rounds: int
    seed: Optional[int]
    truth: Optional[Point]
    modes: Mapping[str, ModeStatistics]
    mode_difference: Optional[Point] = None
    max_mode_distance: Optional[float] = None
    radio: Mapping[str, float] = field(default_factory=dict)
    estimates: Mapping[str, Tuple[PositionEstimate, ...]] = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            'scene': self.scene_name,
            'n_rounds': self.n_rounds,
            'seed': self.seed,
            'truth': list(self.truth) if self.truth is not None else None,
            'modes': {name: stats.to_dict() for name, stats in self.modes.items()},
            'mode_difference': list(self.mode_difference) if self.mode_difference is not None else None,
            'max_mode_distance': self.max_mode_distance,
            'radio': dict(self.radio),
            'hardware_reference': {'mode_difference': list(HARDWARE_MODE_DIFFERENCE)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'


def covariance(points: Sequence[Point]) -> np.ndarray:
    """
    Sample covariance (n-1 normalization) of 2D points.

    Raises:
        StatisticsError: Fewer than 2 points
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise StatisticsError(NOT_ENOUGH_SAMPLES, f"covariance needs >= 2 points, got {len(pts)}")
    return np.cov(pts, rowvar=False, ddof=1)


def precision_stddev(points: Sequence[Point]) -> Point:
    """Per-axis standard deviation: square roots of the covariance diagonal."""
    cov = covariance(points)
    return float(math.sqrt(cov[0, 0])), float(math.sqrt(cov[1, 1]))


def compare_modes(toa_points: Sequence[Point], fused_points: Sequence[Point]) -> Point:
    """Absolute per-axis difference of the mean positions of the two modes."""
    if len(toa_points) == 0 or len(fused_points) == 0:
        raise StatisticsError(NOT_ENOUGH_SAMPLES, "compare_modes needs non-empty point sets")
    diff = np.abs(np.mean(np.asarray(toa_points, dtype=float), axis=0)
                  - np.mean(np.asarray(fused_points, dtype=float), axis=0))
    return float(diff[0]), float(diff[1])


def mode_statistics(estimates: Sequence[PositionEstimate], mode: SolveMode,
                    truth: Optional[Point] = None) -> ModeStatistics:
    """
    Statistics over the converged estimates of one mode.

    Non-converged rounds are excluded and counted. With a single usable fix
    only the mean is reported; with none, the mean is None as well.
    """
    points = [e.position for e in estimates if e.converged]
    mean, stddev, cov_rows, deviation = None, None, None, None
    if points:
        m = np.mean(np.asarray(points, dtype=float), axis=0)
        mean = (float(m[0]), float(m[1]))
        if truth is not None:
            deviation = (mean[0] - truth[0], mean[1] - truth[1])
    if len(points) >= 2:
        cov = covariance(points)
        stddev = (float(math.sqrt(cov[0, 0])), float(math.sqrt(cov[1, 1])))
        cov_rows = ((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1])))
    else:
        logger.warning("Mode %s: %d usable fixes, spread not reported", mode.value, len(points))
    return ModeStatistics(
        mode=mode,
        mean=mean,
        stddev=stddev,
        covariance=cov_rows,
        used_rounds=len(points),
        excluded_rounds=len(estimates) - len(points),
        truth_deviation=deviation,
    )


def summarize_estimates(estimates: Sequence[PositionEstimate], truth: Optional[Point] = None,
                        scene_name: str = '', seed: Optional[int] = None,
                        radio: Optional[Mapping[str, float]] = None) -> ExperimentReport:
    """
    Build a report from per-round estimates of one or both modes.

    Args:
        estimates: Estimates of any modes, in any order
        truth: Configured tag position, if known
        scene_name: Echoed into the report
        seed: Echoed into the report
        radio: Radio profile echoed into the report

    Returns:
        ExperimentReport
    """
    by_mode: Dict[SolveMode, List[PositionEstimate]] = {}
    for e in sorted(estimates, key=lambda e: e.round_idx):
        by_mode.setdefault(e.mode, []).append(e)
    if not by_mode:
        raise StatisticsError(NOT_ENOUGH_SAMPLES, "no estimates to summarize")

    stats = {mode.value: mode_statistics(ests, mode, truth) for mode, ests in by_mode.items()}

    difference, max_distance = None, None
    toa, fused = by_mode.get(SolveMode.TOA_ONLY), by_mode.get(SolveMode.FUSED)
    toa_points = [e.position for e in toa or () if e.converged]
    fused_points = [e.position for e in fused or () if e.converged]
    if toa_points and fused_points:
        difference = compare_modes(toa_points, fused_points)
        fused_by_round = {e.round_idx: e for e in fused if e.converged}
        distances = [math.dist(e.position, fused_by_round[e.round_idx].position)
                     for e in toa if e.converged and e.round_idx in fused_by_round]
        max_distance = max(distances) if distances else None

    n_rounds = len({e.round_idx for e in estimates})
    return ExperimentReport(scene_name=scene_name, n_rounds=n_rounds, seed=seed, truth=truth,
                            modes=stats, mode_difference=difference, max_mode_distance=max_distance,
                            radio=dict(radio or {}),
                            estimates={m.value: tuple(ests) for m, ests in by_mode.items()})


@contextmanager
def stage(name: str):
    """Tag any toolkit error raised inside the block with the pipeline stage."""
    try:
        yield
    except UwbError as e:
        e.details.setdefault('stage', name)
        logger.error("Stage '%s' failed: %s", name, e.message)
        raise


def run_experiment(config: ExperimentConfig, scene: Optional[Scene] = None) -> ExperimentReport:
    """
    Simulate, correct and solve a session in every configured mode.

    Args:
        config: Experiment configuration
        scene: Pre-loaded scene (loaded from config.scene_path when None)

    Returns:
        ExperimentReport; output files are written when config.out_dir is set

    Raises:
        UwbError: Any stage failure, with details['stage'] set
    """
    with stage('simulate'):
        scene = scene or load_scene(config.scene_path)
        records, twr_records = [], []
        if SolveMode.FUSED in config.modes:
            records = simulate_session(scene, config.n_rounds, config.seed)
        if SolveMode.TOA_ONLY in config.modes:
            twr_records = simulate_twr_session(scene, config.n_rounds, config.seed)

    with stage('correct'):
        calibration = SceneCalibration.from_scene(scene)
        corrected = correct_session(records, calibration)
        twr_corrected = correct_session(twr_records, calibration)

    estimates: List[PositionEstimate] = []
    with stage('solve'):
        if SolveMode.TOA_ONLY in config.modes:
            sweeps: Dict[int, list] = {}
            for m in twr_corrected:
                sweeps.setdefault(m.round_idx, []).append(m)
            for k in sorted(sweeps):
                mset = build_measurement_set(None, scene, SolveMode.TOA_ONLY, twr_sweep=sweeps[k])
                estimates.append(solve_position(mset, config.solver))
        if SolveMode.FUSED in config.modes:
            for m in corrected:
                mset = build_measurement_set(m, scene, SolveMode.FUSED)
                estimates.append(solve_position(mset, config.solver))
    estimates.sort(key=lambda e: (e.round_idx, e.mode is SolveMode.FUSED))

    out = config.out_dir
    if out:
        if records:
            record_io.write_records(records, os.path.join(out, 'records.csv'))
            record_io.write_corrected(corrected, os.path.join(out, 'corrected.csv'), config.diagnostics)
        if twr_records:
            record_io.write_records(twr_records, os.path.join(out, 'twr_records.csv'))
            record_io.write_corrected(twr_corrected, os.path.join(out, 'twr_corrected.csv'), config.diagnostics)
        record_io.write_estimates(estimates, os.path.join(out, 'estimates.csv'))

    with stage('aggregate'):
        report = summarize_estimates(estimates, truth=scene.tag.xy, scene_name=scene.name,
                                     seed=config.seed, radio=scene.radio.to_dict())
        for name, stats in report.modes.items():
            logger.info("Mode %s: mean %s m, stddev %s m, %d used, %d excluded",
                        name, stats.mean, stats.stddev, stats.used_rounds, stats.excluded_rounds)

    if out:
        with open(os.path.join(out, 'report.json'), 'w') as f:
            f.write(report.to_json())
        logger.info("Experiment outputs written to %s", out)

    return report


def experiment_for_scene(scene_path: str, **overrides) -> ExperimentConfig:
    """ExperimentConfig for a scene file with .config defaults."""
    values = dict(n_rounds=get_config_value('DEFAULT_ROUNDS', 1000, int),
                  seed=get_config_value('DEFAULT_SEED', 20240601, int),
                  out_dir=get_config_value('OUT_DIR', 'output', str))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(scene_path=scene_path, **values)


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Replace the given (non-None) fields of a config."""
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
