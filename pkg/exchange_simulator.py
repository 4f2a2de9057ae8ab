"""
Seedable simulator of the three-message ranging exchange.

Message 1 and message 3 are sent by the reference station round_interval
apart; the tag stamps message 2 tag_response_delay after its own message 1
stamp, counted on the tag clock. Every anchor passively timestamps all three
messages.

Timestamps are produced from true latch instants:
  TX latch = antenna emission - hardware_delay
  RX latch = antenna arrival + hardware_delay + E(rx power) + jitter
and projected through the station clock.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from uwb_errors import ConfigError, CONFIG_INVALID, SCENE_INVARIANT
from ranging_model import (
    AnchorObservation,
    ClockModel,
    ExchangeRecord,
    ExchangeTruth,
    Position,
    RadioProfile,
    Role,
    Station,
    C0,
    actual_to_measured_power,
    clock_project,
    power_error,
    quantize,
    rx_power,
)

logger = logging.getLogger('Simulator')

# Path loss is evaluated at no less than this distance (m)
MIN_PATH_DISTANCE = 0.05
# True time between round_start and the first TX latch (s)
LEAD_TIME = 1e-6
# Slack kept free between the last reception of a round and its end (s)
ROUND_GUARD = 100e-9

SESSION_STREAM = 0
SWEEP_STREAM = 1

# Per-role RX timestamp jitter (s) and power reading jitter (dB)
NOISE_PRESETS: Dict[str, Dict[str, float]] = {
    'ideal': {'reference': 0.0, 'tag': 0.0, 'anchor': 0.0, 'power': 0.0},
    'hardware-like': {'reference': 183e-12, 'tag': 153e-12, 'anchor': 69e-12, 'power': 0.2},
}
PRESET_ALIASES = {'paper-like': 'hardware-like'}


@dataclass(frozen=True)
class NoiseSpec:
    """White Gaussian noise injected by the simulator."""
    timestamp_jitter_sigma: float = 0.0
    power_jitter_sigma: float = 0.0
    frequency_jitter_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ('timestamp_jitter_sigma', 'power_jitter_sigma', 'frequency_jitter_sigma'):
            if getattr(self, name) < 0:
                raise ConfigError(CONFIG_INVALID, f"noise.{name} must be >= 0", {'key': name})
        if self.seed < 0:
            raise ConfigError(CONFIG_INVALID, "noise.seed must be >= 0", {'key': 'seed'})


def true_tof(a: Position, b: Position) -> float:
    """Time of flight between two positions (s)."""
    return math.dist(a, b) / C0


@dataclass(frozen=True)
class Scene:
    stations: Tuple[Station, ...]
    round_interval: float = 1e-3
    tag_response_delay: float = 0.3e-3
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    round_period: float = 10e-3
    tx_power_dbm: float = -14.3
    radio: RadioProfile = field(default_factory=RadioProfile)
    name: str = 'scene'

    def __post_init__(self):
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ConfigError(SCENE_INVARIANT, f"scene '{self.name}': duplicate station ids {ids}")
        for role in (Role.REFERENCE, Role.TAG):
            count = sum(1 for s in self.stations if s.role is role)
            if count != 1:
                raise ConfigError(SCENE_INVARIANT,
                                  f"scene '{self.name}': expected exactly one {role.value}, found {count}",
                                  {'role': role.value})
        if not self.tag_response_delay > 0:
            raise ConfigError(SCENE_INVARIANT, f"scene '{self.name}': tag_response_delay must be > 0")

        max_tof = max((true_tof(a.position, b.position) for a in self.stations for b in self.stations),
                      default=0.0)
        max_delay = max(s.hardware_delay for s in self.stations)
        if not self.round_interval > 2 * max_tof:
            raise ConfigError(SCENE_INVARIANT,
                              f"scene '{self.name}': round_interval {self.round_interval} "
                              f"must exceed twice the largest time of flight {max_tof}")
        if self.tag_response_delay + 4 * (max_tof + max_delay) + ROUND_GUARD >= self.round_interval:
            raise ConfigError(SCENE_INVARIANT,
                              f"scene '{self.name}': tag_response_delay {self.tag_response_delay} "
                              f"leaves no room before message 3 (round_interval {self.round_interval})")
        if self.round_period < self.round_interval + LEAD_TIME + 2 * (max_tof + max_delay) + ROUND_GUARD:
            raise ConfigError(SCENE_INVARIANT,
                              f"scene '{self.name}': round_period {self.round_period} overlaps consecutive rounds")

    def station(self, station_id: int) -> Station:
        for s in self.stations:
            if s.id == station_id:
                return s
        raise ConfigError(CONFIG_INVALID, f"scene '{self.name}': no station {station_id}",
                          {'station_id': station_id})

    @property
    def reference(self) -> Station:
        return next(s for s in self.stations if s.role is Role.REFERENCE)

    @property
    def tag(self) -> Station:
        return next(s for s in self.stations if s.role is Role.TAG)

    @property
    def anchors(self) -> Tuple[Station, ...]:
        return tuple(sorted((s for s in self.stations if s.role is Role.ANCHOR), key=lambda s: s.id))

    def with_reference(self, station_id: int) -> 'Scene':
        """
        Rotate roles so station_id becomes the reference.

        The former reference takes the new reference's previous role.
        """
        current = self.reference
        if station_id == current.id:
            return self
        target = self.station(station_id)
        if target.role is Role.TAG:
            raise ConfigError(CONFIG_INVALID, f"scene '{self.name}': the tag cannot act as reference",
                              {'station_id': station_id})
        stations = []
        for s in self.stations:
            if s.id == station_id:
                s = replace(s, role=Role.REFERENCE)
            elif s.id == current.id:
                s = replace(s, role=target.role)
            stations.append(s)
        return replace(self, stations=tuple(stations))

    def with_noise(self, noise: NoiseSpec) -> 'Scene':
        return replace(self, noise=noise)


def apply_noise_preset(scene: Scene, preset: str) -> Scene:
    """
    Assign per-station jitter from a named preset, keyed by each station's configured role.

    Args:
        scene: Scene to update
        preset: Name in NOISE_PRESETS

    Returns:
        Scene with per-station timestamp jitter and power jitter set
    """
    preset = PRESET_ALIASES.get(preset, preset)
    if preset not in NOISE_PRESETS:
        raise ConfigError(CONFIG_INVALID, f"unknown noise preset '{preset}' (known: {sorted(NOISE_PRESETS)})",
                          {'key': 'noise.preset'})
    values = NOISE_PRESETS[preset]
    stations = tuple(replace(s, timestamp_jitter_sigma=values[s.role.value]) for s in scene.stations)
    noise = replace(scene.noise, power_jitter_sigma=values['power'])
    logger.info("Applied noise preset '%s' to scene '%s'", preset, scene.name)
    return replace(scene, stations=stations, noise=noise)


def derive_seed(seed: int, *keys: int) -> int:
    """
    Derive an independent child seed for (seed, keys...).

    Shards that own different keys draw from non-overlapping streams.
    """
    state = np.random.SeedSequence([int(seed)] + [int(k) for k in keys]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def _jitter_sigma(scene: Scene, station: Station) -> float:
    if station.timestamp_jitter_sigma is not None:
        return station.timestamp_jitter_sigma
    return scene.noise.timestamp_jitter_sigma


def _receive(scene: Scene, station: Station, clock: ClockModel, arrival: float, distance: float,
             rng: np.random.Generator) -> Tuple[float, float]:
    """Local RX timestamp and reported power for a message reaching station's antenna at arrival."""
    actual = rx_power(scene.tx_power_dbm, max(distance, MIN_PATH_DISTANCE), scene.radio.center_frequency)
    error = power_error(station.power_curve, actual)
    jitter = rng.normal(0.0, _jitter_sigma(scene, station))
    reading = rng.normal(0.0, scene.noise.power_jitter_sigma)
    stamp = clock_project(clock, arrival + station.hardware_delay + error + jitter)
    measured = actual_to_measured_power(station.power_curve, actual + reading)
    return stamp, measured


def simulate_exchange(scene: Scene, round_start: float, rng: np.random.Generator,
                      round_idx: int = 0, include_anchors: bool = True) -> ExchangeRecord:
    """
    Simulate one three-message round.

    Args:
        scene: Validated scene
        round_start: True time at which the round begins (s, >= 0)
        rng: numpy Generator; the record is a pure function of its state
        round_idx: Index stored on the record
        include_anchors: False for a plain two-way exchange without passive anchors

    Returns:
        ExchangeRecord with truth populated
    """
    ref, tag = scene.reference, scene.tag
    anchors = scene.anchors if include_anchors else ()

    # Per-round clock frequency perturbation, one draw per station in scene order
    freq_jitter = rng.normal(0.0, scene.noise.frequency_jitter_sigma, size=len(scene.stations))
    clocks = {}
    for s, df in zip(scene.stations, freq_jitter):
        clocks[s.id] = s.clock if df == 0.0 else replace(s.clock, frequency_offset=s.clock.frequency_offset + df)

    d_rt = math.dist(ref.position, tag.position)
    d_rs = {a.id: math.dist(ref.position, a.position) for a in anchors}
    d_ts = {a.id: math.dist(tag.position, a.position) for a in anchors}

    # Message 1: reference -> all
    t1_latch = round_start + LEAD_TIME
    emit1 = t1_latch + ref.hardware_delay
    t1_r = clock_project(clocks[ref.id], t1_latch)
    arrival1_t = emit1 + d_rt / C0
    t1_t, p1_t = _receive(scene, tag, clocks[tag.id], arrival1_t, d_rt, rng)
    msg1 = {a.id: _receive(scene, a, clocks[a.id], emit1 + d_rs[a.id] / C0, d_rs[a.id], rng) for a in anchors}

    # Message 2: tag -> all, scheduled tag_response_delay after T1_T on the tag clock
    tag_clock = clocks[tag.id]
    t2_t = quantize(t1_t + scene.tag_response_delay, tag_clock.tick)
    t2_latch = (t2_t - tag_clock.offset) / (1.0 + tag_clock.frequency_offset)
    emit2 = t2_latch + tag.hardware_delay
    t2_r, p2_r = _receive(scene, ref, clocks[ref.id], emit2 + d_rt / C0, d_rt, rng)
    msg2 = {a.id: _receive(scene, a, clocks[a.id], emit2 + d_ts[a.id] / C0, d_ts[a.id], rng) for a in anchors}

    # Message 3: reference -> all
    emit3 = emit1 + scene.round_interval
    t3_r = clock_project(clocks[ref.id], emit3 - ref.hardware_delay)
    t3_t, p3_t = _receive(scene, tag, clocks[tag.id], emit3 + d_rt / C0, d_rt, rng)
    msg3 = {a.id: _receive(scene, a, clocks[a.id], emit3 + d_rs[a.id] / C0, d_rs[a.id], rng) for a in anchors}

    observations = tuple(
        AnchorObservation(station_id=a.id, t1=msg1[a.id][0], t2=msg2[a.id][0], t3=msg3[a.id][0],
                          p1=msg1[a.id][1], p2=msg2[a.id][1])
        for a in anchors
    )
    truth = ExchangeTruth(
        tag_position=tag.position,
        tof_reference_tag=d_rt / C0,
        anchor_tdoa={a.id: (d_ts[a.id] - d_rs[a.id]) / C0 for a in anchors},
    )
    record = ExchangeRecord(round_idx=round_idx, reference_id=ref.id, tag_id=tag.id,
                            t1_r=t1_r, t2_r=t2_r, t3_r=t3_r, p2_r=p2_r,
                            t1_t=t1_t, t2_t=t2_t, t3_t=t3_t, p1_t=p1_t, p3_t=p3_t,
                            anchors=observations, truth=truth)
    record.validate(scene.round_interval)
    return record


def simulate_session(scene: Scene, n_rounds: int, seed: Optional[int] = None) -> List[ExchangeRecord]:
    """
    Simulate n_rounds independent rounds spaced round_period apart.

    Args:
        scene: Validated scene
        n_rounds: Number of rounds (>= 1)
        seed: Session seed (defaults to scene.noise.seed)

    Returns:
        Records ordered by round_idx
    """
    if n_rounds < 1:
        raise ConfigError(CONFIG_INVALID, f"n_rounds must be >= 1, got {n_rounds}", {'key': 'n_rounds'})
    seed = scene.noise.seed if seed is None else seed
    records = []
    for k in range(n_rounds):
        rng = np.random.default_rng(derive_seed(seed, k, SESSION_STREAM, scene.reference.id))
        records.append(simulate_exchange(scene, k * scene.round_period, rng, round_idx=k))
    logger.info("Simulated %d rounds of scene '%s' (seed=%d, anchors=%s)",
                n_rounds, scene.name, seed, [a.id for a in scene.anchors])
    return records


def simulate_twr_sweep(scene: Scene, round_idx: int, seed: Optional[int] = None) -> List[ExchangeRecord]:
    """
    Two-way exchanges between the tag and every other station acting as reference.

    Args:
        scene: Validated scene
        round_idx: Round index (selects the random streams and round start)
        seed: Session seed (defaults to scene.noise.seed)

    Returns:
        One record per non-tag station, ordered by station id, without anchor observations
    """
    seed = scene.noise.seed if seed is None else seed
    records = []
    initiators = sorted(s.id for s in scene.stations if s.role is not Role.TAG)
    for station_id in initiators:
        rotated = scene.with_reference(station_id)
        rng = np.random.default_rng(derive_seed(seed, round_idx, SWEEP_STREAM, station_id))
        records.append(simulate_exchange(rotated, round_idx * scene.round_period, rng,
                                         round_idx=round_idx, include_anchors=False))
    return records


def simulate_twr_session(scene: Scene, n_rounds: int, seed: Optional[int] = None) -> List[ExchangeRecord]:
    """Flattened simulate_twr_sweep over n_rounds rounds."""
    if n_rounds < 1:
        raise ConfigError(CONFIG_INVALID, f"n_rounds must be >= 1, got {n_rounds}", {'key': 'n_rounds'})
    records = []
    for k in range(n_rounds):
        records.extend(simulate_twr_sweep(scene, k, seed))
    logger.info("Simulated %d two-way sweeps of scene '%s'", n_rounds, scene.name)
    return records
