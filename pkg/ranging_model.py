"""
Domain types and deterministic physical/clock models for UWB ranging.

Shared by the exchange simulator and the correction pipeline. All types are
frozen dataclasses and all functions are pure.

Timestamp convention: a raw receive timestamp INCLUDES the signal-power error
(T_rx = ideal + E); corrections subtract E.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from uwb_errors import (
    ConfigError,
    DomainError,
    MalformedRecordError,
    CONFIG_INVALID,
    POWER_OUT_OF_DOMAIN,
    DISTANCE_OUT_OF_DOMAIN,
    MALFORMED_RECORD,
    INVALID_INTERVAL,
)

# Speed of light in vacuum (m/s)
C0 = 299792458.0

DEFAULT_CENTER_FREQUENCY = 3993.6e6
DEFAULT_BANDWIDTH = 499.2e6
MAX_FREQUENCY_OFFSET = 100e-6
MAX_HARDWARE_DELAY = 1e-6

Position = Tuple[float, float, float]


def default_tick() -> float:
    """Timestamp resolution of a 64x oversampled 499.2 MHz timebase (~15.65 ps)."""
    return 1.0 / (128 * DEFAULT_BANDWIDTH)


def quantize(value: float, tick: float) -> float:
    """Round a time value to the nearest integer multiple of tick."""
    return round(value / tick) * tick


class Role(str, Enum):
    REFERENCE = 'reference'
    TAG = 'tag'
    ANCHOR = 'anchor'


@dataclass(frozen=True)
class RadioProfile:
    """
    Transceiver settings of a ranging session.

    Only center_frequency (path loss) and bandwidth (default tick) feed the
    models; the rest is echoed into reports.
    """
    channel: int = 2
    center_frequency: float = DEFAULT_CENTER_FREQUENCY
    bandwidth: float = DEFAULT_BANDWIDTH
    prf: float = 64e6
    preamble_length: int = 128
    data_rate: float = 6.81e6

    def tick(self) -> float:
        return 1.0 / (128 * self.bandwidth)

    def to_dict(self) -> dict:
        return {
            'channel': self.channel,
            'center_frequency': self.center_frequency,
            'bandwidth': self.bandwidth,
            'prf': self.prf,
            'preamble_length': self.preamble_length,
            'data_rate': self.data_rate,
        }


@dataclass(frozen=True)
class ClockModel:
    """Affine station clock: local = offset + (1 + frequency_offset) * true, quantized to tick."""
    offset: float = 0.0
    frequency_offset: float = 0.0
    tick: float = field(default_factory=default_tick)

    def __post_init__(self):
        if abs(self.frequency_offset) > MAX_FREQUENCY_OFFSET:
            raise ConfigError(CONFIG_INVALID,
                              f"frequency_offset {self.frequency_offset} exceeds ±{MAX_FREQUENCY_OFFSET}",
                              {'frequency_offset': self.frequency_offset})
        if not self.tick > 0:
            raise ConfigError(CONFIG_INVALID, f"tick must be positive, got {self.tick}",
                              {'tick': self.tick})


def clock_project(clock: ClockModel, true_time: float) -> float:
    """
    Project a true time onto a station's local, quantized timestamp.

    Args:
        clock: Station clock model
        true_time: True (global) time in seconds, >= 0

    Returns:
        Local timestamp in seconds, an integer multiple of clock.tick
    """
    if true_time < 0:
        raise DomainError(MALFORMED_RECORD, f"true_time must be >= 0, got {true_time}",
                          {'true_time': true_time})
    return quantize(clock.offset + (1.0 + clock.frequency_offset) * true_time, clock.tick)


@dataclass(frozen=True)
class PowerCurve:
    """
    Per-device signal-power calibration.

    error_actual/error_values: timestamp error E (s) vs actual rx power (dBm).
    map_measured/map_actual: reported (measured) power vs actual power (dBm).
    Both tables are interpolated piecewise linearly.
    """
    error_actual: Tuple[float, ...]
    error_values: Tuple[float, ...]
    map_measured: Tuple[float, ...]
    map_actual: Tuple[float, ...]
    name: str = ''

    def __post_init__(self):
        if len(self.error_actual) < 2 or len(self.error_actual) != len(self.error_values):
            raise ConfigError(CONFIG_INVALID, f"power curve '{self.name}': error_curve needs >= 2 (power, error) rows")
        if len(self.map_measured) < 2 or len(self.map_measured) != len(self.map_actual):
            raise ConfigError(CONFIG_INVALID, f"power curve '{self.name}': power_map needs >= 2 (measured, actual) rows")
        if np.any(np.diff(self.error_actual) <= 0):
            raise ConfigError(CONFIG_INVALID, f"power curve '{self.name}': actual power must be strictly increasing")
        if np.any(np.diff(self.error_values) > 0):
            raise ConfigError(CONFIG_INVALID,
                              f"power curve '{self.name}': timestamp error must be non-increasing in power")
        if np.any(np.diff(self.map_measured) <= 0) or np.any(np.diff(self.map_actual) <= 0):
            raise ConfigError(CONFIG_INVALID,
                              f"power curve '{self.name}': measured->actual map must be strictly increasing")

    @classmethod
    def from_tables(cls, error_curve: Sequence[Sequence[float]], power_map: Sequence[Sequence[float]],
                    name: str = '') -> 'PowerCurve':
        """
        Build a curve from [[actual_dbm, error_s], ...] and [[measured_dbm, actual_dbm], ...] rows.
        """
        try:
            error_actual = tuple(float(row[0]) for row in error_curve)
            error_values = tuple(float(row[1]) for row in error_curve)
            map_measured = tuple(float(row[0]) for row in power_map)
            map_actual = tuple(float(row[1]) for row in power_map)
        except (TypeError, IndexError, ValueError) as e:
            raise ConfigError(CONFIG_INVALID, f"power curve '{name}': malformed table ({e})")
        return cls(error_actual, error_values, map_measured, map_actual, name)

    @classmethod
    def flat_zero(cls, low: float = -150.0, high: float = 20.0) -> 'PowerCurve':
        """Zero timestamp error and identity power map over [low, high] dBm."""
        return cls((low, high), (0.0, 0.0), (low, high), (low, high), 'flat-zero')

    @property
    def error_domain(self) -> Tuple[float, float]:
        return self.error_actual[0], self.error_actual[-1]

    @property
    def measured_domain(self) -> Tuple[float, float]:
        return self.map_measured[0], self.map_measured[-1]

    @property
    def actual_domain(self) -> Tuple[float, float]:
        return self.map_actual[0], self.map_actual[-1]


def _check_domain(value: float, domain: Tuple[float, float], what: str, curve: PowerCurve) -> None:
    if math.isnan(value) or value < domain[0] or value > domain[1]:
        raise DomainError(POWER_OUT_OF_DOMAIN,
                          f"{what} {value} dBm outside [{domain[0]}, {domain[1]}] of curve '{curve.name}'",
                          {'power': value, 'curve': curve.name})


def power_error(curve: PowerCurve, actual_power: float) -> float:
    """
    Timestamp error E (seconds) for an actual received power.

    Args:
        curve: Device power curve
        actual_power: Actual received power in dBm

    Returns:
        Timestamp error in seconds (negative at high power)
    """
    _check_domain(actual_power, curve.error_domain, 'actual power', curve)
    return float(np.interp(actual_power, curve.error_actual, curve.error_values))


def measured_to_actual_power(curve: PowerCurve, measured: float) -> float:
    """Map the power a device reports to the actual received power."""
    _check_domain(measured, curve.measured_domain, 'measured power', curve)
    return float(np.interp(measured, curve.map_measured, curve.map_actual))


def actual_to_measured_power(curve: PowerCurve, actual: float) -> float:
    """Map an actual received power to what the device would report."""
    _check_domain(actual, curve.actual_domain, 'actual power', curve)
    return float(np.interp(actual, curve.map_actual, curve.map_measured))


def rx_power(tx_power: float, distance: float, frequency: float = DEFAULT_CENTER_FREQUENCY) -> float:
    """
    Free-space received power.

    Args:
        tx_power: Transmit power in dBm
        distance: Link distance in meters, > 0
        frequency: Carrier frequency in Hz

    Returns:
        Received power in dBm
    """
    if not distance > 0:
        raise DomainError(DISTANCE_OUT_OF_DOMAIN, f"distance must be > 0, got {distance}",
                          {'distance': distance})
    return tx_power - 20.0 * math.log10(4.0 * math.pi * distance * frequency / C0)


@dataclass(frozen=True)
class Station:
    """A reference station, tag or passive anchor."""
    id: int
    role: Role
    position: Position
    hardware_delay: float = 0.0
    clock: ClockModel = field(default_factory=ClockModel)
    power_curve: PowerCurve = field(default_factory=PowerCurve.flat_zero)
    timestamp_jitter_sigma: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.hardware_delay < MAX_HARDWARE_DELAY:
            raise ConfigError(CONFIG_INVALID,
                              f"station {self.id}: hardware_delay {self.hardware_delay} outside [0, 1 us)",
                              {'station_id': self.id})
        if len(self.position) != 3:
            raise ConfigError(CONFIG_INVALID, f"station {self.id}: position must be (x, y, z)",
                              {'station_id': self.id})
        if self.timestamp_jitter_sigma is not None and self.timestamp_jitter_sigma < 0:
            raise ConfigError(CONFIG_INVALID, f"station {self.id}: negative timestamp_jitter_sigma",
                              {'station_id': self.id})

    @property
    def xy(self) -> Tuple[float, float]:
        return self.position[0], self.position[1]


@dataclass(frozen=True)
class AnchorObservation:
    """Timestamps and reported powers of one passive anchor for one exchange."""
    station_id: int
    t1: float
    t2: float
    t3: float
    p1: float
    p2: float

    @property
    def dt12(self) -> float:
        return self.t2 - self.t1

    @property
    def dt13(self) -> float:
        return self.t3 - self.t1

    def is_complete(self) -> bool:
        return not any(math.isnan(v) for v in (self.t1, self.t2, self.t3, self.p1, self.p2))


@dataclass(frozen=True)
class ExchangeTruth:
    """Simulator ground truth for one exchange."""
    tag_position: Position
    tof_reference_tag: float = math.nan
    anchor_tdoa: Mapping[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ExchangeRecord:
    """
    Raw timestamps of one three-message round.

    Message 1 and 3 are sent by the reference, message 2 by the tag; anchors
    passively timestamp all three.
    """
    round_idx: int
    reference_id: int
    tag_id: int
    t1_r: float
    t2_r: float
    t3_r: float
    p2_r: float
    t1_t: float
    t2_t: float
    t3_t: float
    p1_t: float
    p3_t: float
    anchors: Tuple[AnchorObservation, ...] = ()
    truth: Optional[ExchangeTruth] = None

    @property
    def dt12_r(self) -> float:
        return self.t2_r - self.t1_r

    @property
    def dt13_r(self) -> float:
        return self.t3_r - self.t1_r

    @property
    def dt12_t(self) -> float:
        return self.t2_t - self.t1_t

    @property
    def dt13_t(self) -> float:
        return self.t3_t - self.t1_t

    @property
    def anchor_ids(self) -> Tuple[int, ...]:
        return tuple(a.station_id for a in self.anchors)

    def anchor(self, station_id: int) -> AnchorObservation:
        for obs in self.anchors:
            if obs.station_id == station_id:
                return obs
        raise MalformedRecordError(MALFORMED_RECORD,
                                   f"round {self.round_idx}: anchor {station_id} not in record",
                                   {'anchor_id': station_id, 'round_idx': self.round_idx})

    def validate(self, round_interval: Optional[float] = None) -> None:
        """
        Check per-station ordering T1 < T2 < T3 and, when round_interval is given,
        that every ΔT13 lies within 50% of it.
        """
        groups = [('reference', (self.t1_r, self.t2_r, self.t3_r)),
                  ('tag', (self.t1_t, self.t2_t, self.t3_t))]
        groups += [(f'anchor {a.station_id}', (a.t1, a.t2, a.t3)) for a in self.anchors]
        for label, (t1, t2, t3) in groups:
            if not (t1 < t2 < t3):
                raise MalformedRecordError(INVALID_INTERVAL,
                                           f"round {self.round_idx}: {label} timestamps not ordered",
                                           {'round_idx': self.round_idx, 'station': label})
            if round_interval is not None and abs((t3 - t1) - round_interval) > 0.5 * round_interval:
                raise MalformedRecordError(INVALID_INTERVAL,
                                           f"round {self.round_idx}: {label} interval {t3 - t1} "
                                           f"not within 50% of {round_interval}",
                                           {'round_idx': self.round_idx, 'station': label})
