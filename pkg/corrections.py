"""
Clock-drift, signal-power and hardware-delay corrections.

Turns one ExchangeRecord into a corrected time of flight between reference
and tag (T_TOA) and one offset-free time difference of arrival per anchor
(T_TDOA), all expressed in the reference station's clock.

Sign conventions:
  - drift errors are "local minus remote", local being the reference clock:
    C_RT = dT13_R - dT13_T and C_S = dT13_R - dT13_S.
  - raw receive timestamps include the power error E; corrections subtract it.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from uwb_errors import (
    ConfigError,
    DomainError,
    MalformedRecordError,
    UwbError,
    CONFIG_INVALID,
    INVALID_INTERVAL,
    MALFORMED_RECORD,
    raise_error,
)
from ranging_model import (
    AnchorObservation,
    ExchangeRecord,
    PowerCurve,
    measured_to_actual_power,
    power_error,
)

logger = logging.getLogger('Corrections')

CurveSet = Mapping[int, PowerCurve]

_offset_notice_logged = False


@dataclass(frozen=True)
class DelayCalibration:
    """Known one-way hardware delay (s) per station id."""
    delays: Mapping[int, float]

    def __post_init__(self):
        for station_id, delay in self.delays.items():
            if delay < 0:
                raise ConfigError(CONFIG_INVALID, f"negative hardware delay for station {station_id}",
                                  {'station_id': station_id})

    @classmethod
    def from_scene(cls, scene) -> 'DelayCalibration':
        return cls({s.id: s.hardware_delay for s in scene.stations})

    def delay(self, station_id: int) -> float:
        if station_id not in self.delays:
            raise_error(CONFIG_INVALID, f"no hardware delay calibrated for station {station_id}",
                        {'station_id': station_id}, logger=logger)
        return self.delays[station_id]


@dataclass(frozen=True)
class SceneCalibration:
    """Everything the correction chain needs to know about the devices."""
    curves: CurveSet
    delays: DelayCalibration

    @classmethod
    def from_scene(cls, scene, curves: Optional[CurveSet] = None) -> 'SceneCalibration':
        """
        Calibration matching a scene; curves may be overridden (e.g. a flat-zero negative control).
        """
        return cls(curves=dict(curves) if curves is not None else {s.id: s.power_curve for s in scene.stations},
                   delays=DelayCalibration.from_scene(scene))


@dataclass(frozen=True)
class AnchorTerms:
    """Diagnostic terms of one anchor's TDOA correction."""
    c13_s: float
    e3: float
    e4: float
    drift_term: float


@dataclass(frozen=True)
class CorrectedMeasurement:
    round_idx: int
    reference_id: int
    t_toa: float
    t_toa_two_message: float
    t_tdoa: Mapping[int, float]
    c13_rt: float
    e1: float
    e2: float
    k: float
    anchor_terms: Mapping[int, AnchorTerms] = field(default_factory=dict)
    failures: Mapping[int, str] = field(default_factory=dict)

    @property
    def negative_toa(self) -> bool:
        return self.t_toa < 0

    def valid_tdoa(self) -> Dict[int, float]:
        return {a: t for a, t in self.t_tdoa.items() if not math.isnan(t)}


def drift_error(dt13_local: float, dt13_remote: float) -> float:
    """
    Clock drift error over the message 1 -> message 3 window.

    Args:
        dt13_local: Window measured by the local clock (s)
        dt13_remote: Same window measured by the remote clock (s)

    Returns:
        dt13_local - dt13_remote; positive when the local clock runs fast
    """
    if not (dt13_local > 0 and dt13_remote > 0):
        raise MalformedRecordError(INVALID_INTERVAL,
                                   f"dT13 intervals must be positive, got {dt13_local} and {dt13_remote}")
    return dt13_local - dt13_remote


def interpolate_drift(c: float, dt13_tx: float, dt12_elapsed: float) -> float:
    """Linear share of drift error c accrued after dt12_elapsed of the dt13_tx window."""
    if not dt13_tx > 0:
        raise MalformedRecordError(INVALID_INTERVAL, f"dT13 must be positive, got {dt13_tx}")
    if not 0 <= dt12_elapsed <= dt13_tx:
        raise MalformedRecordError(INVALID_INTERVAL,
                                   f"elapsed interval {dt12_elapsed} outside [0, {dt13_tx}]")
    return c * dt12_elapsed / dt13_tx


def _curve(curves: CurveSet, station_id: int) -> PowerCurve:
    if station_id not in curves:
        raise_error(CONFIG_INVALID, f"no power curve for station {station_id}", {'station_id': station_id},
                    logger=logger)
    return curves[station_id]


def _power_term(curves: CurveSet, station_id: int, measured: float) -> float:
    """E for a reported power: measured -> actual through the map, then the error curve."""
    if math.isnan(measured):
        raise MalformedRecordError(MALFORMED_RECORD, f"missing rx power at station {station_id}",
                                   {'station_id': station_id})
    curve = _curve(curves, station_id)
    return power_error(curve, measured_to_actual_power(curve, measured))


def _check_station_intervals(record: ExchangeRecord) -> None:
    for label, values in (('reference', (record.t1_r, record.t2_r, record.t3_r, record.p2_r)),
                          ('tag', (record.t1_t, record.t2_t, record.t3_t, record.p1_t))):
        if any(math.isnan(v) for v in values):
            raise MalformedRecordError(MALFORMED_RECORD,
                                       f"round {record.round_idx}: {label} timestamps incomplete",
                                       {'round_idx': record.round_idx, 'station': label})


def toa_two_message(record: ExchangeRecord, curves: CurveSet, delays: DelayCalibration) -> float:
    """
    Time of flight from messages 1 and 2 only, corrected for power errors and
    hardware delays but not for clock drift.

    Args:
        record: Exchange record
        curves: Power curve per station id
        delays: Hardware delay calibration

    Returns:
        T_TOA in seconds (may be negative)
    """
    e1 = _power_term(curves, record.tag_id, record.p1_t)
    e2 = _power_term(curves, record.reference_id, record.p2_r)
    a = delays.delay(record.reference_id)
    b = delays.delay(record.tag_id)
    return 0.5 * (record.dt12_r - record.dt12_t - e2 - e1) - a - b


def _toa_terms(record: ExchangeRecord, curves: CurveSet, delays: DelayCalibration) -> Dict[str, float]:
    _check_station_intervals(record)
    e1 = _power_term(curves, record.tag_id, record.p1_t)
    e2 = _power_term(curves, record.reference_id, record.p2_r)
    c13_rt = drift_error(record.dt13_r, record.dt13_t)
    drift = interpolate_drift(c13_rt, record.dt13_t, record.dt12_t + e1)
    a = delays.delay(record.reference_id)
    b = delays.delay(record.tag_id)
    t_toa = 0.5 * (record.dt12_r - record.dt12_t - drift - e2 - e1) - a - b
    return {'t_toa': t_toa, 'e1': e1, 'e2': e2, 'c13_rt': c13_rt, 'drift': drift, 'a': a, 'b': b}


def toa_corrected(record: ExchangeRecord, curves: CurveSet, delays: DelayCalibration) -> float:
    """
    Drift-corrected time of flight.

    The tag's reply interval is rescaled into the reference clock with the drift
    error interpolated over the tag's (power corrected) reply interval.

    Args:
        record: Exchange record with all three messages
        curves: Power curve per station id
        delays: Hardware delay calibration

    Returns:
        T_TOA in seconds, reference clock

    Raises:
        MalformedRecordError: Non-positive dT13 or incomplete reference/tag stamps
        DomainError: Reported power outside a curve
    """
    return _toa_terms(record, curves, delays)['t_toa']


def tdoa_with_offset(anchor: AnchorObservation, curves: CurveSet) -> float:
    """Anchor's message 1 -> message 2 interval corrected for power errors; still contains K."""
    e3 = _power_term(curves, anchor.station_id, anchor.p1)
    e4 = _power_term(curves, anchor.station_id, anchor.p2)
    return anchor.dt12 + e3 - e4


def anchor_drift_error(record: ExchangeRecord, anchor_id: int) -> float:
    """Drift error of an anchor relative to the reference: dT13_R - dT13_S."""
    anchor = record.anchor(anchor_id)
    if math.isnan(anchor.t3) or math.isnan(anchor.t1):
        raise MalformedRecordError(MALFORMED_RECORD,
                                   f"round {record.round_idx}: anchor {anchor_id} missing message 1 or 3",
                                   {'anchor_id': anchor_id, 'round_idx': record.round_idx})
    return drift_error(record.dt13_r, anchor.dt13)


def offset_k(record: ExchangeRecord, curves: CurveSet, delays: DelayCalibration, t_toa: float) -> float:
    """
    Offset K between the reference's message 1 and the tag's message 2 emission,
    in reference clock time.

    Args:
        record: Exchange record
        curves: Power curve per station id
        delays: Hardware delay calibration
        t_toa: Value returned by toa_corrected for this record

    Returns:
        K in seconds
    """
    terms = _toa_terms(record, curves, delays)
    return t_toa + record.dt12_t + terms['drift'] + terms['e1'] + 2 * terms['b']


def _log_offset_notice() -> None:
    global _offset_notice_logged
    if not _offset_notice_logged:
        logger.info("TDOA: offset K is subtracted from the anchor interval "
                    "(T = dT12_S + E3 - E4 + drift_S - K); the variant adding K fails the zero-error check")
        _offset_notice_logged = True


def _tdoa_terms(record: ExchangeRecord, anchor_id: int, curves: CurveSet, delays: DelayCalibration,
                toa_terms: Dict[str, float]) -> Dict[str, float]:
    anchor = record.anchor(anchor_id)
    if not anchor.is_complete():
        raise MalformedRecordError(MALFORMED_RECORD,
                                   f"round {record.round_idx}: anchor {anchor_id} timestamps incomplete",
                                   {'anchor_id': anchor_id, 'round_idx': record.round_idx})
    e3 = _power_term(curves, anchor_id, anchor.p1)
    e4 = _power_term(curves, anchor_id, anchor.p2)
    c13_s = anchor_drift_error(record, anchor_id)
    elapsed = anchor.dt12 + e3 - e4
    drift_s = interpolate_drift(c13_s, anchor.dt13, elapsed)

    # Expanded form of (elapsed + drift_s - K) with K = t_toa + dT12_T + drift_RT + E1 + 2B
    t_tdoa = (drift_s + anchor.dt12
              - 0.5 * record.dt12_r
              - 0.5 * (record.dt12_t + toa_terms['drift'])
              + toa_terms['a'] - toa_terms['b']
              - 0.5 * (toa_terms['e1'] - toa_terms['e2'])
              + e3 - e4)
    return {'t_tdoa': t_tdoa, 'c13_s': c13_s, 'e3': e3, 'e4': e4, 'drift': drift_s}


def tdoa_corrected(record: ExchangeRecord, anchor_id: int, curves: CurveSet, delays: DelayCalibration) -> float:
    """
    Offset-free, drift-corrected time difference of arrival at an anchor.

    Equals tof(tag, anchor) - tof(reference, anchor) in reference clock time;
    the anchor's own hardware delay cancels.

    Args:
        record: Full three-message record
        anchor_id: Anchor station id
        curves: Power curve per station id
        delays: Hardware delay calibration

    Returns:
        T_TDOA in seconds
    """
    _log_offset_notice()
    toa_terms = _toa_terms(record, curves, delays)
    try:
        return _tdoa_terms(record, anchor_id, curves, delays, toa_terms)['t_tdoa']
    except UwbError as e:
        e.details.setdefault('anchor_id', anchor_id)
        raise


def correct_record(record: ExchangeRecord, calibration: SceneCalibration) -> CorrectedMeasurement:
    """
    Correct one record: mandatory TOA plus per-anchor TDOA.

    A failing anchor gets a NaN T_TDOA and a failure message; a failing
    reference or tag aborts the record.

    Args:
        record: Exchange record
        calibration: Curves and delays of the scene

    Returns:
        CorrectedMeasurement with diagnostics
    """
    curves, delays = calibration.curves, calibration.delays
    toa_terms = _toa_terms(record, curves, delays)
    t_toa = toa_terms['t_toa']
    k = t_toa + record.dt12_t + toa_terms['drift'] + toa_terms['e1'] + 2 * toa_terms['b']

    t_tdoa: Dict[int, float] = {}
    anchor_terms: Dict[int, AnchorTerms] = {}
    failures: Dict[int, str] = {}
    if record.anchors:
        _log_offset_notice()
    for anchor in record.anchors:
        try:
            terms = _tdoa_terms(record, anchor.station_id, curves, delays, toa_terms)
        except (MalformedRecordError, DomainError) as e:
            logger.warning("Round %d: anchor %d failed: %s", record.round_idx, anchor.station_id, e.message)
            t_tdoa[anchor.station_id] = math.nan
            failures[anchor.station_id] = e.message
            continue
        t_tdoa[anchor.station_id] = terms['t_tdoa']
        anchor_terms[anchor.station_id] = AnchorTerms(terms['c13_s'], terms['e3'], terms['e4'], terms['drift'])

    if t_toa < 0:
        logger.warning("Round %d: negative corrected TOA %.6g s", record.round_idx, t_toa)

    return CorrectedMeasurement(
        round_idx=record.round_idx,
        reference_id=record.reference_id,
        t_toa=t_toa,
        t_toa_two_message=0.5 * (record.dt12_r - record.dt12_t - toa_terms['e2'] - toa_terms['e1'])
        - toa_terms['a'] - toa_terms['b'],
        t_tdoa=t_tdoa,
        c13_rt=toa_terms['c13_rt'],
        e1=toa_terms['e1'],
        e2=toa_terms['e2'],
        k=k,
        anchor_terms=anchor_terms,
        failures=failures,
    )


def correct_session(records: Sequence[ExchangeRecord], calibration: SceneCalibration) -> List[CorrectedMeasurement]:
    """Correct records independently, preserving order."""
    corrected = [correct_record(r, calibration) for r in records]
    failed = sum(len(c.failures) for c in corrected)
    logger.info("Corrected %d records (%d anchor failures)", len(corrected), failed)
    return corrected
