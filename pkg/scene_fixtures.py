"""
Scene builders shared by the test scripts and verify_corrections.py.

DESK4 is the four-station desk constellation: station 1 reference at the
origin, station 2 tag, stations 3 and 4 passive anchors.
"""
import os
from typing import Dict, Mapping, Optional

from config_loader import load_power_curve
from ranging_model import ClockModel, PowerCurve, Role, Station, default_tick
from exchange_simulator import NoiseSpec, Scene

HERE = os.path.dirname(os.path.abspath(__file__))
SCENES_DIR = os.path.join(HERE, 'scenes')
CURVES_DIR = os.path.join(HERE, 'curves')
EXPERIMENTS_DIR = os.path.join(HERE, 'experiments')

DESK4_POSITIONS: Dict[int, tuple] = {
    1: (0.0, 0.0, 0.0),
    2: (0.0, 1.5134, 0.0),
    3: (1.27, 1.643, 0.0),
    4: (1.1439, 0.0385, 0.0),
}
DESK4_ROLES = {1: Role.REFERENCE, 2: Role.TAG, 3: Role.ANCHOR, 4: Role.ANCHOR}

FINE_TICK = 1e-16


def default_curve() -> PowerCurve:
    return load_power_curve(os.path.join(CURVES_DIR, 'default_curve.yaml'))


def make_scene(tick: float = FINE_TICK,
               positions: Optional[Mapping[int, tuple]] = None,
               delays: Optional[Mapping[int, float]] = None,
               drifts: Optional[Mapping[int, float]] = None,
               offsets: Optional[Mapping[int, float]] = None,
               curve: Optional[PowerCurve] = None,
               tag_response_delay: float = 0.3e-3,
               round_interval: float = 1e-3,
               noise: Optional[NoiseSpec] = None,
               jitter: Optional[Mapping[int, float]] = None) -> Scene:
    """
    Desk constellation with selectable error sources (all off by default).

    Args:
        tick: Timestamp tick of every clock
        positions: Station positions by id (default DESK4_POSITIONS)
        delays: Hardware delay by station id
        drifts: Clock frequency offset by station id
        offsets: Clock offset by station id
        curve: Power curve for every station (flat-zero when None)
        tag_response_delay: Tag reply time (s)
        round_interval: Message 1 -> message 3 spacing (s)
        noise: Scene NoiseSpec
        jitter: Per-station timestamp jitter overrides (s)
    """
    positions = positions or DESK4_POSITIONS
    delays, drifts, offsets, jitter = delays or {}, drifts or {}, offsets or {}, jitter or {}
    curve = curve or PowerCurve.flat_zero()
    stations = tuple(
        Station(id=i,
                role=DESK4_ROLES.get(i, Role.ANCHOR),
                position=positions[i],
                hardware_delay=delays.get(i, 0.0),
                clock=ClockModel(offset=offsets.get(i, 0.0), frequency_offset=drifts.get(i, 0.0), tick=tick),
                power_curve=curve,
                timestamp_jitter_sigma=jitter.get(i))
        for i in sorted(positions)
    )
    return Scene(stations=stations, round_interval=round_interval, tag_response_delay=tag_response_delay,
                 noise=noise or NoiseSpec(), name='desk4-fixture')


def default_tick_scene(**kwargs) -> Scene:
    """make_scene with the transceiver's default tick."""
    return make_scene(tick=default_tick(), **kwargs)
