"""
Configuration loader for the UWB ranging toolkit.
Reads application settings from the .config file in the project root and
scene, power-curve and experiment descriptions from YAML files.
"""
import os
from typing import Any, Callable, Dict, Optional

import yaml

from uwb_errors import ConfigError, CONFIG_INVALID, CONFIG_NOT_FOUND
from ranging_model import ClockModel, PowerCurve, RadioProfile, Role, Station
from exchange_simulator import NoiseSpec, Scene, apply_noise_preset

FLAT_ZERO_CURVE = 'flat-zero'


def load_config(config_path: str = '.config') -> Dict[str, Any]:
    """
    Load configuration from .config file.

    Args:
        config_path: Path to the configuration file (default: .config)

    Returns:
        Dictionary containing configuration key-value pairs
    """
    config = {}

    # Get the directory where this script is located
    script_dir = os.path.dirname(os.path.abspath(__file__))
    full_path = os.path.join(script_dir, config_path)

    if not os.path.exists(full_path):
        raise FileNotFoundError(f"Configuration file not found: {full_path}")

    with open(full_path, 'r') as f:
        for line in f:
            line = line.strip()

            # Skip empty lines and comments
            if not line or line.startswith('#'):
                continue

            if '=' in line:
                key, value = line.split('=', 1)
                key = key.strip()
                value = value.strip()

                if value.startswith('"') and value.endswith('"'):
                    value = value[1:-1]
                elif value.startswith("'") and value.endswith("'"):
                    value = value[1:-1]

                # Convert numeric values (only if purely numeric)
                if value.replace('.', '', 1).replace('-', '', 1).isdigit():
                    value = float(value) if '.' in value else int(value)

                config[key] = value

    return config


def get_config_value(key: str, default: Any = None, cast: Optional[Callable[[Any], Any]] = None) -> Any:
    """
    Get an application setting from CONFIG, env overrides included.

    Args:
        key: Configuration key to retrieve
        default: Value used when the key is absent
        cast: Optional converter such as int or float

    Returns:
        Configuration value or default, passed through cast

    Raises:
        ConfigError: The value cannot be converted by cast
    """
    value = CONFIG.get(key, default)
    if cast is None or value is None:
        return value
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise ConfigError(CONFIG_INVALID, f".config: {key}={value!r} is not a valid {cast.__name__}", {'key': key})


def load_yaml(path: str) -> Dict[str, Any]:
    """
    Read a YAML mapping from disk.

    Raises:
        ConfigError: File missing, unparsable, or not a mapping
    """
    if not os.path.exists(path):
        raise ConfigError(CONFIG_NOT_FOUND, f"File not found: {path}", {'path': path})
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(CONFIG_INVALID, f"Cannot parse {path}: {e}", {'path': path})
    if not isinstance(data, dict):
        raise ConfigError(CONFIG_INVALID, f"{path} must contain a mapping", {'path': path})
    return data


def _require(data: Dict[str, Any], key: str, where: str) -> Any:
    if key not in data:
        raise ConfigError(CONFIG_INVALID, f"{where}: missing key '{key}'", {'key': key})
    return data[key]


def _as_float(value: Any, key: str, where: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(CONFIG_INVALID, f"{where}: '{key}' must be a number, got {value!r}", {'key': key})


def _resolve(path: str, base_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def load_power_curve(path: str) -> PowerCurve:
    """
    Load a PowerCurve file with 'error_curve' and 'power_map' tables.

    Args:
        path: YAML file path

    Returns:
        Validated PowerCurve
    """
    data = load_yaml(path)
    name = str(data.get('name', os.path.splitext(os.path.basename(path))[0]))
    return PowerCurve.from_tables(_require(data, 'error_curve', path),
                                  _require(data, 'power_map', path),
                                  name=name)


def _curve_from_entry(entry: Any, base_dir: str, cache: Dict[str, PowerCurve]) -> PowerCurve:
    if entry is None or entry == FLAT_ZERO_CURVE:
        return PowerCurve.flat_zero()
    if isinstance(entry, dict):
        return PowerCurve.from_tables(_require(entry, 'error_curve', 'inline power_curve'),
                                      _require(entry, 'power_map', 'inline power_curve'),
                                      name=str(entry.get('name', 'inline')))
    path = _resolve(str(entry), base_dir)
    if path not in cache:
        cache[path] = load_power_curve(path)
    return cache[path]


def _station_from_entry(entry: Dict[str, Any], default_tick: float, default_curve: Any,
                        base_dir: str, cache: Dict[str, PowerCurve]) -> Station:
    where = f"station {entry.get('id', '?')}"
    station_id = int(_require(entry, 'id', where))
    try:
        role = Role(str(_require(entry, 'role', where)).lower())
    except ValueError:
        raise ConfigError(CONFIG_INVALID, f"{where}: unknown role {entry.get('role')!r}", {'key': 'role'})

    position = _require(entry, 'position', where)
    if not isinstance(position, (list, tuple)) or len(position) not in (2, 3):
        raise ConfigError(CONFIG_INVALID, f"{where}: position must be [x, y] or [x, y, z]", {'key': 'position'})
    position = tuple(_as_float(v, 'position', where) for v in position)
    if len(position) == 2:
        position = position + (0.0,)

    clock_entry = entry.get('clock') or {}
    clock = ClockModel(offset=_as_float(clock_entry.get('offset', 0.0), 'clock.offset', where),
                       frequency_offset=_as_float(clock_entry.get('frequency_offset', 0.0),
                                                  'clock.frequency_offset', where),
                       tick=_as_float(clock_entry.get('tick', default_tick), 'clock.tick', where))

    jitter = entry.get('timestamp_jitter_sigma')
    return Station(id=station_id,
                   role=role,
                   position=position,
                   hardware_delay=_as_float(entry.get('hardware_delay', 0.0), 'hardware_delay', where),
                   clock=clock,
                   power_curve=_curve_from_entry(entry.get('power_curve', default_curve), base_dir, cache),
                   timestamp_jitter_sigma=None if jitter is None else _as_float(jitter, 'timestamp_jitter_sigma', where))


def scene_from_dict(data: Dict[str, Any], base_dir: str = '.', name: Optional[str] = None) -> Scene:
    """
    Build a Scene from a parsed scene mapping.

    Args:
        data: Scene mapping (see docs_source/configuration.rst)
        base_dir: Directory that relative curve paths resolve against
        name: Scene name fallback

    Returns:
        Validated Scene
    """
    where = 'scene'
    radio_entry = data.get('radio') or {}
    radio = RadioProfile(channel=int(radio_entry.get('channel', 2)),
                         center_frequency=_as_float(radio_entry.get('center_frequency', 3993.6e6),
                                                    'radio.center_frequency', where),
                         bandwidth=_as_float(radio_entry.get('bandwidth', 499.2e6), 'radio.bandwidth', where),
                         prf=_as_float(radio_entry.get('prf', 64e6), 'radio.prf', where),
                         preamble_length=int(radio_entry.get('preamble_length', 128)),
                         data_rate=_as_float(radio_entry.get('data_rate', 6.81e6), 'radio.data_rate', where))
    tick = _as_float(data.get('tick', radio.tick()), 'tick', where)

    noise_entry = data.get('noise') or {}
    noise = NoiseSpec(
        timestamp_jitter_sigma=_as_float(noise_entry.get('timestamp_jitter_sigma', 0.0),
                                         'noise.timestamp_jitter_sigma', where),
        power_jitter_sigma=_as_float(noise_entry.get('power_jitter_sigma', 0.0), 'noise.power_jitter_sigma', where),
        frequency_jitter_sigma=_as_float(noise_entry.get('frequency_jitter_sigma', 0.0),
                                         'noise.frequency_jitter_sigma', where),
        seed=int(noise_entry.get('seed', 0)))

    cache: Dict[str, PowerCurve] = {}
    stations_entry = _require(data, 'stations', where)
    if not isinstance(stations_entry, list):
        raise ConfigError(CONFIG_INVALID, "scene: 'stations' must be a list", {'key': 'stations'})
    stations = tuple(_station_from_entry(s, tick, data.get('power_curve'), base_dir, cache)
                     for s in stations_entry)

    scene = Scene(stations=stations,
                  round_interval=_as_float(data.get('round_interval', 1e-3), 'round_interval', where),
                  tag_response_delay=_as_float(data.get('tag_response_delay', 0.3e-3), 'tag_response_delay', where),
                  noise=noise,
                  round_period=_as_float(data.get('round_period', 10e-3), 'round_period', where),
                  tx_power_dbm=_as_float(data.get('tx_power_dbm', -14.3), 'tx_power_dbm', where),
                  radio=radio,
                  name=str(data.get('name', name or 'scene')))

    for key, station in (('reference_id', scene.reference), ('tag_id', scene.tag)):
        if key in data and int(data[key]) != station.id:
            raise ConfigError(CONFIG_INVALID,
                              f"scene: {key}={data[key]} does not match station {station.id}'s role",
                              {'key': key})

    preset = noise_entry.get('preset')
    if preset:
        scene = apply_noise_preset(scene, str(preset))
    return scene


def load_scene(path: str) -> Scene:
    """
    Load a scene YAML file.

    Args:
        path: Scene file path; relative curve paths resolve against its directory

    Returns:
        Validated Scene
    """
    data = load_yaml(path)
    name = os.path.splitext(os.path.basename(path))[0]
    return scene_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)), name=name)


def read_experiment_file(path: str) -> Dict[str, Any]:
    """
    Read an experiment YAML file and resolve its scene path.

    Returns:
        Mapping with 'scene' resolved to an existing file path
    """
    data = load_yaml(path)
    scene_path = _resolve(str(_require(data, 'scene', path)), os.path.dirname(os.path.abspath(path)))
    if not os.path.exists(scene_path):
        raise ConfigError(CONFIG_NOT_FOUND, f"{path}: scene file not found: {scene_path}", {'key': 'scene'})
    data['scene'] = scene_path
    return data


# Load configuration on module import
try:
    CONFIG = load_config()
except FileNotFoundError:
    CONFIG = {}

# Environment overrides
if os.environ.get('UWB_LOG_LEVEL'):
    CONFIG['LOG_LEVEL'] = os.environ.get('UWB_LOG_LEVEL')
if os.environ.get('UWB_LOG_FILE'):
    CONFIG['LOG_FILE'] = os.environ.get('UWB_LOG_FILE')
if os.environ.get('UWB_OUT_DIR'):
    CONFIG['OUT_DIR'] = os.environ.get('UWB_OUT_DIR')
