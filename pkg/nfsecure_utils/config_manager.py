import copy
import logging
import os
import numpy as np
import toml
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .channel_model import ArrayGeometry, PolarPosition
from .data_validation import ConfigValidationError, DataValidationError
from .episode_simulator import Scenario
from .eve_tracker import EveState, MeasurementConstants, TrackBelief

logger = logging.getLogger(__name__)

MODES = ("gbd", "zfsca", "episode", "pareto", "beampattern", "selftest", "sweep")
PROFILES = ("desk", "paper")
SECTIONS = ("array", "users", "eavesdropper", "thresholds", "ekf", "run")
DESK_ANTENNAS = 16
DESK_USERS = 5

REQUIRED_KEYS = {
    'array': ('num_antennas', 'aperture_m', 'carrier_ghz'),
    'users': ('angles_deg', 'distances_m', 'noise_dbm'),
    'eavesdropper': ('angle_deg', 'distance_m', 'vx_mps', 'vy_mps', 'noise_dbm'),
    'thresholds': ('p_max_dbm', 'rate_info_bps_hz', 'rate_leak_bps_hz', 'gamma1', 'gamma2'),
    'ekf': ('slot_s', 'symbols', 'sensing_noise_dbm', 'rcs', 'a_tau', 'a_nu', 'a_theta',
            'sigma_angle_deg', 'sigma_distance_m', 'sigma_vx_mps', 'sigma_vy_mps'),
    'run': ('mode', 'seed'),
}

OPTIONAL_KEYS = {
    'array': {'far_field': False},
    'users': {},
    'eavesdropper': {
        'waypoints': [],
        'initial_sigma_angle_deg': None,
        'initial_sigma_distance_m': None,
        'initial_sigma_velocity_mps': None,
    },
    'thresholds': {'safety_factor': 1.0},
    'ekf': {'measurement_noise': True},
    'run': {
        'slots': 20,
        'out': 'results',
        'tolerance': 1e-7,
        'epsilon': 1e-4,
        'profile': 'desk',
        'policy': 'gbd',
        'workers': 1,
        'gamma1_range': [],
        'gamma2_range': [],
        'grid_angle_min_deg': 30.0,
        'grid_angle_max_deg': 150.0,
        'grid_angles': 241,
        'grid_distance_min_m': 1.0,
        'grid_distance_max_m': 10.0,
        'grid_distances': 181,
        'sweep_parameter': 'rate_info',
        'sweep_values': [],
        'speeds_mps': [],
        'repetitions': 1,
    },
}


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class RunConfig:
    """What to run and where to write it"""
    config_path: Optional[str]
    mode: str
    gamma1: int
    gamma2: float
    seed: int
    out_dir: str = 'results'
    profile: str = 'desk'
    policy: str = 'gbd'
    tolerance: float = 1e-7
    epsilon: float = 1e-4
    workers: int = 1
    slots: int = 20
    gamma1_range: List[int] = field(default_factory=list)
    gamma2_range: List[float] = field(default_factory=list)
    grid_angles_deg: Tuple[float, float, int] = (30.0, 150.0, 241)
    grid_distances_m: Tuple[float, float, int] = (1.0, 10.0, 181)
    sweep_parameter: str = 'rate_info'
    sweep_values: List[float] = field(default_factory=list)
    speeds_mps: List[float] = field(default_factory=list)
    repetitions: int = 1

    def validate(self):
        if self.mode not in MODES:
            raise ConfigValidationError('run.mode', f"unknown mode '{self.mode}', expected one of {MODES}")
        if self.profile not in PROFILES:
            raise ConfigValidationError('run.profile', f"unknown profile '{self.profile}'")
        if self.gamma1 < 0:
            raise ConfigValidationError('thresholds.gamma1', f"must be non-negative, got {self.gamma1}")
        if self.gamma2 <= 0:
            raise ConfigValidationError('thresholds.gamma2', f"must be positive, got {self.gamma2}")
        if self.tolerance <= 0 or self.epsilon <= 0:
            raise ConfigValidationError('run.tolerance', "tolerances must be positive")
        if self.mode == 'pareto' and (not self.gamma1_range or not self.gamma2_range):
            raise ConfigValidationError('run.gamma1_range', "pareto mode needs non-empty gamma1 and gamma2 ranges")
        if self.mode == 'sweep' and not self.sweep_values:
            raise ConfigValidationError('run.sweep_values', "sweep mode needs at least one value")
        if self.mode == 'sweep' and self.sweep_parameter not in ('rate_info', 'rate_leak'):
            raise ConfigValidationError('run.sweep_parameter', f"unknown sweep parameter '{self.sweep_parameter}'")
        for name, (low, high, count) in (('grid_angles', self.grid_angles_deg), ('grid_distances', self.grid_distances_m)):
            if count < 1 or high < low:
                raise ConfigValidationError(f'run.{name}', "grid must have at least one point and max >= min")
        return self


class ConfigManager:
    """Scenario files: TOML with flat sections and unit-suffixed keys"""

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = config_path
        self.config = self.load_config(config_path) if config_path else self.get_default_config()

    def load_config(self, path: str) -> Dict[str, Any]:
        """Load and validate a scenario file"""
        if not os.path.exists(path):
            raise ConfigValidationError('config', f"file not found: {path}")
        try:
            raw = toml.load(path)
        except toml.TomlDecodeError as e:
            raise ConfigValidationError('config', f"cannot parse {path}: {e}")
        self.validate_config(raw)
        return raw

    def get_default_config(self) -> Dict[str, Any]:
        """Experimental defaults with a seven-user layout around the eavesdropper"""
        return {
            'array': {'num_antennas': 64, 'aperture_m': 1.0, 'carrier_ghz': 28.0, 'far_field': False},
            'users': {
                'angles_deg': [30.0, 50.0, 70.0, 90.0, 110.0, 130.0, 150.0],
                'distances_m': [5.0, 6.5, 4.5, 6.0, 5.5, 7.0, 4.0],
                'noise_dbm': -70.0,
            },
            'eavesdropper': {
                'angle_deg': 90.1,
                'distance_m': 5.9,
                'vx_mps': 0.0,
                'vy_mps': 0.5,
                'noise_dbm': -80.0,
                'waypoints': [],
                'initial_sigma_angle_deg': 0.01,
                'initial_sigma_distance_m': 0.02,
                'initial_sigma_velocity_mps': 0.005,
            },
            'thresholds': {
                'p_max_dbm': 37.0,
                'rate_info_bps_hz': 6.0,
                'rate_leak_bps_hz': 0.05,
                'gamma1': 3,
                'gamma2': 0.15,
            },
            'ekf': {
                'slot_s': 0.2,
                'symbols': 1e4,
                'sensing_noise_dbm': -80.0,
                'rcs': 1.0,
                'a_tau': 1e-6,
                'a_nu': 600.0,
                'a_theta': 0.1,
                'sigma_angle_deg': 0.02,
                'sigma_distance_m': 0.2,
                'sigma_vx_mps': 0.15,
                'sigma_vy_mps': 0.15,
            },
            'run': {
                'mode': 'episode',
                'seed': 0,
                'slots': 20,
                'out': 'results',
                'profile': 'desk',
                'policy': 'gbd',
                'gamma1_range': [0, 1, 2, 3],
                'gamma2_range': [0.12, 0.15, 0.2, 0.5],
            },
        }

    def validate_config(self, raw: Dict[str, Any]):
        """Reject missing sections and keys, unknown keys and non-physical values"""
        for section in SECTIONS:
            if section not in raw:
                raise ConfigValidationError(section, "missing section")
        for section in raw:
            if section not in SECTIONS:
                raise ConfigValidationError(section, "unknown section")
        for section in SECTIONS:
            values = raw[section]
            for key in REQUIRED_KEYS[section]:
                if key not in values:
                    raise ConfigValidationError(f"{section}.{key}", "missing key")
            for key in values:
                if key not in REQUIRED_KEYS[section] and key not in OPTIONAL_KEYS[section]:
                    raise ConfigValidationError(f"{section}.{key}", "unknown key")
        self._validate_units(raw)

    def _validate_units(self, raw: Dict[str, Any]):
        def positive(section, key, allow_zero=False):
            value = raw[section].get(key)
            if value is None:
                return
            try:
                number = float(value)
            except (TypeError, ValueError):
                raise ConfigValidationError(f"{section}.{key}", f"must be numeric, got {value!r}")
            if not np.isfinite(number) or number < 0 or (number == 0 and not allow_zero):
                raise ConfigValidationError(f"{section}.{key}", f"must be positive, got {value}")

        def angle(section, key, values):
            for v in np.atleast_1d(values):
                if not 0.0 < float(v) < 180.0:
                    raise ConfigValidationError(f"{section}.{key}", f"angles must lie in (0, 180) degrees, got {v}")

        array = raw['array']
        if int(array['num_antennas']) != array['num_antennas'] or array['num_antennas'] < 1:
            raise ConfigValidationError('array.num_antennas', f"must be a positive integer, got {array['num_antennas']}")
        positive('array', 'aperture_m')
        positive('array', 'carrier_ghz')

        users = raw['users']
        angles, distances = users['angles_deg'], users['distances_m']
        if not isinstance(angles, list) or not isinstance(distances, list) or len(angles) != len(distances):
            raise ConfigValidationError('users.distances_m', "angles_deg and distances_m must be lists of equal length")
        if not angles:
            raise ConfigValidationError('users.angles_deg', "at least one user is required")
        angle('users', 'angles_deg', angles)
        if any(float(d) <= 0 for d in distances):
            raise ConfigValidationError('users.distances_m', "distances must be positive")

        eve = raw['eavesdropper']
        angle('eavesdropper', 'angle_deg', eve['angle_deg'])
        positive('eavesdropper', 'distance_m')
        for key in ('initial_sigma_angle_deg', 'initial_sigma_distance_m', 'initial_sigma_velocity_mps'):
            positive('eavesdropper', key)
        for w in eve.get('waypoints', []):
            if not isinstance(w, list) or len(w) != 3 or int(w[0]) != w[0] or w[0] < 1:
                raise ConfigValidationError('eavesdropper.waypoints', f"expected [slot, vx_mps, vy_mps], got {w}")

        thresholds = raw['thresholds']
        positive('thresholds', 'rate_info_bps_hz')
        positive('thresholds', 'rate_leak_bps_hz')
        positive('thresholds', 'gamma2')
        positive('thresholds', 'safety_factor')
        if int(thresholds['gamma1']) != thresholds['gamma1'] or not 0 <= thresholds['gamma1'] <= len(angles):
            raise ConfigValidationError('thresholds.gamma1', f"must be an integer in [0, {len(angles)}]")

        for key in ('slot_s', 'symbols', 'rcs', 'a_tau', 'a_nu', 'a_theta'):
            positive('ekf', key)
        for key in ('sigma_angle_deg', 'sigma_distance_m', 'sigma_vx_mps', 'sigma_vy_mps'):
            positive('ekf', key, allow_zero=True)

        run = raw['run']
        if run['mode'] not in MODES:
            raise ConfigValidationError('run.mode', f"unknown mode '{run['mode']}'")
        if run.get('profile', 'desk') not in PROFILES:
            raise ConfigValidationError('run.profile', f"unknown profile '{run['profile']}'")
        if int(run['seed']) != run['seed'] or run['seed'] < 0:
            raise ConfigValidationError('run.seed', f"must be a non-negative integer, got {run['seed']}")
        positive('run', 'slots')

    def save_config(self, path: str, raw: Optional[Dict[str, Any]] = None):
        """Write a scenario file"""
        raw = self.config if raw is None else raw
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, 'w') as f:
            toml.dump(raw, f)
        logger.info(f"Configuration written to {path}")

    def with_defaults(self, section: str) -> Dict[str, Any]:
        values = copy.deepcopy(OPTIONAL_KEYS[section])
        values.update(self.config[section])
        return values

    def build_scenario(self, profile: str = 'desk', mode: str = 'episode', seed: Optional[int] = None,
                       slots: Optional[int] = None) -> Scenario:
        """Physical scenario in SI units; the desk profile shrinks the array and the user set"""
        array = self.with_defaults('array')
        users = self.with_defaults('users')
        eve = self.with_defaults('eavesdropper')
        thresholds = self.with_defaults('thresholds')
        ekf = self.with_defaults('ekf')
        run = self.with_defaults('run')

        num_antennas = int(array['num_antennas'])
        geometry = ArrayGeometry.from_aperture(num_antennas, float(array['aperture_m']), float(array['carrier_ghz']) * 1e9)
        positions = [PolarPosition.from_degrees(a, d) for a, d in zip(users['angles_deg'], users['distances_m'])]
        if profile == 'desk':
            # same element spacing, fewer elements
            geometry = ArrayGeometry(min(DESK_ANTENNAS, num_antennas), geometry.spacing, geometry.wavelength)
            if mode not in ('zfsca', 'beampattern'):
                positions = positions[:DESK_USERS]
        K = len(positions)

        consts = MeasurementConstants(
            a_tau=float(ekf['a_tau']),
            a_nu=float(ekf['a_nu']),
            a_theta=float(ekf['a_theta']),
            symbols=float(ekf['symbols']),
            sensing_noise=dbm_to_watts(float(ekf['sensing_noise_dbm'])),
            rcs=float(ekf['rcs']),
            sigma_angle=float(np.deg2rad(ekf['sigma_angle_deg'])),
            sigma_distance=float(ekf['sigma_distance_m']),
            sigma_vx=float(ekf['sigma_vx_mps']),
            sigma_vy=float(ekf['sigma_vy_mps']),
            slot_duration=float(ekf['slot_s']),
        )
        truth = EveState(float(np.deg2rad(eve['angle_deg'])), float(eve['distance_m']),
                         float(eve['vx_mps']), float(eve['vy_mps']))
        sigma_angle = np.deg2rad(eve['initial_sigma_angle_deg'] if eve['initial_sigma_angle_deg'] is not None
                                 else ekf['sigma_angle_deg'])
        sigma_distance = (eve['initial_sigma_distance_m'] if eve['initial_sigma_distance_m'] is not None
                          else ekf['sigma_distance_m'])
        sigma_velocity = (eve['initial_sigma_velocity_mps'] if eve['initial_sigma_velocity_mps'] is not None
                          else max(ekf['sigma_vx_mps'], ekf['sigma_vy_mps']))
        covariance = np.diag([sigma_angle ** 2, sigma_distance ** 2, sigma_velocity ** 2, sigma_velocity ** 2])
        if np.any(np.diag(covariance) <= 0):
            raise ConfigValidationError('eavesdropper.initial_sigma_angle_deg',
                                        "initial belief covariance must be positive definite")

        noise = np.broadcast_to(np.asarray(users['noise_dbm'], dtype=float), (len(users['angles_deg']),))[:K]
        return Scenario(
            geometry=geometry,
            user_positions=tuple(positions),
            eve_truth=truth,
            initial_belief=TrackBelief(truth, covariance),
            consts=consts,
            noise_powers=np.array([dbm_to_watts(n) for n in noise]),
            eve_noise=dbm_to_watts(float(eve['noise_dbm'])),
            p_max=dbm_to_watts(float(thresholds['p_max_dbm'])),
            rate_info=float(thresholds['rate_info_bps_hz']),
            rate_leak=float(thresholds['rate_leak_bps_hz']),
            num_slots=int(run['slots'] if slots is None else slots),
            seed=int(run['seed'] if seed is None else seed),
            waypoints=tuple(tuple(w) for w in eve['waypoints']),
            far_field=bool(array['far_field']),
            safety_factor=float(thresholds['safety_factor']),
            measurement_noise=bool(ekf['measurement_noise']),
        )

    def build_run_config(self) -> RunConfig:
        thresholds = self.with_defaults('thresholds')
        run = self.with_defaults('run')
        return RunConfig(
            config_path=self.config_path,
            mode=run['mode'],
            gamma1=int(thresholds['gamma1']),
            gamma2=float(thresholds['gamma2']),
            seed=int(run['seed']),
            out_dir=str(run['out']),
            profile=str(run['profile']),
            policy=str(run['policy']),
            tolerance=float(run['tolerance']),
            epsilon=float(run['epsilon']),
            workers=int(run['workers']),
            slots=int(run['slots']),
            gamma1_range=[int(g) for g in run['gamma1_range']],
            gamma2_range=[float(g) for g in run['gamma2_range']],
            grid_angles_deg=(float(run['grid_angle_min_deg']), float(run['grid_angle_max_deg']), int(run['grid_angles'])),
            grid_distances_m=(float(run['grid_distance_min_m']), float(run['grid_distance_max_m']),
                              int(run['grid_distances'])),
            sweep_parameter=str(run['sweep_parameter']),
            sweep_values=[float(v) for v in run['sweep_values']],
            speeds_mps=[float(v) for v in run['speeds_mps']],
            repetitions=int(run['repetitions']),
        ).validate()


def parse_gamma1(text: str) -> List[int]:
    """'3', '0:4' (inclusive) or '1,3,5'"""
    try:
        if ':' in text:
            low, high = (int(v) for v in text.split(':'))
            values = list(range(low, high + 1))
        else:
            values = [int(v) for v in text.split(',')]
    except ValueError:
        raise ConfigValidationError('gamma1', f"expected an integer or range, got '{text}'")
    if not values:
        raise ConfigValidationError('gamma1', f"empty range '{text}'")
    return values


def parse_gamma2(text: str) -> List[float]:
    """'0.1', '0.05:1.0:4' (start:stop:count) or '0.05,0.1'"""
    try:
        if ':' in text:
            parts = text.split(':')
            if len(parts) != 3:
                raise ValueError(text)
            values = np.linspace(float(parts[0]), float(parts[1]), int(parts[2])).tolist()
        else:
            values = [float(v) for v in text.split(',')]
    except ValueError:
        raise ConfigValidationError('gamma2', f"expected a number or range, got '{text}'")
    if not values or any(v <= 0 for v in values):
        raise ConfigValidationError('gamma2', f"values must be positive and non-empty, got '{text}'")
    return values


# Convenience functions
def load_raw_config(path: str) -> Dict[str, Any]:
    return ConfigManager(path).config


def parse_config(path: str, profile: Optional[str] = None) -> Tuple[Scenario, RunConfig]:
    """Scenario and run settings from a scenario file"""
    manager = ConfigManager(path)
    run = manager.build_run_config()
    if profile is not None:
        run.profile = profile
    try:
        scenario = manager.build_scenario(run.profile, run.mode)
    except DataValidationError as e:
        if isinstance(e, ConfigValidationError):
            raise
        raise ConfigValidationError('config', str(e))
    return scenario, run


def write_config(raw: Dict[str, Any], path: str):
    ConfigManager().save_config(path, raw)
