"""
Configuration Manager for DrowsyWatch
"""
import copy
import os
import json
from typing import Any, Dict, Optional

from common.errors import ConfigError

DEFAULT_CONFIG = {
    'detector': {
        'speed_on': 4.0,
        'sustain_on_s': 60.0,
        'speed_off': 1.0,
        'sustain_off_s': 120.0,
        'max_cadence': 10.0,
        'max_gap_s': 3.0,
        'cadence_window_s': 60.0
    },
    'engine': {
        'w_hr': 0.4,
        'w_rmssd': 0.3,
        'w_bp': 0.3,
        'on_threshold': 0.7,
        'on_dwell_s': 30.0,
        'off_threshold': 0.5,
        'rearm_dwell_s': 60.0,
        'reference_window_s': 300.0,
        'min_reference_ibi_s': 120.0,
        'hr_drop_band': [0.05, 0.15],
        'bp_drop_band': [0.05, 0.16]
    },
    'pipeline': {
        'window_s': 30.0,
        'step_s': 5.0
    },
    'store': {
        'kdf_iterations': 200000
    },
    'simulation': {
        'start_local': '02:00'
    },
    'logging': {
        'level': 'INFO'
    }
}


def _merge(base: Dict, override: Dict) -> Dict:
    """Recursively merge override into base (in place)"""
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


class Config:
    """Configuration manager"""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file or os.environ.get('DDS_CONFIG') or os.path.join(
            os.path.expanduser('~'),
            '.drowsywatch',
            'config.json'
        )
        self.config = self._load_config()

    def _load_config(self) -> Dict:
        """Load configuration from file, layered over the defaults"""
        config = copy.deepcopy(DEFAULT_CONFIG)

        if os.path.exists(self.config_file):
            try:
                with open(self.config_file, 'r', encoding='utf-8') as f:
                    user_config = json.load(f)
            except (OSError, ValueError) as e:
                raise ConfigError(f"Cannot read config {self.config_file}: {e}") from e
            if not isinstance(user_config, dict):
                raise ConfigError(f"Config {self.config_file} must hold a JSON object")
            _merge(config, user_config)

        return config

    def _save_config(self, config: Dict):
        """Save configuration to file"""
        os.makedirs(os.path.dirname(os.path.abspath(self.config_file)), exist_ok=True)
        with open(self.config_file, 'w', encoding='utf-8') as f:
            json.dump(config, f, indent=2)

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dotted key ('engine.on_threshold')"""
        node = self.config
        for part in key.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def section(self, name: str) -> Dict:
        """Deep copy of one configuration section"""
        return copy.deepcopy(self.config.get(name, {}))

    def set(self, key: str, value: Any):
        """Set configuration value by dotted key, creating sections as needed"""
        *parents, leaf = key.split('.')
        node = self.config
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value

    def save(self):
        """Write the current configuration to config_file"""
        self._save_config(self.config)
