# DrowsyWatch Test Suite - configuration

import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

from common.config import DEFAULT_CONFIG, Config
from common.errors import ConfigError


class TestConfig(unittest.TestCase):
    """Test configuration manager"""

    def setUp(self):
        """Set up test fixtures"""
        self.test_dir = tempfile.mkdtemp()
        self.config_file = os.path.join(self.test_dir, 'config.json')

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.test_dir)

    def _write(self, data):
        with open(self.config_file, 'w', encoding='utf-8') as f:
            f.write(data if isinstance(data, str) else json.dumps(data))

    def test_defaults_without_file(self):
        """Missing file means built-in defaults"""
        config = Config(self.config_file)
        self.assertEqual(config.get('detector.speed_on'), 4.0)
        self.assertEqual(config.get('engine.hr_drop_band'), [0.05, 0.15])
        self.assertEqual(config.get('store.kdf_iterations'), 200000)

    def test_file_overrides_are_merged(self):
        """A partial section keeps the other defaults"""
        self._write({'engine': {'on_threshold': 0.8}})
        config = Config(self.config_file)
        self.assertEqual(config.get('engine.on_threshold'), 0.8)
        self.assertEqual(config.get('engine.off_threshold'), 0.5)
        self.assertEqual(DEFAULT_CONFIG['engine']['on_threshold'], 0.7)

    def test_missing_key_default(self):
        config = Config(self.config_file)
        self.assertIsNone(config.get('engine.nothing'))
        self.assertEqual(config.get('nothing.at.all', 3), 3)

    def test_invalid_file(self):
        """Unreadable JSON or a non-object is a ConfigError"""
        self._write('{broken')
        with self.assertRaises(ConfigError):
            Config(self.config_file)
        self._write('[1, 2]')
        with self.assertRaises(ConfigError):
            Config(self.config_file)

    def test_set_and_save(self):
        config = Config(self.config_file)
        config.set('pipeline.step_s', 10.0)
        config.save()
        self.assertEqual(Config(self.config_file).get('pipeline.step_s'), 10.0)

    def test_environment_location(self):
        """DDS_CONFIG selects the file when none is given"""
        self._write({'logging': {'level': 'DEBUG'}})
        with mock.patch.dict(os.environ, {'DDS_CONFIG': self.config_file}):
            config = Config()
        self.assertEqual(config.config_file, self.config_file)
        self.assertEqual(config.get('logging.level'), 'DEBUG')

    def test_section_is_a_copy(self):
        config = Config(self.config_file)
        section = config.section('detector')
        section['speed_on'] = 99.0
        self.assertEqual(config.get('detector.speed_on'), 4.0)


if __name__ == '__main__':
    unittest.main()
