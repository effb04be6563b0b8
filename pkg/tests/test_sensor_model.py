# DrowsyWatch Test Suite - sensor model and replay files

import json
import os
import random
import shutil
import tempfile
import unittest

from common.errors import OrderError, ParseError, RangeError
from drowsywatch.core.sensor_model import (
    Accel, BloodPressure, DriverProfile, Fitness, Gender, HeartBeat, HeartRate, Label,
    Location, SensorKind, SensorSample, SessionStream, SpO2, StepCount,
    load_labels, load_replay, merge_streams, sample_from_record, to_json_line,
    validate_sample, write_labels, write_replay
)


def bp(systolic, diastolic):
    return SensorSample(0, 1, BloodPressure(systolic, diastolic))


class TestRangeValidation(unittest.TestCase):
    """Physiological ranges are enforced exactly at their boundaries"""

    def test_blood_pressure_bounds(self):
        """Systolic 70-180 and diastolic 40-120 inclusive"""
        for systolic, diastolic in [(70.0, 40.0), (180.0, 120.0), (120.0, 80.0)]:
            self.assertTrue(validate_sample(bp(systolic, diastolic)).in_range)

        for systolic, diastolic in [(69.9, 80.0), (180.1, 80.0), (120.0, 39.9), (120.0, 120.1)]:
            with self.assertRaises(RangeError):
                validate_sample(bp(systolic, diastolic))

    def test_range_error_names_field(self):
        """RangeError carries the offending field and value"""
        with self.assertRaises(RangeError) as ctx:
            validate_sample(bp(200.0, 80.0))
        self.assertEqual(ctx.exception.field, 'systolic')
        self.assertEqual(ctx.exception.value, 200.0)

    def test_spo2_healthy_flag(self):
        """Healthy iff 95-100; above 100 is rejected"""
        cases = {95.0: True, 100.0: True, 97.5: True, 94.9: False, 80.0: False}
        for pct, healthy in cases.items():
            result = validate_sample(SensorSample(0, 1, SpO2(pct)))
            self.assertIs(result.healthy, healthy, pct)

        with self.assertRaises(RangeError):
            validate_sample(SensorSample(0, 1, SpO2(100.1)))

    def test_heart_rate_and_ibi(self):
        """Heart rate 25-250 bpm; IBI must be positive and at most 5 s"""
        validate_sample(SensorSample(0, 1, HeartRate(25.0)))
        validate_sample(SensorSample(0, 1, HeartRate(250.0)))
        with self.assertRaises(RangeError):
            validate_sample(SensorSample(0, 1, HeartRate(24.9)))
        with self.assertRaises(RangeError):
            validate_sample(SensorSample(0, 1, HeartBeat(0.0)))
        with self.assertRaises(RangeError):
            validate_sample(SensorSample(0, 1, HeartBeat(5000.1)))

    def test_location_and_steps(self):
        """Negative speed or step totals are rejected"""
        validate_sample(SensorSample(0, 2, Location(40.0, -3.0, 0.0)))
        with self.assertRaises(RangeError):
            validate_sample(SensorSample(0, 2, Location(40.0, -3.0, -0.1)))
        with self.assertRaises(RangeError):
            validate_sample(SensorSample(0, 2, Location(91.0, -3.0, 1.0)))
        with self.assertRaises(RangeError):
            validate_sample(SensorSample(0, 1, StepCount(-1)))

    def test_sample_is_not_modified(self):
        """The validated wrapper carries the original sample"""
        sample = SensorSample(10, 1, Accel(0.1, 0.2, 9.8))
        self.assertIs(validate_sample(sample).sample, sample)

    def test_nan_rejected(self):
        """NaN readings never pass a range check"""
        with self.assertRaises(RangeError):
            validate_sample(bp(float('nan'), 80.0))


class TestSensorKind(unittest.TestCase):
    """Wire codes for consent payloads"""

    def test_codes_are_one_to_eight(self):
        codes = [kind.code for kind in SensorKind]
        self.assertEqual(codes, list(range(1, 9)))
        self.assertIs(SensorKind.from_code(4), SensorKind.HEART_BEAT)
        with self.assertRaises(ValueError):
            SensorKind.from_code(9)

    def test_sample_kind(self):
        self.assertIs(SensorSample(0, 1, Location(0.0, 0.0, 1.0)).kind, SensorKind.LOCATION)


class TestDriverProfile(unittest.TestCase):

    def test_age_range(self):
        DriverProfile(16, Gender.FEMALE, Fitness.ACTIVE)
        DriverProfile(120, Gender.MALE, Fitness.SEDENTARY)
        with self.assertRaises(RangeError):
            DriverProfile(15, Gender.FEMALE, Fitness.ACTIVE)


class TestReplayFiles(unittest.TestCase):
    """JSON Lines replay format"""

    def setUp(self):
        """Set up test fixtures"""
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, 'session.jsonl')

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.test_dir)

    def _write_lines(self, lines):
        with open(self.path, 'w', encoding='utf-8') as f:
            f.write('\n'.join(lines) + '\n')

    def test_write_then_load(self):
        """Every payload kind survives a write/load cycle"""
        samples = [
            SensorSample(0, 1, Accel(0.1, -0.2, 9.81)),
            SensorSample(0, 2, Location(40.4168, -3.7038, 12.5)),
            SensorSample(100, 1, HeartBeat(812.4)),
            SensorSample(1000, 1, StepCount(3)),
            SensorSample(1000, 1, BloodPressure(118.2, 76.0)),
            SensorSample(2000, 1, SpO2(97.0)),
        ]
        self.assertEqual(write_replay(self.path, samples), len(samples))
        self.assertEqual(load_replay(self.path).samples, samples)

    def test_line_format(self):
        """Compact JSON with t_ms, src and kind first"""
        line = to_json_line(SensorSample(5, 1, HeartBeat(800.0)))
        self.assertEqual(line, '{"t_ms":5,"src":1,"kind":"beat","ibi_ms":800.0}')

    def test_malformed_line_number(self):
        """ParseError names the 1-based line"""
        good = to_json_line(SensorSample(0, 1, HeartBeat(800.0)))
        self._write_lines([good] * 16 + ['{"t_ms": 0, "src": 1, "kind": "beat"'])
        with self.assertRaises(ParseError) as ctx:
            load_replay(self.path)
        self.assertEqual(ctx.exception.line_no, 17)
        self.assertIn('line 17', str(ctx.exception))

    def test_invalid_utf8_names_the_line(self):
        good = to_json_line(SensorSample(0, 1, HeartBeat(800.0))).encode('utf-8')
        with open(self.path, 'wb') as f:
            f.write(b'\n'.join([good] * 3 + [b'{"t_ms":5,"src":1,"kind":"hr","bpm":7\xff0}']) + b'\n')
        with self.assertRaises(ParseError) as ctx:
            load_replay(self.path)
        self.assertEqual(ctx.exception.line_no, 4)
        self.assertIn('UTF-8', ctx.exception.reason)

    def test_deep_nesting_names_the_line(self):
        good = to_json_line(SensorSample(0, 1, HeartBeat(800.0)))
        self._write_lines([good, '[' * 200000])
        with self.assertRaises(ParseError) as ctx:
            load_replay(self.path)
        self.assertEqual(ctx.exception.line_no, 2)

    def test_label_file_with_invalid_utf8(self):
        with open(self.path, 'wb') as f:
            f.write(b'{"t_ms":0,"label":"ALERT"}\n{"t_ms":1,"label":"\xfe"}\n')
        with self.assertRaises(ParseError) as ctx:
            load_labels(self.path)
        self.assertEqual(ctx.exception.line_no, 2)

    def test_unknown_kind_and_extra_fields(self):
        """Unknown kinds and stray fields are errors, not silently dropped"""
        with self.assertRaises(ParseError):
            sample_from_record({'t_ms': 0, 'src': 1, 'kind': 'ecg', 'v': 1.0})
        with self.assertRaises(ParseError):
            sample_from_record({'t_ms': 0, 'src': 1, 'kind': 'spo2', 'pct': 97.0, 'x': 1})
        with self.assertRaises(ParseError):
            sample_from_record({'t_ms': 0, 'src': 1, 'kind': ['beat'], 'ibi_ms': 1.0})
        with self.assertRaises(ParseError):
            sample_from_record({'t_ms': 0, 'src': 1, 'kind': 'steps', 'cumulative': 1.5})

    def test_timestamp_regression(self):
        """OrderError names the offending line"""
        self._write_lines([
            to_json_line(SensorSample(1000, 1, HeartBeat(800.0))),
            to_json_line(SensorSample(999, 1, HeartBeat(800.0))),
        ])
        with self.assertRaises(OrderError) as ctx:
            load_replay(self.path)
        self.assertEqual(ctx.exception.position, 2)

    def test_step_count_regression(self):
        """Cumulative steps may not decrease for one source"""
        self._write_lines([
            to_json_line(SensorSample(0, 1, StepCount(10))),
            to_json_line(SensorSample(1000, 1, StepCount(9))),
        ])
        with self.assertRaises(ParseError) as ctx:
            load_replay(self.path)
        self.assertEqual(ctx.exception.line_no, 2)

    def test_blank_lines_skipped(self):
        self._write_lines(['', to_json_line(SensorSample(0, 1, HeartBeat(800.0))), '   '])
        self.assertEqual(len(load_replay(self.path)), 1)

    def test_labels(self):
        """Label sidecar round trip"""
        labels = [(0, Label.ALERT), (1000, Label.DROWSY)]
        write_labels(self.path, labels)
        self.assertEqual(load_labels(self.path), labels)
        with open(self.path, encoding='utf-8') as f:
            self.assertEqual(json.loads(f.readline()), {'t_ms': 0, 'label': 'ALERT'})


class TestMergeStreams(unittest.TestCase):

    def test_merge_is_ordered_and_stable(self):
        """Ties keep the order of the input streams"""
        a = SessionStream([SensorSample(0, 1, HeartBeat(800.0)), SensorSample(1000, 1, HeartBeat(810.0))])
        b = SessionStream([SensorSample(0, 2, Location(0.0, 0.0, 1.0)), SensorSample(500, 2, Location(0.0, 0.0, 2.0))])
        merged = merge_streams([a, b])
        self.assertEqual([s.t_ms for s in merged.samples], [0, 0, 500, 1000])
        self.assertIs(merged.samples[0].kind, SensorKind.HEART_BEAT)
        self.assertIsNone(merged.labels)

    def test_random_streams_merge_in_order(self):
        """Any set of ordered streams merges into one ordered, stable stream"""
        rng = random.Random(11)
        for _ in range(200):
            streams = []
            for src in range(rng.randint(1, 5)):
                times = sorted(rng.randint(0, 50) * 100 for _ in range(rng.randint(0, 30)))
                streams.append(SessionStream([SensorSample(t, src, HeartBeat(800.0)) for t in times]))

            merged = merge_streams(streams).samples
            self.assertEqual(len(merged), sum(len(s) for s in streams))
            keys = [(s.t_ms, s.source_id) for s in merged]
            # Non-decreasing time; equal times keep stream order
            self.assertEqual(keys, sorted(keys))


if __name__ == '__main__':
    unittest.main()
