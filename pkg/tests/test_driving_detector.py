# DrowsyWatch Test Suite - driving detector

import random
import unittest

from common.config import DEFAULT_CONFIG
from common.errors import ConfigError, OrderError
from drowsywatch.core.driving_detector import (
    DetectorConfig, DrivingDetector, DrivingState, TransitionEvent
)
from drowsywatch.core.sensor_model import (
    Accel, DriverProfile, Fitness, Gender, Location, SensorSample, StepCount
)
from drowsywatch.core.simulator import (
    STOP_AND_GO_DRIVE_S, STOP_AND_GO_STOP_S, Scenario, ScenarioKind, synthesize_session
)


ALLOWED_TRANSITIONS = {
    (DrivingState.IDLE, DrivingState.DRIVING),
    (DrivingState.DRIVING, DrivingState.STOPPED),
    (DrivingState.STOPPED, DrivingState.DRIVING),
    (DrivingState.STOPPED, DrivingState.IDLE),
}


def trace(seconds, start_s=0, steps_start=0):
    """
    1 Hz LOCATION and STEP_COUNT samples

    Args:
        seconds: list of (speed m/s, cadence steps/min); a None speed
            leaves a GPS gap for that second
    """
    samples = []
    steps = float(steps_start)
    for offset, (speed, cadence) in enumerate(seconds):
        t = (start_s + offset) * 1000
        steps += cadence / 60.0
        samples.append(SensorSample(t, 1, StepCount(int(steps))))
        if speed is not None:
            samples.append(SensorSample(t, 2, Location(40.0, -3.0, speed)))
    return samples


def run(detector, samples):
    events = []
    for sample in samples:
        event = detector.update(sample)
        if event is not None:
            events.append(event)
    return events


def per_second_states(samples):
    """Detector state after each second's samples have been applied"""
    detector = DrivingDetector()
    states = {}
    for sample in samples:
        detector.update(sample)
        states[sample.t_ms // 1000] = detector.state
    return states


class TestDetectorConfig(unittest.TestCase):

    def test_defaults_match_config_file_defaults(self):
        self.assertEqual(DetectorConfig.from_mapping(DEFAULT_CONFIG['detector']), DetectorConfig())

    def test_invalid_thresholds(self):
        """speed_off must sit below speed_on; durations must be positive"""
        with self.assertRaises(ConfigError):
            DetectorConfig(speed_on=4.0, speed_off=4.0)
        with self.assertRaises(ConfigError):
            DetectorConfig(sustain_on_s=0)
        with self.assertRaises(ConfigError):
            DetectorConfig(max_cadence=-1)
        with self.assertRaises(ConfigError):
            DetectorConfig.from_mapping({'speed_on': 4.0, 'warp': 9})
        with self.assertRaises(ConfigError):
            DetectorConfig.from_mapping({'speed_on': 'fast'})


class TestTransitions(unittest.TestCase):
    """State machine examples"""

    def setUp(self):
        """Set up test fixtures"""
        self.detector = DrivingDetector()

    def test_starts_idle(self):
        self.assertIs(self.detector.state, DrivingState.IDLE)

    def test_sustained_speed_starts_driving(self):
        """90 s at 20 m/s with no steps: one transition at 60 s"""
        events = run(self.detector, trace([(20.0, 0)] * 90))
        self.assertEqual(len(events), 1)
        self.assertEqual(events[0].t_ms, 60000)
        self.assertIs(events[0].from_state, DrivingState.IDLE)
        self.assertIs(events[0].to_state, DrivingState.DRIVING)

    def test_walking_cadence_blocks_driving(self):
        """Running at 5 m/s with 160 steps/min never counts as driving"""
        events = run(self.detector, trace([(5.0, 160)] * 600))
        self.assertEqual(events, [])
        self.assertIs(self.detector.state, DrivingState.IDLE)

    def test_stop_and_resume(self):
        """DRIVING -> STOPPED after 120 s slow, then back to DRIVING"""
        samples = trace([(20.0, 0)] * 90 + [(0.0, 0)] * 140 + [(20.0, 0)] * 70)
        events = run(self.detector, samples)
        self.assertEqual(
            [(e.t_ms, e.to_state) for e in events],
            [(60000, DrivingState.DRIVING), (210000, DrivingState.STOPPED), (290000, DrivingState.DRIVING)]
        )

    def test_walking_away_ends_trip(self):
        """STOPPED -> IDLE once the wearer walks"""
        samples = trace([(20.0, 0)] * 90 + [(0.0, 0)] * 130 + [(1.2, 100)] * 60)
        events = run(self.detector, samples)
        self.assertIs(events[-1].from_state, DrivingState.STOPPED)
        self.assertIs(events[-1].to_state, DrivingState.IDLE)
        self.assertIs(self.detector.state, DrivingState.IDLE)

    def test_gps_gap_resets_sustain_timer(self):
        """A gap longer than max_gap_s restarts the 60 s count"""
        seconds = [(20.0, 0)] * 41 + [(None, 0)] * 9 + [(20.0, 0)] * 80
        events = run(self.detector, trace(seconds))
        self.assertEqual(events[0].t_ms, 110000)

    def test_motion_samples_do_not_drive(self):
        for k in range(1000):
            self.assertIsNone(self.detector.update(SensorSample(k * 100, 1, Accel(5.0, 5.0, 5.0))))
        self.assertIs(self.detector.state, DrivingState.IDLE)

    def test_timestamp_regression(self):
        self.detector.update(SensorSample(1000, 2, Location(0.0, 0.0, 0.0)))
        with self.assertRaises(OrderError):
            self.detector.update(SensorSample(999, 2, Location(0.0, 0.0, 0.0)))

    def test_event_json(self):
        event = TransitionEvent(60000, DrivingState.IDLE, DrivingState.DRIVING, 'speed')
        self.assertEqual(event.to_json(), {'t_ms': 60000, 'from': 'IDLE', 'to': 'DRIVING', 'trigger': 'speed'})


class TestDetectorProperties(unittest.TestCase):
    """Randomized streams"""

    def _random_seconds(self, rng, total_s=1800):
        seconds = []
        while len(seconds) < total_s:
            speed = rng.choice([0.0, 0.5, 2.0, 6.0, 25.0, None])
            cadence = rng.choice([0, 0, 100])
            seconds.extend([(speed, cadence)] * rng.randint(1, 200))
        return seconds[:total_s]

    def test_only_legal_transitions(self):
        """Never IDLE -> STOPPED or DRIVING -> IDLE"""
        rng = random.Random(99)
        for _ in range(50):
            events = run(DrivingDetector(), trace(self._random_seconds(rng)))
            for event in events:
                self.assertIn((event.from_state, event.to_state), ALLOWED_TRANSITIONS)

    def test_faster_never_detects_later(self):
        """Scaling every speed up never delays the first DRIVING transition"""
        rng = random.Random(5)
        for _ in range(50):
            seconds = [(s, 0) for s, _ in self._random_seconds(rng, 900)]
            faster = [(None if s is None else s * 2.5, 0) for s, _ in seconds]

            def first_driving(samples):
                for event in run(DrivingDetector(), samples):
                    if event.to_state is DrivingState.DRIVING:
                        return event.t_ms
                return float('inf')

            self.assertLessEqual(first_driving(trace(faster)), first_driving(trace(seconds)))


class TestLabelledAgreement(unittest.TestCase):
    """Per-second agreement with labelled 30-minute traces"""

    def _agreement(self, samples, expected):
        states = per_second_states(samples)
        hits = sum(1 for s, label in expected.items() if states[s] is label)
        return hits / len(expected)

    def test_highway_drive(self):
        seconds = [(0.0, 0)] * 30 + [(25.0, 0)] * 1770
        expected = {s: DrivingState.IDLE if s < 30 else DrivingState.DRIVING for s in range(1800)}
        self.assertGreaterEqual(self._agreement(trace(seconds), expected), 0.95)

    def test_walk(self):
        seconds = [(1.4, 110)] * 1800
        expected = {s: DrivingState.IDLE for s in range(1800)}
        self.assertEqual(self._agreement(trace(seconds), expected), 1.0)

    def test_city_drive_with_short_stops(self):
        """Stops shorter than sustain_off_s stay DRIVING"""
        cycle = [(14.0, 0)] * 240 + [(0.0, 0)] * 60
        seconds = (cycle * 6)[:1800]
        expected = {s: DrivingState.DRIVING for s in range(1800)}
        self.assertGreaterEqual(self._agreement(trace(seconds), expected), 0.95)

    def test_simulated_stop_and_go(self):
        """Stops longer than sustain_off_s reach STOPPED and resume to DRIVING"""
        drive_s, stop_s = STOP_AND_GO_DRIVE_S, STOP_AND_GO_STOP_S
        sustain_on = int(DetectorConfig().sustain_on_s)
        sustain_off = int(DetectorConfig().sustain_off_s)
        self.assertGreater(stop_s, sustain_off)

        def label(s):
            cycle, pos = divmod(s, drive_s + stop_s)
            if s < sustain_on:
                return DrivingState.IDLE
            if pos < drive_s:
                # after a stop, motion must be sustained again before DRIVING
                return DrivingState.STOPPED if cycle > 0 and pos < sustain_on else DrivingState.DRIVING
            return DrivingState.DRIVING if pos < drive_s + sustain_off else DrivingState.STOPPED

        expected = {s: label(s) for s in range(1800)}
        self.assertIn(DrivingState.STOPPED, expected.values())

        profile = DriverProfile(40, Gender.UNSPECIFIED, Fitness.ACTIVE)
        for seed in (1, 2, 3):
            session = synthesize_session(Scenario(ScenarioKind.STOP_AND_GO, seed, 1800), profile)
            self.assertGreaterEqual(self._agreement(session.samples, expected), 0.95, seed)


if __name__ == '__main__':
    unittest.main()
