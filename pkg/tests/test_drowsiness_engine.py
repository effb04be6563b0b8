# DrowsyWatch Test Suite - drowsiness engine

import random
import unittest
from datetime import time

from common.config import DEFAULT_CONFIG
from common.errors import ConfigError, ModeError, OrderError, RangeError
from drowsywatch.core.drowsiness_engine import (
    AlertEvent, AlertHysteresis, DrowsinessEngine, EngineConfig, EngineMode,
    EngineState, StateChange, Vitals, score_components
)
from drowsywatch.core.hrv_analytics import Baseline, HrvFeatures, Provenance
from drowsywatch.core.sensor_model import BloodPressure

NOON = time(12, 0)
CONFIG = EngineConfig()


def features(t_ms, hr, rmssd, span_ms=30000):
    return HrvFeatures(
        window_start_ms=t_ms - span_ms,
        window_end_ms=t_ms,
        n_intervals=max(span_ms // 800, 2),
        mean_ibi_ms=60000.0 / hr,
        mean_hr_bpm=hr,
        sdnn_ms=rmssd,
        rmssd_ms=rmssd,
        pnn50=0.1
    )


def measured(hr=70.0, rmssd=30.0, bp=None):
    return Baseline(hr, rmssd, 40.0, bp, Provenance.MEASURED)


class TestEngineConfig(unittest.TestCase):

    def test_defaults_match_config_file_defaults(self):
        self.assertEqual(EngineConfig.from_mapping(DEFAULT_CONFIG['engine']), EngineConfig())

    def test_invalid_settings(self):
        """Weights sum to 1, off < on, bands ordered"""
        with self.assertRaises(ConfigError):
            EngineConfig(w_hr=0.5, w_rmssd=0.5, w_bp=0.5)
        with self.assertRaises(ConfigError):
            EngineConfig(w_hr=1.2, w_rmssd=-0.2, w_bp=0.0)
        with self.assertRaises(ConfigError):
            EngineConfig(off_threshold=0.7, on_threshold=0.7)
        with self.assertRaises(ConfigError):
            EngineConfig(hr_drop_band=(0.15, 0.05))
        with self.assertRaises(ConfigError):
            EngineConfig(on_dwell_s=0)
        with self.assertRaises(ConfigError):
            EngineConfig.from_mapping({'hr_drop_band': 0.1})
        with self.assertRaises(ConfigError):
            EngineConfig.from_mapping({'threshold': 0.7})


class TestScoreComponents(unittest.TestCase):
    """Score examples and properties"""

    def test_no_change_scores_zero(self):
        score = score_components(70.0, 70.0, 30.0, 30.0, (120.0, 80.0), (120.0, 80.0), 1.0, CONFIG)
        self.assertEqual(score.value, 0.0)
        self.assertEqual(score.components.bp_drop, 0.0)

    def test_full_evidence_saturates(self):
        score = score_components(59.0, 70.0, 60.0, 30.0, (100.0, 70.0), (120.0, 80.0), 1.0, CONFIG)
        self.assertEqual(score.components.hr_drop, 1.0)
        self.assertEqual(score.components.rmssd_rise, 1.0)
        self.assertEqual(score.components.bp_drop, 1.0)
        self.assertAlmostEqual(score.value, 1.0)

    def test_hr_only_with_night_weight(self):
        """10% HR drop, no BP, 1.5 circadian weight -> 0.428571"""
        score = score_components(63.0, 70.0, 30.0, 30.0, None, None, 1.5, CONFIG)
        self.assertIsNone(score.components.bp_drop)
        self.assertAlmostEqual(score.components.hr_drop, 0.5)
        self.assertAlmostEqual(score.value, 0.428571, places=6)

    def test_bp_weight_redistributed_when_reference_missing(self):
        with_bp = score_components(63.0, 70.0, 30.0, 30.0, (120.0, 80.0), None, 1.0, CONFIG)
        self.assertIsNone(with_bp.components.bp_drop)
        self.assertAlmostEqual(with_bp.weighted, 0.4 * 0.5 / 0.7)

    def test_non_positive_reference(self):
        with self.assertRaises(RangeError):
            score_components(63.0, 0.0, 30.0, 30.0, None, None, 1.0, CONFIG)
        with self.assertRaises(RangeError):
            score_components(63.0, 70.0, 30.0, 0.0, None, None, 1.0, CONFIG)

    def test_random_inputs_stay_in_bounds(self):
        rng = random.Random(11)
        for _ in range(5000):
            bp_ref = (rng.uniform(70, 180), rng.uniform(40, 120)) if rng.random() < 0.7 else None
            bp_now = (rng.uniform(70, 180), rng.uniform(40, 120)) if rng.random() < 0.7 else None
            score = score_components(
                rng.uniform(25, 250), rng.uniform(25, 250),
                rng.uniform(0, 300), rng.uniform(1, 300),
                bp_now, bp_ref, rng.choice([1.0, 1.2, 1.5]), CONFIG
            )
            self.assertGreaterEqual(score.value, 0.0)
            self.assertLessEqual(score.value, 1.0)
            for part in (score.components.hr_drop, score.components.rmssd_rise):
                self.assertTrue(0.0 <= part <= 1.0)

    def test_monotone_in_evidence(self):
        """Lower HR and higher RMSSD never lower the score"""
        rng = random.Random(12)
        for _ in range(500):
            hr_ref = rng.uniform(50, 90)
            rmssd_ref = rng.uniform(10, 80)
            hr_now = rng.uniform(40, 100)
            rmssd_now = rng.uniform(5, 150)
            base = score_components(hr_now, hr_ref, rmssd_now, rmssd_ref, None, None, 1.0, CONFIG).value
            slower = score_components(hr_now * 0.97, hr_ref, rmssd_now, rmssd_ref, None, None, 1.0, CONFIG).value
            looser = score_components(hr_now, hr_ref, rmssd_now * 1.1, rmssd_ref, None, None, 1.0, CONFIG).value
            self.assertGreaterEqual(slower, base)
            self.assertGreaterEqual(looser, base)

    def test_circadian_weight_keeps_window_order(self):
        """A uniform multiplier never reorders windows by score"""
        rng = random.Random(13)
        windows = [(rng.uniform(55, 75), rng.uniform(20, 60)) for _ in range(200)]
        for multiplier in (1.0, 1.2, 1.5):
            scores = [
                score_components(hr, 70.0, rmssd, 30.0, None, None, multiplier, CONFIG) for hr, rmssd in windows
            ]
            ordered = sorted(scores, key=lambda s: s.weighted)
            values = [s.value for s in ordered]
            self.assertEqual(values, sorted(values))


class TestAlertHysteresis(unittest.TestCase):
    """On/off dwell behaviour"""

    def setUp(self):
        """Set up test fixtures"""
        self.hysteresis = AlertHysteresis(CONFIG)

    def _feed(self, points):
        return [(t, out) for t, value in points if (out := self.hysteresis.update(t, value))]

    def test_constant_high_score_fires_once(self):
        outcomes = self._feed((t, 0.8) for t in range(0, 600001, 5000))
        self.assertEqual(outcomes, [(30000, AlertHysteresis.FIRE)])

    def test_short_spike_does_not_fire(self):
        points = [(t, 0.8) for t in range(0, 10001, 5000)] + [(t, 0.0) for t in range(15000, 120001, 5000)]
        self.assertEqual(self._feed(points), [])

    def test_rearm_after_low_period(self):
        """60 s below off_threshold re-arms; the next sustained run fires again"""
        points = (
            [(t, 0.8) for t in range(0, 60001, 5000)]
            + [(t, 0.4) for t in range(65000, 125001, 5000)]
            + [(t, 0.8) for t in range(130000, 160001, 5000)]
        )
        self.assertEqual(
            self._feed(points),
            [(30000, AlertHysteresis.FIRE), (125000, AlertHysteresis.REARM), (160000, AlertHysteresis.FIRE)]
        )

    def test_middle_band_holds_state(self):
        """Values between the thresholds neither fire nor re-arm"""
        points = [(t, 0.8) for t in range(0, 30001, 5000)] + [(t, 0.6) for t in range(35000, 600001, 5000)]
        self.assertEqual(self._feed(points), [(30000, AlertHysteresis.FIRE)])
        self.assertFalse(self.hysteresis.armed)

    def test_randomized_streams(self):
        """Each fire follows 30 s above on and fires are separated by a re-arm"""
        rng = random.Random(21)
        for _ in range(1000):
            hysteresis = AlertHysteresis(CONFIG)
            value = rng.random()
            above_since = None
            last = None
            for k in range(200):
                t = k * 5000
                value = min(max(value + rng.uniform(-0.3, 0.3), 0.0), 1.0)
                above_since = (above_since if above_since is not None else t) if value >= 0.7 else None
                out = hysteresis.update(t, value)
                if out == AlertHysteresis.FIRE:
                    self.assertIsNotNone(above_since)
                    self.assertGreaterEqual(t - above_since, 30000)
                    self.assertNotEqual(last, AlertHysteresis.FIRE)
                if out is not None:
                    last = out


class TestEngineModes(unittest.TestCase):

    def test_calibrated_needs_measured_baseline(self):
        with self.assertRaises(ModeError):
            DrowsinessEngine(EngineMode.CALIBRATED)
        with self.assertRaises(ModeError):
            DrowsinessEngine(EngineMode.CALIBRATED, baseline=Baseline(70.0, 30.0, 40.0, None, Provenance.POPULATION_DEFAULT))
        self.assertIs(DrowsinessEngine(EngineMode.UNSUPERVISED).state, EngineState.WARMUP)

    def test_window_regression(self):
        engine = DrowsinessEngine(EngineMode.CALIBRATED, baseline=measured())
        engine.ingest(10000, features(10000, 70.0, 30.0), None, NOON)
        with self.assertRaises(OrderError):
            engine.ingest(5000, features(5000, 70.0, 30.0), None, NOON)


class TestCalibratedEngine(unittest.TestCase):
    """Engine with a measured resting baseline"""

    def setUp(self):
        """Set up test fixtures"""
        self.engine = DrowsinessEngine(EngineMode.CALIBRATED, baseline=measured())

    def _ingest(self, times, hr, rmssd):
        events = []
        for t in times:
            events.extend(self.engine.ingest(t, features(t, hr, rmssd), None, NOON))
        return events

    def test_first_window_is_scored(self):
        events = self._ingest([0], 70.0, 30.0)
        self.assertEqual(events, [StateChange(0, EngineState.WARMUP, EngineState.MONITORING)])
        self.assertEqual(self.engine.last_score.value, 0.0)

    def test_drowsy_windows_alert_once(self):
        events = self._ingest(range(0, 120001, 5000), 58.0, 60.0)
        alerts = [e for e in events if isinstance(e, AlertEvent)]
        self.assertEqual(len(alerts), 1)
        self.assertEqual(alerts[0].t_ms, 30000)
        self.assertIs(self.engine.state, EngineState.ALERTING)

        record = alerts[0].to_json()
        self.assertEqual(record['channel'], 'VIBRATION')
        self.assertEqual(record['value'], 1.0)
        self.assertIsNone(record['bp_drop'])
        self.assertEqual(record['circadian'], 1.0)

    def test_recovery_returns_to_monitoring(self):
        self._ingest(range(0, 30001, 5000), 58.0, 60.0)
        events = self._ingest(range(35000, 95001, 5000), 70.0, 30.0)
        self.assertEqual(events, [StateChange(95000, EngineState.ALERTING, EngineState.MONITORING)])

    def test_interrupt_restarts_dwell(self):
        """A driving pause discards the partially accumulated dwell"""
        self._ingest(range(0, 25001, 5000), 58.0, 60.0)
        self.engine.interrupt()
        events = self._ingest(range(30000, 60001, 5000), 58.0, 60.0)
        alerts = [e for e in events if isinstance(e, AlertEvent)]
        self.assertEqual([a.t_ms for a in alerts], [60000])

    def test_bp_uses_baseline_reference(self):
        engine = DrowsinessEngine(EngineMode.CALIBRATED, baseline=measured(bp=(120.0, 80.0)))
        vitals = Vitals(bp=BloodPressure(100.0, 70.0), bp_t_ms=0)
        engine.ingest(0, features(0, 70.0, 30.0), vitals, NOON)
        self.assertEqual(engine.last_score.components.bp_drop, 1.0)
        self.assertAlmostEqual(engine.last_score.value, 0.3)


class TestUnsupervisedEngine(unittest.TestCase):
    """Reference learned from the start of the drive"""

    def test_reference_frozen_after_window(self):
        engine = DrowsinessEngine(EngineMode.UNSUPERVISED)
        events = []
        for t in range(30000, 325001, 5000):
            events.extend(engine.ingest(t, features(t, 72.0, 35.0), None, NOON))
        self.assertEqual(events, [])
        self.assertIs(engine.state, EngineState.WARMUP)

        events = engine.ingest(330000, features(330000, 72.0, 35.0), None, NOON)
        self.assertEqual(events, [StateChange(330000, EngineState.WARMUP, EngineState.MONITORING)])
        self.assertIsNone(engine.last_score)
        self.assertEqual(engine.reference.hr_bpm, 72.0)
        self.assertEqual(engine.reference.rmssd_ms, 35.0)

        engine.ingest(335000, features(335000, 72.0, 35.0), None, NOON)
        self.assertEqual(engine.last_score.value, 0.0)

    def test_reference_waits_for_beat_coverage(self):
        """Sparse beat coverage keeps the engine in WARMUP at the end of the span"""
        engine = DrowsinessEngine(EngineMode.UNSUPERVISED)
        for t in range(30000, 330001, 5000):
            engine.ingest(t, features(t, 72.0, 35.0, span_ms=1000), None, NOON)
        self.assertIs(engine.state, EngineState.WARMUP)
        self.assertIsNone(engine.reference)

    def test_short_span_restarts_reference(self):
        """Windows from an under-covered span never reach the frozen reference"""
        engine = DrowsinessEngine(EngineMode.UNSUPERVISED)
        for t in range(30000, 330001, 5000):
            engine.ingest(t, features(t, 72.0, 35.0, span_ms=1000), None, NOON)

        # A fresh span starts at 335000 and is complete at 635000
        for t in range(335000, 630001, 5000):
            engine.ingest(t, features(t, 60.0, 50.0), None, NOON)
        self.assertIs(engine.state, EngineState.WARMUP)

        events = engine.ingest(635000, features(635000, 60.0, 50.0), None, NOON)
        self.assertEqual(events, [StateChange(635000, EngineState.WARMUP, EngineState.MONITORING)])
        self.assertEqual(engine.reference.hr_bpm, 60.0)
        self.assertEqual(engine.reference.rmssd_ms, 50.0)

    def test_reference_bp_median_of_distinct_readings(self):
        engine = DrowsinessEngine(EngineMode.UNSUPERVISED)
        readings = {0: (118.0, 76.0), 60000: (120.0, 78.0), 120000: (140.0, 90.0)}
        for t in range(30000, 330001, 5000):
            bp_t = max(k for k in readings if k <= t)
            vitals = Vitals(bp=BloodPressure(*readings[bp_t]), bp_t_ms=bp_t)
            engine.ingest(t, features(t, 72.0, 35.0), vitals, NOON)
        self.assertEqual(engine.reference.bp, (120.0, 78.0))

    def test_zero_rmssd_reference_is_floored(self):
        engine = DrowsinessEngine(EngineMode.UNSUPERVISED)
        for t in range(30000, 335001, 5000):
            engine.ingest(t, features(t, 72.0, 0.0), None, NOON)
        self.assertGreater(engine.reference.rmssd_ms, 0.0)
        self.assertIsNotNone(engine.last_score)


if __name__ == '__main__':
    unittest.main()
