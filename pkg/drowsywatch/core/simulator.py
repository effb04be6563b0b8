"""
Session Simulator - deterministic synthetic driving sessions

Generates a full multi-sensor stream for a scenario and driver profile:
ACCEL/GYRO at 10 Hz, one HEART_BEAT per simulated beat, HEART_RATE,
LOCATION and STEP_COUNT at 1 Hz, BLOOD_PRESSURE and SPO2 every 60 s,
plus 1 Hz ground-truth ALERT/DROWSY labels.
"""
import math
from dataclasses import dataclass
from datetime import time
from enum import Enum
from typing import List, Optional

import numpy as np

from common.errors import InvalidScenario
from common.logger import get_logger
from drowsywatch.core.hrv_analytics import personalize
from drowsywatch.core.sensor_model import (
    Accel, BloodPressure, DriverProfile, Gyro, HeartBeat, HeartRate, Label,
    Location, SensorSample, SessionStream, SpO2, StepCount, merge_streams
)

logger = get_logger('Simulator')

WATCH_SOURCE = 1
GPS_SOURCE = 2

MOTION_HZ = 10
VITALS_PERIOD_S = 60

# Drowsiness onset: 10% decline in HR and BP over 120 s, front-loaded
RAMP_S = 120.0
RAMP_TAU_S = 20.0
HR_DECLINE = 0.10
BP_DECLINE = 0.10
BASE_JITTER_MS = 15.0
DROWSY_JITTER_GAIN = 3.0

DRIVING_HR_OFFSET = 6.0
HR_WOBBLE = 0.01
HR_WOBBLE_PERIOD_S = 300.0
RESTING_SYSTOLIC = 118.0
RESTING_DIASTOLIC = 76.0

CRUISE_SPEED = 25.0
CITY_SPEED = 14.0
STOP_AND_GO_DRIVE_S = 300
STOP_AND_GO_STOP_S = 180

START_LAT = 40.4168
START_LON = -3.7038
METERS_PER_DEGREE = 111320.0


class ScenarioKind(Enum):
    ALERT_DRIVE = 'alert-drive'
    DROWSY_ONSET = 'drowsy-onset'
    STOP_AND_GO = 'stop-and-go'


@dataclass(frozen=True)
class Scenario:
    """What to simulate; start_local is the wall-clock time at t = 0"""
    kind: ScenarioKind
    seed: int
    duration_s: int
    onset_s: Optional[int] = None
    start_local: time = time(2, 0)

    def validate(self):
        if self.duration_s <= 0:
            raise InvalidScenario(f"duration_s must be positive, got {self.duration_s}")
        if self.kind is ScenarioKind.DROWSY_ONSET:
            if self.onset_s is None:
                raise InvalidScenario("DROWSY_ONSET needs onset_s")
            if not 0 <= self.onset_s < self.duration_s:
                raise InvalidScenario(
                    f"onset_s ({self.onset_s}) must lie in [0, duration_s={self.duration_s})"
                )


def drowsiness_fraction(t_s: float, onset_s: Optional[float]) -> float:
    """Fraction of the full decline reached at t_s (0 before onset, 1 after the ramp)"""
    if onset_s is None or t_s < onset_s:
        return 0.0
    elapsed = t_s - onset_s
    if elapsed >= RAMP_S:
        return 1.0
    return (1.0 - math.exp(-elapsed / RAMP_TAU_S)) / (1.0 - math.exp(-RAMP_S / RAMP_TAU_S))


def _speed_profile(scenario: Scenario) -> np.ndarray:
    """Nominal speed per second of the session"""
    seconds = np.arange(scenario.duration_s)
    if scenario.kind is ScenarioKind.STOP_AND_GO:
        cycle = STOP_AND_GO_DRIVE_S + STOP_AND_GO_STOP_S
        moving = (seconds % cycle) < STOP_AND_GO_DRIVE_S
        return np.where(moving, CITY_SPEED, 0.0)
    return np.full(scenario.duration_s, CRUISE_SPEED)


class _Generator:
    """Per-session generator state; one independent RNG per sensor stream"""

    def __init__(self, scenario: Scenario, profile: DriverProfile):
        self.scenario = scenario
        self.onset_s = scenario.onset_s if scenario.kind is ScenarioKind.DROWSY_ONSET else None
        self.hr0 = personalize(profile).resting_hr_bpm + DRIVING_HR_OFFSET
        self.speed = _speed_profile(scenario)

        seed_seq = np.random.SeedSequence(scenario.seed & 0xFFFFFFFFFFFFFFFF)
        (self.rng_motion, self.rng_beats, self.rng_hr,
         self.rng_gps, self.rng_vitals) = [np.random.default_rng(s) for s in seed_seq.spawn(5)]

    def heart_rate(self, t_s: float) -> float:
        wobble = 1.0 + HR_WOBBLE * math.sin(2.0 * math.pi * t_s / HR_WOBBLE_PERIOD_S)
        return self.hr0 * wobble * (1.0 - HR_DECLINE * drowsiness_fraction(t_s, self.onset_s))

    def motion(self) -> List[SessionStream]:
        n = self.scenario.duration_s * MOTION_HZ
        moving = np.repeat(self.speed > 0.0, MOTION_HZ)
        scale = np.where(moving, 0.3, 0.05)[:, None]
        accel = np.round(self.rng_motion.normal(0.0, 1.0, (n, 3)) * scale + [0.0, 0.0, 9.81], 3).tolist()
        gyro = np.round(self.rng_motion.normal(0.0, 1.0, (n, 3)) * scale * 0.1, 4).tolist()
        step = 1000 // MOTION_HZ
        return [
            SessionStream([SensorSample(k * step, WATCH_SOURCE, Accel(*a)) for k, a in enumerate(accel)]),
            SessionStream([SensorSample(k * step, WATCH_SOURCE, Gyro(*g)) for k, g in enumerate(gyro)]),
        ]

    def beats(self) -> SessionStream:
        end_ms = self.scenario.duration_s * 1000.0
        # Fixed-size draw keeps the sequence independent of how many beats fit
        noise = self.rng_beats.standard_normal(int(self.scenario.duration_s * 4) + 8)
        samples = []
        elapsed = float(self.rng_beats.uniform(0.0, 500.0))
        k = 0
        while k < noise.size:
            t_s = elapsed / 1000.0
            f = drowsiness_fraction(t_s, self.onset_s)
            jitter = BASE_JITTER_MS * (1.0 + DROWSY_JITTER_GAIN * f)
            ibi = round(min(max(60000.0 / self.heart_rate(t_s) + jitter * float(noise[k]), 350.0), 1800.0), 1)
            elapsed += ibi
            if elapsed >= end_ms:
                break
            samples.append(SensorSample(int(round(elapsed)), WATCH_SOURCE, HeartBeat(ibi)))
            k += 1
        return SessionStream(samples)

    def heart_rate_stream(self) -> SessionStream:
        noise = self.rng_hr.normal(0.0, 0.5, self.scenario.duration_s)
        return SessionStream([
            SensorSample(s * 1000, WATCH_SOURCE, HeartRate(round(self.heart_rate(s) + float(noise[s]), 1)))
            for s in range(self.scenario.duration_s)
        ])

    def gps_and_steps(self) -> List[SessionStream]:
        n = self.scenario.duration_s
        speeds = np.clip(self.speed + np.where(self.speed > 0.0, self.rng_gps.normal(0.0, 0.4, n), 0.0), 0.0, None)
        lat = START_LAT
        lon = START_LON
        locations = []
        steps = []
        for s in range(n):
            speed = round(float(speeds[s]), 2)
            locations.append(SensorSample(s * 1000, GPS_SOURCE, Location(round(lat, 6), round(lon, 6), speed)))
            steps.append(SensorSample(s * 1000, WATCH_SOURCE, StepCount(0)))
            lon += speed / (METERS_PER_DEGREE * math.cos(math.radians(lat)))
        return [SessionStream(locations), SessionStream(steps)]

    def vitals(self) -> List[SessionStream]:
        bp = []
        spo2 = []
        for s in range(0, self.scenario.duration_s, VITALS_PERIOD_S):
            decline = 1.0 - BP_DECLINE * drowsiness_fraction(s, self.onset_s)
            systolic, diastolic, sat = self.rng_vitals.normal(0.0, [0.4, 0.3, 0.6]).tolist()
            bp.append(SensorSample(s * 1000, WATCH_SOURCE, BloodPressure(
                round(RESTING_SYSTOLIC * decline + systolic, 1),
                round(RESTING_DIASTOLIC * decline + diastolic, 1)
            )))
            spo2.append(SensorSample(s * 1000, WATCH_SOURCE, SpO2(round(min(max(97.0 + sat, 94.0), 100.0), 1))))
        return [SessionStream(bp), SessionStream(spo2)]

    def labels(self):
        onset_ms = None if self.onset_s is None else self.onset_s * 1000
        return [
            (s * 1000, Label.DROWSY if onset_ms is not None and s * 1000 >= onset_ms else Label.ALERT)
            for s in range(self.scenario.duration_s)
        ]


def synthesize_session(scenario: Scenario, profile: DriverProfile) -> SessionStream:
    """
    Generate a deterministic synthetic session

    Args:
        scenario: Scenario kind, seed and duration
        profile: Driver profile (sets the resting heart rate)

    Returns:
        Time-ordered SessionStream with ground-truth labels

    Raises:
        InvalidScenario: inconsistent scenario parameters
    """
    scenario.validate()
    gen = _Generator(scenario, profile)

    streams = gen.motion()
    streams.append(gen.beats())
    streams.append(gen.heart_rate_stream())
    streams.extend(gen.gps_and_steps())
    streams.extend(gen.vitals())

    session = merge_streams(streams)
    session.labels = gen.labels()

    logger.info(
        f"Synthesized {scenario.kind.value} session: seed={scenario.seed} "
        f"duration={scenario.duration_s}s samples={len(session)}"
    )
    return session
