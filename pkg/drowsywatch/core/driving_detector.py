"""
Driving Detector - decides whether the wearer is driving

Uses GPS speed and pedometer cadence. ACCEL/GYRO samples are accepted but do
not affect transitions.
"""
from collections import deque
from dataclasses import dataclass, fields
from enum import Enum
from typing import Deque, Dict, Mapping, Optional, Tuple

from common.errors import ConfigError, OrderError
from common.logger import get_logger
from drowsywatch.core.sensor_model import Location, SensorSample, StepCount

logger = get_logger('DrivingDetector')


class DrivingState(Enum):
    IDLE = 'IDLE'
    DRIVING = 'DRIVING'
    STOPPED = 'STOPPED'


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds in m/s, seconds and steps/min"""
    speed_on: float = 4.0
    sustain_on_s: float = 60.0
    speed_off: float = 1.0
    sustain_off_s: float = 120.0
    max_cadence: float = 10.0
    max_gap_s: float = 3.0
    cadence_window_s: float = 60.0

    def __post_init__(self):
        if not self.speed_off < self.speed_on:
            raise ConfigError(f"speed_off ({self.speed_off}) must be below speed_on ({self.speed_on})")
        for name in ('sustain_on_s', 'sustain_off_s', 'max_gap_s', 'cadence_window_s'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_cadence < 0:
            raise ConfigError(f"max_cadence must be non-negative, got {self.max_cadence}")

    @classmethod
    def from_mapping(cls, values: Mapping) -> 'DetectorConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown detector setting(s): {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in values.items()})
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid detector setting: {e}") from e


@dataclass(frozen=True)
class TransitionEvent:
    t_ms: int
    from_state: DrivingState
    to_state: DrivingState
    trigger: str

    def to_json(self) -> Dict:
        return {
            't_ms': self.t_ms,
            'from': self.from_state.value,
            'to': self.to_state.value,
            'trigger': self.trigger,
        }


class DrivingDetector:
    """
    Single-writer state machine over a time-ordered sample stream

    IDLE -> DRIVING    speed >= speed_on for sustain_on_s, cadence <= max_cadence
    DRIVING -> STOPPED speed < speed_off for sustain_off_s
    STOPPED -> DRIVING the on-condition recurs
    STOPPED -> IDLE    cadence over cadence_window_s > max_cadence
    """

    def __init__(self, config: Optional[DetectorConfig] = None):
        self.config = config or DetectorConfig()
        self._state = DrivingState.IDLE
        self._count = 0
        self._last_t: Optional[int] = None

        self._last_loc_t: Optional[int] = None
        self._fast_since: Optional[int] = None
        self._slow_since: Optional[int] = None

        # source_id -> (t_ms, cumulative)
        self._steps: Dict[int, Deque[Tuple[int, int]]] = {}
        self._history_ms = int(1000 * max(self.config.sustain_on_s, self.config.cadence_window_s)) + 1000

    @property
    def state(self) -> DrivingState:
        return self._state

    def update(self, sample: SensorSample) -> Optional[TransitionEvent]:
        """
        Feed one sample

        Returns:
            The TransitionEvent if the state changed, else None

        Raises:
            OrderError: timestamp earlier than the previous sample
        """
        self._count += 1
        t = sample.t_ms
        if self._last_t is not None and t < self._last_t:
            raise OrderError(self._count, f"sample at {t} ms after {self._last_t} ms")
        self._last_t = t

        payload = sample.payload
        if isinstance(payload, StepCount):
            self._record_steps(t, sample.source_id, payload.cumulative)
            if self._state is DrivingState.STOPPED:
                cadence = self.cadence(t, self.config.cadence_window_s)
                if cadence > self.config.max_cadence:
                    return self._move(t, DrivingState.IDLE, f"cadence {cadence:.0f} steps/min")
            return None

        if isinstance(payload, Location):
            return self._on_location(t, payload.speed)

        return None

    def _on_location(self, t: int, speed: float) -> Optional[TransitionEvent]:
        cfg = self.config

        if self._last_loc_t is not None and t - self._last_loc_t > cfg.max_gap_s * 1000:
            logger.debug(f"LOCATION gap of {t - self._last_loc_t} ms, sustain timers reset")
            self._fast_since = None
            self._slow_since = None
        self._last_loc_t = t

        if speed >= cfg.speed_on:
            if self._fast_since is None:
                self._fast_since = t
        else:
            self._fast_since = None

        if speed < cfg.speed_off:
            if self._slow_since is None:
                self._slow_since = t
        else:
            self._slow_since = None

        if self._state is DrivingState.DRIVING:
            if self._slow_since is not None and t - self._slow_since >= cfg.sustain_off_s * 1000:
                return self._move(t, DrivingState.STOPPED, f"speed < {cfg.speed_off} m/s for {cfg.sustain_off_s:g} s")
            return None

        if self._fast_since is not None and t - self._fast_since >= cfg.sustain_on_s * 1000:
            cadence = self.cadence(t, cfg.sustain_on_s)
            if cadence <= cfg.max_cadence:
                return self._move(t, DrivingState.DRIVING, f"speed >= {cfg.speed_on} m/s for {cfg.sustain_on_s:g} s")
        return None

    def _record_steps(self, t: int, source_id: int, cumulative: int):
        history = self._steps.setdefault(source_id, deque())
        history.append((t, cumulative))
        while len(history) > 1 and history[1][0] <= t - self._history_ms:
            history.popleft()

    def cadence(self, now_ms: int, window_s: float) -> float:
        """Steps per minute over the trailing window ending at now_ms, summed over sources"""
        start = now_ms - window_s * 1000
        total = 0
        for history in self._steps.values():
            baseline = None
            latest = None
            for t, cumulative in history:
                if t <= start or baseline is None:
                    baseline = cumulative
                if t <= now_ms:
                    latest = cumulative
            if baseline is not None and latest is not None:
                total += max(latest - baseline, 0)
        return total / (window_s / 60.0)

    def _move(self, t: int, to_state: DrivingState, trigger: str) -> TransitionEvent:
        event = TransitionEvent(t_ms=t, from_state=self._state, to_state=to_state, trigger=trigger)
        logger.info(f"{event.from_state.value} -> {event.to_state.value} at {t} ms ({trigger})")
        self._state = to_state
        if to_state is DrivingState.DRIVING:
            self._slow_since = None
        else:
            self._fast_since = None
        return event
