"""
Monitoring Pipeline - runs the monitor/detect/alert loop over a sample stream

validate -> detect driving -> window IBIs -> clean -> HRV features
-> stress index / rhythm screen -> drowsiness engine -> alerts
"""
from collections import Counter, deque
from dataclasses import dataclass, field, fields
from datetime import date, datetime, time, timedelta
from typing import Callable, Deque, Dict, Iterable, List, Mapping, Optional, Tuple

from common.errors import ConfigError, InsufficientData, OrderError, RangeError
from common.logger import get_logger
from drowsywatch.core.driving_detector import DetectorConfig, DrivingDetector, DrivingState, TransitionEvent
from drowsywatch.core.drowsiness_engine import (
    AlertEvent, DrowsinessEngine, StateChange, Vitals
)
from drowsywatch.core.hrv_analytics import (
    Baseline, IbiSeries, RHYTHM_MIN_INTERVALS, classify_rhythm, clean_ibi, hrv_features, stress_index
)
from drowsywatch.core.sensor_model import (
    BloodPressure, HeartBeat, SensorSample, SpO2, validate_sample
)

logger = get_logger('MonitoringPipeline')

PROGRESS_EVERY = 5000


@dataclass(frozen=True)
class PipelineConfig:
    """Feature window length and hop, seconds"""
    window_s: float = 30.0
    step_s: float = 5.0

    def __post_init__(self):
        if not self.step_s > 0 or not self.window_s > 0:
            raise ConfigError(f"window_s and step_s must be positive, got {self.window_s}/{self.step_s}")
        if self.step_s > self.window_s:
            raise ConfigError(f"step_s ({self.step_s}) must not exceed window_s ({self.window_s})")

    @classmethod
    def from_mapping(cls, values: Mapping) -> 'PipelineConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown pipeline setting(s): {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in values.items()})
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid pipeline setting: {e}") from e


@dataclass
class SessionResult:
    """Everything one run produced"""
    samples: int = 0
    rejected: Counter = field(default_factory=Counter)
    transitions: List[TransitionEvent] = field(default_factory=list)
    state_changes: List[StateChange] = field(default_factory=list)
    alerts: List[AlertEvent] = field(default_factory=list)
    windows: List[Dict] = field(default_factory=list)
    skipped_windows: int = 0


class MonitoringPipeline:
    """
    Streaming orchestration of detector and engine

    Feature windows end on multiples of step_s and cover the preceding
    window_s. A window ending at T is evaluated once a sample later than T
    arrives (or at finish()), and only while the detector reports DRIVING.
    """

    def __init__(
        self,
        engine: DrowsinessEngine,
        stress_baseline: Baseline,
        start_local: time,
        detector_config: Optional[DetectorConfig] = None,
        config: Optional[PipelineConfig] = None
    ):
        self.engine = engine
        self.stress_baseline = stress_baseline
        self.detector = DrivingDetector(detector_config)
        self.config = config or PipelineConfig()
        self.result = SessionResult()

        self._start = datetime.combine(date(2000, 1, 1), start_local)
        self._window_ms = int(round(self.config.window_s * 1000))
        self._step_ms = int(round(self.config.step_s * 1000))

        self._beats: Deque[Tuple[int, float]] = deque()
        self._bp: Optional[Tuple[int, BloodPressure]] = None
        self._spo2: Optional[SpO2] = None
        self._next_tick: Optional[int] = None
        self._last_t: Optional[int] = None

    def run(self, samples: Iterable[SensorSample], progress_callback: Optional[Callable[[int], None]] = None) -> SessionResult:
        """
        Process a whole stream

        Args:
            samples: Time-ordered samples
            progress_callback: Called with the number of samples processed since the last call

        Returns:
            SessionResult
        """
        pending = 0
        for sample in samples:
            self.feed(sample)
            pending += 1
            if progress_callback and pending >= PROGRESS_EVERY:
                progress_callback(pending)
                pending = 0
        if progress_callback and pending:
            progress_callback(pending)
        return self.finish()

    def feed(self, sample: SensorSample):
        """
        Process one sample

        Raises:
            OrderError: timestamp earlier than the previous sample
        """
        t = sample.t_ms
        if self._last_t is not None and t < self._last_t:
            raise OrderError(self.result.samples + 1, f"sample at {t} ms after {self._last_t} ms")
        self._last_t = t
        self.result.samples += 1

        try:
            validated = validate_sample(sample)
        except RangeError as e:
            self.result.rejected[sample.kind.value] += 1
            logger.warning(f"Rejected {sample.kind.value} sample at {t} ms: {e}")
            return

        self._fire_ticks(lambda tick: tick < t)

        transition = self.detector.update(sample)
        if transition is not None:
            self._on_transition(transition)

        payload = sample.payload
        if isinstance(payload, HeartBeat):
            self._beats.append((t, payload.ibi_ms))
            horizon = t - self._window_ms - self._step_ms
            while self._beats and self._beats[0][0] <= horizon:
                self._beats.popleft()
        elif isinstance(payload, BloodPressure):
            self._bp = (t, payload)
        elif isinstance(payload, SpO2):
            self._spo2 = payload
            if validated.healthy is False:
                logger.debug(f"SpO2 {payload.pct}% below the healthy range at {t} ms")

    def finish(self) -> SessionResult:
        """Evaluate windows that end at or before the last sample"""
        if self._last_t is not None:
            last = self._last_t
            self._fire_ticks(lambda tick: tick <= last)
        logger.info(
            f"Session processed: {self.result.samples} samples, {len(self.result.windows)} windows, "
            f"{len(self.result.transitions)} transitions, {len(self.result.alerts)} alerts"
        )
        if self.result.rejected:
            logger.warning(f"Rejected samples by kind: {dict(self.result.rejected)}")
        return self.result

    def _on_transition(self, transition: TransitionEvent):
        self.result.transitions.append(transition)
        if transition.to_state is DrivingState.DRIVING:
            t = transition.t_ms
            self._next_tick = -(-t // self._step_ms) * self._step_ms
        else:
            self._next_tick = None
            self.engine.interrupt()

    def _fire_ticks(self, due: Callable[[int], bool]):
        while (
            self._next_tick is not None
            and self.detector.state is DrivingState.DRIVING
            and due(self._next_tick)
        ):
            self._evaluate_window(self._next_tick)
            self._next_tick += self._step_ms

    def _evaluate_window(self, tick: int):
        start = tick - self._window_ms
        pairs = [(t, ibi) for t, ibi in self._beats if start < t <= tick]
        raw = IbiSeries.from_pairs(pairs)
        cleaned = clean_ibi(raw)

        try:
            features = hrv_features(cleaned)
        except InsufficientData:
            self.result.skipped_windows += 1
            logger.debug(f"Window ending {tick} ms skipped: {len(cleaned)} clean intervals")
            return

        rhythm = None
        if len(raw) >= RHYTHM_MIN_INTERVALS:
            try:
                rhythm = classify_rhythm(raw).value
            except InsufficientData:
                pass

        vitals = Vitals(
            bp=self._bp[1] if self._bp else None,
            bp_t_ms=self._bp[0] if self._bp else None,
            spo2=self._spo2
        )
        local_time = (self._start + timedelta(milliseconds=tick)).time()

        events = self.engine.ingest(tick, features, vitals, local_time)
        for event in events:
            if isinstance(event, AlertEvent):
                self.result.alerts.append(event)
            else:
                self.result.state_changes.append(event)

        score = self.engine.last_score
        record = {'t_ms': tick}
        record.update(features.to_dict())
        record['stress_index'] = stress_index(features, self.stress_baseline).value
        record['rhythm'] = rhythm
        record['engine_state'] = self.engine.state.value
        record['score'] = score.value if score is not None and score.t_ms == tick else None
        self.result.windows.append(record)
