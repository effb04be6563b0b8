"""
Drowsiness Engine - fuses HRV features and vitals into a drowsiness score

Evidence of drowsiness: heart rate falling, blood pressure falling and RMSSD
rising against a reference. The reference is either a measured resting
baseline (CALIBRATED) or learned from the first minutes of the drive
(UNSUPERVISED). Alerts go through on/off hysteresis with dwell times.
"""
from dataclasses import dataclass, fields
from datetime import time
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from common.errors import ConfigError, ModeError, OrderError, RangeError
from common.logger import get_logger
from drowsywatch.core.hrv_analytics import Baseline, HrvFeatures, Provenance, circadian_risk
from drowsywatch.core.sensor_model import BloodPressure, SpO2

logger = get_logger('DrowsinessEngine')


class EngineMode(Enum):
    UNSUPERVISED = 'UNSUPERVISED'
    CALIBRATED = 'CALIBRATED'


class EngineState(Enum):
    WARMUP = 'WARMUP'
    MONITORING = 'MONITORING'
    ALERTING = 'ALERTING'


@dataclass(frozen=True)
class EngineConfig:
    """Score weights, hysteresis thresholds and reference-learning windows (seconds)"""
    w_hr: float = 0.4
    w_rmssd: float = 0.3
    w_bp: float = 0.3
    on_threshold: float = 0.7
    on_dwell_s: float = 30.0
    off_threshold: float = 0.5
    rearm_dwell_s: float = 60.0
    reference_window_s: float = 300.0
    min_reference_ibi_s: float = 120.0
    hr_drop_band: Tuple[float, float] = (0.05, 0.15)
    bp_drop_band: Tuple[float, float] = (0.05, 0.16)

    def __post_init__(self):
        weights = (self.w_hr, self.w_rmssd, self.w_bp)
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError(f"weights must be non-negative and sum to 1, got {weights}")
        if not self.off_threshold < self.on_threshold:
            raise ConfigError(
                f"off_threshold ({self.off_threshold}) must be below on_threshold ({self.on_threshold})"
            )
        for name in ('on_dwell_s', 'rearm_dwell_s', 'reference_window_s', 'min_reference_ibi_s'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ('hr_drop_band', 'bp_drop_band'):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo < hi:
                raise ConfigError(f"{name} must satisfy 0 <= lo < hi, got {(lo, hi)}")

    @classmethod
    def from_mapping(cls, values: Mapping) -> 'EngineConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown engine setting(s): {sorted(unknown)}")
        kwargs = {}
        try:
            for key, value in values.items():
                if key.endswith('_band'):
                    lo, hi = value
                    kwargs[key] = (float(lo), float(hi))
                else:
                    kwargs[key] = float(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid engine setting: {e}") from e
        return cls(**kwargs)


@dataclass(frozen=True)
class ComponentScores:
    hr_drop: float
    rmssd_rise: float
    bp_drop: Optional[float]


@dataclass(frozen=True)
class DrowsinessScore:
    """value = clamp(circadian * weighted, 0, 1); weighted is the pre-clamp weighted sum"""
    t_ms: int
    value: float
    components: ComponentScores
    circadian: float
    weighted: float


class AlertChannel(Enum):
    VIBRATION = 'VIBRATION'


@dataclass(frozen=True)
class AlertEvent:
    t_ms: int
    score: DrowsinessScore
    reason: str
    channel: AlertChannel = AlertChannel.VIBRATION

    def to_json(self) -> Dict:
        c = self.score.components
        return {
            't_ms': self.t_ms,
            'channel': self.channel.value,
            'value': self.score.value,
            'hr_drop': c.hr_drop,
            'rmssd_rise': c.rmssd_rise,
            'bp_drop': c.bp_drop,
            'circadian': self.score.circadian,
            'reason': self.reason,
        }


@dataclass(frozen=True)
class StateChange:
    t_ms: int
    from_state: EngineState
    to_state: EngineState

    def to_json(self) -> Dict:
        return {'t_ms': self.t_ms, 'from': self.from_state.value, 'to': self.to_state.value}


EngineEvent = Union[StateChange, AlertEvent]

RMSSD_REF_FLOOR_MS = 1.0


@dataclass(frozen=True)
class Reference:
    """What the current window is compared against"""
    hr_bpm: float
    rmssd_ms: float
    bp: Optional[Tuple[float, float]] = None

    @classmethod
    def from_baseline(cls, baseline: Baseline) -> 'Reference':
        return cls(hr_bpm=baseline.resting_hr_bpm, rmssd_ms=baseline.resting_rmssd_ms, bp=baseline.resting_bp)


@dataclass(frozen=True)
class Vitals:
    """Most recent spot readings; bp_t_ms identifies the BP reading"""
    bp: Optional[BloodPressure] = None
    bp_t_ms: Optional[int] = None
    spo2: Optional[SpO2] = None


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def _band(drop: float, band: Tuple[float, float]) -> float:
    lo, hi = band
    return _clamp01((drop - lo) / (hi - lo))


def score_components(
    hr_now: float,
    hr_ref: float,
    rmssd_now: float,
    rmssd_ref: float,
    bp_now: Optional[Tuple[float, float]],
    bp_ref: Optional[Tuple[float, float]],
    circadian: float,
    config: EngineConfig,
    t_ms: int = 0
) -> DrowsinessScore:
    """
    Score drowsiness evidence against a reference

    Blood pressure uses the systolic value. When either BP reading is absent
    its weight is redistributed proportionally over the other terms.

    Raises:
        RangeError: non-positive reference
    """
    for name, ref in (('hr_ref', hr_ref), ('rmssd_ref', rmssd_ref)):
        if not ref > 0:
            raise RangeError(name, ref, (0.0, float('inf')))

    hr_drop = _band((hr_ref - hr_now) / hr_ref, config.hr_drop_band)
    rmssd_rise = _clamp01((rmssd_now - rmssd_ref) / rmssd_ref)

    if bp_now is not None and bp_ref is not None:
        if not bp_ref[0] > 0:
            raise RangeError('bp_ref', bp_ref[0], (0.0, float('inf')))
        bp_drop = _band((bp_ref[0] - bp_now[0]) / bp_ref[0], config.bp_drop_band)
        weighted = config.w_hr * hr_drop + config.w_rmssd * rmssd_rise + config.w_bp * bp_drop
    else:
        bp_drop = None
        rest = config.w_hr + config.w_rmssd
        weighted = (config.w_hr * hr_drop + config.w_rmssd * rmssd_rise) / rest if rest > 0 else 0.0

    return DrowsinessScore(
        t_ms=t_ms,
        value=_clamp01(circadian * weighted),
        components=ComponentScores(hr_drop=hr_drop, rmssd_rise=rmssd_rise, bp_drop=bp_drop),
        circadian=circadian,
        weighted=weighted
    )


class AlertHysteresis:
    """
    On/off hysteresis over a (t_ms, value) stream

    Armed: value >= on_threshold held for on_dwell_s fires once and disarms.
    Disarmed: value < off_threshold held for rearm_dwell_s re-arms.
    A dwell is measured between the first and the current qualifying sample.
    """

    FIRE = 'fire'
    REARM = 'rearm'

    def __init__(self, config: EngineConfig):
        self.config = config
        self.armed = True
        self._above_since: Optional[int] = None
        self._below_since: Optional[int] = None

    def update(self, t_ms: int, value: float) -> Optional[str]:
        cfg = self.config
        if self.armed:
            if value >= cfg.on_threshold:
                if self._above_since is None:
                    self._above_since = t_ms
                if t_ms - self._above_since >= cfg.on_dwell_s * 1000:
                    self.armed = False
                    self._above_since = None
                    self._below_since = None
                    return self.FIRE
            else:
                self._above_since = None
            return None

        if value < cfg.off_threshold:
            if self._below_since is None:
                self._below_since = t_ms
            if t_ms - self._below_since >= cfg.rearm_dwell_s * 1000:
                self.armed = True
                self._below_since = None
                return self.REARM
        else:
            self._below_since = None
        return None

    def reset(self):
        """Forget running dwell timers; the armed flag is kept"""
        self._above_since = None
        self._below_since = None


class _ReferenceAccumulator:
    """Session reference learned during WARMUP"""

    def __init__(self):
        self.first_t: Optional[int] = None
        self.hr: List[float] = []
        self.rmssd: List[float] = []
        self.bp: Dict[int, Tuple[float, float]] = {}
        self.coverage_ms = 0
        self._covered_until: Optional[int] = None

    def add(self, t_ms: int, features: HrvFeatures, vitals: Optional[Vitals]):
        if self.first_t is None:
            self.first_t = t_ms
        self.hr.append(features.mean_hr_bpm)
        self.rmssd.append(features.rmssd_ms)

        start, end = features.window_start_ms, features.window_end_ms
        if self._covered_until is None or start >= self._covered_until:
            self.coverage_ms += end - start
        else:
            self.coverage_ms += max(end - self._covered_until, 0)
        self._covered_until = end if self._covered_until is None else max(self._covered_until, end)

        if vitals is not None and vitals.bp is not None and vitals.bp_t_ms is not None:
            self.bp[vitals.bp_t_ms] = (vitals.bp.systolic, vitals.bp.diastolic)

    def expired(self, t_ms: int, config: EngineConfig) -> bool:
        """t_ms lies past the reference span, which ended without enough coverage"""
        return self.first_t is not None and t_ms - self.first_t > config.reference_window_s * 1000

    def ready(self, t_ms: int, config: EngineConfig) -> bool:
        return (
            self.first_t is not None
            and t_ms - self.first_t >= config.reference_window_s * 1000
            and self.coverage_ms >= config.min_reference_ibi_s * 1000
        )

    def freeze(self) -> Reference:
        bp = None
        if self.bp:
            readings = np.asarray(list(self.bp.values()), dtype=float)
            bp = (float(np.median(readings[:, 0])), float(np.median(readings[:, 1])))
        hr = float(np.median(self.hr))
        rmssd = float(np.median(self.rmssd))
        return Reference(hr_bpm=hr, rmssd_ms=max(rmssd, RMSSD_REF_FLOOR_MS), bp=bp)


class DrowsinessEngine:
    """
    Monitor -> detect -> alert -> continue loop for one driving session

    Callers only ingest while the wearer is driving and call interrupt()
    whenever driving pauses.
    """

    def __init__(self, mode: EngineMode, config: Optional[EngineConfig] = None, baseline: Optional[Baseline] = None):
        if mode is EngineMode.CALIBRATED:
            if baseline is None or baseline.provenance is not Provenance.MEASURED:
                raise ModeError("CALIBRATED mode needs a MEASURED baseline")
        self.mode = mode
        self.config = config or EngineConfig()
        self.baseline = baseline
        self.reference: Optional[Reference] = (
            Reference.from_baseline(baseline) if mode is EngineMode.CALIBRATED else None
        )

        self._state = EngineState.WARMUP
        self._hysteresis = AlertHysteresis(self.config)
        self._accumulator = _ReferenceAccumulator() if mode is EngineMode.UNSUPERVISED else None
        self._last_t: Optional[int] = None
        self._last_score: Optional[DrowsinessScore] = None

    @property
    def state(self) -> EngineState:
        return self._state

    @property
    def last_score(self) -> Optional[DrowsinessScore]:
        return self._last_score

    def interrupt(self):
        """Driving paused: running dwell timers are dropped"""
        self._hysteresis.reset()

    def ingest(
        self,
        t_ms: int,
        features: HrvFeatures,
        vitals: Optional[Vitals],
        local_time: time
    ) -> List[EngineEvent]:
        """
        Process one feature window

        Args:
            t_ms: Window end time
            features: HRV features of the window
            vitals: Latest BP/SpO2 readings
            local_time: Wall-clock time used for circadian weighting

        Returns:
            State changes and alerts produced by this window, in order

        Raises:
            OrderError: t_ms earlier than the previous window
        """
        if self._last_t is not None and t_ms < self._last_t:
            raise OrderError(None, f"window at {t_ms} ms after {self._last_t} ms")
        self._last_t = t_ms

        events: List[EngineEvent] = []

        if self._state is EngineState.WARMUP:
            if self.mode is EngineMode.UNSUPERVISED:
                if self._accumulator.expired(t_ms, self.config):
                    logger.info(
                        f"Reference span ended with {self._accumulator.coverage_ms / 1000:.0f} s of beats; "
                        f"restarting at {t_ms} ms"
                    )
                    self._accumulator = _ReferenceAccumulator()
                self._accumulator.add(t_ms, features, vitals)
                if not self._accumulator.ready(t_ms, self.config):
                    return events
                self.reference = self._accumulator.freeze()
                logger.info(
                    f"Session reference frozen at {t_ms} ms: hr={self.reference.hr_bpm:.1f} "
                    f"rmssd={self.reference.rmssd_ms:.1f} bp={self.reference.bp}"
                )
                events.append(self._change(t_ms, EngineState.MONITORING))
                return events
            events.append(self._change(t_ms, EngineState.MONITORING))

        score = self._score(t_ms, features, vitals, local_time)
        self._last_score = score
        outcome = self._hysteresis.update(t_ms, score.value)

        if outcome == AlertHysteresis.FIRE:
            reason = (
                f"score >= {self.config.on_threshold:g} for {self.config.on_dwell_s:g} s"
            )
            alert = AlertEvent(t_ms=t_ms, score=score, reason=reason)
            logger.warning(f"Drowsiness alert at {t_ms} ms (score {score.value:.3f})")
            events.append(alert)
            events.append(self._change(t_ms, EngineState.ALERTING))
        elif outcome == AlertHysteresis.REARM:
            events.append(self._change(t_ms, EngineState.MONITORING))

        return events

    def _score(self, t_ms: int, features: HrvFeatures, vitals: Optional[Vitals], local_time: time) -> DrowsinessScore:
        ref = self.reference
        bp_now = None
        if vitals is not None and vitals.bp is not None:
            bp_now = (vitals.bp.systolic, vitals.bp.diastolic)
        return score_components(
            hr_now=features.mean_hr_bpm,
            hr_ref=ref.hr_bpm,
            rmssd_now=features.rmssd_ms,
            rmssd_ref=ref.rmssd_ms,
            bp_now=bp_now,
            bp_ref=ref.bp,
            circadian=circadian_risk(local_time).multiplier,
            config=self.config,
            t_ms=t_ms
        )

    def _change(self, t_ms: int, to_state: EngineState) -> StateChange:
        change = StateChange(t_ms=t_ms, from_state=self._state, to_state=to_state)
        logger.info(f"Engine {change.from_state.value} -> {to_state.value} at {t_ms} ms")
        self._state = to_state
        return change
