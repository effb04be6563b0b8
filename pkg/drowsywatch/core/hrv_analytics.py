"""
HRV Analytics - time-domain heart rate variability from inter-beat intervals

Provides artifact cleaning, HRV metrics (mean HR, SDNN, RMSSD, pNN50),
a variability-based stress index, a sinus/irregular rhythm screen,
circadian risk weighting and baseline personalization.
"""
from dataclasses import dataclass
from datetime import time
from enum import Enum
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from common.errors import InsufficientData, OrderError, RangeError
from common.logger import get_logger
from drowsywatch.core.sensor_model import (
    IBI_MAX_MS, BloodPressure, DriverProfile, Fitness, Gender
)

logger = get_logger('HrvAnalytics')

# Artifact rejection
CLEAN_BAND_MS = (300.0, 2000.0)
MAX_RELATIVE_JUMP = 0.20

PNN50_THRESHOLD_MS = 50.0

# Rhythm screen
RHYTHM_MIN_INTERVALS = 30
RHYTHM_MAX_CV = 0.12
RHYTHM_MAX_PNN50 = 0.6

# Population resting values
POPULATION_RESTING_HR = {
    Gender.FEMALE: 72.0,
    Gender.MALE: 68.0,
    Gender.UNSPECIFIED: 70.0,
}
FITNESS_HR_OFFSET = {
    Fitness.SEDENTARY: 0.0,
    Fitness.ACTIVE: -4.0,
    Fitness.ATHLETE: -8.0,
}
POPULATION_RMSSD_MS = 42.0
POPULATION_SDNN_MS = 50.0


@dataclass(frozen=True)
class IbiSeries:
    """Time-ordered inter-beat intervals"""
    t_ms: Tuple[int, ...] = ()
    ibi_ms: Tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.t_ms) != len(self.ibi_ms):
            raise ValueError("t_ms and ibi_ms must have the same length")
        previous = None
        for i, (t, ibi) in enumerate(zip(self.t_ms, self.ibi_ms)):
            if not 0.0 < ibi <= IBI_MAX_MS:
                raise RangeError('ibi_ms', ibi, (0.0, IBI_MAX_MS))
            if previous is not None and t < previous:
                raise OrderError(i, 'IBI timestamps must be non-decreasing')
            previous = t

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[int, float]]) -> 'IbiSeries':
        pairs = list(pairs)
        return cls(
            t_ms=tuple(int(t) for t, _ in pairs),
            ibi_ms=tuple(float(ibi) for _, ibi in pairs)
        )

    @classmethod
    def from_intervals(cls, intervals: Sequence[float], start_ms: int = 0) -> 'IbiSeries':
        """Series whose timestamps are the cumulative beat instants"""
        t_ms = []
        elapsed = float(start_ms)
        for ibi in intervals:
            elapsed += ibi
            t_ms.append(int(round(elapsed)))
        return cls(t_ms=tuple(t_ms), ibi_ms=tuple(float(i) for i in intervals))

    def __len__(self) -> int:
        return len(self.ibi_ms)

    def total_ms(self) -> float:
        return float(sum(self.ibi_ms))


@dataclass(frozen=True)
class HrvFeatures:
    """Windowed HRV metrics"""
    window_start_ms: int
    window_end_ms: int
    n_intervals: int
    mean_ibi_ms: float
    mean_hr_bpm: float
    sdnn_ms: float
    rmssd_ms: float
    pnn50: float

    def to_dict(self) -> Dict:
        return {
            'window_start_ms': self.window_start_ms,
            'window_end_ms': self.window_end_ms,
            'n_intervals': self.n_intervals,
            'mean_hr_bpm': self.mean_hr_bpm,
            'sdnn_ms': self.sdnn_ms,
            'rmssd_ms': self.rmssd_ms,
            'pnn50': self.pnn50,
        }


class Provenance(Enum):
    MEASURED = 'MEASURED'
    POPULATION_DEFAULT = 'POPULATION_DEFAULT'


@dataclass(frozen=True)
class Baseline:
    """Personal resting reference"""
    resting_hr_bpm: float
    resting_rmssd_ms: float
    resting_sdnn_ms: float
    resting_bp: Optional[Tuple[float, float]]
    provenance: Provenance

    def __post_init__(self):
        for name in ('resting_hr_bpm', 'resting_rmssd_ms', 'resting_sdnn_ms'):
            value = getattr(self, name)
            if not value > 0:
                raise RangeError(name, value, (0.0, float('inf')))
        if self.resting_bp is not None and not (self.resting_bp[0] > 0 and self.resting_bp[1] > 0):
            raise RangeError('resting_bp', self.resting_bp, (0.0, float('inf')))

    def to_dict(self) -> Dict:
        return {
            'resting_hr': self.resting_hr_bpm,
            'resting_rmssd': self.resting_rmssd_ms,
            'resting_sdnn': self.resting_sdnn_ms,
            'resting_bp': list(self.resting_bp) if self.resting_bp else None,
            'provenance': self.provenance.value,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Baseline':
        try:
            bp = data.get('resting_bp')
            return cls(
                resting_hr_bpm=float(data['resting_hr']),
                resting_rmssd_ms=float(data['resting_rmssd']),
                resting_sdnn_ms=float(data['resting_sdnn']),
                resting_bp=(float(bp[0]), float(bp[1])) if bp else None,
                provenance=Provenance(data['provenance'])
            )
        except (KeyError, TypeError, ValueError, IndexError) as e:
            if isinstance(e, RangeError):
                raise
            raise ValueError(f"Malformed baseline: {e}") from e


@dataclass(frozen=True)
class StressIndex:
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 100.0:
            raise RangeError('stress_index', self.value, (0.0, 100.0))


class RhythmClass(Enum):
    SINUS = 'SINUS'
    IRREGULAR = 'IRREGULAR'


@dataclass(frozen=True)
class CircadianRisk:
    multiplier: float


def clean_ibi(series: IbiSeries) -> IbiSeries:
    """
    Reject PPG artifacts

    Drops IBIs outside 300-2000 ms and any IBI that differs from the previous
    retained IBI by more than 20%. The first in-band IBI is always kept.
    """
    lo, hi = CLEAN_BAND_MS
    kept_t = []
    kept = []

    for t, ibi in zip(series.t_ms, series.ibi_ms):
        if not lo <= ibi <= hi:
            continue
        if kept and abs(ibi - kept[-1]) > MAX_RELATIVE_JUMP * kept[-1]:
            continue
        kept_t.append(t)
        kept.append(ibi)

    dropped = len(series) - len(kept)
    if dropped:
        logger.debug(f"clean_ibi dropped {dropped}/{len(series)} intervals")

    return IbiSeries(t_ms=tuple(kept_t), ibi_ms=tuple(kept))


def hrv_features(series: IbiSeries) -> HrvFeatures:
    """
    Compute time-domain HRV metrics

    SDNN is the population standard deviation; pNN50 counts successive
    differences strictly greater than 50 ms.

    Raises:
        InsufficientData: fewer than 2 intervals
    """
    n = len(series)
    if n < 2:
        raise InsufficientData(f"HRV needs at least 2 intervals, got {n}")

    ibi = np.asarray(series.ibi_ms, dtype=float)
    diffs = np.diff(ibi)
    mean_ibi = float(ibi.mean())

    return HrvFeatures(
        window_start_ms=series.t_ms[0],
        window_end_ms=series.t_ms[-1],
        n_intervals=n,
        mean_ibi_ms=mean_ibi,
        mean_hr_bpm=60000.0 / mean_ibi,
        sdnn_ms=float(ibi.std()),
        rmssd_ms=float(np.sqrt(np.mean(diffs ** 2))),
        pnn50=float(np.count_nonzero(np.abs(diffs) > PNN50_THRESHOLD_MS) / diffs.size)
    )


def stress_index(features: HrvFeatures, baseline: Baseline) -> StressIndex:
    """
    Stress from lost variability: 0 at or above resting RMSSD, 100 at zero RMSSD
    """
    reference = baseline.resting_rmssd_ms
    loss = (reference - features.rmssd_ms) / reference
    return StressIndex(100.0 * min(max(loss, 0.0), 1.0))


def circadian_risk(local_time: time) -> CircadianRisk:
    """
    Time-of-day drowsiness weight

    02:00-06:00 -> 1.5, 14:00-16:00 -> 1.2, otherwise 1.0 (start inclusive,
    end exclusive).
    """
    minutes = local_time.hour * 60 + local_time.minute
    if 2 * 60 <= minutes < 6 * 60:
        return CircadianRisk(1.5)
    if 14 * 60 <= minutes < 16 * 60:
        return CircadianRisk(1.2)
    return CircadianRisk(1.0)


def personalize(
    profile: DriverProfile,
    resting: Optional[HrvFeatures] = None,
    resting_bp: Optional[BloodPressure] = None
) -> Baseline:
    """
    Build the driver's resting baseline

    Args:
        profile: Driver profile (used for population defaults)
        resting: HRV features measured at rest, if available
        resting_bp: Resting blood pressure, if available

    Returns:
        MEASURED baseline when resting features are given, else the
        population default for the profile
    """
    bp = (resting_bp.systolic, resting_bp.diastolic) if resting_bp else None

    if resting is not None:
        return Baseline(
            resting_hr_bpm=resting.mean_hr_bpm,
            resting_rmssd_ms=resting.rmssd_ms,
            resting_sdnn_ms=resting.sdnn_ms,
            resting_bp=bp,
            provenance=Provenance.MEASURED
        )

    return Baseline(
        resting_hr_bpm=POPULATION_RESTING_HR[profile.gender] + FITNESS_HR_OFFSET[profile.fitness],
        resting_rmssd_ms=POPULATION_RMSSD_MS,
        resting_sdnn_ms=POPULATION_SDNN_MS,
        resting_bp=bp,
        provenance=Provenance.POPULATION_DEFAULT
    )


def classify_rhythm(series: IbiSeries) -> RhythmClass:
    """
    Screen for irregular rhythm

    Only the 300-2000 ms band filter is applied: the jump filter would remove
    the irregularity being screened for. IRREGULAR when the coefficient of
    variation exceeds 0.12 and pNN50 exceeds 0.6.

    Raises:
        InsufficientData: fewer than 30 in-band intervals
    """
    lo, hi = CLEAN_BAND_MS
    ibi = np.asarray([v for v in series.ibi_ms if lo <= v <= hi], dtype=float)
    if ibi.size < RHYTHM_MIN_INTERVALS:
        raise InsufficientData(
            f"Rhythm screen needs {RHYTHM_MIN_INTERVALS} intervals, got {ibi.size}"
        )

    cv = float(ibi.std() / ibi.mean())
    pnn50 = float(np.count_nonzero(np.abs(np.diff(ibi)) > PNN50_THRESHOLD_MS) / (ibi.size - 1))

    if cv > RHYTHM_MAX_CV and pnn50 > RHYTHM_MAX_PNN50:
        return RhythmClass.IRREGULAR
    return RhythmClass.SINUS
