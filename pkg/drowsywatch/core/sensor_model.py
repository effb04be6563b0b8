"""
Sensor Model - sensor taxonomy, range validation and session replay files

Replay format: UTF-8 JSON Lines, one sample per line:
    {"t_ms": int, "src": int, "kind": "accel"|"gyro"|"hr"|"beat"|"steps"|"loc"|"bp"|"spo2", ...payload}
"""
import heapq
import json
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import ClassVar, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from common.errors import OrderError, ParseError, RangeError
from common.logger import get_logger

logger = get_logger('SensorModel')

# Physiological plausibility bands
SYSTOLIC_RANGE = (70.0, 180.0)
DIASTOLIC_RANGE = (40.0, 120.0)
SPO2_RANGE = (0.0, 100.0)
SPO2_HEALTHY = (95.0, 100.0)
HEART_RATE_RANGE = (25.0, 250.0)
IBI_MAX_MS = 5000.0


class SensorKind(Enum):
    """Sensor variable classes exposed by the watch"""
    ACCEL = 'accel'
    GYRO = 'gyro'
    HEART_RATE = 'hr'
    HEART_BEAT = 'beat'
    STEP_COUNT = 'steps'
    LOCATION = 'loc'
    BLOOD_PRESSURE = 'bp'
    SPO2 = 'spo2'

    @property
    def code(self) -> int:
        """One-byte wire code, 1..8"""
        return _KIND_ORDER.index(self) + 1

    @classmethod
    def from_code(cls, code: int) -> 'SensorKind':
        if not 1 <= code <= len(_KIND_ORDER):
            raise ValueError(f"Unknown sensor kind code: {code}")
        return _KIND_ORDER[code - 1]


_KIND_ORDER = list(SensorKind)


@dataclass(frozen=True, slots=True)
class Accel:
    x: float
    y: float
    z: float
    KIND: ClassVar[SensorKind] = SensorKind.ACCEL


@dataclass(frozen=True, slots=True)
class Gyro:
    wx: float
    wy: float
    wz: float
    KIND: ClassVar[SensorKind] = SensorKind.GYRO


@dataclass(frozen=True, slots=True)
class HeartRate:
    bpm: float
    KIND: ClassVar[SensorKind] = SensorKind.HEART_RATE


@dataclass(frozen=True, slots=True)
class HeartBeat:
    """Inter-beat interval in milliseconds"""
    ibi_ms: float
    KIND: ClassVar[SensorKind] = SensorKind.HEART_BEAT


@dataclass(frozen=True, slots=True)
class StepCount:
    cumulative: int
    KIND: ClassVar[SensorKind] = SensorKind.STEP_COUNT


@dataclass(frozen=True, slots=True)
class Location:
    lat: float
    lon: float
    speed: float
    KIND: ClassVar[SensorKind] = SensorKind.LOCATION


@dataclass(frozen=True, slots=True)
class BloodPressure:
    systolic: float
    diastolic: float
    KIND: ClassVar[SensorKind] = SensorKind.BLOOD_PRESSURE


@dataclass(frozen=True, slots=True)
class SpO2:
    pct: float
    KIND: ClassVar[SensorKind] = SensorKind.SPO2


Payload = Union[Accel, Gyro, HeartRate, HeartBeat, StepCount, Location, BloodPressure, SpO2]

PAYLOAD_TYPES: Dict[SensorKind, type] = {
    cls.KIND: cls
    for cls in (Accel, Gyro, HeartRate, HeartBeat, StepCount, Location, BloodPressure, SpO2)
}
_PAYLOAD_FIELDS: Dict[SensorKind, Tuple[str, ...]] = {
    kind: tuple(f.name for f in fields(cls)) for kind, cls in PAYLOAD_TYPES.items()
}
_KINDS_BY_CODE = {kind.value: kind for kind in SensorKind}


@dataclass(frozen=True, slots=True)
class SensorSample:
    """One timestamped reading; t_ms counts milliseconds since session start"""
    t_ms: int
    source_id: int
    payload: Payload

    @property
    def kind(self) -> SensorKind:
        return self.payload.KIND


@dataclass(frozen=True)
class ValidatedSample:
    """A sample that passed range validation, with its validity flags"""
    sample: SensorSample
    in_range: bool = True
    healthy: Optional[bool] = None


class Label(Enum):
    ALERT = 'ALERT'
    DROWSY = 'DROWSY'


@dataclass
class SessionStream:
    """Time-ordered samples; labels are only present for synthetic sessions"""
    samples: List[SensorSample] = field(default_factory=list)
    labels: Optional[List[Tuple[int, Label]]] = None

    def __len__(self) -> int:
        return len(self.samples)

    def of_kind(self, kind: SensorKind) -> List[SensorSample]:
        return [s for s in self.samples if s.kind is kind]


class Gender(Enum):
    FEMALE = 'female'
    MALE = 'male'
    UNSPECIFIED = 'unspecified'


class Fitness(Enum):
    SEDENTARY = 'sedentary'
    ACTIVE = 'active'
    ATHLETE = 'athlete'


@dataclass(frozen=True)
class DriverProfile:
    """Driver characteristics used for population defaults"""
    age_years: int
    gender: Gender
    fitness: Fitness

    def __post_init__(self):
        if not 16 <= self.age_years <= 120:
            raise RangeError('age_years', self.age_years, (16, 120))


def _check(name: str, value: float, lo: float, hi: float):
    # NaN fails both comparisons
    if not lo <= value <= hi:
        raise RangeError(name, value, (lo, hi))


def validate_sample(sample: SensorSample) -> ValidatedSample:
    """
    Check a reading against its physiological or physical range

    Out-of-range values are rejected, never clamped. The returned wrapper
    carries the untouched sample.

    Raises:
        RangeError: value outside its allowed band
    """
    if sample.t_ms < 0:
        raise RangeError('t_ms', sample.t_ms, (0, math.inf))

    payload = sample.payload
    healthy = None

    if isinstance(payload, BloodPressure):
        _check('systolic', payload.systolic, *SYSTOLIC_RANGE)
        _check('diastolic', payload.diastolic, *DIASTOLIC_RANGE)
    elif isinstance(payload, SpO2):
        _check('pct', payload.pct, *SPO2_RANGE)
        healthy = SPO2_HEALTHY[0] <= payload.pct <= SPO2_HEALTHY[1]
    elif isinstance(payload, HeartRate):
        _check('bpm', payload.bpm, *HEART_RATE_RANGE)
    elif isinstance(payload, HeartBeat):
        if not 0.0 < payload.ibi_ms <= IBI_MAX_MS:
            raise RangeError('ibi_ms', payload.ibi_ms, (0.0, IBI_MAX_MS))
    elif isinstance(payload, Location):
        _check('lat', payload.lat, -90.0, 90.0)
        _check('lon', payload.lon, -180.0, 180.0)
        _check('speed', payload.speed, 0.0, math.inf)
    elif isinstance(payload, StepCount):
        _check('cumulative', payload.cumulative, 0, math.inf)

    return ValidatedSample(sample=sample, in_range=True, healthy=healthy)


# Replay serialization

def sample_to_record(sample: SensorSample) -> Dict:
    """Replay-file dictionary for one sample (field order is stable)"""
    record = {'t_ms': sample.t_ms, 'src': sample.source_id, 'kind': sample.kind.value}
    for name in _PAYLOAD_FIELDS[sample.kind]:
        record[name] = getattr(sample.payload, name)
    return record


def to_json_line(sample: SensorSample) -> str:
    return json.dumps(sample_to_record(sample), separators=(',', ':'))


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def sample_from_record(record, line_no: int = 0) -> SensorSample:
    """
    Build a sample from a replay-file dictionary

    Raises:
        ParseError: missing, unknown or mistyped fields
    """
    if not isinstance(record, dict):
        raise ParseError(line_no, 'line is not a JSON object')

    for key in ('t_ms', 'src', 'kind'):
        if key not in record:
            raise ParseError(line_no, f"missing field '{key}'")

    t_ms, src, code = record['t_ms'], record['src'], record['kind']
    if not isinstance(t_ms, int) or isinstance(t_ms, bool) or t_ms < 0:
        raise ParseError(line_no, f"t_ms must be a non-negative integer, got {t_ms!r}")
    if not isinstance(src, int) or isinstance(src, bool) or src < 0:
        raise ParseError(line_no, f"src must be a non-negative integer, got {src!r}")
    kind = _KINDS_BY_CODE.get(code) if isinstance(code, str) else None
    if kind is None:
        raise ParseError(line_no, f"unknown kind {code!r}")

    names = _PAYLOAD_FIELDS[kind]
    extra = set(record) - {'t_ms', 'src', 'kind'} - set(names)
    if extra:
        raise ParseError(line_no, f"unexpected field(s) {sorted(extra)} for kind '{code}'")

    values = []
    for name in names:
        if name not in record:
            raise ParseError(line_no, f"missing field '{name}' for kind '{code}'")
        value = record[name]
        if not _is_number(value):
            raise ParseError(line_no, f"field '{name}' must be a number, got {value!r}")
        if kind is SensorKind.STEP_COUNT:
            if not isinstance(value, int):
                raise ParseError(line_no, f"field '{name}' must be an integer, got {value!r}")
        else:
            value = float(value)
        values.append(value)

    return SensorSample(t_ms=t_ms, source_id=src, payload=PAYLOAD_TYPES[kind](*values))


def parse_json_line(raw: Union[bytes, str], line_no: int = 0):
    """
    Decode one JSON Lines record

    Raises:
        ParseError: invalid UTF-8, invalid JSON or nesting too deep to parse
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode('utf-8')
        except UnicodeDecodeError as e:
            raise ParseError(line_no, f"invalid UTF-8 at byte {e.start}") from None
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise ParseError(line_no, f"invalid JSON: {e.msg}") from None
    except RecursionError:
        raise ParseError(line_no, 'JSON nested too deeply') from None


def load_replay(path: str) -> SessionStream:
    """
    Load a replay file

    Args:
        path: JSON Lines replay file

    Returns:
        SessionStream with all samples in file order

    Raises:
        ParseError: malformed line (line numbers are 1-based)
        OrderError: timestamp regression
    """
    samples: List[SensorSample] = []
    last_t = None
    last_steps: Dict[int, int] = {}

    with open(path, 'rb') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            sample = sample_from_record(parse_json_line(line, line_no), line_no)

            if last_t is not None and sample.t_ms < last_t:
                raise OrderError(line_no)
            last_t = sample.t_ms

            if isinstance(sample.payload, StepCount):
                previous = last_steps.get(sample.source_id)
                if previous is not None and sample.payload.cumulative < previous:
                    raise ParseError(line_no, f"step count regressed for source {sample.source_id}")
                last_steps[sample.source_id] = sample.payload.cumulative

            samples.append(sample)

    logger.info(f"Loaded {len(samples)} samples from {path}")
    return SessionStream(samples=samples)


def write_replay(path: str, samples: Iterable[SensorSample]) -> int:
    """Write samples as a replay file; returns the line count"""
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for sample in samples:
            f.write(to_json_line(sample))
            f.write('\n')
            count += 1
    return count


def write_labels(path: str, labels: Iterable[Tuple[int, Label]]) -> int:
    """Write the ground-truth label sidecar"""
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for t_ms, label in labels:
            f.write(json.dumps({'t_ms': t_ms, 'label': label.value}, separators=(',', ':')))
            f.write('\n')
            count += 1
    return count


def load_labels(path: str) -> List[Tuple[int, Label]]:
    labels = []
    with open(path, 'rb') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            record = parse_json_line(line, line_no)
            try:
                labels.append((int(record['t_ms']), Label(record['label'])))
            except (ValueError, KeyError, TypeError) as e:
                raise ParseError(line_no, f"bad label line: {e}") from None
    return labels


def merge_streams(streams: Sequence[SessionStream]) -> SessionStream:
    """
    Merge individually ordered streams into one ordered stream

    Ties on t_ms keep the order of the input streams (stable).
    """
    merged = list(heapq.merge(*(s.samples for s in streams), key=lambda s: s.t_ms))

    labelled = [s.labels for s in streams if s.labels is not None]
    labels = None
    if labelled:
        labels = list(heapq.merge(*labelled, key=lambda pair: pair[0]))

    return SessionStream(samples=merged, labels=labels)
