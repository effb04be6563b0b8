"""
DrowsyWatch command implementations

Each cmd_* function takes the parsed arguments and the loaded Config and
returns a process exit code. Errors propagate to main(), which maps them to
exit codes.
"""
import argparse
import json
import os
import secrets
from dataclasses import asdict, dataclass, field
from datetime import time
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from common.config import Config
from common.crypto import KdfParams
from common.errors import InsufficientData, InvalidScenario, ParseError, RangeError, UsageError
from common.logger import get_logger
from drowsywatch.core.driving_detector import DetectorConfig
from drowsywatch.core.drowsiness_engine import DrowsinessEngine, EngineConfig, EngineMode
from drowsywatch.core.hrv_analytics import Baseline, IbiSeries, clean_ibi, hrv_features, personalize
from drowsywatch.core.link_protocol import ConsentGrant, Hello, PhoneListener, handshake
from drowsywatch.core.pipeline import MonitoringPipeline, PipelineConfig, SessionResult
from drowsywatch.core.secure_store import SecureStore
from drowsywatch.core.sensor_model import (
    BloodPressure, DriverProfile, Fitness, Gender, HeartBeat, SensorKind, SensorSample,
    load_replay, validate_sample, write_labels, write_replay
)
from drowsywatch.core.simulator import Scenario, ScenarioKind, synthesize_session

logger = get_logger('DrowsyWatch')

PASSPHRASE_ENV = 'DDS_PASSPHRASE'
BASELINE_PREF = 'baseline'
PROFILE_PREF = 'profile'
MIN_RESTING_IBI_S = 300.0

# Kinds the pipeline consumes; motion stays on the watch
LINK_SCOPES = (
    SensorKind.HEART_RATE, SensorKind.HEART_BEAT, SensorKind.STEP_COUNT,
    SensorKind.LOCATION, SensorKind.BLOOD_PRESSURE, SensorKind.SPO2,
)


@dataclass
class RunReport:
    session_id: str
    mode: str
    counts: Dict[str, int] = field(default_factory=dict)
    paths: Dict[str, str] = field(default_factory=dict)
    rejected: Dict[str, int] = field(default_factory=dict)


# Argument types

def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must not be negative, got {value}")
    return value


def clock_time(text: str) -> time:
    try:
        hours, minutes = text.split(':')
        return time(int(hours), int(minutes))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HH:MM, got {text!r}") from None


def _add_profile_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--age', type=int, default=40, help='driver age in years (16-120)')
    parser.add_argument('--gender', choices=[g.value for g in Gender], default=Gender.UNSPECIFIED.value)
    parser.add_argument('--fitness', choices=[f.value for f in Fitness], default=Fitness.ACTIVE.value)


def _add_mode_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--mode', choices=['unsupervised', 'calibrated'], default='unsupervised')
    parser.add_argument('--start', type=clock_time, help='local clock time at t=0 (HH:MM)')
    parser.add_argument('--store', help='encrypted store directory holding a measured baseline')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='drowsywatch',
        description='Smartwatch drowsiness detection: simulate, replay, calibrate and manage the secure store'
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging on the console')
    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', help='synthesize a session and run detection')
    simulate.add_argument('--scenario', choices=[k.value for k in ScenarioKind], required=True)
    simulate.add_argument('--onset', type=non_negative_int, help='drowsiness onset, seconds (drowsy-onset)')
    simulate.add_argument('--seed', type=int, default=0)
    simulate.add_argument('--duration', type=positive_int, default=3600, help='session length, seconds')
    simulate.add_argument('--via-link', action='store_true', help='route samples through the watch link')
    simulate.add_argument('--out', required=True, help='output directory')
    _add_profile_flags(simulate)
    _add_mode_flags(simulate)
    simulate.set_defaults(handler=cmd_simulate)

    replay = sub.add_parser('replay', help='run detection over a replay file')
    replay.add_argument('--in', dest='input', required=True, help='replay file (JSON Lines)')
    replay.add_argument('--baseline', help='plain JSON baseline file (calibrated mode)')
    replay.add_argument('--out', required=True, help='output directory')
    _add_profile_flags(replay)
    _add_mode_flags(replay)
    replay.set_defaults(handler=cmd_replay)

    calibrate = sub.add_parser('calibrate', help='measure a resting baseline into the store')
    calibrate.add_argument('--in', dest='input', required=True, help='resting replay file')
    calibrate.add_argument('--store', required=True)
    _add_profile_flags(calibrate)
    calibrate.set_defaults(handler=cmd_calibrate)

    export = sub.add_parser('export', help='print decrypted preferences as JSON')
    export.add_argument('--store', required=True)
    export.set_defaults(handler=cmd_export)

    keygen = sub.add_parser('keygen', help='initialize a new store; prints salt and wrapped keyset')
    keygen.add_argument('--store', required=True)
    keygen.set_defaults(handler=cmd_keygen)

    return parser


# Helpers

def _passphrase() -> str:
    value = os.environ.get(PASSPHRASE_ENV)
    if not value:
        raise UsageError(f"{PASSPHRASE_ENV} is not set")
    return value


def _kdf_params(config: Config) -> KdfParams:
    return KdfParams(iterations=int(config.get('store.kdf_iterations', 200000)))


def _profile(args) -> DriverProfile:
    try:
        return DriverProfile(args.age, Gender(args.gender), Fitness(args.fitness))
    except RangeError as e:
        raise UsageError(str(e)) from None


def _start_local(args, config: Config) -> time:
    if args.start is not None:
        return args.start
    try:
        return clock_time(str(config.get('simulation.start_local', '02:00')))
    except argparse.ArgumentTypeError as e:
        raise UsageError(f"simulation.start_local: {e}") from None


def _load_store_baseline(store_path: str) -> Baseline:
    store = SecureStore.open(store_path, _passphrase())
    return Baseline.from_dict(store.get_json(BASELINE_PREF))


def _build_engine(args, config: Config, profile: DriverProfile, baseline: Optional[Baseline]):
    engine_config = EngineConfig.from_mapping(config.section('engine'))
    if args.mode == 'calibrated':
        if baseline is None:
            raise UsageError("calibrated mode needs --store or --baseline")
        engine = DrowsinessEngine(EngineMode.CALIBRATED, engine_config, baseline)
        return engine, baseline
    return DrowsinessEngine(EngineMode.UNSUPERVISED, engine_config), baseline or personalize(profile)


def _build_pipeline(args, config: Config, profile: DriverProfile, baseline: Optional[Baseline]) -> MonitoringPipeline:
    engine, stress_baseline = _build_engine(args, config, profile, baseline)
    return MonitoringPipeline(
        engine=engine,
        stress_baseline=stress_baseline,
        start_local=_start_local(args, config),
        detector_config=DetectorConfig.from_mapping(config.section('detector')),
        config=PipelineConfig.from_mapping(config.section('pipeline'))
    )


def _run_direct(pipeline: MonitoringPipeline, samples: List[SensorSample], desc: str) -> SessionResult:
    with tqdm(total=len(samples), desc=desc, unit='sample', disable=None, leave=False) as bar:
        return pipeline.run(samples, progress_callback=bar.update)


def _run_via_link(pipeline: MonitoringPipeline, samples: List[SensorSample], desc: str) -> Dict[str, int]:
    """Stream samples watch -> phone over an encrypted loopback link"""
    listener = PhoneListener(on_sample=pipeline.feed, key=secrets.token_bytes(32))
    link = handshake(listener, Hello(device_id='drowsywatch-sim'), ConsentGrant.of(LINK_SCOPES))
    alerts = pipeline.result.alerts
    pushed = 0
    sent = 0

    def push_alerts():
        nonlocal pushed
        while pushed < len(alerts):
            listener.send_alert(alerts[pushed].to_json())
            pushed += 1
            link.poll()

    with tqdm(total=len(samples), desc=desc, unit='sample', disable=None, leave=False) as bar:
        for i, sample in enumerate(samples, start=1):
            if link.permits(sample.kind):
                link.send_sample(sample)
                sent += 1
                push_alerts()
            if i % 5000 == 0:
                bar.update(5000)
        bar.update(len(samples) % 5000)

    pipeline.finish()
    push_alerts()
    link.close()
    return {'link_samples': sent, 'vibrations': len(link.vibrations)}


def _write_jsonl(path: str, records) -> int:
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(json.dumps(record, separators=(',', ':')))
            f.write('\n')
            count += 1
    return count


def _write_outputs(out_dir: str, result: SessionResult, report: RunReport):
    os.makedirs(out_dir, exist_ok=True)
    outputs = {
        'transitions': ('transitions.jsonl', [t.to_json() for t in result.transitions]),
        'alerts': ('alerts.jsonl', [a.to_json() for a in result.alerts]),
        'feature_windows': ('features.jsonl', result.windows),
        'engine_events': ('engine.jsonl', [c.to_json() for c in result.state_changes]),
    }
    for key, (name, records) in outputs.items():
        report.counts[key] = _write_jsonl(os.path.join(out_dir, name), records)
        report.paths[key] = name
    report.counts['samples'] = result.samples
    report.counts['skipped_windows'] = result.skipped_windows
    report.rejected = dict(sorted(result.rejected.items()))

    with open(os.path.join(out_dir, 'report.json'), 'w', encoding='utf-8', newline='\n') as f:
        json.dump(asdict(report), f, indent=2, sort_keys=True)
        f.write('\n')


def _print_summary(report: RunReport, out_dir: str):
    counts = report.counts
    print(
        f"{report.session_id}: {counts.get('samples', 0)} samples, "
        f"{counts.get('transitions', 0)} transitions, {counts.get('feature_windows', 0)} windows, "
        f"{counts.get('alerts', 0)} alerts -> {out_dir}"
    )


# Commands

def cmd_simulate(args, config: Config) -> int:
    """Synthesize a session, run the pipeline and write every log"""
    profile = _profile(args)
    kind = ScenarioKind(args.scenario)
    scenario = Scenario(
        kind=kind,
        seed=args.seed,
        duration_s=args.duration,
        onset_s=args.onset if kind is ScenarioKind.DROWSY_ONSET else None,
        start_local=_start_local(args, config)
    )
    try:
        scenario.validate()
    except InvalidScenario as e:
        raise UsageError(str(e)) from None

    baseline = _load_store_baseline(args.store) if args.store else None
    pipeline = _build_pipeline(args, config, profile, baseline)

    session = synthesize_session(scenario, profile)
    os.makedirs(args.out, exist_ok=True)

    report = RunReport(session_id=f"{kind.value}-{args.seed}", mode=pipeline.engine.mode.value)
    report.counts['session_lines'] = write_replay(os.path.join(args.out, 'session.jsonl'), session.samples)
    report.counts['labels'] = write_labels(os.path.join(args.out, 'labels.jsonl'), session.labels or [])
    report.paths['session'] = 'session.jsonl'
    report.paths['labels'] = 'labels.jsonl'

    if args.via_link:
        report.counts.update(_run_via_link(pipeline, session.samples, 'simulate'))
        result = pipeline.result
    else:
        result = _run_direct(pipeline, session.samples, 'simulate')

    _write_outputs(args.out, result, report)
    _print_summary(report, args.out)
    return 0


def cmd_replay(args, config: Config) -> int:
    """Run the pipeline over a replay file"""
    profile = _profile(args)
    if args.baseline and args.store:
        raise UsageError("use either --baseline or --store, not both")

    baseline = None
    if args.baseline:
        with open(args.baseline, 'r', encoding='utf-8') as f:
            try:
                baseline = Baseline.from_dict(json.load(f))
            except ValueError as e:
                raise ParseError(1, f"unusable baseline file {args.baseline}: {e}") from None
    elif args.store:
        baseline = _load_store_baseline(args.store)

    pipeline = _build_pipeline(args, config, profile, baseline)
    session = load_replay(args.input)

    name = os.path.splitext(os.path.basename(args.input))[0]
    report = RunReport(session_id=f"replay-{name}", mode=pipeline.engine.mode.value)
    result = _run_direct(pipeline, session.samples, 'replay')

    _write_outputs(args.out, result, report)
    _print_summary(report, args.out)
    return 0


def cmd_calibrate(args, config: Config) -> int:
    """Measure a resting baseline and store it encrypted"""
    profile = _profile(args)
    passphrase = _passphrase()
    session = load_replay(args.input)

    beats = []
    bp_readings = []
    for sample in session.samples:
        try:
            validate_sample(sample)
        except RangeError as e:
            logger.warning(f"Skipping resting sample at {sample.t_ms} ms: {e}")
            continue
        if isinstance(sample.payload, HeartBeat):
            beats.append((sample.t_ms, sample.payload.ibi_ms))
        elif isinstance(sample.payload, BloodPressure):
            bp_readings.append(sample.payload)

    cleaned = clean_ibi(IbiSeries.from_pairs(beats))
    covered_s = cleaned.total_ms() / 1000.0
    if covered_s < MIN_RESTING_IBI_S:
        raise InsufficientData(
            f"Resting recording has {covered_s:.0f} s of valid IBI, need {MIN_RESTING_IBI_S:.0f} s"
        )

    resting_bp = None
    if bp_readings:
        readings = np.asarray([(r.systolic, r.diastolic) for r in bp_readings], dtype=float)
        resting_bp = BloodPressure(float(np.median(readings[:, 0])), float(np.median(readings[:, 1])))
    baseline = personalize(profile, resting=hrv_features(cleaned), resting_bp=resting_bp)

    store = SecureStore.open_or_create(args.store, passphrase, _kdf_params(config))
    store.put_json(BASELINE_PREF, baseline.to_dict())
    store.put_json(PROFILE_PREF, {
        'age_years': profile.age_years,
        'gender': profile.gender.value,
        'fitness': profile.fitness.value,
    })

    logger.info(f"Stored MEASURED baseline from {covered_s:.0f} s of resting IBI")
    print(
        f"baseline: resting_hr={baseline.resting_hr_bpm:.1f} bpm "
        f"resting_rmssd={baseline.resting_rmssd_ms:.1f} ms -> {args.store}"
    )
    return 0


def cmd_export(args, config: Config) -> int:
    """Print decrypted preferences to standard output"""
    store = SecureStore.open(args.store, _passphrase())
    exported = {}
    for name, value in store.items():
        try:
            exported[name] = json.loads(value.decode('utf-8'))
        except ValueError:
            exported[name] = {'hex': value.hex()}
    print(json.dumps(exported, indent=2, sort_keys=True))
    return 0


def cmd_keygen(args, config: Config) -> int:
    """Initialize a new store and print its public descriptor"""
    passphrase = _passphrase()
    SecureStore.create(args.store, passphrase, _kdf_params(config))
    descriptor = SecureStore.read_descriptor(args.store)
    print(json.dumps(descriptor, indent=2, sort_keys=True))
    return 0
