"""
Command-line entry point: python -m app.cli <command> ...

Exit codes: 0 ok, 2 configuration error, 3 stage failure, 4 I/O or format error.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from app.config import Config, setup_logging
from app.errors import CodecError, ConfigError, IsacError
from app.models import SyncStatus
from app.schemas import LosPolicy, PipelineParams, StageToggles
from app.services import codecs
from app.services.detection import detect_stream, estimate_background
from app.services.microdoppler import peak_doppler_track, slow_time_spectrogram, target_slow_time
from app.services.pipeline import (GROUND_TRUTH_FILE, apply_overrides, apply_parameter_overrides,
                                   artifact_path, doppler_path, run_pipeline)
from app.services.simulator import synthesize_run
from app.services.sync import sync_pipeline
from app.services.tracking import group_by_frame, track_stream

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_IO = 4


def _scene(path: str, seed: Optional[int] = None):
    scene = codecs.load_scene(path)
    if seed is not None:
        scene = scene.model_copy(update={'rng_seed': seed})
    return scene


def _overrides(args) -> dict:
    overrides = {}
    for item in getattr(args, 'set', None) or []:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError(f'override {item!r} is not key=value')
        overrides[key] = _parse_value(value)
    return overrides


def _params(args) -> PipelineParams:
    overrides = _overrides(args)
    return apply_overrides(_scene(args.scene), PipelineParams(), overrides)[1] if overrides else PipelineParams()


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ('true', 'false'):
        return text.lower() == 'true'
    return text


def cmd_simulate(args) -> int:
    scene = _scene(args.scene, args.seed)
    os.makedirs(args.out, exist_ok=True)
    streams, ground_truth = synthesize_run(scene)
    for stream in streams:
        codecs.write_frames(artifact_path(args.out, stream.rx_id, 'frames'), stream)
    codecs.write_ground_truth(os.path.join(args.out, GROUND_TRUTH_FILE), ground_truth)
    logger.info(f"Simulated {scene.num_frames} frames for {len(streams)} receiver(s) into {args.out}")
    return EXIT_OK


def cmd_sync(args) -> int:
    overrides = _overrides(args)
    foreign = [key for key in overrides if not key.startswith('sync.')]
    if foreign:
        raise ConfigError(f'sync only takes sync.* overrides, got {foreign}')
    policy = apply_parameter_overrides(PipelineParams(), overrides).sync
    if args.on_missing is not None:
        policy = policy.model_copy(update={'on_missing': LosPolicy(args.on_missing)})
    stream = codecs.read_frames(args.input)
    synced, report = sync_pipeline(stream, policy)
    codecs.write_frames(args.out, synced)
    if args.report:
        codecs.write_sync_report(args.report, report)
    counts = {s.value: report.count(s) for s in SyncStatus}
    logger.info(f"Synchronized {len(synced)} frames: {counts}")
    return EXIT_OK


def cmd_detect(args) -> int:
    scene = _scene(args.scene)
    params = _params(args)
    synced = codecs.read_frames(args.input)
    background = estimate_background(synced, params.detection.background_window)
    per_frame = detect_stream(synced, scene, params.detection, background)
    detections = [d for frame in per_frame for d in frame]
    codecs.write_detections(args.out, detections)
    logger.info(f"{len(detections)} detection(s) in {len(synced)} frames")
    return EXIT_OK


def cmd_track(args) -> int:
    scene = _scene(args.scene)
    params = _params(args)
    detections = codecs.read_detections(args.detections)
    rx_id = args.rx if args.rx is not None else (detections[0].rx_id if detections else 0)
    if args.synced:
        frame_indices = codecs.read_frames(args.synced).frame_indices
    else:
        frame_indices = range(max((d.k for d in detections), default=-1) + 1)
    states = track_stream(group_by_frame(detections, frame_indices), params.tracker, scene, rx_id, frame_indices)
    codecs.write_tracks(args.out, states)
    logger.info(f"{len({s.track_id for s in states})} confirmed track(s)")
    return EXIT_OK


def cmd_mdoppler(args) -> int:
    scene = _scene(args.scene)
    params = _params(args)
    synced = codecs.read_frames(args.synced)
    states = codecs.read_tracks(args.tracks)
    rx_id = args.rx if args.rx is not None else synced.rx_id
    background = estimate_background(synced) if params.stft.remove_static else None
    slow_time = target_slow_time(synced, states, scene, rx_id, params.stft.half_width, background)
    spectrogram = slow_time_spectrogram(slow_time, scene.frame_interval, params.stft)
    if spectrogram is None:
        logger.warning("No track long enough for a spectrogram")
        return EXIT_OK
    codecs.write_spectrogram(args.out, spectrogram)
    peaks = peak_doppler_track(spectrogram, params.stft.floor_db)
    codecs.write_peak_doppler(args.doppler or doppler_path(os.path.dirname(args.out) or '.', rx_id),
                              spectrogram.times, peaks)
    if args.csv:
        codecs.write_spectrogram_csv(args.csv, spectrogram)
    return EXIT_OK


def _manifest(args):
    manifest = codecs.load_manifest(args.manifest)
    update = {}
    if getattr(args, 'out', None) and args.out != manifest.output_dir:
        logger.warning(f"--out {args.out} ignored: manifest output_dir is {manifest.output_dir}")
    if getattr(args, 'seed', None) is not None:
        if manifest.seed is not None and manifest.seed != args.seed:
            logger.warning(f"--seed {args.seed} ignored: manifest seed is {manifest.seed}")
        elif manifest.seed is None:
            update['seed'] = args.seed
    return manifest.model_copy(update=update) if update else manifest


def cmd_eval(args) -> int:
    manifest = _manifest(args)
    evaluate_only = StageToggles(simulate=False, sync=False, detect=False, track=False,
                                 mdoppler=False, evaluate=True)
    manifest = manifest.model_copy(update={'stages': evaluate_only})
    report = run_pipeline(manifest, base_dir=os.path.dirname(args.manifest) or '.')
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_run(args) -> int:
    manifest = _manifest(args)
    report = run_pipeline(manifest, base_dir=os.path.dirname(args.manifest) or '.',
                          max_workers=args.workers, write_timings=args.timings)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='isac', description='Multistatic asynchronous ISAC toolkit')
    parser.add_argument('--log-level', default=None, help='overrides ISAC_LOG_LEVEL')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', help='synthesize CIR streams and ground truth')
    p.add_argument('--scene', required=True)
    p.add_argument('--out', default=Config.OUTPUT_DIR)
    p.add_argument('--seed', type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('sync', help='remove timing and frequency offsets from a frame file')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--report')
    p.add_argument('--on-missing', choices=[m.value for m in LosPolicy],
                   help='defaults to sync.on_missing (reuse)')
    p.add_argument('--set', action='append', metavar='KEY=VALUE', help='sync.* overrides, e.g. sync.kappa=5')
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser('detect', help='background subtraction, peak picking and localization')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--scene', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--set', action='append', metavar='KEY=VALUE')
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser('track', help='EKF tracking of detections')
    p.add_argument('--detections', required=True)
    p.add_argument('--scene', required=True)
    p.add_argument('--synced', help='synced frame file, for the frame index list')
    p.add_argument('--rx', type=int)
    p.add_argument('--out', required=True)
    p.add_argument('--set', action='append', metavar='KEY=VALUE')
    p.set_defaults(func=cmd_track)

    p = sub.add_parser('mdoppler', help='micro-Doppler spectrogram at the tracked target')
    p.add_argument('--synced', required=True)
    p.add_argument('--tracks', required=True)
    p.add_argument('--scene', required=True)
    p.add_argument('--rx', type=int)
    p.add_argument('--out', required=True)
    p.add_argument('--doppler', help='peak Doppler CSV (default next to --out)')
    p.add_argument('--csv', help='also write the spectrogram as long-format CSV')
    p.add_argument('--set', action='append', metavar='KEY=VALUE')
    p.set_defaults(func=cmd_mdoppler)

    for name, func, text in (('eval', cmd_eval, 'evaluate existing artifacts of a manifest'),
                             ('run', cmd_run, 'run every enabled stage of a manifest')):
        p = sub.add_parser(name, help=text)
        p.add_argument('--manifest', required=True)
        p.add_argument('--out', help='ignored when it conflicts with the manifest')
        p.add_argument('--seed', type=int)
        if name == 'run':
            p.add_argument('--workers', type=int)
            p.add_argument('--timings', action='store_true', help='write timings.json')
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (CodecError, OSError) as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except IsacError as e:
        logger.error(f"Stage failure: {e}")
        return EXIT_STAGE
    except (ValueError, ArithmeticError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_STAGE


if __name__ == '__main__':
    sys.exit(main())
