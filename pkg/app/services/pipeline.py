"""
simulate -> sync -> detect -> track -> mdoppler -> evaluate, per receiver.

Every stage writes its artifact to disk, and a stage that is switched off
reads its input back from the previous stage's file, so stages can be re-run
one at a time. Receivers run concurrently; within a receiver the stages run
in order.
"""

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.config import Config
from app.errors import CodecError, ConfigError, IsacError, StageError
from app.models import FrameStream
from app.schemas import EvalReport, PipelineParams, ReceiverPaths, ReceiverReport, RunManifest, SceneConfig
from app.services import codecs
from app.services.detection import detect_stream, estimate_background
from app.services.evaluation import ReceiverArtifacts, evaluate
from app.services.geometry import baseline_angle, baseline_length
from app.services.microdoppler import peak_doppler_track, slow_time_spectrogram, target_slow_time
from app.services.simulator import beam_gains, synthesize_run
from app.services.sync import sync_pipeline
from app.services.tracking import group_by_frame, track_stream

logger = logging.getLogger(__name__)

STAGES = ('simulate', 'sync', 'detect', 'track', 'mdoppler', 'evaluate')
GROUND_TRUTH_FILE = 'ground_truth.csv'
REPORT_FILE = 'report.json'
TIMINGS_FILE = 'timings.json'

ARTIFACT_NAMES = {
    'frames': 'frames.cirs',
    'synced': 'synced.cirs',
    'sync_report': 'sync.csv',
    'detections': 'detections.csv',
    'tracks': 'tracks.csv',
    'spectrogram': 'spectrogram.bin',
}


def artifact_path(output_dir: str, rx_id: int, kind: str) -> str:
    return os.path.join(output_dir, f'rx{rx_id}_{ARTIFACT_NAMES[kind]}')


def doppler_path(output_dir: str, rx_id: int) -> str:
    return os.path.join(output_dir, f'rx{rx_id}_doppler.csv')


def _set_dotted(document: Any, parts: List[str], value: Any, key: str) -> None:
    node = document
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(node, dict) and part in node:
            if last:
                node[part] = value
            else:
                node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            if last:
                node[int(part)] = value
            else:
                node = node[int(part)]
        else:
            raise ConfigError(f'unknown override {key!r}')


def apply_parameter_overrides(params: PipelineParams, overrides: Dict[str, Any]) -> PipelineParams:
    """Dotted-key overrides of the stage parameters only; 'scene.*' keys are refused here."""
    if not overrides:
        return params
    params_doc = params.model_dump(mode='json')
    for key, value in overrides.items():
        section, _, rest = key.partition('.')
        if not rest or section not in params_doc:
            raise ConfigError(f'unknown override {key!r}')
        _set_dotted(params_doc[section], rest.split('.'), value, key)
    try:
        return PipelineParams.model_validate(params_doc)
    except ValueError as e:
        raise ConfigError(f'invalid parameter override: {e}') from e


def apply_overrides(scene: SceneConfig, params: PipelineParams,
                    overrides: Dict[str, Any]) -> Tuple[SceneConfig, PipelineParams]:
    """
    Apply dotted-key overrides such as 'scene.noise_floor' or
    'detection.prominence_ratio'. A key that does not name an existing
    parameter is a ConfigError.
    """
    if not overrides:
        return scene, params
    scene_doc = scene.model_dump(mode='json')
    if 'scene.num_beams' in overrides and 'scene.beam_centers' not in overrides:
        scene_doc.pop('beam_centers')
        if 'scene.beam_width_3db' not in overrides:
            scene_doc.pop('beam_width_3db')

    stage_overrides = {}
    for key, value in overrides.items():
        section, _, rest = key.partition('.')
        if section == 'scene' and rest:
            _set_dotted(scene_doc, rest.split('.'), value, key)
        else:
            stage_overrides[key] = value

    params = apply_parameter_overrides(params, stage_overrides)
    logger.info(f"Applied {len(overrides)} override(s): {sorted(overrides)}")
    return codecs.scene_from_dict(scene_doc), params


@contextmanager
def _stage(name: str, rx_id: Optional[int], timings: Dict[str, float]):
    start = time.perf_counter()
    try:
        yield
    except (StageError, ConfigError, CodecError, OSError):
        raise
    except Exception as e:
        logger.error(f"Stage {name} failed{'' if rx_id is None else f' for rx {rx_id}'}: {e}")
        raise StageError(name, str(e), rx_id) from e
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


class PipelineRun:
    """One manifest execution: resolved paths, scene, parameters and per-stage timings."""

    def __init__(self, manifest: RunManifest, base_dir: Optional[str] = None,
                 max_workers: Optional[int] = None):
        self.manifest = manifest
        self.base_dir = base_dir or '.'
        self.max_workers = max_workers or Config.MAX_WORKERS
        self.stages = manifest.stages
        self.output_dir = self._resolve(manifest.output_dir)
        self.scene: Optional[SceneConfig] = None
        self.params = PipelineParams()
        self.timings: Dict[str, float] = {}

    def _resolve(self, path: Optional[str]) -> Optional[str]:
        if path is None or os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)

    def _paths(self, rx_id: int) -> Dict[str, str]:
        explicit = next((r for r in self.manifest.receivers if r.rx_id == rx_id), ReceiverPaths(rx_id=rx_id))
        paths = {}
        for kind in ARTIFACT_NAMES:
            value = getattr(explicit, kind)
            paths[kind] = self._resolve(value) if value else artifact_path(self.output_dir, rx_id, kind)
        paths['doppler'] = doppler_path(self.output_dir, rx_id)
        return paths

    def _receiver_ids(self) -> List[int]:
        if not self.manifest.receivers:
            return list(range(self.scene.num_receivers))
        ids = sorted({r.rx_id for r in self.manifest.receivers})
        for rx_id in ids:
            if rx_id >= self.scene.num_receivers:
                raise ConfigError(f'manifest names receiver {rx_id}, the scene has {self.scene.num_receivers}')
        return ids

    def load(self) -> None:
        scene = codecs.load_scene(self._resolve(self.manifest.scene))
        if self.manifest.seed is not None:
            scene = scene.model_copy(update={'rng_seed': self.manifest.seed})
        self.scene, self.params = apply_overrides(scene, PipelineParams(), self.manifest.overrides)

    def _ground_truth_path(self) -> str:
        return self._resolve(self.manifest.ground_truth) or os.path.join(self.output_dir, GROUND_TRUTH_FILE)

    def simulate(self) -> Tuple[Dict[int, FrameStream], Optional[pd.DataFrame]]:
        if not self.stages.simulate:
            path = codecs.optional_path(self._ground_truth_path())
            return {}, codecs.read_ground_truth(path) if path else None
        with _stage('simulate', None, self.timings):
            streams, ground_truth = synthesize_run(self.scene)
        for stream in streams:
            codecs.write_frames(self._paths(stream.rx_id)['frames'], stream)
        codecs.write_ground_truth(self._ground_truth_path(), ground_truth)
        return {s.rx_id: s for s in streams}, ground_truth

    def process_receiver(self, rx_id: int, stream: Optional[FrameStream]) -> Tuple[ReceiverArtifacts, Dict[str, float]]:
        timings: Dict[str, float] = {}
        stages, params, scene = self.stages, self.params, self.scene
        paths = self._paths(rx_id)
        art = ReceiverArtifacts(rx_id=rx_id)
        downstream = stages.detect or stages.track or stages.mdoppler

        synced = None
        if stages.sync:
            if stream is None:
                stream = codecs.read_frames(paths['frames'])
            with _stage('sync', rx_id, timings):
                synced, art.sync_report = sync_pipeline(stream, params.sync)
            codecs.write_frames(paths['synced'], synced)
            codecs.write_sync_report(paths['sync_report'], art.sync_report)
        else:
            if downstream or (stages.evaluate and os.path.exists(paths['synced'])):
                synced = codecs.read_frames(paths['synced'])
            if stages.evaluate and os.path.exists(paths['sync_report']):
                art.sync_report = codecs.read_sync_report(paths['sync_report'], rx_id)
        if synced is not None:
            art.num_frames = len(synced)
            art.frame_indices = synced.frame_indices

        background = None
        if stages.detect or stages.mdoppler:
            with _stage('detect' if stages.detect else 'mdoppler', rx_id, timings):
                background = estimate_background(synced, params.detection.background_window)

        per_frame = None
        if stages.detect:
            with _stage('detect', rx_id, timings):
                per_frame = detect_stream(synced, scene, params.detection, background)
            art.detections = [d for frame in per_frame for d in frame]
            codecs.write_detections(paths['detections'], art.detections)
        elif stages.track or (stages.evaluate and os.path.exists(paths['detections'])):
            art.detections = codecs.read_detections(paths['detections'])
            per_frame = group_by_frame(art.detections, art.frame_indices)

        if stages.track:
            with _stage('track', rx_id, timings):
                art.track_states = track_stream(per_frame, params.tracker, scene, rx_id, art.frame_indices)
            codecs.write_tracks(paths['tracks'], art.track_states)
        elif stages.mdoppler or (stages.evaluate and os.path.exists(paths['tracks'])):
            art.track_states = codecs.read_tracks(paths['tracks'])

        if stages.mdoppler:
            stft = params.stft
            with _stage('mdoppler', rx_id, timings):
                slow_time = target_slow_time(
                    synced, art.track_states, scene, rx_id, stft.half_width,
                    background if stft.remove_static else None
                )
                spectrogram = slow_time_spectrogram(slow_time, scene.frame_interval, stft)
                if spectrogram is not None:
                    art.spectrogram = spectrogram
                    art.peak_doppler = peak_doppler_track(spectrogram, stft.floor_db)
            if art.spectrogram is None:
                logger.warning(f"rx {rx_id}: no track long enough for a spectrogram")
            else:
                codecs.write_spectrogram(paths['spectrogram'], art.spectrogram)
                codecs.write_peak_doppler(paths['doppler'], art.spectrogram.times, art.peak_doppler)
        elif stages.evaluate and os.path.exists(paths['spectrogram']):
            art.spectrogram = codecs.read_spectrogram(paths['spectrogram'])
            _, art.peak_doppler = codecs.read_peak_doppler(paths['doppler'])

        return art, timings

    def run(self, write_timings: bool = False) -> EvalReport:
        if not self.stages.any_enabled():
            logger.info("All stages are disabled; nothing to run")
            return EvalReport(seed=self.manifest.seed)

        self.load()
        os.makedirs(self.output_dir, exist_ok=True)
        receivers = self._receiver_ids()
        logger.info(f"Run started: {len(receivers)} receiver(s), output in {self.output_dir}")

        streams, ground_truth = self.simulate()
        results: List[Tuple[ReceiverArtifacts, Dict[str, float]]] = []
        if any((self.stages.sync, self.stages.detect, self.stages.track,
                self.stages.mdoppler, self.stages.evaluate)):
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                futures = [pool.submit(self.process_receiver, r, streams.get(r)) for r in receivers]
                results = [f.result() for f in futures]

        for _, timings in results:
            for name, seconds in timings.items():
                self.timings[name] = self.timings.get(name, 0.0) + seconds
        artifacts = [art for art, _ in results]

        if self.stages.evaluate:
            with _stage('evaluate', None, self.timings):
                report = evaluate(artifacts, ground_truth, self.scene, seed=self.scene.rng_seed,
                                  guard_taps=self.params.detection.guard_taps)
            with open(os.path.join(self.output_dir, REPORT_FILE), 'w') as f:
                f.write(report.model_dump_json(indent=2))
        else:
            report = EvalReport(
                seed=self.scene.rng_seed,
                receivers=[ReceiverReport(rx_id=a.rx_id, frames=a.num_frames) for a in artifacts]
            )
        report.stage_seconds = dict(self.timings)

        for name in STAGES:
            if name in self.timings:
                logger.info(f"Stage {name}: {self.timings[name]:.2f} s")
        if write_timings:
            with open(os.path.join(self.output_dir, TIMINGS_FILE), 'w') as f:
                json.dump(self.timings, f, indent=2, sort_keys=True)
        return report


def run_pipeline(manifest: RunManifest, base_dir: Optional[str] = None,
                 max_workers: Optional[int] = None, write_timings: bool = False) -> EvalReport:
    """Execute the enabled stages of a manifest and return the evaluation report."""
    return PipelineRun(manifest, base_dir, max_workers).run(write_timings)


class PipelineService:
    """Entry point used by the web routes."""

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max_workers or Config.MAX_WORKERS

    def summarize_scene(self, scene: SceneConfig) -> Dict:
        """Frame count, tap quantum and the LOS geometry seen by every receiver."""
        receivers = []
        for rx_id, rx in enumerate(scene.rx_positions):
            los_aod = baseline_angle(scene.tx_position, rx)
            receivers.append({
                'rx_id': rx_id,
                'position': list(rx),
                'baseline_m': baseline_length(scene.tx_position, rx),
                'los_aod_rad': los_aod,
                'los_peak_gain': float(np.max(beam_gains(scene, los_aod))) * scene.los_amplitude
            })
        return {
            'num_frames': scene.num_frames,
            'tap_size_m': scene.tap_size,
            'wavelength_m': scene.wavelength,
            'num_beams': scene.num_beams,
            'num_taps': scene.num_taps,
            'receivers': receivers
        }

    def run(self, manifest: RunManifest, base_dir: Optional[str] = None) -> EvalReport:
        try:
            return run_pipeline(manifest, base_dir, self.max_workers)
        except IsacError as e:
            logger.error(f"Run failed: {e}")
            raise
