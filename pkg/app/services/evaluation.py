"""Scores a run against the simulator's ground-truth log."""

import logging
import numpy as np
import pandas as pd
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

from app.models import Detection, Spectrogram, SyncReport, SyncStatus, TrackState
from app.schemas import EvalReport, ReceiverReport, SceneConfig, XiRatio
from app.services.geometry import wrap_to_pi
from app.services.microdoppler import bistatic_factor, mean_abs_peak_doppler, summarize_peaks
from app.services.simulator import ground_truth_doppler

logger = logging.getLogger(__name__)

TAP_TOLERANCE = 1


@dataclass
class ReceiverArtifacts:
    """Everything one receiver's pipeline produced, as handed to evaluate()."""
    rx_id: int
    num_frames: int = 0
    sync_report: Optional[SyncReport] = None
    detections: Optional[List[Detection]] = None
    track_states: Optional[List[TrackState]] = None
    spectrogram: Optional[Spectrogram] = None
    peak_doppler: Optional[np.ndarray] = None
    frame_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def _receiver_rows(ground_truth: pd.DataFrame, rx_id: int) -> pd.DataFrame:
    return ground_truth[ground_truth['rx_id'] == rx_id]


def _torso_rows(rows: pd.DataFrame) -> pd.DataFrame:
    return rows[(rows['kind'] == 'body') & rows['entity'].astype(str).str.endswith('/torso')]


def _taps_by_frame(rows: pd.DataFrame) -> Dict[int, np.ndarray]:
    deposited = rows[rows['deposited'].astype(bool)]
    return {int(k): g['tap'].to_numpy(dtype=int) for k, g in deposited.groupby('k')}


def _positions(rows: pd.DataFrame) -> Dict[str, Dict[int, np.ndarray]]:
    out: Dict[str, Dict[int, np.ndarray]] = {}
    for entity, g in rows.groupby('entity'):
        out[str(entity)] = dict(zip(g['k'].astype(int), g[['x', 'y']].to_numpy(dtype=float)))
    return out


def los_detection_rate(report: SyncReport, ground_truth: pd.DataFrame) -> Optional[float]:
    """Share of frames whose detected pre-shift LOS tap equals the realized TO shift."""
    if not report.records:
        return None
    clock = _receiver_rows(ground_truth, report.rx_id)
    clock = clock[clock['entity'] == 'clock']
    shifts = dict(zip(clock['k'].astype(int), clock['to_shift'].astype(int)))
    hits = sum(1 for r in report.records if r.status == SyncStatus.OK and shifts.get(r.k) == r.los_tap)
    return hits / len(report.records)


def fo_residual_std(report: SyncReport, ground_truth: pd.DataFrame) -> Optional[float]:
    """Spread of (estimated - realized) LOS phase, about its circular mean."""
    clock = _receiver_rows(ground_truth, report.rx_id)
    clock = clock[clock['entity'] == 'clock']
    fo_phase = dict(zip(clock['k'].astype(int), clock['fo_phase'].astype(float)))
    residual = np.array([
        wrap_to_pi(r.phase - fo_phase[r.k]) for r in report.records
        if r.status == SyncStatus.OK and r.k in fo_phase
    ])
    if residual.size == 0:
        return None
    center = float(np.angle(np.mean(np.exp(1j * residual))))
    return float(np.std(wrap_to_pi(residual - center)))


def detection_metrics(detections: Sequence[Detection], ground_truth: pd.DataFrame, rx_id: int,
                      frame_indices: Sequence[int], guard_taps: int = 2
                      ) -> Tuple[Optional[float], float, Optional[float]]:
    """
    (detection rate, false alarms per frame, median localization error).

    A detection is a hit when its tap is within one tap of a body part's
    true excess tap; the rate counts frames whose torso lies beyond the
    guard band and got at least one detection near the torso tap.
    """
    rows = _receiver_rows(ground_truth, rx_id)
    body = rows[rows['kind'] == 'body']
    torso = _torso_rows(rows)
    body_taps = _taps_by_frame(body)
    torso_taps = _taps_by_frame(torso)
    torso_positions = _positions(torso)

    by_frame: Dict[int, List[Detection]] = {}
    for d in detections:
        by_frame.setdefault(d.k, []).append(d)

    eligible = hits = false_alarms = 0
    errors = []
    for k in frame_indices:
        k = int(k)
        frame_dets = by_frame.get(k, [])
        taps = torso_taps.get(k, np.array([], dtype=int))
        if np.any(taps > guard_taps):
            eligible += 1
            if any(np.any(np.abs(taps - d.tap) <= TAP_TOLERANCE) for d in frame_dets):
                hits += 1
        parts = body_taps.get(k, np.array([], dtype=int))
        for d in frame_dets:
            if not np.any(np.abs(parts - d.tap) <= TAP_TOLERANCE):
                false_alarms += 1
                continue
            if np.any(np.abs(taps - d.tap) <= TAP_TOLERANCE):
                truth = [p[k] for p in torso_positions.values() if k in p]
                errors.append(min(float(np.linalg.norm(np.asarray(d.position) - t)) for t in truth))

    num_frames = max(len(frame_indices), 1)
    rate = hits / eligible if eligible else None
    median_error = float(np.median(errors)) if errors else None
    return rate, false_alarms / num_frames, median_error


def track_metrics(states: Sequence[TrackState], ground_truth: pd.DataFrame, rx_id: int,
                  frame_indices: Sequence[int]) -> Tuple[int, Optional[float], Optional[float], Dict[int, str]]:
    """
    (confirmed tracks, RMSE, coverage, track -> entity). Each track is tied
    to the torso nearest to it when it was confirmed; coverage is the share
    of frames from that moment on in which the torso has a track.
    """
    by_track: Dict[int, List[TrackState]] = {}
    for s in states:
        by_track.setdefault(s.track_id, []).append(s)
    if not by_track:
        return 0, None, None, {}

    positions = _positions(_torso_rows(_receiver_rows(ground_truth, rx_id)))
    if not positions:
        return len(by_track), None, None, {}

    matched: Dict[int, str] = {}
    squared = []
    covered: Dict[str, set] = {}
    start: Dict[str, int] = {}
    for track_id, track in sorted(by_track.items()):
        first = min(track, key=lambda s: s.k)
        candidates = [(float(np.linalg.norm(p[first.k] - (first.x, first.y))), entity)
                      for entity, p in positions.items() if first.k in p]
        if not candidates:
            continue
        entity = min(candidates)[1]
        matched[track_id] = entity
        start[entity] = min(start.get(entity, first.k), first.k)
        for s in track:
            truth = positions[entity].get(s.k)
            if truth is None:
                continue
            squared.append(float(np.sum((truth - (s.x, s.y)) ** 2)))
            covered.setdefault(entity, set()).add(s.k)

    rmse = float(np.sqrt(np.mean(squared))) if squared else None
    coverages = []
    ks = np.asarray(frame_indices, dtype=int)
    for entity, k0 in start.items():
        window = ks[ks >= k0]
        if window.size:
            coverages.append(len(covered.get(entity, set()) & set(window.tolist())) / window.size)
    coverage = float(np.mean(coverages)) if coverages else None
    return len(by_track), rmse, coverage, matched


def microdoppler_mae(spec: Spectrogram, peaks: np.ndarray, ground_truth: pd.DataFrame, rx_id: int,
                     entity: str) -> Optional[float]:
    present = ~np.isnan(peaks)
    if not np.any(present):
        return None
    truth = ground_truth_doppler(ground_truth, rx_id, entity, spec.times[present])
    return float(np.mean(np.abs(peaks[present] - truth)))


def _torso_position_at(ground_truth: pd.DataFrame, entity: str, time: float) -> Optional[np.ndarray]:
    rows = ground_truth[ground_truth['entity'] == entity]
    if rows.empty:
        return None
    nearest = rows.iloc[int(np.argmin(np.abs(rows['time'].to_numpy(dtype=float) - time)))]
    return np.array([float(nearest['x']), float(nearest['y'])])


def xi_ratios(reports: Sequence[ReceiverReport], spectrograms: Dict[int, Spectrogram],
              ground_truth: pd.DataFrame, scene: SceneConfig, entity: str) -> List[XiRatio]:
    """Observed ratio of mean |peak Doppler| per receiver pair vs cos(beta_a/2)/cos(beta_b/2) at mid-run."""
    out = []
    usable = [r for r in reports if r.mean_abs_peak_doppler_hz and r.rx_id in spectrograms]
    for a, b in combinations(usable, 2):
        times = np.concatenate([spectrograms[a.rx_id].times, spectrograms[b.rx_id].times])
        p = _torso_position_at(ground_truth, entity, float(np.median(times)))
        if p is None:
            continue
        geo_a = bistatic_factor(scene.tx_position, scene.rx_positions[a.rx_id], p)
        geo_b = bistatic_factor(scene.tx_position, scene.rx_positions[b.rx_id], p)
        if geo_b.xi == 0:
            continue
        observed = a.mean_abs_peak_doppler_hz / b.mean_abs_peak_doppler_hz
        predicted = geo_a.xi / geo_b.xi
        out.append(XiRatio(
            rx_a=a.rx_id, rx_b=b.rx_id, beta_a=geo_a.beta, beta_b=geo_b.beta,
            observed=observed, predicted=predicted,
            relative_error=abs(observed - predicted) / predicted
        ))
    return out


def evaluate(artifacts: Sequence[ReceiverArtifacts], ground_truth: Optional[pd.DataFrame],
             scene: SceneConfig, seed: Optional[int] = None, guard_taps: int = 2) -> EvalReport:
    """Every report field that the available artifacts allow; sensing-only without ground truth."""
    if ground_truth is None:
        logger.warning("No ground truth: report carries sensing-only fields")
    reports = []
    spectrograms: Dict[int, Spectrogram] = {}
    tracked_entity: Optional[str] = None

    for art in sorted(artifacts, key=lambda a: a.rx_id):
        report = ReceiverReport(rx_id=art.rx_id, frames=art.num_frames)
        matched: Dict[int, str] = {}

        if art.sync_report is not None and ground_truth is not None:
            report.los_detection_rate = los_detection_rate(art.sync_report, ground_truth)
            report.fo_residual_std = fo_residual_std(art.sync_report, ground_truth)

        if art.detections is not None and ground_truth is not None:
            rate, false_alarms, error = detection_metrics(
                art.detections, ground_truth, art.rx_id, art.frame_indices, guard_taps
            )
            report.detection_rate = rate
            report.false_alarms_per_frame = false_alarms
            report.localization_median_error = error

        if art.track_states is not None:
            report.confirmed_tracks = len({s.track_id for s in art.track_states})
            if ground_truth is not None:
                _, rmse, coverage, matched = track_metrics(
                    art.track_states, ground_truth, art.rx_id, art.frame_indices
                )
                report.track_rmse = rmse
                report.track_coverage = coverage

        if art.spectrogram is not None and art.peak_doppler is not None:
            spectrograms[art.rx_id] = art.spectrogram
            report.peak_doppler_times = [float(t) for t in art.spectrogram.times]
            report.peak_doppler_hz = summarize_peaks(art.peak_doppler)
            report.mean_abs_peak_doppler_hz = mean_abs_peak_doppler(art.peak_doppler)
            if ground_truth is not None:
                entity = next(iter(matched.values()), None) or _first_torso(ground_truth)
                if entity is not None:
                    tracked_entity = tracked_entity or entity
                    report.md_peak_mae_hz = microdoppler_mae(
                        art.spectrogram, art.peak_doppler, ground_truth, art.rx_id, entity
                    )
        reports.append(report)

    xi = []
    if ground_truth is not None and tracked_entity is not None:
        xi = xi_ratios(reports, spectrograms, ground_truth, scene, tracked_entity)
    return EvalReport(seed=seed, receivers=reports, xi_ratios=xi)


def _first_torso(ground_truth: pd.DataFrame) -> Optional[str]:
    torso = _torso_rows(ground_truth)
    return str(torso['entity'].iloc[0]) if not torso.empty else None
