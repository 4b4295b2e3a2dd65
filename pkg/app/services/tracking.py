"""
Constant-velocity EKF tracker in the bistatic measurement space.

State is [x, y, vx, vy]; a measurement is [excess bistatic range,
baseline-relative AoD]. Association is greedy nearest neighbour on the
Mahalanobis distance, gated at a chi-square quantile with 2 dof.
"""

import logging
import numpy as np
from dataclasses import dataclass, field, replace
from scipy.stats import chi2
from typing import Dict, List, Optional, Sequence, Tuple

from app.models import Detection, Track, TrackState, TrackStatus
from app.schemas import SceneConfig, TrackerParams
from app.services.geometry import (
    as_point, bistatic_measurement, bistatic_measurement_jacobian, wrap_to_pi
)

logger = logging.getLogger(__name__)

MIN_EIGENVALUE = 1e-12
MAX_CONDITION = 1e12


def transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def process_noise(dt: float, q: float) -> np.ndarray:
    """White-acceleration discretization, per axis q * [[dt^3/3, dt^2/2], [dt^2/2, dt]]."""
    Q = np.zeros((4, 4))
    for pos, vel in ((0, 2), (1, 3)):
        Q[pos, pos] = dt ** 3 / 3.0
        Q[pos, vel] = Q[vel, pos] = dt ** 2 / 2.0
        Q[vel, vel] = dt
    return q * Q


def stabilize(P: np.ndarray) -> np.ndarray:
    """Symmetrize and lift the spectrum so the smallest eigenvalue stays positive."""
    P = 0.5 * (P + P.T)
    smallest = float(np.linalg.eigvalsh(P).min())
    if smallest < MIN_EIGENVALUE:
        P = P + (MIN_EIGENVALUE - smallest + MIN_EIGENVALUE) * np.eye(P.shape[0])
    assert np.linalg.eigvalsh(P).min() > 0
    return P


def gate_threshold(probability: float) -> float:
    """Chi-square quantile with 2 dof (9.21 at 0.99)."""
    return float(chi2.ppf(probability, df=2))


def measurement_noise(params: TrackerParams) -> np.ndarray:
    if params.sigma_range is None or params.sigma_theta is None:
        raise ValueError('tracker params must be resolved against a scene first')
    return np.diag([params.sigma_range ** 2, params.sigma_theta ** 2])


def predict(track: Track, dt: float, q: float) -> Track:
    if dt <= 0:
        raise ValueError(f'dt must be positive, got {dt}')
    F = transition(dt)
    return replace(track, x=F @ track.x, P=stabilize(F @ track.P @ F.T + process_noise(dt, q)))


def measurement_model(x: np.ndarray, tx: Sequence[float], rx: Sequence[float]) -> np.ndarray:
    """z = [|p-tx| + |p-rx| - |tx-rx|, angle of p-tx relative to the baseline]."""
    p = np.asarray(x, dtype=float)[:2]
    if np.allclose(p, as_point(tx)):
        raise ValueError('measurement undefined at the transmitter position')
    return bistatic_measurement(p, tx, rx)


def measurement_jacobian(x: np.ndarray, tx: Sequence[float], rx: Sequence[float]) -> np.ndarray:
    """2x4 Jacobian of measurement_model; velocity columns are zero."""
    H = np.zeros((2, 4))
    H[:, :2] = bistatic_measurement_jacobian(np.asarray(x, dtype=float)[:2], tx, rx)
    return H


def innovation(z: np.ndarray, z_pred: np.ndarray) -> np.ndarray:
    nu = np.asarray(z, dtype=float) - np.asarray(z_pred, dtype=float)
    nu[1] = wrap_to_pi(nu[1])
    return nu


def detection_measurement(detection: Detection) -> np.ndarray:
    return np.array([detection.excess_range, detection.aod])


def _clamp_velocity(x: np.ndarray, v_max: float) -> np.ndarray:
    speed = float(np.linalg.norm(x[2:]))
    limit = 2.0 * v_max
    if speed > limit:
        x = x.copy()
        x[2:] *= limit / speed
    return x


def update(track: Track, detection: Detection, params: TrackerParams,
           tx: Sequence[float], rx: Sequence[float]) -> Track:
    """
    EKF update with the analytic Jacobian and a Joseph-form covariance.

    A singular or ill-conditioned innovation covariance skips the update
    and counts a miss instead.
    """
    R = measurement_noise(params)
    H = measurement_jacobian(track.x, tx, rx)
    nu = innovation(detection_measurement(detection), measurement_model(track.x, tx, rx))
    S = H @ track.P @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > MAX_CONDITION:
        logger.warning(f"track {track.id}: innovation covariance is singular, update skipped")
        return replace(track, misses=track.misses + 1)
    try:
        K = np.linalg.solve(S, H @ track.P).T
    except np.linalg.LinAlgError:
        logger.warning(f"track {track.id}: innovation covariance is singular, update skipped")
        return replace(track, misses=track.misses + 1)

    x = _clamp_velocity(track.x + K @ nu, params.v_max)
    I_KH = np.eye(4) - K @ H
    P = stabilize(I_KH @ track.P @ I_KH.T + K @ R @ K.T)
    return replace(track, x=x, P=P, hits=track.hits + 1, misses=0, last_update_k=detection.k)


def mahalanobis(track: Track, detection: Detection, params: TrackerParams,
                tx: Sequence[float], rx: Sequence[float]) -> float:
    H = measurement_jacobian(track.x, tx, rx)
    S = H @ track.P @ H.T + measurement_noise(params)
    nu = innovation(detection_measurement(detection), measurement_model(track.x, tx, rx))
    try:
        return float(nu @ np.linalg.solve(S, nu))
    except np.linalg.LinAlgError:
        return float('inf')


@dataclass
class Assignment:
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    unassigned_tracks: List[int] = field(default_factory=list)
    unassigned_detections: List[int] = field(default_factory=list)


def associate(tracks: Sequence[Track], detections: Sequence[Detection], params: TrackerParams,
              tx: Sequence[float], rx: Sequence[float]) -> Assignment:
    """Greedy nearest neighbour: cheapest in-gate (track, detection) pair first."""
    gate = gate_threshold(params.gate_probability)
    candidates = []
    for i, track in enumerate(tracks):
        for j, detection in enumerate(detections):
            d2 = mahalanobis(track, detection, params, tx, rx)
            if d2 <= gate:
                candidates.append((d2, i, j))
    candidates.sort()

    assignment = Assignment()
    used_tracks, used_detections = set(), set()
    for _, i, j in candidates:
        if i in used_tracks or j in used_detections:
            continue
        assignment.pairs.append((i, j))
        used_tracks.add(i)
        used_detections.add(j)
    assignment.unassigned_tracks = [i for i in range(len(tracks)) if i not in used_tracks]
    assignment.unassigned_detections = [j for j in range(len(detections)) if j not in used_detections]
    return assignment


def spawn_track(detection: Detection, track_id: int, params: TrackerParams,
                tx: Sequence[float], rx: Sequence[float]) -> Track:
    """Tentative track at the detection's position, at rest, with the measurement noise mapped to x/y."""
    x = np.array([detection.position[0], detection.position[1], 0.0, 0.0])
    R = measurement_noise(params)
    P = np.zeros((4, 4))
    try:
        H_inv = np.linalg.inv(bistatic_measurement_jacobian(x[:2], tx, rx))
        P[:2, :2] = H_inv @ R @ H_inv.T
    except np.linalg.LinAlgError:
        P[:2, :2] = np.eye(2) * params.sigma_range ** 2
    P[2:, 2:] = np.eye(2) * params.v_max ** 2
    return Track(
        id=track_id, x=x, P=stabilize(P), last_update_k=detection.k, created_k=detection.k
    )


class Tracker:
    """Track lifecycle for one receiver, stepped frame by frame in k order."""

    def __init__(self, params: TrackerParams, scene: SceneConfig, rx_id: int):
        self.params = params.resolved(scene)
        self.rx_id = rx_id
        self.tx = scene.tx_position
        self.rx = scene.rx_positions[rx_id]
        self.frame_interval = scene.frame_interval
        self.decimation = max(1, int(round(1.0 / (self.params.update_rate * scene.frame_interval))))
        self.tracks: List[Track] = []
        self._next_id = 0
        self._last_epoch: Optional[int] = None

    @property
    def alive(self) -> List[Track]:
        return [t for t in self.tracks if t.alive]

    def _is_epoch(self, k: int) -> bool:
        return self._last_epoch is None or k - self._last_epoch >= self.decimation

    def _record(self, track: Track, hit: bool) -> Track:
        p = self.params
        recent = (track.recent + [hit])[-p.confirm_window:]
        track = replace(track, recent=recent)
        if track.status == TrackStatus.TENTATIVE:
            if sum(recent) >= p.confirm_hits:
                logger.info(f"rx {self.rx_id}: track {track.id} confirmed")
                return replace(track, status=TrackStatus.CONFIRMED, confirmed_k=track.last_update_k)
            if recent.count(False) > p.confirm_window - p.confirm_hits:
                return replace(track, status=TrackStatus.DEAD)
            return track
        if hit:
            return replace(track, status=TrackStatus.CONFIRMED)
        if track.misses > p.max_coast:
            logger.info(f"rx {self.rx_id}: track {track.id} lost after {track.misses} missed updates")
            return replace(track, status=TrackStatus.DEAD)
        return replace(track, status=TrackStatus.COASTING)

    def _epoch(self, k: int, detections: Sequence[Detection]) -> None:
        p = self.params
        indices = [i for i, t in enumerate(self.tracks) if t.alive]
        if self._last_epoch is not None:
            dt = (k - self._last_epoch) * self.frame_interval
            for i in indices:
                self.tracks[i] = predict(self.tracks[i], dt, p.process_noise)

        alive = [self.tracks[i] for i in indices]
        assignment = associate(alive, detections, p, self.tx, self.rx)
        for a, j in assignment.pairs:
            i = indices[a]
            updated = update(self.tracks[i], detections[j], p, self.tx, self.rx)
            self.tracks[i] = self._record(updated, hit=updated.misses == 0)
        for a in assignment.unassigned_tracks:
            i = indices[a]
            self.tracks[i] = self._record(replace(self.tracks[i], misses=self.tracks[i].misses + 1), hit=False)
        for j in assignment.unassigned_detections:
            self.tracks.append(spawn_track(detections[j], self._next_id, p, self.tx, self.rx))
            self._next_id += 1
        self._last_epoch = k

    def step(self, k: int, detections: Sequence[Detection]) -> List[TrackState]:
        """Run an update epoch when due, then report confirmed and coasting tracks at frame k."""
        if self._is_epoch(k):
            self._epoch(k, list(detections))
        states = []
        for track in self.tracks:
            if track.status not in (TrackStatus.CONFIRMED, TrackStatus.COASTING):
                continue
            x = track.x
            if k != self._last_epoch:
                x = transition((k - self._last_epoch) * self.frame_interval) @ x
            states.append(TrackState(
                k=k, rx_id=self.rx_id, track_id=track.id,
                x=float(x[0]), y=float(x[1]), vx=float(x[2]), vy=float(x[3]),
                status=track.status
            ))
        return states


def track_stream(detections_per_frame: Sequence[Sequence[Detection]], params: TrackerParams,
                 scene: SceneConfig, rx_id: int,
                 frame_indices: Optional[Sequence[int]] = None) -> List[TrackState]:
    """Per-frame confirmed/coasting track states for one receiver."""
    if frame_indices is None:
        frame_indices = range(len(detections_per_frame))
    tracker = Tracker(params, scene, rx_id)
    history: List[TrackState] = []
    for k, detections in zip(frame_indices, detections_per_frame):
        history.extend(tracker.step(int(k), detections))
    confirmed = sum(1 for t in tracker.tracks if t.confirmed_k is not None)
    logger.info(f"rx {rx_id}: {len(tracker.tracks)} tracks started, {confirmed} confirmed")
    return history


def group_by_frame(detections: Sequence[Detection], frame_indices: Sequence[int]) -> List[List[Detection]]:
    """Regroup a flat detection list (e.g. read back from CSV) into per-frame lists."""
    by_k: Dict[int, List[Detection]] = {}
    for detection in detections:
        by_k.setdefault(detection.k, []).append(detection)
    return [by_k.get(int(k), []) for k in frame_indices]
