"""
Background removal, dynamic-target detection and bistatic localization.

Frames must be TO-aligned and FO-corrected: the background is a mean over
time, which is only meaningful once every frame shares the same tap grid.
"""

import logging
import numpy as np
from collections import deque
from scipy.signal import find_peaks
from typing import Deque, List, Optional, Sequence, Tuple

from app.errors import LocalizationError
from app.models import Background, CirFrame, Detection, FrameStream
from app.schemas import DetectionParams, SceneConfig
from app.services.geometry import as_point, baseline_angle, baseline_length

logger = logging.getLogger(__name__)

AOD_BEAMS = 3
CHUNK_FRAMES = 1024


def estimate_background(stream: FrameStream, window: Optional[int] = None) -> Background:
    """
    Time-averaged magnitude h_bar_b(l) over the clip, or over its last
    `window` frames. The complex mean and a noise-power estimate (median
    over cells of the temporal variance) ride along for later stages.
    """
    frames = stream.gains if window is None else stream.gains[-window:]
    count = frames.shape[0]
    if count == 0:
        raise ValueError('cannot estimate a background from an empty stream')

    magnitude_sum = np.zeros(frames.shape[1:])
    complex_sum = np.zeros(frames.shape[1:], dtype=complex)
    power_sum = np.zeros(frames.shape[1:])
    for start in range(0, count, CHUNK_FRAMES):
        chunk = frames[start:start + CHUNK_FRAMES]
        magnitude = np.abs(chunk)
        magnitude_sum += magnitude.sum(axis=0)
        complex_sum += chunk.sum(axis=0)
        power_sum += (magnitude ** 2).sum(axis=0)

    complex_mean = complex_sum / count
    variance = np.maximum(power_sum / count - np.abs(complex_mean) ** 2, 0.0)
    background = Background(
        mean_magnitude=magnitude_sum / count,
        frame_count=count,
        complex_mean=complex_mean,
        noise_power=float(np.median(variance))
    )
    logger.info(f"rx {stream.rx_id}: background from {count} frames, noise power {background.noise_power:.3g}")
    return background


class RunningBackground:
    """Trailing mean over the previous `window` frames, fed one frame at a time."""

    def __init__(self, window: int, noise_power: float = 0.0):
        if window < 1:
            raise ValueError('window must be at least one frame')
        self.window = window
        self.noise_power = noise_power
        self._magnitudes: Deque[np.ndarray] = deque()
        self._sum: Optional[np.ndarray] = None

    def update(self, frame: CirFrame) -> Background:
        """Background for `frame` (excluding it), then push the frame into the window."""
        magnitude = np.abs(frame.gains)
        if self._sum is None:
            current = Background(mean_magnitude=magnitude.copy(), frame_count=1, noise_power=self.noise_power)
            self._sum = np.zeros_like(magnitude)
        else:
            current = Background(
                mean_magnitude=self._sum / len(self._magnitudes),
                frame_count=len(self._magnitudes),
                noise_power=self.noise_power
            )
        self._magnitudes.append(magnitude)
        self._sum += magnitude
        if len(self._magnitudes) > self.window:
            self._sum -= self._magnitudes.popleft()
        return current


def foreground(frame: CirFrame, bg: Background) -> np.ndarray:
    """max(|h_b(k, l)| - h_bar_b(l), 0), cellwise."""
    if frame.gains.shape != bg.mean_magnitude.shape:
        raise ValueError(
            f'frame shape {frame.gains.shape} does not match background {bg.mean_magnitude.shape}'
        )
    return np.maximum(np.abs(frame.gains) - bg.mean_magnitude, 0.0)


def detection_statistic(fg: np.ndarray) -> np.ndarray:
    """s(l) = sum over beams of fg_b(l)^2."""
    return np.sum(np.asarray(fg, dtype=float) ** 2, axis=0)


def detect_targets(s: np.ndarray, params: Optional[DetectionParams] = None,
                   min_height: float = 0.0) -> List[int]:
    """Prominent peaks of s outside the LOS guard band, strongest first."""
    params = params or DetectionParams()
    s = np.asarray(s, dtype=float).copy()
    s[:params.guard_taps + 1] = 0.0
    peak_value = float(s.max()) if s.size else 0.0
    if peak_value <= 0.0 or peak_value < min_height:
        return []
    peaks, _ = find_peaks(
        s,
        height=min_height if min_height > 0 else None,
        prominence=params.prominence_ratio * peak_value,
        distance=params.min_separation
    )
    peaks = peaks[peaks > params.guard_taps]
    order = np.argsort(-s[peaks], kind='stable')
    return [int(p) for p in peaks[order][:params.max_targets]]


def aod_from_beams(fg: np.ndarray, tap: int, beam_centers: Sequence[float]) -> float:
    """Power-weighted circular mean of the centers of the (up to) three strongest beams at `tap`."""
    column = np.asarray(fg, dtype=float)[:, tap]
    if not np.any(column > 0):
        raise ValueError(f'tap {tap} has no foreground energy on any beam')
    centers = np.asarray(beam_centers, dtype=float)
    top = np.argsort(-column, kind='stable')[:AOD_BEAMS]
    top = top[column[top] > 0]
    if top.size == 1:
        return float(centers[top[0]])
    weights = column[top] ** 2
    return float(np.angle(np.sum(weights * np.exp(1j * centers[top]))))


def localize_bistatic(excess_range: float, theta: float, tx: Sequence[float], rx: Sequence[float],
                      eps: float = 1e-9) -> np.ndarray:
    """
    Point on the bistatic ellipse with sum range |tx-rx| + excess_range at
    baseline-relative angle theta from the TX:

        d_tx = (R^2 - L^2) / (2 (R - L cos(theta)))
    """
    if excess_range <= 0:
        raise LocalizationError('zero excess range: the target lies on the LOS segment')
    tx, rx = as_point(tx), as_point(rx)
    length = baseline_length(tx, rx)
    r_sum = length + excess_range
    denominator = r_sum - length * np.cos(theta)
    if denominator <= eps:
        raise LocalizationError(f'degenerate geometry (R - L cos(theta) = {denominator:.3g})')
    d_tx = (r_sum ** 2 - length ** 2) / (2.0 * denominator)
    world = baseline_angle(tx, rx) + theta
    return tx + d_tx * np.array([np.cos(world), np.sin(world)])


def _frame_detections(frame: CirFrame, bg: Background, scene: SceneConfig, rx_id: int,
                      params: DetectionParams) -> Tuple[List[Detection], int]:
    fg = foreground(frame, bg)
    s = detection_statistic(fg)
    taps = detect_targets(s, params, min_height=params.height_factor * bg.noise_power)
    tx, rx = scene.tx_position, scene.rx_positions[rx_id]
    detections = []
    dropped = 0
    for tap in taps:
        world = aod_from_beams(fg, tap, scene.beam_centers)
        theta = scene.relative_angle(rx_id, world)
        excess = tap * scene.tap_size
        try:
            position = localize_bistatic(excess, theta, tx, rx)
        except LocalizationError as e:
            logger.debug(f"rx {rx_id} frame {frame.k} tap {tap}: {e}")
            dropped += 1
            continue
        detections.append(Detection(
            k=frame.k, rx_id=rx_id, tap=tap,
            beam=int(np.argmax(fg[:, tap])),
            power=float(s[tap]),
            excess_range=excess,
            aod=theta,
            position=(float(position[0]), float(position[1]))
        ))
    return detections, dropped


def frame_detections(frame: CirFrame, bg: Background, scene: SceneConfig, rx_id: int,
                     params: Optional[DetectionParams] = None) -> List[Detection]:
    """Foreground, statistic, peaks, then AoD and position per peak."""
    detections, _ = _frame_detections(frame, bg, scene, rx_id, params or DetectionParams())
    return detections


def detect_stream(stream: FrameStream, scene: SceneConfig, params: Optional[DetectionParams] = None,
                  background: Optional[Background] = None) -> List[List[Detection]]:
    """Detections for every frame of a synced stream, one list per frame."""
    params = params or DetectionParams()
    batch = background or estimate_background(stream)
    running = RunningBackground(params.background_window, batch.noise_power) if params.background_window else None
    per_frame = []
    dropped = 0
    for frame in stream:
        bg = running.update(frame) if running else batch
        detections, lost = _frame_detections(frame, bg, scene, stream.rx_id, params)
        per_frame.append(detections)
        dropped += lost
    total = sum(len(d) for d in per_frame)
    logger.info(f"rx {stream.rx_id}: {total} detections over {len(stream)} frames")
    if dropped:
        logger.warning(f"rx {stream.rx_id}: {dropped} detections dropped (degenerate localization)")
    return per_frame
