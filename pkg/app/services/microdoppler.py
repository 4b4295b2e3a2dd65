"""Slow-time extraction at the tracked target, STFT spectrograms and bistatic Doppler scaling."""

import logging
import numpy as np
from scipy.signal import get_window
from typing import Dict, List, Optional, Sequence

from app.models import Background, BistaticGeometrySample, FrameStream, SlowTime, Spectrogram, TrackState
from app.schemas import SceneConfig, StftParams
from app.services.geometry import as_point, bistatic_angle, bistatic_measurement

logger = logging.getLogger(__name__)

DB_TINY = 1e-300


def _longest_track(track_states: Sequence[TrackState]) -> Optional[int]:
    counts: Dict[int, int] = {}
    for state in track_states:
        counts[state.track_id] = counts.get(state.track_id, 0) + 1
    if not counts:
        return None
    return min(counts, key=lambda tid: (-counts[tid], tid))


def target_slow_time(stream: FrameStream, track_states: Sequence[TrackState], scene: SceneConfig,
                     rx_id: int, half_width: int = 2, background: Optional[Background] = None,
                     track_id: Optional[int] = None) -> SlowTime:
    """
    One complex sample per frame: the coherent sum over taps within
    +-half_width of the track's tap, on the beam holding the most energy
    there. With a background, its complex mean is removed first so static
    paths near the target tap do not leak into the signal.
    """
    if track_id is None:
        track_id = _longest_track(track_states)
    by_k = {s.k: s for s in track_states if s.track_id == track_id}
    num_taps = stream.gains.shape[2]
    static = background.complex_mean if background is not None and background.complex_mean is not None else None

    ks, samples, gaps = [], [], []
    for i, k in enumerate(stream.frame_indices):
        state = by_k.get(int(k))
        if state is None:
            gaps.append(int(k))
            continue
        excess = bistatic_measurement((state.x, state.y), scene.tx_position, scene.rx_positions[rx_id])[0]
        tap = int(np.clip(np.rint(excess / scene.tap_size), 0, num_taps - 1))
        lo, hi = max(tap - half_width, 0), min(tap + half_width + 1, num_taps)
        window = stream.gains[i, :, lo:hi]
        if static is not None:
            window = window - static[:, lo:hi]
        beam = int(np.argmax(np.sum(np.abs(window) ** 2, axis=1)))
        ks.append(int(k))
        samples.append(complex(np.sum(window[beam])))

    if gaps and ks:
        logger.debug(f"rx {rx_id}: track {track_id} absent in {len(gaps)} frames")
    return SlowTime(
        rx_id=rx_id,
        frame_indices=np.asarray(ks, dtype=int),
        samples=np.asarray(samples, dtype=complex),
        gaps=gaps
    )


def doppler_axis(window_length: int, frame_interval: float) -> np.ndarray:
    """Bins (n - N/2 + 1) / (N T) for n = 0..N-1, spanning (-1/(2T), +1/(2T)]."""
    n = np.arange(-(window_length // 2) + 1, window_length // 2 + 1)
    return n / (window_length * frame_interval)


def stft_spectrogram(x: np.ndarray, frame_interval: float, params: Optional[StftParams] = None,
                     rx_id: int = 0, start_time: float = 0.0) -> Spectrogram:
    """
    Sliding-window FFT magnitude, zero Doppler centered. The FFT is
    orthonormal, so each row's squared magnitudes sum to the energy of the
    windowed segment.
    """
    params = params or StftParams()
    x = np.asarray(x, dtype=complex)
    n = params.window_length
    if x.size < n:
        raise ValueError(f'slow-time length {x.size} is shorter than the window ({n})')

    window = get_window(params.window, n)
    segments = np.lib.stride_tricks.sliding_window_view(x, n)[::params.hop]
    spectrum = np.fft.fft(segments * window, axis=1, norm='ortho')
    order = np.arange(-(n // 2) + 1, n // 2 + 1) % n
    starts = np.arange(segments.shape[0]) * params.hop

    return Spectrogram(
        magnitude=np.abs(spectrum[:, order]),
        times=start_time + (starts + n / 2.0) * frame_interval,
        doppler=doppler_axis(n, frame_interval),
        window_length=n,
        hop=params.hop,
        window=params.window,
        frame_interval=frame_interval,
        rx_id=rx_id
    )


def bistatic_factor(tx: Sequence[float], rx: Sequence[float], p: Sequence[float]) -> BistaticGeometrySample:
    """beta = angle at p between tx and rx; xi = cos(beta / 2)."""
    tx, rx, p = as_point(tx), as_point(rx), as_point(p)
    if np.allclose(p, tx) or np.allclose(p, rx):
        raise ValueError('target coincides with the transmitter or a receiver')
    beta = bistatic_angle(tx, rx, p)
    return BistaticGeometrySample(
        tx=(float(tx[0]), float(tx[1])),
        rx=(float(rx[0]), float(rx[1])),
        target=(float(p[0]), float(p[1])),
        beta=beta,
        xi=float(np.cos(beta / 2.0))
    )


def peak_doppler_track(spec: Spectrogram, floor_db: float = 10.0) -> np.ndarray:
    """
    Per time bin, the Doppler of the strongest bin refined by a parabola
    through the dB magnitudes of it and its neighbours. Bins whose peak is
    less than floor_db above the median bin power come out as NaN.
    """
    power = spec.magnitude ** 2
    num_bins = power.shape[1]
    spacing = 1.0 / (spec.window_length * spec.frame_interval)
    track = np.full(power.shape[0], np.nan)
    for t, column in enumerate(power):
        peak = int(np.argmax(column))
        median = float(np.median(column))
        if column[peak] <= 0 or column[peak] < median * 10 ** (floor_db / 10.0):
            continue
        offset = 0.0
        if 0 < peak < num_bins - 1:
            a, b, c = 10.0 * np.log10(np.maximum(column[peak - 1:peak + 2], DB_TINY))
            denominator = a - 2.0 * b + c
            if denominator < 0:
                offset = 0.5 * (a - c) / denominator
        track[t] = spec.doppler[peak] + offset * spacing
    return track


def mean_abs_peak_doppler(track: np.ndarray) -> Optional[float]:
    present = np.asarray(track, dtype=float)
    present = present[~np.isnan(present)]
    return float(np.mean(np.abs(present))) if present.size else None


def spectrogram_db(spec: Spectrogram) -> np.ndarray:
    """20 log10 magnitude for plotting and text export."""
    return 20.0 * np.log10(np.maximum(spec.magnitude, DB_TINY))


def slow_time_spectrogram(slow_time: SlowTime, frame_interval: float,
                          params: Optional[StftParams] = None) -> Optional[Spectrogram]:
    """Spectrogram of the zero-filled slow-time series, or None if it is shorter than one window."""
    params = params or StftParams()
    ks, series = slow_time.uniform()
    if series.size < params.window_length:
        return None
    return stft_spectrogram(series, frame_interval, params, rx_id=slow_time.rx_id,
                            start_time=float(ks[0]) * frame_interval)


def summarize_peaks(track: np.ndarray) -> List[Optional[float]]:
    return [None if np.isnan(v) else float(v) for v in track]
