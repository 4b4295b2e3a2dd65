"""
Timing- and frequency-offset compensation driven by the LOS path.

Per frame: find the first LOS peak above a dynamic threshold, shift every
beam so that peak sits at tap 0, read the LOS phase and de-rotate the frame
by it. Every tap shares the same FO, so one phase per frame is enough.
"""

import logging
import numpy as np
from typing import Optional, Tuple

from app.errors import LosMissingError, SyncError, UnreliablePhaseError
from app.models import CirFrame, FrameStream, SyncRecord, SyncReport, SyncStatus
from app.schemas import LosPolicy, SyncPolicy
from app.services.geometry import wrap_to_pi

logger = logging.getLogger(__name__)


def los_threshold(m: np.ndarray, policy: SyncPolicy) -> float:
    """
    tau = max(median + kappa * MAD, relative_floor * max); scales with m.

    Most taps of a sparse CIR are empty, so the median and MAD describe the
    noise. When noise is absent or tiny the MAD collapses towards zero and
    median + kappa * MAD would admit any nonzero ripple, including the
    sidelobe or weak echo just ahead of the LOS. The floor at a fraction of
    the frame maximum keeps such taps out while staying scale-invariant.
    """
    median = float(np.median(m))
    mad = float(np.median(np.abs(m - median)))
    return max(median + policy.kappa * mad, policy.relative_floor * float(np.max(m)))


def _local_maxima(m: np.ndarray) -> np.ndarray:
    padded = np.concatenate([[-np.inf], m, [-np.inf]])
    return (m >= padded[:-2]) & (m >= padded[2:]) & (m > 0)


def detect_los(frame: CirFrame, policy: Optional[SyncPolicy] = None) -> Tuple[int, float]:
    """First local maximum of m(l) = max_b |h_b(l)| that clears the dynamic threshold."""
    policy = policy or SyncPolicy()
    if frame.gains.size == 0:
        raise ValueError('cannot detect the LOS in an empty frame')
    m = frame.tap_magnitude()
    threshold = los_threshold(m, policy)
    candidates = np.flatnonzero(_local_maxima(m) & (m >= threshold))
    if candidates.size == 0:
        raise LosMissingError(f'frame {frame.k}: no tap reaches the LOS threshold {threshold:.3g}')
    return int(candidates[0]), threshold


def align_to(frame: CirFrame, los_tap: int) -> CirFrame:
    """Linear left shift by los_tap on every beam; the vacated tail is zero."""
    if not 0 <= los_tap < frame.num_taps:
        raise ValueError(f'los_tap {los_tap} outside [0, {frame.num_taps})')
    if los_tap == 0:
        return CirFrame(k=frame.k, rx_id=frame.rx_id, gains=frame.gains.copy())
    gains = np.zeros_like(frame.gains)
    gains[:, :frame.num_taps - los_tap] = frame.gains[:, los_tap:]
    return CirFrame(k=frame.k, rx_id=frame.rx_id, gains=gains)


def estimate_fo_phase(frame: CirFrame, min_power: float = 0.0, coherent: bool = False) -> float:
    """
    Phase of the LOS at tap 0 of an aligned frame.

    The default reads the strongest beam. With coherent=True the beams are
    combined with their own magnitudes as weights before taking the angle.
    """
    los = frame.gains[:, 0]
    magnitude = np.abs(los)
    best = int(np.argmax(magnitude))
    power = float(magnitude[best]) ** 2
    if power == 0.0 or power <= min_power:
        raise UnreliablePhaseError(
            f'frame {frame.k}: LOS power {power:.3g} is not above {min_power:.3g}'
        )
    value = np.sum(los * magnitude) if coherent else los[best]
    return wrap_to_pi(float(np.angle(value)))


def correct_fo(frame: CirFrame, phi_off: float) -> CirFrame:
    """h'_b(k, l) = exp(-j phi_off) h_b(k, l)."""
    if phi_off == 0.0:
        return CirFrame(k=frame.k, rx_id=frame.rx_id, gains=frame.gains.copy())
    return CirFrame(k=frame.k, rx_id=frame.rx_id, gains=frame.gains * np.exp(-1j * phi_off))


def sync_pipeline(stream: FrameStream, policy: Optional[SyncPolicy] = None) -> Tuple[FrameStream, SyncReport]:
    """
    Align and de-rotate a stream frame by frame, in k order.

    Frames without a usable LOS either reuse the previous frame's shift and
    phase or are dropped, as the policy says. Reuse on the very first frame
    has nothing to fall back on and raises SyncError.
    """
    policy = policy or SyncPolicy()
    report = SyncReport(rx_id=stream.rx_id)
    kept = []
    previous: Optional[Tuple[int, float]] = None

    for frame in stream:
        m = frame.tap_magnitude()
        try:
            los_tap, threshold = detect_los(frame, policy)
            aligned = align_to(frame, los_tap)
            phase = estimate_fo_phase(aligned, policy.min_los_power, policy.coherent_fo)
        except (LosMissingError, UnreliablePhaseError) as e:
            threshold = los_threshold(m, policy)
            if policy.on_missing == LosPolicy.DROP:
                logger.warning(f"rx {stream.rx_id}: {e}; frame dropped")
                report.records.append(SyncRecord(
                    k=frame.k, los_tap=-1, shift=-1, phase=0.0, peak=float(m.max()),
                    threshold=threshold, status=SyncStatus.LOS_MISSING
                ))
                continue
            if previous is None:
                logger.error(f"rx {stream.rx_id}: {e} on the first frame, nothing to reuse")
                raise SyncError(f'rx {stream.rx_id}: LOS missing on frame {frame.k} with nothing to reuse') from e
            shift, phase = previous
            logger.warning(f"rx {stream.rx_id}: {e}; reusing shift {shift} and phase {phase:.3f}")
            report.records.append(SyncRecord(
                k=frame.k, los_tap=-1, shift=shift, phase=phase, peak=float(m.max()),
                threshold=threshold, status=SyncStatus.REUSED_PREVIOUS
            ))
            kept.append(correct_fo(align_to(frame, shift), phase))
            continue

        previous = (los_tap, phase)
        report.records.append(SyncRecord(
            k=frame.k, los_tap=los_tap, shift=los_tap, phase=phase, peak=float(m[los_tap]),
            threshold=threshold, status=SyncStatus.OK
        ))
        kept.append(correct_fo(aligned, phase))

    logger.info(
        f"rx {stream.rx_id}: synced {len(kept)}/{len(stream)} frames "
        f"({report.count(SyncStatus.REUSED_PREVIOUS)} reused, {report.count(SyncStatus.LOS_MISSING)} dropped)"
    )
    if kept:
        synced = FrameStream.from_frames(kept, stream.frame_interval, synced=True)
    else:
        synced = FrameStream(
            rx_id=stream.rx_id, frame_interval=stream.frame_interval,
            gains=np.zeros((0,) + stream.gains.shape[1:], dtype=complex), synced=True
        )
    return synced, report
