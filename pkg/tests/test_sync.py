import numpy as np
import pytest

from app.errors import LosMissingError, SyncError, UnreliablePhaseError
from app.models import CirFrame, FrameStream, SyncStatus
from app.schemas import LosPolicy, SyncPolicy
from app.services.evaluation import fo_residual_std, los_detection_rate
from app.services.microdoppler import stft_spectrogram
from app.services.scenarios import static_scene
from app.services.simulator import synthesize_run
from app.services.sync import (
    align_to, correct_fo, detect_los, estimate_fo_phase, los_threshold, sync_pipeline
)

SHIFTS = [3, 5, 0, 7]
PHASES = [0.4, -1.2, 2.5, 0.0]


def los_stream(num_beams=2, num_taps=16):
    """LOS-only frames with known shifts and phases, plus a weaker echo four taps later."""
    gains = np.zeros((len(SHIFTS), num_beams, num_taps), dtype=complex)
    for k, (shift, phase) in enumerate(zip(SHIFTS, PHASES)):
        gains[k, :, shift] = np.exp(1j * phase) * np.array([1.0, 0.6])[:num_beams]
        gains[k, :, shift + 4] = 0.2 * np.exp(1j * (phase + 1.0))
    return FrameStream(rx_id=0, frame_interval=5e-4, gains=gains)


class TestDetectLos:

    def test_finds_first_peak(self):
        """The LOS is the first peak above the threshold even when a later one is stronger."""
        gains = np.zeros((1, 16), dtype=complex)
        gains[0, 4] = 0.8
        gains[0, 9] = 1.0
        tap, threshold = detect_los(CirFrame(k=0, rx_id=0, gains=gains))
        assert tap == 4
        assert threshold == pytest.approx(0.25)

    def test_threshold_scales_with_frame(self):
        """Scaling a frame scales its threshold."""
        m = np.abs(np.random.default_rng(0).standard_normal(64))
        policy = SyncPolicy()
        assert los_threshold(3.0 * m, policy) == pytest.approx(3.0 * los_threshold(m, policy))

    def test_invariant_to_frame_scale(self):
        """Scaling a noisy frame by any nonzero constant finds the same LOS tap."""
        rng = np.random.default_rng(3)
        gains = 0.03 * (rng.standard_normal((2, 64)) + 1j * rng.standard_normal((2, 64)))
        gains[:, 9] += [1.0, 0.6]
        gains[:, 20] += 0.4
        tap, threshold = detect_los(CirFrame(k=0, rx_id=0, gains=gains))
        assert tap == 9
        for scale in (1e-6, 0.5, 37.0, 2.0 * np.exp(0.7j)):
            scaled_tap, scaled_threshold = detect_los(CirFrame(k=0, rx_id=0, gains=scale * gains))
            assert scaled_tap == tap
            assert scaled_threshold == pytest.approx(abs(scale) * threshold, rel=1e-9)

    def test_small_bump_below_threshold_ignored(self):
        """An early weak bump does not count as the LOS."""
        gains = np.zeros((1, 16), dtype=complex)
        gains[0, 2] = 0.1
        gains[0, 6] = 1.0
        tap, _ = detect_los(CirFrame(k=0, rx_id=0, gains=gains))
        assert tap == 6

    def test_zero_frame_has_no_los(self):
        """An all-zero frame has no LOS."""
        with pytest.raises(LosMissingError):
            detect_los(CirFrame(k=0, rx_id=0, gains=np.zeros((2, 8), dtype=complex)))

    def test_empty_frame_rejected(self):
        """A frame without taps is a programming error."""
        with pytest.raises(ValueError):
            detect_los(CirFrame(k=0, rx_id=0, gains=np.zeros((2, 0), dtype=complex)))


class TestAlignAndCorrect:

    def test_align_shifts_left_and_zero_fills(self):
        """Every beam shifts left; the tail is zero."""
        gains = np.arange(1, 17, dtype=complex).reshape(2, 8)
        aligned = align_to(CirFrame(k=0, rx_id=0, gains=gains), 3)
        assert np.array_equal(aligned.gains[:, :5], gains[:, 3:])
        assert np.all(aligned.gains[:, 5:] == 0)

    def test_align_zero_is_identity_copy(self):
        """A zero shift returns an equal but independent frame."""
        frame = CirFrame(k=0, rx_id=0, gains=np.ones((2, 4), dtype=complex))
        aligned = align_to(frame, 0)
        assert np.array_equal(aligned.gains, frame.gains)
        assert aligned.gains is not frame.gains

    def test_align_out_of_range(self):
        """Shifts outside the tap range are rejected."""
        frame = CirFrame(k=0, rx_id=0, gains=np.ones((2, 4), dtype=complex))
        with pytest.raises(ValueError):
            align_to(frame, 4)

    def test_fo_phase_from_strongest_beam(self):
        """The phase comes from the strongest beam at tap 0."""
        gains = np.zeros((2, 4), dtype=complex)
        gains[0, 0] = 1.0 * np.exp(0.1j)
        gains[1, 0] = 2.0 * np.exp(0.7j)
        assert estimate_fo_phase(CirFrame(k=0, rx_id=0, gains=gains)) == pytest.approx(0.7)

    def test_fo_phase_coherent(self):
        """Beams with a common phase give that phase when combined."""
        gains = np.zeros((3, 4), dtype=complex)
        gains[:, 0] = np.array([0.5, 1.0, 0.3]) * np.exp(-2.0j)
        assert estimate_fo_phase(CirFrame(k=0, rx_id=0, gains=gains), coherent=True) == pytest.approx(-2.0)

    def test_fo_phase_needs_power(self):
        """A dead LOS tap or one below the power floor is unreliable."""
        gains = np.zeros((2, 4), dtype=complex)
        with pytest.raises(UnreliablePhaseError):
            estimate_fo_phase(CirFrame(k=0, rx_id=0, gains=gains))
        gains[0, 0] = 0.1
        with pytest.raises(UnreliablePhaseError):
            estimate_fo_phase(CirFrame(k=0, rx_id=0, gains=gains), min_power=0.05)

    def test_correct_fo_derotates(self):
        """De-rotation by the LOS phase leaves a real positive LOS."""
        gains = np.full((2, 4), np.exp(1.3j))
        corrected = correct_fo(CirFrame(k=0, rx_id=0, gains=gains), 1.3)
        assert np.allclose(corrected.gains, 1.0)


class TestSyncPipeline:

    def test_aligns_and_derotates(self):
        """After sync every LOS sits at tap 0 with zero phase and the echo at tap 4."""
        synced, report = sync_pipeline(los_stream())
        assert synced.synced
        assert [r.los_tap for r in report.records] == SHIFTS
        assert np.allclose(synced.gains[:, 0, 0], 1.0)
        assert np.allclose(np.abs(synced.gains[:, :, 4]), 0.2)
        assert np.allclose(np.angle(synced.gains[:, 0, 4]), 1.0)

    def test_drop_policy(self):
        """Under the drop policy a frame without LOS is left out and logged."""
        stream = los_stream()
        stream.gains[1] = 0
        synced, report = sync_pipeline(stream, SyncPolicy(on_missing=LosPolicy.DROP))
        assert len(synced) == 3
        assert synced.frame_indices.tolist() == [0, 2, 3]
        assert report.records[1].status == SyncStatus.LOS_MISSING
        assert report.kept_indices().tolist() == [0, 2, 3]

    def test_reuse_policy(self):
        """Under the reuse policy the previous shift and phase are applied."""
        stream = los_stream()
        stream.gains[1, :, :] = 0
        synced, report = sync_pipeline(stream)
        record = report.records[1]
        assert record.status == SyncStatus.REUSED_PREVIOUS
        assert record.shift == SHIFTS[0]
        assert record.phase == pytest.approx(PHASES[0])
        assert len(synced) == 4
        assert report.count(SyncStatus.OK) == 3

    def test_reuse_on_first_frame_fails(self):
        """Nothing can be reused on the first frame."""
        stream = los_stream()
        stream.gains[0] = 0
        with pytest.raises(SyncError):
            sync_pipeline(stream)

    def test_all_dropped(self):
        """Dropping every frame leaves an empty synced stream."""
        stream = los_stream()
        stream.gains[:] = 0
        synced, report = sync_pipeline(stream, SyncPolicy(on_missing=LosPolicy.DROP))
        assert len(synced) == 0
        assert report.count(SyncStatus.LOS_MISSING) == 4

    def test_simulated_asynchronous_receiver(self):
        """On a 40 dB static scene the LOS tap matches the true TO and the FO residual is small."""
        scene = static_scene(duration=0.05, noise_floor=1e-4)
        streams, gt = synthesize_run(scene)
        synced, report = sync_pipeline(streams[0])
        assert los_detection_rate(report, gt) == 1.0
        assert fo_residual_std(report, gt) < 0.05
        los = synced.gains[:, :, 0]
        strongest = np.argmax(np.abs(los), axis=1)
        assert np.all(np.abs(np.angle(los[np.arange(len(los)), strongest])) < 0.05)


class TestSimulatedCompensation:

    def test_los_found_over_two_thousand_frames(self):
        """2000 frames at 30 dB: the LOS tap matches the logged TO and lands on tap 0 after alignment."""
        scene = static_scene(duration=1.0, noise_floor=1e-3)
        assert scene.num_frames == 2000
        streams, gt = synthesize_run(scene)
        synced, report = sync_pipeline(streams[0])
        assert los_detection_rate(report, gt) >= 0.999
        strongest_tap = np.argmax(np.abs(synced.gains).max(axis=1), axis=1)
        assert np.mean(strongest_tap == 0) >= 0.999
        assert fo_residual_std(report, gt) < 0.05

    def test_static_tap_frequency_offset_removed(self):
        """A 1 kHz FO shows at 1 kHz before de-rotation; afterwards a static tap is steady near 0 Hz."""
        scene = static_scene(duration=1.0, noise_floor=1e-5)
        assert scene.clock_models[0].fo_value == 1000.0
        raw = synthesize_run(scene)[0][0]
        synced, report = sync_pipeline(raw)
        assert len(synced) == 2000

        mean = np.abs(synced.gains).mean(axis=0)
        mean[:, 0] = 0.0
        beam, tap = np.unravel_index(np.argmax(mean), mean.shape)
        corrected = synced.gains[:, beam, tap]
        uncorrected = np.array([align_to(frame, record.shift).gains[beam, tap]
                                for frame, record in zip(raw, report.records)])

        residual = np.angle(corrected * np.exp(-1j * np.angle(corrected.mean())))
        assert np.std(residual) < 0.05

        interval = scene.frame_interval
        bin_hz = 1.0 / (128 * interval)
        before = stft_spectrogram(uncorrected, interval)
        peaks = before.doppler[np.argmax(before.magnitude, axis=1)]
        assert np.all(np.abs(peaks - 1000.0) <= bin_hz)

        power = stft_spectrogram(corrected, interval).magnitude ** 2
        zero = int(np.argmin(np.abs(before.doppler)))
        near = power[:, zero - 1:zero + 2].sum(axis=1)
        assert np.all(near >= 0.99 * power.sum(axis=1))
