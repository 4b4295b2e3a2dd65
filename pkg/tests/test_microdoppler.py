import numpy as np
import pytest

from app.models import FrameStream, SlowTime, Spectrogram, TrackState, TrackStatus
from app.schemas import StftParams, TrackerParams
from app.services.detection import detect_stream, estimate_background
from app.services.evaluation import microdoppler_mae
from app.services.microdoppler import (
    bistatic_factor, doppler_axis, mean_abs_peak_doppler, peak_doppler_track, slow_time_spectrogram,
    spectrogram_db, stft_spectrogram, summarize_peaks, target_slow_time
)
from app.services.scenarios import sit_stand_scene, two_geometry_walk_scene
from app.services.simulator import synthesize_run
from app.services.sync import sync_pipeline
from app.services.tracking import track_stream
from tests.conftest import make_scene

T = 5e-4
BIN = 1.0 / (128 * T)


def tone(freq, n=512):
    return np.exp(2j * np.pi * freq * np.arange(n) * T)


class TestDopplerAxis:

    def test_axis_layout(self):
        """N bins from -(N/2 - 1) to N/2 bin spacings, zero included."""
        axis = doppler_axis(128, T)
        assert axis.size == 128
        assert axis[0] == pytest.approx(-63 * BIN)
        assert axis[-1] == pytest.approx(1000.0)
        assert axis[63] == 0.0
        assert np.allclose(np.diff(axis), BIN)


class TestStft:

    def test_shape_and_times(self):
        """Window count and center times follow hop and window length."""
        spec = stft_spectrogram(np.ones(256), T)
        assert spec.magnitude.shape == (9, 128)
        assert spec.times[0] == pytest.approx(64 * T)
        assert np.allclose(np.diff(spec.times), 16 * T)

    def test_constant_boxcar_is_dc(self):
        """A constant with a rectangular window lands entirely in the zero-Doppler bin."""
        spec = stft_spectrogram(np.ones(256), T, StftParams(window='boxcar'))
        power = spec.magnitude ** 2
        assert np.allclose(power[:, 63], 128.0)
        assert np.allclose(np.delete(power, 63, axis=1), 0.0, atol=1e-20)

    def test_constant_hann_within_one_bin(self):
        """With a Hann window a constant stays within one bin of zero Doppler."""
        power = stft_spectrogram(np.ones(256), T).magnitude ** 2
        near = power[:, 62:65].sum(axis=1)
        assert np.all(near >= 0.99 * power.sum(axis=1))

    def test_tone_on_bin(self):
        """A 250 Hz tone peaks at +16 bins."""
        spec = stft_spectrogram(tone(250.0), T)
        assert np.all(np.argmax(spec.magnitude, axis=1) == 63 + 16)
        assert spec.doppler[63 + 16] == pytest.approx(250.0)

    def test_parseval(self):
        """Each row's energy equals the energy of its windowed segment."""
        x = np.random.default_rng(1).standard_normal(300) + 1j * np.random.default_rng(2).standard_normal(300)
        spec = stft_spectrogram(x, T, StftParams(window='boxcar', hop=32))
        for i, row in enumerate(spec.magnitude):
            segment = x[i * 32:i * 32 + 128]
            assert np.sum(row ** 2) == pytest.approx(np.sum(np.abs(segment) ** 2))

    def test_too_short(self):
        """Series shorter than a window are refused."""
        with pytest.raises(ValueError):
            stft_spectrogram(np.ones(100), T)

    def test_db(self):
        """Magnitudes convert to 20 log10."""
        spec = stft_spectrogram(np.ones(256), T, StftParams(window='boxcar'))
        assert spectrogram_db(spec)[0, 63] == pytest.approx(20 * np.log10(np.sqrt(128.0)))


class TestPeakTrack:

    def test_refined_between_bins(self):
        """Parabolic refinement lands within a tenth of a bin of an off-bin tone."""
        freq = 16.25 * BIN
        peaks = peak_doppler_track(stft_spectrogram(tone(freq), T))
        assert np.all(np.abs(peaks - freq) < 0.1 * BIN)

    def test_flat_spectrum_has_no_peak(self):
        """Rows with no bin above the floor come out as NaN."""
        flat = Spectrogram(magnitude=np.ones((4, 128)), times=np.arange(4.0), doppler=doppler_axis(128, T),
                           window_length=128, hop=16, window='hann', frame_interval=T)
        peaks = peak_doppler_track(flat)
        assert np.all(np.isnan(peaks))
        assert mean_abs_peak_doppler(peaks) is None
        assert summarize_peaks(peaks) == [None] * 4

    def test_mean_abs_skips_gaps(self):
        """Mean absolute Doppler ignores NaN rows."""
        assert mean_abs_peak_doppler(np.array([-100.0, np.nan, 50.0])) == pytest.approx(75.0)


class TestBistaticFactor:

    def test_right_angle(self):
        """beta = 90 degrees gives xi = cos(45 degrees)."""
        sample = bistatic_factor((0.0, 0.0), (4.0, 0.0), (2.0, 2.0))
        assert sample.beta == pytest.approx(np.pi / 2)
        assert sample.xi == pytest.approx(np.cos(np.pi / 4))
        assert sample.to_dict()['target'] == [2.0, 2.0]

    def test_monostatic_limit(self):
        """On the extended baseline beta = 0 and xi = 1."""
        assert bistatic_factor((0.0, 0.0), (0.5, 0.0), (3.0, 0.0)).xi == pytest.approx(1.0)

    def test_target_on_node(self):
        """A target on the transmitter or receiver has no bistatic angle."""
        with pytest.raises(ValueError):
            bistatic_factor((0.0, 0.0), (4.0, 0.0), (0.0, 0.0))


class TestSlowTime:

    def test_follows_track_tap(self):
        """Samples come from the tracked tap on the strongest beam; untracked frames are gaps."""
        scene = make_scene()
        gains = np.zeros((3, 2, 16), dtype=complex)
        gains[:, 1, 6] = 1 + 1j
        stream = FrameStream(rx_id=0, frame_interval=T, gains=gains)
        states = [TrackState(k=k, rx_id=0, track_id=0, x=2.0, y=1.5, vx=0.0, vy=0.0, status=TrackStatus.CONFIRMED)
                  for k in (0, 2)]
        slow = target_slow_time(stream, states, scene, 0, half_width=0)
        assert slow.frame_indices.tolist() == [0, 2]
        assert np.allclose(slow.samples, 1 + 1j)
        assert slow.gaps == [1]
        ks, series = slow.uniform()
        assert ks.tolist() == [0, 1, 2]
        assert series[1] == 0

    def test_static_removed_with_background(self):
        """Subtracting the complex background cancels a constant path."""
        scene = make_scene()
        gains = np.zeros((4, 2, 16), dtype=complex)
        gains[:, 0, 6] = 0.5
        stream = FrameStream(rx_id=0, frame_interval=T, gains=gains)
        states = [TrackState(k=k, rx_id=0, track_id=0, x=2.0, y=1.5, vx=0.0, vy=0.0, status=TrackStatus.CONFIRMED)
                  for k in range(4)]
        slow = target_slow_time(stream, states, scene, 0, background=estimate_background(stream))
        assert np.allclose(slow.samples, 0.0)

    def test_short_series_has_no_spectrogram(self):
        """Fewer samples than a window give no spectrogram."""
        slow = SlowTime(rx_id=0, frame_indices=np.arange(50), samples=np.ones(50, dtype=complex))
        assert slow_time_spectrogram(slow, T) is None


class TestBistaticDopplerScaling:

    def test_doppler_ratio_follows_bistatic_factor(self):
        """The Doppler ratio between a 40 and a 140 degree receiver matches cos(beta/2)."""
        scene = two_geometry_walk_scene()
        streams, gt = synthesize_run(scene)
        means = []
        for stream in streams:
            synced, _ = sync_pipeline(stream)
            rows = gt[(gt['rx_id'] == stream.rx_id) & (gt['entity'] == 'person/torso')]
            states = [TrackState(k=int(r.k), rx_id=stream.rx_id, track_id=0, x=float(r.x), y=float(r.y),
                                 vx=0.0, vy=0.0, status=TrackStatus.CONFIRMED) for r in rows.itertuples()]
            slow = target_slow_time(synced, states, scene, stream.rx_id, background=estimate_background(synced))
            spec = slow_time_spectrogram(slow, scene.frame_interval)
            means.append(mean_abs_peak_doppler(peak_doppler_track(spec)))
        a = bistatic_factor(scene.tx_position, scene.rx_positions[0], (4.0, 0.0))
        b = bistatic_factor(scene.tx_position, scene.rx_positions[1], (4.0, 0.0))
        predicted = a.xi / b.xi
        assert predicted == pytest.approx(np.cos(np.deg2rad(20)) / np.cos(np.deg2rad(70)))
        assert means[0] / means[1] == pytest.approx(predicted, rel=0.05)


class TestTrackedSignature:

    def test_sit_stand_peak_follows_torso_doppler(self):
        """On the tracked sit/stand target the peak Doppler stays within two bins of the torso's."""
        scene = sit_stand_scene()
        streams, gt = synthesize_run(scene)
        for stream in streams:
            synced, _ = sync_pipeline(stream)
            background = estimate_background(synced)
            per_frame = detect_stream(synced, scene, background=background)
            states = track_stream(per_frame, TrackerParams(), scene, stream.rx_id, synced.frame_indices)
            assert states
            slow = target_slow_time(synced, states, scene, stream.rx_id, background=background)
            spec = slow_time_spectrogram(slow, scene.frame_interval)
            assert spec is not None
            peaks = peak_doppler_track(spec)
            bin_hz = 1.0 / (spec.window_length * spec.frame_interval)
            assert bin_hz == pytest.approx(15.625)
            assert microdoppler_mae(spec, peaks, gt, stream.rx_id, 'person/torso') < 2 * bin_hz
