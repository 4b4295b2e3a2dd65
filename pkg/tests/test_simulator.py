import numpy as np
import pytest
from pydantic import ValidationError

from app.schemas import ArticulatedTarget, OvalPath, PolylinePath, SceneConfig, StaticScatterer
from app.services.scenarios import (
    RECEIVER_PLACEMENTS, oval_walk_scene, receiver_for_bistatic_angle, sit_stand_scene,
    two_geometry_walk_scene
)
from app.services.geometry import bistatic_angle
from app.services.simulator import (
    GROUND_TRUTH_COLUMNS, beam_gain, clock_realization, ground_truth_doppler, synthesize_frame,
    synthesize_run
)
from app.services.microdoppler import stft_spectrogram, target_slow_time, peak_doppler_track
from app.models import TrackState, TrackStatus
from app.schemas import StftParams
from tests.conftest import make_scene, quiet_clock


class TestSceneValidation:

    def test_default_beams(self, scene):
        """Twelve beams span +-60 degrees with the spacing as 3 dB width."""
        assert scene.num_beams == 12
        assert scene.beam_centers[0] == pytest.approx(-np.pi / 3)
        assert scene.beam_centers[-1] == pytest.approx(np.pi / 3)
        assert scene.beam_width_3db == pytest.approx(scene.beam_spacing)

    def test_frame_count(self, scene):
        """floor(duration / T) frames."""
        assert scene.num_frames == 20

    def test_unknown_key_rejected(self):
        """Unknown configuration keys are hard errors."""
        with pytest.raises(ValidationError):
            make_scene(colour='blue')

    def test_receiver_on_transmitter_rejected(self):
        """A receiver cannot sit on the transmitter."""
        with pytest.raises(ValidationError):
            make_scene(rx_positions=[(0.0, 0.0)])

    def test_los_must_dominate(self):
        """A scatterer stronger than the LOS peak is rejected."""
        with pytest.raises(ValidationError, match='LOS peak'):
            make_scene(static_scatterers=[StaticScatterer(position=(2.0, 1.5), amplitude=0.6)])

    def test_target_speed_bounded(self):
        """A torso faster than v_max is rejected."""
        with pytest.raises(ValidationError):
            ArticulatedTarget(torso=OvalPath(center=(4.0, 0.0), speed=3.0), v_max=2.0)

    def test_clock_per_receiver(self):
        """Missing clock models default to one per receiver."""
        data = make_scene().model_dump(mode='json')
        data.pop('clock_models')
        data['rx_positions'] = [[4.0, 0.0], [3.0, 3.0]]
        assert len(SceneConfig.model_validate(data).clock_models) == 2


class TestSynthesizeFrame:

    def test_static_taps(self, scene):
        """LOS lands on tap 0 and the scatterer on the tap of its excess range."""
        frame, entry = synthesize_frame(scene, 0, 0)
        m = frame.tap_magnitude()
        assert np.flatnonzero(m > 1e-12).tolist() == [0, 6]
        # LOS sits halfway between two beams: peak gain one half
        assert m[0] == pytest.approx(0.5)
        assert m[6] < 0.3
        assert entry.to_shift == 0

    def test_beam_gain_half_width(self, scene):
        """Each beam has gain one half at its 3 dB edge."""
        edge = scene.beam_centers[4] + scene.beam_width_3db / 2
        assert beam_gain(scene, 4, edge) == pytest.approx(0.5)
        with pytest.raises(IndexError):
            beam_gain(scene, 12, 0.0)

    def test_los_phase_without_offset(self, scene):
        """With no FO the LOS tap carries the LOS phase on every beam."""
        frame, _ = synthesize_frame(scene, 0, 3)
        assert np.allclose(np.angle(frame.gains[:, 0]), 0.0)

    def test_los_phase_follows_fo(self):
        """A constant FO advances the LOS phase by 2 pi f k T."""
        scene = make_scene(clock_models=[quiet_clock(fo_mode='constant', fo_value=100.0)])
        frame, entry = synthesize_frame(scene, 0, 3)
        expected = 2 * np.pi * 100.0 * 3 * scene.frame_interval
        assert entry.fo_phase == pytest.approx(expected)
        assert np.allclose(np.angle(frame.gains[:, 0]), expected)

    def test_timing_offset_shifts_taps(self, scene):
        """A fixed TO of 5.5 taps moves everything right by five taps."""
        clock = quiet_clock(to_mode='drift', to_initial=5.5 / scene.bandwidth)
        shifted = scene.model_copy(update={'clock_models': [clock]})
        frame, entry = synthesize_frame(shifted, 0, 0)
        assert entry.to_shift == 5
        assert np.flatnonzero(frame.tap_magnitude() > 1e-12).tolist() == [5, 11]

    def test_tap_overflow_dropped(self):
        """Paths beyond the last tap are dropped and counted."""
        scene = make_scene(num_taps=4, static_scatterers=[StaticScatterer(position=(2.0, 1.5), amplitude=0.3)])
        frame, entry = synthesize_frame(scene, 0, 0)
        assert entry.dropped == 1
        assert np.flatnonzero(frame.tap_magnitude() > 1e-12).tolist() == [0]

    def test_frame_outside_duration(self, scene):
        """Frames past the scene duration are refused."""
        with pytest.raises(ValueError):
            synthesize_frame(scene, 0, 1000)

    def test_noise_power_and_determinism(self):
        """Noise has the configured power and depends only on the seed."""
        noisy = make_scene(noise_floor=1e-3, rng_seed=7)
        first, _ = synthesize_frame(noisy, 0, 2)
        again, _ = synthesize_frame(noisy, 0, 2)
        other, _ = synthesize_frame(noisy.model_copy(update={'rng_seed': 8}), 0, 2)
        assert np.array_equal(first.gains, again.gains)
        assert not np.array_equal(first.gains, other.gains)
        empty_taps = first.gains[:, 10:]
        assert np.mean(np.abs(empty_taps) ** 2) == pytest.approx(1e-3, rel=0.15)


class TestClockRealization:

    def test_uniform_timing_offset_range(self):
        """Uniform TO shifts stay within [0, to_max / tap delay)."""
        scene = oval_walk_scene(duration=0.1)
        clock = clock_realization(scene, 0, scene.num_frames)
        assert clock.to_shift.min() >= 0
        assert clock.to_shift.max() < 32
        assert len(np.unique(clock.to_shift)) > 1

    def test_receivers_draw_independently(self):
        """Each receiver has its own TO sequence."""
        scene = oval_walk_scene(duration=0.1)
        a = clock_realization(scene, 0, scene.num_frames)
        b = clock_realization(scene, 1, scene.num_frames)
        assert not np.array_equal(a.to_shift, b.to_shift)

    def test_random_walk_fo(self):
        """A random-walk FO starts at the nominal value and wanders."""
        scene = make_scene(clock_models=[quiet_clock(fo_mode='random-walk', fo_value=50.0, fo_walk_std=2.0)])
        clock = clock_realization(scene, 0, 20)
        assert clock.fo_hz[0] == pytest.approx(50.0)
        assert np.std(clock.fo_hz) > 0


class TestSynthesizeRun:

    def test_streams_and_ground_truth(self):
        """One stream per receiver and a log row per path, frame and receiver."""
        scene = oval_walk_scene(duration=0.01)
        streams, gt = synthesize_run(scene)
        assert [s.rx_id for s in streams] == [0, 1]
        assert streams[0].gains.shape == (20, 12, 128)
        assert list(gt.columns) == GROUND_TRUTH_COLUMNS
        # clock + LOS + two walls + torso + four limbs
        assert len(gt) == 2 * 20 * 9
        assert set(gt['kind']) == {'clock', 'los', 'static', 'body'}

    def test_run_matches_single_frames(self):
        """A frame from the batch equals the frame synthesized on its own."""
        scene = oval_walk_scene(duration=0.01, noise_floor=1e-3, seed=3)
        streams, _ = synthesize_run(scene)
        frame, _ = synthesize_frame(scene, 1, 7)
        assert np.array_equal(streams[1].gains[7], frame.gains)

    def test_ground_truth_doppler_interpolates(self):
        """Analytic Doppler can be sampled between frames."""
        scene = oval_walk_scene(duration=0.01)
        _, gt = synthesize_run(scene)
        rows = gt[(gt['rx_id'] == 0) & (gt['entity'] == 'person/torso')]
        times = rows['time'].to_numpy()
        values = ground_truth_doppler(gt, 0, 'person/torso', times)
        assert np.allclose(values, rows['doppler_hz'].to_numpy())
        with pytest.raises(KeyError):
            ground_truth_doppler(gt, 0, 'nobody', times)

    def test_receding_target_doppler(self):
        """A target walking straight away along the extended baseline shows -2 v / lambda."""
        walker = ArticulatedTarget(
            name='walker',
            torso=PolylinePath(waypoints=[(3.0, 0.0), (3.5, 0.0)], speed=1.0),
            torso_gain_amplitude=0.3,
        )
        scene = make_scene(rx_positions=[(0.5, 0.0)], targets=[walker], duration=0.2)
        streams, gt = synthesize_run(scene)
        torso = gt[gt['entity'] == 'walker/torso']
        assert np.allclose(torso['doppler_hz'], -2.0 / scene.wavelength)

        states = [
            TrackState(k=int(r.k), rx_id=0, track_id=0, x=float(r.x), y=float(r.y), vx=1.0, vy=0.0,
                       status=TrackStatus.CONFIRMED)
            for r in torso.itertuples()
        ]
        slow = target_slow_time(streams[0], states, scene, 0)
        spec = stft_spectrogram(slow.samples, scene.frame_interval, StftParams())
        peaks = peak_doppler_track(spec)
        spacing = 1.0 / (128 * scene.frame_interval)
        assert abs(np.nanmedian(peaks) - (-400.28)) < spacing


class TestScenarios:

    def test_presets_validate(self):
        """Every preset builds a valid scene."""
        for scene in (oval_walk_scene(), sit_stand_scene(), two_geometry_walk_scene()):
            assert scene.num_frames > 0

    def test_receiver_for_bistatic_angle(self):
        """The placed receiver sees the requested bistatic angle at the target."""
        for beta in RECEIVER_PLACEMENTS.values():
            rx = receiver_for_bistatic_angle((0.0, 0.0), (4.0, 0.0), beta, 3.0)
            assert bistatic_angle((0.0, 0.0), rx, (4.0, 0.0)) == pytest.approx(beta)

    def test_two_geometry_receivers(self):
        """Receivers of the two-geometry walk see 40 and 140 degrees at its midpoint."""
        scene = two_geometry_walk_scene()
        betas = [bistatic_angle(scene.tx_position, rx, (4.0, 0.0)) for rx in scene.rx_positions]
        assert np.rad2deg(betas) == pytest.approx([40.0, 140.0])
