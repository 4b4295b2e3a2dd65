import numpy as np
import pytest

from app.services.geometry import (
    SPEED_OF_LIGHT, baseline_angle, bistatic_angle, bistatic_doppler, bistatic_measurement,
    bistatic_measurement_jacobian, excess_to_tap, gaussian_beam_gain, tap_size, tap_to_excess,
    wavelength, world_angle, wrap_to_pi
)

TX = (0.0, 0.0)
RX = (4.0, 0.0)


class TestAngles:

    def test_wrap_to_pi_range(self):
        """Angles wrap into (-pi, pi] with -pi mapped to pi."""
        assert wrap_to_pi(3 * np.pi) == pytest.approx(np.pi)
        assert wrap_to_pi(-np.pi) == pytest.approx(np.pi)
        assert wrap_to_pi(0.5 - 2 * np.pi) == pytest.approx(0.5)

    def test_wrap_to_pi_vectorized(self):
        """Arrays are wrapped elementwise."""
        wrapped = wrap_to_pi(np.array([0.0, 2 * np.pi + 0.1, -2 * np.pi - 0.1]))
        assert np.allclose(wrapped, [0.0, 0.1, -0.1])

    def test_baseline_and_world_angle(self):
        """Angles are measured from +x, counterclockwise."""
        assert baseline_angle(TX, (0.0, 2.0)) == pytest.approx(np.pi / 2)
        assert world_angle(TX, (-1.0, 0.0)) == pytest.approx(np.pi)


class TestTapsAndWavelength:

    def test_tap_size(self):
        """One tap at 1.76 GHz is about 17 cm of path length."""
        assert tap_size(1.76e9) == pytest.approx(SPEED_OF_LIGHT / 1.76e9)
        assert tap_size(1.76e9) == pytest.approx(0.17034, abs=1e-5)

    def test_excess_to_tap_rounds(self):
        """Excess lengths round to the nearest tap and back."""
        size = tap_size(1.76e9)
        assert excess_to_tap(1.0, 1.76e9) == 6
        assert excess_to_tap(np.array([0.0, 0.4 * size, 0.6 * size]), 1.76e9).tolist() == [0, 0, 1]
        assert tap_to_excess(6, 1.76e9) == pytest.approx(6 * size)

    def test_wavelength_60ghz(self):
        """60 GHz carrier is a 5 mm wavelength."""
        assert wavelength(60e9) == pytest.approx(0.0049965, abs=1e-6)


class TestBeamGain:

    def test_gain_at_center_and_half_width(self):
        """Gain is one on the beam axis and one half at half the 3 dB width."""
        width = np.deg2rad(10.0)
        assert gaussian_beam_gain(0.3, 0.3, width) == pytest.approx(1.0)
        assert gaussian_beam_gain(0.3 + width / 2, 0.3, width) == pytest.approx(0.5)
        assert gaussian_beam_gain(0.3 - width / 2, 0.3, width) == pytest.approx(0.5)

    def test_gain_strictly_positive(self):
        """Far off axis the gain underflows to a tiny positive number, never zero."""
        assert gaussian_beam_gain(np.pi, 0.0, np.deg2rad(5.0)) > 0.0


class TestBistaticGeometry:

    def test_measurement(self):
        """A point on the 2.5 m / 2.5 m ellipse has one meter of excess range."""
        z = bistatic_measurement((2.0, 1.5), TX, RX)
        assert z[0] == pytest.approx(1.0)
        assert z[1] == pytest.approx(np.arctan2(1.5, 2.0))

    def test_measurement_is_relative_to_baseline(self):
        """Rotating the whole layout leaves the measurement unchanged."""
        c, s = np.cos(0.7), np.sin(0.7)
        rotate = lambda p: (c * p[0] - s * p[1], s * p[0] + c * p[1])
        z = bistatic_measurement(rotate((2.0, 1.5)), TX, rotate(RX))
        assert np.allclose(z, bistatic_measurement((2.0, 1.5), TX, RX))

    def test_jacobian_matches_finite_differences(self):
        """The analytic Jacobian agrees with central differences."""
        p = np.array([3.0, -1.2])
        step = 1e-6
        numeric = np.zeros((2, 2))
        for i in range(2):
            dp = np.zeros(2)
            dp[i] = step
            numeric[:, i] = (bistatic_measurement(p + dp, TX, RX) - bistatic_measurement(p - dp, TX, RX)) / (2 * step)
        assert np.allclose(bistatic_measurement_jacobian(p, TX, RX), numeric, atol=1e-6)

    def test_jacobian_random_states(self):
        """Across 100 random positions the analytic Jacobian stays within 1e-5 relative of central differences."""
        rng = np.random.default_rng(7)
        step = 1e-6
        checked = 0
        while checked < 100:
            p = rng.uniform(-8.0, 8.0, size=2)
            if min(np.linalg.norm(p - TX), np.linalg.norm(p - RX)) < 0.5:
                continue
            numeric = np.zeros((2, 2))
            for i in range(2):
                dp = np.zeros(2)
                dp[i] = step
                diff = bistatic_measurement(p + dp, TX, RX) - bistatic_measurement(p - dp, TX, RX)
                diff[1] = wrap_to_pi(diff[1])
                numeric[:, i] = diff / (2 * step)
            analytic = bistatic_measurement_jacobian(p, TX, RX)
            assert np.linalg.norm(analytic - numeric) <= 1e-5 * np.linalg.norm(analytic)
            checked += 1

    def test_bistatic_angle(self):
        """Right angle at the apex of an isosceles right triangle; zero on the extended baseline."""
        assert bistatic_angle(TX, RX, (2.0, 2.0)) == pytest.approx(np.pi / 2)
        assert bistatic_angle(TX, (0.5, 0.0), (3.0, 0.0)) == pytest.approx(0.0)

    def test_bistatic_doppler_along_bisector(self):
        """Motion along the bisector gives 2 v cos(beta/2) / lambda."""
        lam = wavelength(60e9)
        f = bistatic_doppler((2.0, 2.0), (0.0, -1.0), TX, RX, lam)
        assert f == pytest.approx(2 * np.cos(np.pi / 4) / lam)

    def test_bistatic_doppler_receding(self):
        """A target moving away from both ends has negative Doppler."""
        lam = wavelength(60e9)
        f = bistatic_doppler((3.0, 0.0), (1.0, 0.0), TX, (0.5, 0.0), lam)
        assert f == pytest.approx(-2.0 / lam)
        assert abs(f) == pytest.approx(400.28, abs=0.01)
