"""
Plan-view (2D) bistatic geometry shared by the simulator, the detector,
the tracker and the micro-Doppler utilities.

Angle conventions:
    * world angles are measured at the TX from the +x axis, counterclockwise;
      beam centers are world angles.
    * baseline-relative angles are measured at the TX from the TX->RX
      direction, counterclockwise, wrapped to (-pi, pi].
"""

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from typing import Sequence, Tuple, Union

Point = Union[Sequence[float], np.ndarray]

# FWHM of a Gaussian is 2*sqrt(2 ln 2) standard deviations (~2.355).
FWHM_TO_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


def as_point(p: Point) -> np.ndarray:
    return np.asarray(p, dtype=float).reshape(2)


def wrap_to_pi(angle):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def tap_size(bandwidth: float) -> float:
    """Path-length quantum of one CIR tap, c / bandwidth (meters)."""
    return SPEED_OF_LIGHT / bandwidth


def excess_to_tap(excess_range, bandwidth: float):
    """Nearest tap index for an excess bistatic path length."""
    taps = np.rint(np.asarray(excess_range, dtype=float) / tap_size(bandwidth)).astype(int)
    return int(taps) if np.ndim(taps) == 0 else taps


def tap_to_excess(tap, bandwidth: float):
    excess = np.asarray(tap, dtype=float) * tap_size(bandwidth)
    return float(excess) if np.ndim(excess) == 0 else excess


def wavelength(carrier_frequency: float) -> float:
    return SPEED_OF_LIGHT / carrier_frequency


def baseline_length(tx: Point, rx: Point) -> float:
    return float(np.linalg.norm(as_point(rx) - as_point(tx)))


def baseline_angle(tx: Point, rx: Point) -> float:
    d = as_point(rx) - as_point(tx)
    return float(np.arctan2(d[1], d[0]))


def world_angle(tx: Point, p: Point) -> float:
    """Angle of departure of the TX->p direction in the world frame."""
    d = as_point(p) - as_point(tx)
    return float(np.arctan2(d[1], d[0]))


def gaussian_beam_gain(theta, center: float, width_3db: float):
    """Unimodal Gaussian beam: 1 at the center, 0.5 at +-width/2."""
    sigma = width_3db / FWHM_TO_SIGMA
    offset = wrap_to_pi(np.asarray(theta, dtype=float) - center)
    gain = np.exp(-offset ** 2 / (2.0 * sigma ** 2))
    gain = np.maximum(gain, np.finfo(float).tiny)
    return float(gain) if np.ndim(gain) == 0 else gain


def path_lengths(p: Point, tx: Point, rx: Point) -> Tuple[float, float]:
    p, tx, rx = as_point(p), as_point(tx), as_point(rx)
    return float(np.linalg.norm(p - tx)), float(np.linalg.norm(p - rx))


def bistatic_measurement(p: Point, tx: Point, rx: Point) -> np.ndarray:
    """Forward model: [excess bistatic range, baseline-relative AoD]."""
    p, tx, rx = as_point(p), as_point(tx), as_point(rx)
    d_tx, d_rx = path_lengths(p, tx, rx)
    excess = d_tx + d_rx - baseline_length(tx, rx)
    theta = wrap_to_pi(world_angle(tx, p) - baseline_angle(tx, rx))
    return np.array([excess, theta])


def bistatic_measurement_jacobian(p: Point, tx: Point, rx: Point) -> np.ndarray:
    """2x2 Jacobian of bistatic_measurement with respect to the position."""
    p, tx, rx = as_point(p), as_point(tx), as_point(rx)
    to_tx = p - tx
    to_rx = p - rx
    r_tx = np.linalg.norm(to_tx)
    r_rx = np.linalg.norm(to_rx)
    jac = np.zeros((2, 2))
    jac[0] = to_tx / r_tx + to_rx / r_rx
    jac[1] = np.array([-to_tx[1], to_tx[0]]) / r_tx ** 2
    return jac


def bistatic_angle(tx: Point, rx: Point, p: Point) -> float:
    """Angle at p between the directions to tx and rx, in [0, pi]."""
    p, tx, rx = as_point(p), as_point(tx), as_point(rx)
    a = tx - p
    b = rx - p
    cross = a[0] * b[1] - a[1] * b[0]
    return float(np.arctan2(abs(cross), float(np.dot(a, b))))


def bistatic_doppler(p: Point, velocity: Point, tx: Point, rx: Point, wavelength_m: float) -> float:
    """Doppler of a point scatterer: -(1/lambda) * d(d_tx + d_rx)/dt."""
    p, v, tx, rx = as_point(p), as_point(velocity), as_point(tx), as_point(rx)
    u_tx = (tx - p) / np.linalg.norm(tx - p)
    u_rx = (rx - p) / np.linalg.norm(rx - p)
    return float(np.dot(v, u_tx + u_rx) / wavelength_m)
