"""Ready-made scenes: an oval walk, sitting down / standing up, a static room and a two-geometry walk."""

import numpy as np
from typing import Dict, List, Optional, Sequence, Tuple

from app.schemas import (
    ArticulatedTarget, ClockModel, FoMode, LimbOscillator, OscillationPath, OvalPath,
    PolylinePath, SceneConfig, StaticScatterer, ToMode
)
from app.services.geometry import as_point

TX_POSITION = (0.0, 0.0)
RX1_POSITION = (2.0, -2.5)
RX2_POSITION = (3.0, 3.0)
WALK_CENTER = (4.0, 0.5)

# Bistatic angle seen at the walking area for the second receiver.
RECEIVER_PLACEMENTS: Dict[str, float] = {
    'narrow': float(np.deg2rad(40.0)),
    'wide': float(np.deg2rad(90.0)),
    'opposite': float(np.deg2rad(140.0)),
}


def default_clutter() -> List[StaticScatterer]:
    return [
        StaticScatterer(position=(6.5, -1.0), amplitude=0.25, label='wall'),
        StaticScatterer(position=(1.5, 2.5), amplitude=0.2, phase=1.0, label='cabinet'),
    ]


def walking_limbs() -> List[LimbOscillator]:
    """Head, chest and both wrists; wrists swing in antiphase."""
    return [
        LimbOscillator(label='head', offset=(0.0, 0.0), amplitude=0.02, frequency=1.8, gain_amplitude=0.08),
        LimbOscillator(label='chest', offset=(0.1, 0.0), amplitude=0.02, frequency=1.8,
                       phase=0.5, gain_amplitude=0.1),
        LimbOscillator(label='wrist_l', offset=(0.0, 0.25), amplitude=0.15, frequency=0.9,
                       gain_amplitude=0.05),
        LimbOscillator(label='wrist_r', offset=(0.0, -0.25), amplitude=0.15, frequency=0.9,
                       phase=np.pi, gain_amplitude=0.05),
    ]


def default_clocks(num_receivers: int) -> List[ClockModel]:
    """Independent clocks; FO values differ per receiver."""
    fo_values = [1000.0, -700.0, 450.0, -250.0]
    return [ClockModel(fo_value=fo_values[i % len(fo_values)]) for i in range(num_receivers)]


def synchronized_clocks(num_receivers: int) -> List[ClockModel]:
    return [ClockModel(to_mode=ToMode.ZERO, fo_mode=FoMode.ZERO) for _ in range(num_receivers)]


def receiver_for_bistatic_angle(tx: Sequence[float], target: Sequence[float], beta: float,
                                distance: float, side: int = 1) -> Tuple[float, float]:
    """Place a receiver at `distance` from `target` so the bistatic angle there is beta."""
    tx, target = as_point(tx), as_point(target)
    to_tx = tx - target
    direction = np.arctan2(to_tx[1], to_tx[0]) - np.sign(side) * beta
    rx = target + distance * np.array([np.cos(direction), np.sin(direction)])
    return float(rx[0]), float(rx[1])


def _bisector(tx: np.ndarray, rx: np.ndarray, p: np.ndarray) -> np.ndarray:
    u = (tx - p) / np.linalg.norm(tx - p) + (rx - p) / np.linalg.norm(rx - p)
    return u / np.linalg.norm(u)


def oval_walk_scene(duration: float = 4.0,
                    rx_positions: Optional[List[Tuple[float, float]]] = None,
                    noise_floor: float = 1e-3,
                    seed: int = 0,
                    with_limbs: bool = True,
                    with_clutter: bool = True,
                    clock_models: Optional[List[ClockModel]] = None,
                    speed: float = 1.0) -> SceneConfig:
    rx_positions = rx_positions or [RX1_POSITION, RX2_POSITION]
    walker = ArticulatedTarget(
        name='person',
        torso=OvalPath(center=WALK_CENTER, semi_axes=(1.2, 0.8), speed=speed, start_angle=np.pi),
        torso_gain_amplitude=0.5,
        limbs=walking_limbs() if with_limbs else [],
    )
    return SceneConfig(
        tx_position=TX_POSITION,
        rx_positions=rx_positions,
        duration=duration,
        static_scatterers=default_clutter() if with_clutter else [],
        targets=[walker],
        clock_models=clock_models or default_clocks(len(rx_positions)),
        noise_floor=noise_floor,
        rng_seed=seed,
    )


def sit_stand_scene(duration: float = 8.0,
                    rx_positions: Optional[List[Tuple[float, float]]] = None,
                    noise_floor: float = 1e-3,
                    seed: int = 0) -> SceneConfig:
    """Sitting down and standing up: the body moves back and forth towards the TX."""
    rx_positions = rx_positions or [RX1_POSITION, RX2_POSITION]
    anchor = (3.5, 0.5)
    towards_tx = float(np.arctan2(-anchor[1], -anchor[0]))
    person = ArticulatedTarget(
        name='person',
        torso=OscillationPath(anchor=anchor, direction=towards_tx, amplitude=0.3, frequency=0.25),
        limbs=[
            LimbOscillator(label='head', amplitude=0.1, frequency=0.25, gain_amplitude=0.08),
            LimbOscillator(label='wrist_l', offset=(0.0, 0.25), amplitude=0.05, frequency=0.25,
                           gain_amplitude=0.05),
            LimbOscillator(label='wrist_r', offset=(0.0, -0.25), amplitude=0.05, frequency=0.25,
                           gain_amplitude=0.05),
        ],
    )
    return SceneConfig(
        tx_position=TX_POSITION,
        rx_positions=rx_positions,
        duration=duration,
        static_scatterers=default_clutter(),
        targets=[person],
        clock_models=default_clocks(len(rx_positions)),
        noise_floor=noise_floor,
        rng_seed=seed,
    )


def static_scene(duration: float = 1.0,
                 rx_positions: Optional[List[Tuple[float, float]]] = None,
                 noise_floor: float = 1e-3,
                 seed: int = 0,
                 clock_models: Optional[List[ClockModel]] = None) -> SceneConfig:
    rx_positions = rx_positions or [RX1_POSITION]
    return SceneConfig(
        tx_position=TX_POSITION,
        rx_positions=rx_positions,
        duration=duration,
        static_scatterers=default_clutter(),
        clock_models=clock_models or default_clocks(len(rx_positions)),
        noise_floor=noise_floor,
        rng_seed=seed,
    )


def two_geometry_walk_scene(beta_a: float = RECEIVER_PLACEMENTS['narrow'],
                            beta_b: float = RECEIVER_PLACEMENTS['opposite'],
                            midpoint: Tuple[float, float] = (4.0, 0.0),
                            rx_distance: float = 3.0,
                            walk_length: float = 0.4,
                            speed: float = 1.0,
                            noise_floor: float = 1e-3,
                            seed: int = 0) -> SceneConfig:
    """One short straight walk seen by two receivers with bistatic angles beta_a and beta_b at
    its midpoint. The walk runs along the mean of the two bistatic bisectors, so the ratio of
    the observed Doppler magnitudes is set by cos(beta/2) alone."""
    tx = as_point(TX_POSITION)
    mid = as_point(midpoint)
    rx_a = receiver_for_bistatic_angle(tx, mid, beta_a, rx_distance)
    rx_b = receiver_for_bistatic_angle(tx, mid, beta_b, rx_distance)
    direction = _bisector(tx, as_point(rx_a), mid) + _bisector(tx, as_point(rx_b), mid)
    direction /= np.linalg.norm(direction)
    start = mid - direction * walk_length / 2
    end = mid + direction * walk_length / 2
    walker = ArticulatedTarget(
        name='person',
        torso=PolylinePath(waypoints=[tuple(start), tuple(end)], speed=speed),
        torso_gain_amplitude=0.5,
    )
    return SceneConfig(
        tx_position=TX_POSITION,
        rx_positions=[rx_a, rx_b],
        duration=walk_length / speed,
        targets=[walker],
        clock_models=default_clocks(2),
        noise_floor=noise_floor,
        rng_seed=seed,
    )
