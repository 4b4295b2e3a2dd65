import numpy as np
from enum import Enum
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from app.services.geometry import (
    SPEED_OF_LIGHT, baseline_angle, gaussian_beam_gain, wrap_to_pi
)

SCHEMA_VERSION = 1
DEFAULT_BEAM_SPAN = float(np.deg2rad(120.0))

Point2 = Tuple[float, float]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class ToMode(str, Enum):
    ZERO = 'zero'
    UNIFORM = 'uniform-per-frame'
    DRIFT = 'drift'


class FoMode(str, Enum):
    ZERO = 'zero'
    CONSTANT = 'constant'
    RANDOM_WALK = 'random-walk'


class ClockModel(StrictModel):
    """Per-receiver clock asynchrony. TO values are seconds, FO values Hz."""
    to_mode: ToMode = ToMode.UNIFORM
    to_max: float = Field(32 / 1.76e9, ge=0)
    to_initial: float = Field(0.0, ge=0)
    to_drift_rate: float = 0.0
    fo_mode: FoMode = FoMode.CONSTANT
    fo_value: float = 1000.0
    fo_walk_std: float = Field(0.0, ge=0)


class OvalPath(StrictModel):
    kind: Literal['oval'] = 'oval'
    center: Point2
    semi_axes: Tuple[float, float] = (1.2, 0.8)
    speed: float = Field(1.0, gt=0)
    start_angle: float = 0.0
    rotation: float = 0.0
    clockwise: bool = False

    @field_validator('semi_axes')
    @classmethod
    def positive_axes(cls, v):
        if min(v) <= 0:
            raise ValueError('semi_axes must be positive')
        return v

    @property
    def angular_rate(self) -> float:
        a, b = self.semi_axes
        # Ramanujan's perimeter approximation
        perimeter = np.pi * (3 * (a + b) - np.sqrt((3 * a + b) * (a + 3 * b)))
        rate = 2 * np.pi * self.speed / perimeter
        return -rate if self.clockwise else rate

    def _rotate(self, v: np.ndarray) -> np.ndarray:
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])

    def position(self, t: float) -> np.ndarray:
        a, b = self.semi_axes
        phi = self.start_angle + self.angular_rate * t
        return np.asarray(self.center, dtype=float) + self._rotate(np.array([a * np.cos(phi), b * np.sin(phi)]))

    def velocity(self, t: float) -> np.ndarray:
        a, b = self.semi_axes
        w = self.angular_rate
        phi = self.start_angle + w * t
        return self._rotate(np.array([-a * w * np.sin(phi), b * w * np.cos(phi)]))

    def heading(self, t: float) -> float:
        v = self.velocity(t)
        return float(np.arctan2(v[1], v[0]))

    def max_speed(self) -> float:
        return max(self.semi_axes) * abs(self.angular_rate)


class PolylinePath(StrictModel):
    kind: Literal['polyline'] = 'polyline'
    waypoints: List[Point2] = Field(min_length=2)
    speed: float = Field(1.0, gt=0)
    loop: bool = False

    def _vertices(self) -> np.ndarray:
        pts = np.asarray(self.waypoints, dtype=float)
        return np.vstack([pts, pts[:1]]) if self.loop else pts

    def _locate(self, t: float):
        pts = self._vertices()
        seg = np.diff(pts, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
        total = cumulative[-1]
        arc = self.speed * t
        moving = True
        if self.loop:
            arc = np.mod(arc, total)
        elif arc >= total:
            arc, moving = total, False
        i = int(np.clip(np.searchsorted(cumulative, arc, side='right') - 1, 0, len(lengths) - 1))
        while lengths[i] == 0 and i > 0:
            i -= 1
        return pts, seg, lengths, cumulative, arc, i, moving

    def position(self, t: float) -> np.ndarray:
        pts, seg, lengths, cumulative, arc, i, _ = self._locate(t)
        if lengths[i] == 0:
            return pts[i].copy()
        return pts[i] + seg[i] * (arc - cumulative[i]) / lengths[i]

    def velocity(self, t: float) -> np.ndarray:
        _, seg, lengths, _, _, i, moving = self._locate(t)
        if not moving or lengths[i] == 0:
            return np.zeros(2)
        return seg[i] / lengths[i] * self.speed

    def heading(self, t: float) -> float:
        _, seg, _, _, _, i, _ = self._locate(t)
        return float(np.arctan2(seg[i][1], seg[i][0]))

    def max_speed(self) -> float:
        return self.speed


class OscillationPath(StrictModel):
    """In-place back-and-forth movement, e.g. sitting down and standing up."""
    kind: Literal['oscillation'] = 'oscillation'
    anchor: Point2
    direction: float = 0.0
    amplitude: float = Field(0.3, ge=0)
    frequency: float = Field(0.25, ge=0)
    phase: float = 0.0

    def _unit(self) -> np.ndarray:
        return np.array([np.cos(self.direction), np.sin(self.direction)])

    def position(self, t: float) -> np.ndarray:
        arg = 2 * np.pi * self.frequency * t + self.phase
        return np.asarray(self.anchor, dtype=float) + self._unit() * self.amplitude * np.sin(arg)

    def velocity(self, t: float) -> np.ndarray:
        arg = 2 * np.pi * self.frequency * t + self.phase
        return self._unit() * self.amplitude * 2 * np.pi * self.frequency * np.cos(arg)

    def heading(self, t: float) -> float:
        return self.direction

    def max_speed(self) -> float:
        return self.amplitude * 2 * np.pi * self.frequency


TorsoPath = Annotated[Union[OvalPath, PolylinePath, OscillationPath], Field(discriminator='kind')]


class LimbOscillator(StrictModel):
    """A body part swinging along the heading; offset is (forward, left) in meters."""
    label: str
    offset: Point2 = (0.0, 0.0)
    amplitude: float = Field(0.0, ge=0)
    frequency: float = Field(0.0, ge=0)
    phase: float = 0.0
    gain_amplitude: float = Field(0.05, gt=0)
    gain_phase: float = 0.0


class ArticulatedTarget(StrictModel):
    name: str = 'target'
    torso: TorsoPath
    torso_gain_amplitude: float = Field(0.3, gt=0)
    torso_gain_phase: float = 0.0
    limbs: List[LimbOscillator] = Field(default_factory=list)
    v_max: float = Field(2.0, gt=0)

    @model_validator(mode='after')
    def speed_bounded(self):
        if self.torso.max_speed() > self.v_max + 1e-12:
            raise ValueError(
                f'torso speed {self.torso.max_speed():.3f} m/s exceeds v_max {self.v_max} m/s'
            )
        return self


class StaticScatterer(StrictModel):
    position: Point2
    amplitude: float = Field(gt=0)
    phase: float = 0.0
    label: str = 'static'


class SceneConfig(StrictModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    tx_position: Point2 = (0.0, 0.0)
    rx_positions: List[Point2] = Field(min_length=1)
    carrier_frequency: float = Field(60e9, gt=0)
    bandwidth: float = Field(1.76e9, gt=0)
    frame_interval: float = Field(5e-4, gt=0)
    num_taps: int = Field(128, ge=2)
    num_beams: int = Field(12, ge=1)
    beam_centers: List[float]
    beam_width_3db: float = Field(gt=0)
    duration: float = Field(1.0, gt=0)
    los_amplitude: float = Field(1.0, gt=0)
    los_phase: float = 0.0
    static_scatterers: List[StaticScatterer] = Field(default_factory=list)
    targets: List[ArticulatedTarget] = Field(default_factory=list)
    clock_models: List[ClockModel]
    noise_floor: float = Field(1e-3, ge=0)
    rng_seed: int = 0

    @model_validator(mode='before')
    @classmethod
    def fill_defaults(cls, data: Any):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        num_beams = int(data.get('num_beams', 12))
        spacing = DEFAULT_BEAM_SPAN / (num_beams - 1) if num_beams > 1 else DEFAULT_BEAM_SPAN
        if data.get('beam_centers') is None:
            data['beam_centers'] = list(np.linspace(-DEFAULT_BEAM_SPAN / 2, DEFAULT_BEAM_SPAN / 2, num_beams)) \
                if num_beams > 1 else [0.0]
        if data.get('beam_width_3db') is None:
            data['beam_width_3db'] = float(spacing)
        if data.get('clock_models') is None:
            data['clock_models'] = [ClockModel() for _ in data.get('rx_positions', [])]
        return data

    @model_validator(mode='after')
    def check_scene(self):
        if len(self.beam_centers) != self.num_beams:
            raise ValueError(f'beam_centers has {len(self.beam_centers)} entries, expected {self.num_beams}')
        if np.any(np.diff(self.beam_centers) <= 0):
            raise ValueError('beam_centers must be strictly increasing')
        if len(self.clock_models) != len(self.rx_positions):
            raise ValueError('one clock model per receiver is required')
        tx = np.asarray(self.tx_position)
        for i, rx in enumerate(self.rx_positions):
            if np.allclose(np.asarray(rx), tx):
                raise ValueError(f'receiver {i} coincides with the transmitter')
        max_to = (self.num_taps - 1) * self.tap_delay
        for i, clock in enumerate(self.clock_models):
            if clock.to_mode == ToMode.UNIFORM and clock.to_max > max_to:
                raise ValueError(f'receiver {i}: to_max exceeds (L-1) taps of delay')
            if clock.to_mode == ToMode.DRIFT and clock.to_initial >= max_to:
                raise ValueError(f'receiver {i}: to_initial exceeds (L-1) taps of delay')
        self._check_los_dominates()
        return self

    def _check_los_dominates(self) -> None:
        others = [s.amplitude for s in self.static_scatterers]
        for target in self.targets:
            others.append(target.torso_gain_amplitude)
            others.extend(limb.gain_amplitude for limb in target.limbs)
        strongest = max(others, default=0.0)
        for i, rx in enumerate(self.rx_positions):
            los_aod = baseline_angle(self.tx_position, rx)
            gains = [gaussian_beam_gain(los_aod, c, self.beam_width_3db) for c in self.beam_centers]
            los_peak = self.los_amplitude * max(gains)
            if los_peak <= strongest:
                raise ValueError(
                    f'receiver {i}: LOS peak magnitude {los_peak:.4f} is not strictly larger than '
                    f'the strongest scatterer amplitude {strongest:.4f}'
                )

    @property
    def tap_delay(self) -> float:
        return 1.0 / self.bandwidth

    @property
    def tap_size(self) -> float:
        return SPEED_OF_LIGHT / self.bandwidth

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def num_receivers(self) -> int:
        return len(self.rx_positions)

    @property
    def num_frames(self) -> int:
        return int(np.floor(self.duration / self.frame_interval + 1e-9))

    @property
    def beam_spacing(self) -> float:
        if self.num_beams < 2:
            return self.beam_width_3db
        return float(np.mean(np.diff(self.beam_centers)))

    def relative_angle(self, rx_id: int, world: float) -> float:
        return wrap_to_pi(world - baseline_angle(self.tx_position, self.rx_positions[rx_id]))


class LosPolicy(str, Enum):
    REUSE = 'reuse'
    DROP = 'drop'


class SyncPolicy(StrictModel):
    kappa: float = Field(6.0, ge=0)
    relative_floor: float = Field(0.25, ge=0, lt=1)
    on_missing: LosPolicy = LosPolicy.REUSE
    min_los_power: float = Field(0.0, ge=0)
    coherent_fo: bool = False


class DetectionParams(StrictModel):
    prominence_ratio: float = Field(0.3, gt=0, le=1)
    min_separation: int = Field(3, ge=1)
    guard_taps: int = Field(2, ge=0)
    max_targets: int = Field(3, ge=1)
    height_factor: float = Field(30.0, ge=0)
    background_window: Optional[int] = Field(None, ge=1)


class TrackerParams(StrictModel):
    process_noise: float = Field(1.0, gt=0)
    sigma_range: Optional[float] = Field(None, gt=0)
    sigma_theta: Optional[float] = Field(None, gt=0)
    gate_probability: float = Field(0.99, gt=0, lt=1)
    confirm_hits: int = Field(3, ge=1)
    confirm_window: int = Field(5, ge=1)
    max_coast: int = Field(10, ge=1)
    update_rate: float = Field(100.0, gt=0)
    v_max: float = Field(2.0, gt=0)

    @model_validator(mode='after')
    def hits_fit_window(self):
        if self.confirm_hits > self.confirm_window:
            raise ValueError('confirm_hits cannot exceed confirm_window')
        return self

    def resolved(self, scene: SceneConfig) -> 'TrackerParams':
        """Fill measurement noise defaults from the scene: one tap, half a beam spacing."""
        return self.model_copy(update={
            'sigma_range': self.sigma_range or scene.tap_size,
            'sigma_theta': self.sigma_theta or scene.beam_spacing / 2.0,
        })


class StftParams(StrictModel):
    window_length: int = Field(128, ge=2)
    hop: int = Field(16, ge=1)
    window: str = 'hann'
    half_width: int = Field(2, ge=0)
    floor_db: float = 10.0
    remove_static: bool = True


class PipelineParams(StrictModel):
    sync: SyncPolicy = Field(default_factory=SyncPolicy)
    detection: DetectionParams = Field(default_factory=DetectionParams)
    tracker: TrackerParams = Field(default_factory=TrackerParams)
    stft: StftParams = Field(default_factory=StftParams)


class StageToggles(StrictModel):
    simulate: bool = True
    sync: bool = True
    detect: bool = True
    track: bool = True
    mdoppler: bool = True
    evaluate: bool = True

    def any_enabled(self) -> bool:
        return any(self.model_dump().values())


class ReceiverPaths(StrictModel):
    """Explicit per-receiver artifact paths; unset paths live under output_dir."""
    rx_id: int = Field(ge=0)
    frames: Optional[str] = None
    synced: Optional[str] = None
    sync_report: Optional[str] = None
    detections: Optional[str] = None
    tracks: Optional[str] = None
    spectrogram: Optional[str] = None


class RunManifest(StrictModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    scene: str
    output_dir: str
    receivers: List[ReceiverPaths] = Field(default_factory=list)
    stages: StageToggles = Field(default_factory=StageToggles)
    overrides: Dict[str, Any] = Field(default_factory=dict)
    ground_truth: Optional[str] = None
    seed: Optional[int] = None


class ReceiverReport(BaseModel):
    model_config = ConfigDict(extra='forbid')

    rx_id: int
    frames: int = Field(0, ge=0)
    los_detection_rate: Optional[float] = Field(None, ge=0, le=1)
    fo_residual_std: Optional[float] = Field(None, ge=0)
    detection_rate: Optional[float] = Field(None, ge=0, le=1)
    false_alarms_per_frame: Optional[float] = Field(None, ge=0)
    localization_median_error: Optional[float] = Field(None, ge=0)
    confirmed_tracks: int = Field(0, ge=0)
    track_rmse: Optional[float] = Field(None, ge=0)
    track_coverage: Optional[float] = Field(None, ge=0, le=1)
    md_peak_mae_hz: Optional[float] = Field(None, ge=0)
    mean_abs_peak_doppler_hz: Optional[float] = Field(None, ge=0)
    peak_doppler_times: List[float] = Field(default_factory=list)
    peak_doppler_hz: List[Optional[float]] = Field(default_factory=list)


class XiRatio(BaseModel):
    rx_a: int
    rx_b: int
    beta_a: float
    beta_b: float
    observed: float
    predicted: float
    relative_error: float = Field(ge=0)


class EvalReport(BaseModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: Optional[int] = None
    receivers: List[ReceiverReport] = Field(default_factory=list)
    xi_ratios: List[XiRatio] = Field(default_factory=list)
    stage_seconds: Dict[str, float] = Field(default_factory=dict, exclude=True)

    def receiver(self, rx_id: int) -> Optional[ReceiverReport]:
        return next((r for r in self.receivers if r.rx_id == rx_id), None)


class BistaticFactorRequest(StrictModel):
    tx: Point2
    rx: Point2
    p: Point2
