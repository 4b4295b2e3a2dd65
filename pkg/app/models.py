import numpy as np
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple


@dataclass
class CirFrame:
    """One per-beam channel estimate h_b(k, l): gains is [num_beams x num_taps]."""
    k: int
    rx_id: int
    gains: np.ndarray

    @property
    def num_beams(self) -> int:
        return self.gains.shape[0]

    @property
    def num_taps(self) -> int:
        return self.gains.shape[1]

    def tap_magnitude(self) -> np.ndarray:
        """Per-tap aggregate magnitude m(l) = max_b |h_b(l)|."""
        return np.abs(self.gains).max(axis=0)


@dataclass
class FrameStream:
    """A receiver's frames stacked as [K x num_beams x num_taps]."""
    rx_id: int
    frame_interval: float
    gains: np.ndarray
    frame_indices: np.ndarray = None
    synced: bool = False

    def __post_init__(self):
        if self.frame_indices is None:
            self.frame_indices = np.arange(self.gains.shape[0])
        self.frame_indices = np.asarray(self.frame_indices, dtype=int)

    def __len__(self) -> int:
        return self.gains.shape[0]

    def __iter__(self) -> Iterator[CirFrame]:
        for i in range(len(self)):
            yield self.frame(i)

    def frame(self, i: int) -> CirFrame:
        return CirFrame(k=int(self.frame_indices[i]), rx_id=self.rx_id, gains=self.gains[i])

    @classmethod
    def from_frames(cls, frames: List[CirFrame], frame_interval: float, synced: bool = False) -> 'FrameStream':
        if not frames:
            raise ValueError('cannot build a stream from zero frames')
        return cls(
            rx_id=frames[0].rx_id,
            frame_interval=frame_interval,
            gains=np.stack([f.gains for f in frames]),
            frame_indices=np.array([f.k for f in frames]),
            synced=synced
        )


@dataclass
class PathRecord:
    """Ground truth for one propagation path at one frame."""
    entity: str
    kind: str
    x: float
    y: float
    d_total: float
    excess_range: float
    tap: int
    aod: float
    doppler_hz: float
    deposited: bool


@dataclass
class GroundTruthEntry:
    rx_id: int
    k: int
    time: float
    to_shift: int
    to_seconds: float
    fo_hz: float
    fo_phase: float
    paths: List[PathRecord] = field(default_factory=list)

    @property
    def dropped(self) -> int:
        return sum(1 for p in self.paths if not p.deposited)

    def to_rows(self) -> List[Dict]:
        base = {'rx_id': self.rx_id, 'k': self.k, 'time': self.time}
        rows = [{
            **base, 'entity': 'clock', 'kind': 'clock',
            'to_shift': self.to_shift, 'to_seconds': self.to_seconds,
            'fo_hz': self.fo_hz, 'fo_phase': self.fo_phase
        }]
        for p in self.paths:
            rows.append({
                **base, 'entity': p.entity, 'kind': p.kind, 'x': p.x, 'y': p.y,
                'd_total': p.d_total, 'excess_range': p.excess_range, 'tap': p.tap,
                'aod': p.aod, 'doppler_hz': p.doppler_hz, 'deposited': p.deposited
            })
        return rows


class SyncStatus(str, Enum):
    OK = 'ok'
    LOS_MISSING = 'los_missing'
    REUSED_PREVIOUS = 'reused_previous'


@dataclass
class SyncRecord:
    k: int
    los_tap: int
    shift: int
    phase: float
    peak: float
    threshold: float
    status: SyncStatus

    def to_dict(self) -> Dict:
        return {
            'k': self.k,
            'los_tap': self.los_tap,
            'shift': self.shift,
            'phase': self.phase,
            'peak': self.peak,
            'threshold': self.threshold,
            'status': self.status.value
        }


@dataclass
class SyncReport:
    rx_id: int
    records: List[SyncRecord] = field(default_factory=list)

    def count(self, status: SyncStatus) -> int:
        return sum(1 for r in self.records if r.status == status)

    def kept_indices(self) -> np.ndarray:
        return np.array([r.k for r in self.records if r.status != SyncStatus.LOS_MISSING], dtype=int)

    def unwrapped_phases(self) -> np.ndarray:
        """Continuous LOS phase over the kept frames, for diagnostics."""
        return np.unwrap([r.phase for r in self.records if r.status != SyncStatus.LOS_MISSING])


@dataclass
class Background:
    """Static background h_bar_b(l) plus the statistics used downstream."""
    mean_magnitude: np.ndarray
    frame_count: int
    complex_mean: Optional[np.ndarray] = None
    noise_power: float = 0.0


@dataclass
class Detection:
    k: int
    rx_id: int
    tap: int
    beam: int
    power: float
    excess_range: float
    aod: float
    position: Tuple[float, float]

    def to_dict(self) -> Dict:
        return {
            'k': self.k,
            'rx_id': self.rx_id,
            'tap': self.tap,
            'beam': self.beam,
            'power': self.power,
            'range': self.excess_range,
            'theta': self.aod,
            'x': self.position[0],
            'y': self.position[1]
        }


class TrackStatus(str, Enum):
    TENTATIVE = 'tentative'
    CONFIRMED = 'confirmed'
    COASTING = 'coasting'
    DEAD = 'dead'


@dataclass
class Track:
    """EKF track with state [x, y, vx, vy] and covariance P."""
    id: int
    x: np.ndarray
    P: np.ndarray
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    misses: int = 0
    recent: List[bool] = field(default_factory=lambda: [True])
    last_update_k: int = 0
    created_k: int = 0
    confirmed_k: Optional[int] = None

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[2:]

    @property
    def alive(self) -> bool:
        return self.status != TrackStatus.DEAD


@dataclass
class TrackState:
    k: int
    rx_id: int
    track_id: int
    x: float
    y: float
    vx: float
    vy: float
    status: TrackStatus

    def to_dict(self) -> Dict:
        return {
            'k': self.k,
            'rx_id': self.rx_id,
            'track_id': self.track_id,
            'x': self.x,
            'y': self.y,
            'vx': self.vx,
            'vy': self.vy,
            'status': self.status.value
        }


@dataclass
class SlowTime:
    """One complex sample per frame at the target's taps; gaps are frames without a track."""
    rx_id: int
    frame_indices: np.ndarray
    samples: np.ndarray
    gaps: List[int] = field(default_factory=list)

    def uniform(self) -> Tuple[np.ndarray, np.ndarray]:
        """Zero-filled series over the covered frame range."""
        if len(self.frame_indices) == 0:
            return np.array([], dtype=int), np.array([], dtype=complex)
        start, stop = int(self.frame_indices[0]), int(self.frame_indices[-1])
        ks = np.arange(start, stop + 1)
        series = np.zeros(len(ks), dtype=complex)
        series[self.frame_indices - start] = self.samples
        return ks, series


@dataclass
class Spectrogram:
    """Magnitude [time bins x Doppler bins] with axes in seconds and Hz."""
    magnitude: np.ndarray
    times: np.ndarray
    doppler: np.ndarray
    window_length: int
    hop: int
    window: str
    frame_interval: float
    rx_id: int = 0

    def sidecar(self) -> Dict:
        return {
            'rx_id': self.rx_id,
            'frame_interval': self.frame_interval,
            'window_length': self.window_length,
            'hop': self.hop,
            'window': self.window,
            'num_times': int(self.magnitude.shape[0]),
            'num_doppler': int(self.magnitude.shape[1]),
            'times': [float(t) for t in self.times],
            'doppler': [float(f) for f in self.doppler]
        }


@dataclass
class BistaticGeometrySample:
    tx: Tuple[float, float]
    rx: Tuple[float, float]
    target: Tuple[float, float]
    beta: float
    xi: float

    def to_dict(self) -> Dict:
        return {
            'tx': list(self.tx),
            'rx': list(self.rx),
            'target': list(self.target),
            'beta': self.beta,
            'xi': self.xi
        }
