"""
Readers and writers for every artifact the pipeline produces.

Binary payloads are little-endian float64 (complex as real, imaginary);
delimited text uses '.' decimals and 17 significant digits so values read
back bit-identical. Byte layouts are documented in FORMATS.md.
"""

import json
import logging
import os
import struct
import numpy as np
import pandas as pd
from pydantic import ValidationError
from typing import Dict, List, Optional, Sequence, Tuple

from app.errors import CodecError, ConfigError
from app.models import (
    Detection, FrameStream, Spectrogram, SyncRecord, SyncReport, SyncStatus, TrackState, TrackStatus
)
from app.schemas import RunManifest, SceneConfig
from app.services.microdoppler import spectrogram_db
from app.services.simulator import GROUND_TRUTH_COLUMNS

logger = logging.getLogger(__name__)

FRAMES_MAGIC = b'CIRS'
SPECTROGRAM_MAGIC = b'SPEC'
FORMAT_VERSION = 1

FRAMES_HEADER = struct.Struct('<4sIIIIdII')   # magic, version, K, N_b, L, T, rx_id, flags
SPECTROGRAM_HEADER = struct.Struct('<4sIIIId')  # magic, version, times, doppler bins, rx_id, T

FLAG_SYNCED = 0x1
FLAG_FRAME_INDICES = 0x2

COMPLEX_DTYPE = np.dtype('<c16')
FLOAT_DTYPE = np.dtype('<f8')
INDEX_DTYPE = np.dtype('<u4')
MAX_PAYLOAD_BYTES = 1 << 40

FLOAT_FORMAT = '%.17g'

DETECTION_COLUMNS = ['k', 'rx_id', 'tap', 'beam', 'power', 'range', 'theta', 'x', 'y']
TRACK_COLUMNS = ['k', 'rx_id', 'track_id', 'x', 'y', 'vx', 'vy', 'status']
SYNC_COLUMNS = ['k', 'los_tap', 'shift', 'phase', 'peak', 'threshold', 'status']
DOPPLER_COLUMNS = ['time', 'doppler_hz']


# Frame streams

def encode_frames(stream: FrameStream) -> bytes:
    num_frames, num_beams, num_taps = stream.gains.shape
    flags = FLAG_SYNCED if stream.synced else 0
    indices = np.asarray(stream.frame_indices)
    explicit = not np.array_equal(indices, np.arange(num_frames))
    if explicit:
        flags |= FLAG_FRAME_INDICES
    header = FRAMES_HEADER.pack(
        FRAMES_MAGIC, FORMAT_VERSION, num_frames, num_beams, num_taps,
        float(stream.frame_interval), stream.rx_id, flags
    )
    parts = [header]
    if explicit:
        parts.append(indices.astype(INDEX_DTYPE).tobytes())
    parts.append(np.ascontiguousarray(stream.gains, dtype=COMPLEX_DTYPE).tobytes())
    return b''.join(parts)


def _check_header(magic: bytes, expected: bytes, version: int) -> None:
    if magic != expected:
        raise CodecError(f'bad magic {magic!r}, expected {expected!r}')
    if version != FORMAT_VERSION:
        raise CodecError(f'unsupported format version {version} (expected {FORMAT_VERSION})')


def decode_frames(data: bytes) -> FrameStream:
    if len(data) < FRAMES_HEADER.size:
        raise CodecError(f'truncated frame file: {len(data)} bytes is shorter than the header')
    magic, version, num_frames, num_beams, num_taps, interval, rx_id, flags = FRAMES_HEADER.unpack_from(data)
    _check_header(magic, FRAMES_MAGIC, version)
    if num_beams == 0 or num_taps == 0:
        raise CodecError(f'invalid dimensions N_b={num_beams}, L={num_taps}')
    payload = num_frames * num_beams * num_taps * COMPLEX_DTYPE.itemsize
    if payload > MAX_PAYLOAD_BYTES:
        raise CodecError(f'dimension overflow: {num_frames}x{num_beams}x{num_taps} frames')

    offset = FRAMES_HEADER.size
    indices = None
    if flags & FLAG_FRAME_INDICES:
        index_bytes = num_frames * INDEX_DTYPE.itemsize
        if len(data) < offset + index_bytes:
            raise CodecError('truncated frame file: frame index table is incomplete')
        indices = np.frombuffer(data, dtype=INDEX_DTYPE, count=num_frames, offset=offset).astype(int)
        offset += index_bytes
    if len(data) != offset + payload:
        raise CodecError(
            f'frame file holds {len(data) - offset} payload bytes, header promises {payload}'
        )
    gains = np.frombuffer(data, dtype=COMPLEX_DTYPE, count=num_frames * num_beams * num_taps, offset=offset)
    return FrameStream(
        rx_id=rx_id,
        frame_interval=interval,
        gains=gains.reshape(num_frames, num_beams, num_taps).astype(complex),
        frame_indices=indices,
        synced=bool(flags & FLAG_SYNCED)
    )


def write_frames(path: str, stream: FrameStream) -> None:
    with open(path, 'wb') as f:
        f.write(encode_frames(stream))
    logger.info(f"Wrote {len(stream)} frames to {path}")


def read_frames(path: str) -> FrameStream:
    with open(path, 'rb') as f:
        return decode_frames(f.read())


# Delimited text

def _write_csv(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _read_csv(path: str, columns: Sequence[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.EmptyDataError as e:
        raise CodecError(f'{path} is empty') from e
    except pd.errors.ParserError as e:
        raise CodecError(f'{path} is not valid delimited text: {e}') from e
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise CodecError(f'{path} is missing columns {missing}')
    return df


def detections_frame(detections: Sequence[Detection]) -> pd.DataFrame:
    return pd.DataFrame([d.to_dict() for d in detections], columns=DETECTION_COLUMNS)


def write_detections(path: str, detections: Sequence[Detection]) -> None:
    _write_csv(detections_frame(detections), path)


def read_detections(path: str) -> List[Detection]:
    df = _read_csv(path, DETECTION_COLUMNS)
    return [
        Detection(
            k=int(row.k), rx_id=int(row.rx_id), tap=int(row.tap), beam=int(row.beam),
            power=float(row.power), excess_range=float(row.range), aod=float(row.theta),
            position=(float(row.x), float(row.y))
        )
        for row in df.itertuples(index=False)
    ]


def write_tracks(path: str, states: Sequence[TrackState]) -> None:
    _write_csv(pd.DataFrame([s.to_dict() for s in states], columns=TRACK_COLUMNS), path)


def read_tracks(path: str) -> List[TrackState]:
    df = _read_csv(path, TRACK_COLUMNS)
    try:
        return [
            TrackState(
                k=int(row.k), rx_id=int(row.rx_id), track_id=int(row.track_id),
                x=float(row.x), y=float(row.y), vx=float(row.vx), vy=float(row.vy),
                status=TrackStatus(row.status)
            )
            for row in df.itertuples(index=False)
        ]
    except ValueError as e:
        raise CodecError(f'{path}: {e}') from e


def write_sync_report(path: str, report: SyncReport) -> None:
    _write_csv(pd.DataFrame([r.to_dict() for r in report.records], columns=SYNC_COLUMNS), path)


def read_sync_report(path: str, rx_id: int) -> SyncReport:
    df = _read_csv(path, SYNC_COLUMNS)
    try:
        records = [
            SyncRecord(
                k=int(row.k), los_tap=int(row.los_tap), shift=int(row.shift), phase=float(row.phase),
                peak=float(row.peak), threshold=float(row.threshold), status=SyncStatus(row.status)
            )
            for row in df.itertuples(index=False)
        ]
    except ValueError as e:
        raise CodecError(f'{path}: {e}') from e
    return SyncReport(rx_id=rx_id, records=records)


def write_ground_truth(path: str, ground_truth: pd.DataFrame) -> None:
    _write_csv(ground_truth, path)


def read_ground_truth(path: str) -> pd.DataFrame:
    df = _read_csv(path, GROUND_TRUTH_COLUMNS)
    # clock rows leave it blank, so pandas may hand back strings
    df['deposited'] = df['deposited'].map({True: True, False: False, 'True': True, 'False': False})
    return df[GROUND_TRUTH_COLUMNS]


def write_peak_doppler(path: str, times: Sequence[float], doppler_hz: Sequence[float]) -> None:
    _write_csv(pd.DataFrame({'time': np.asarray(times, dtype=float),
                             'doppler_hz': np.asarray(doppler_hz, dtype=float)}), path)


def read_peak_doppler(path: str) -> Tuple[np.ndarray, np.ndarray]:
    df = _read_csv(path, DOPPLER_COLUMNS)
    return df['time'].to_numpy(dtype=float), df['doppler_hz'].to_numpy(dtype=float)


# Spectrograms

def encode_spectrogram(spec: Spectrogram) -> bytes:
    num_times, num_doppler = spec.magnitude.shape
    header = SPECTROGRAM_HEADER.pack(
        SPECTROGRAM_MAGIC, FORMAT_VERSION, num_times, num_doppler, spec.rx_id, float(spec.frame_interval)
    )
    return header + np.ascontiguousarray(spec.magnitude, dtype=FLOAT_DTYPE).tobytes()


def decode_spectrogram(data: bytes, sidecar: Dict) -> Spectrogram:
    if len(data) < SPECTROGRAM_HEADER.size:
        raise CodecError('truncated spectrogram file')
    magic, version, num_times, num_doppler, rx_id, interval = SPECTROGRAM_HEADER.unpack_from(data)
    _check_header(magic, SPECTROGRAM_MAGIC, version)
    payload = num_times * num_doppler * FLOAT_DTYPE.itemsize
    if payload > MAX_PAYLOAD_BYTES:
        raise CodecError(f'dimension overflow: {num_times}x{num_doppler} spectrogram')
    if len(data) != SPECTROGRAM_HEADER.size + payload:
        raise CodecError(
            f'spectrogram holds {len(data) - SPECTROGRAM_HEADER.size} payload bytes, header promises {payload}'
        )
    try:
        times = np.asarray(sidecar['times'], dtype=float)
        doppler = np.asarray(sidecar['doppler'], dtype=float)
        window_length, hop, window = int(sidecar['window_length']), int(sidecar['hop']), str(sidecar['window'])
    except (KeyError, TypeError, ValueError) as e:
        raise CodecError(f'malformed spectrogram sidecar: {e}') from e
    if times.size != num_times or doppler.size != num_doppler:
        raise CodecError('spectrogram sidecar axes do not match the matrix dimensions')
    magnitude = np.frombuffer(data, dtype=FLOAT_DTYPE, count=num_times * num_doppler,
                              offset=SPECTROGRAM_HEADER.size)
    return Spectrogram(
        magnitude=magnitude.reshape(num_times, num_doppler).astype(float),
        times=times,
        doppler=doppler,
        window_length=window_length,
        hop=hop,
        window=window,
        frame_interval=interval,
        rx_id=rx_id
    )


def sidecar_path(path: str) -> str:
    return os.path.splitext(path)[0] + '.json'


def write_spectrogram(path: str, spec: Spectrogram) -> None:
    """Binary matrix at `path` plus a JSON sidecar with axes and STFT parameters."""
    with open(path, 'wb') as f:
        f.write(encode_spectrogram(spec))
    with open(sidecar_path(path), 'w') as f:
        json.dump(spec.sidecar(), f, indent=2)


def read_spectrogram(path: str) -> Spectrogram:
    with open(sidecar_path(path)) as f:
        try:
            sidecar = json.load(f)
        except json.JSONDecodeError as e:
            raise CodecError(f'malformed spectrogram sidecar: {e}') from e
    with open(path, 'rb') as f:
        return decode_spectrogram(f.read(), sidecar)


def write_spectrogram_csv(path: str, spec: Spectrogram) -> None:
    """Long-format plotting export: one row per (time, Doppler) cell, magnitude and dB."""
    times = np.repeat(spec.times, spec.doppler.size)
    doppler = np.tile(spec.doppler, spec.times.size)
    _write_csv(pd.DataFrame({
        'time': times,
        'doppler_hz': doppler,
        'magnitude': spec.magnitude.ravel(),
        'magnitude_db': spectrogram_db(spec).ravel()
    }), path)


# Configuration documents

def load_scene(path: str) -> SceneConfig:
    with open(path) as f:
        text = f.read()
    try:
        return SceneConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f'invalid scene {path}: {e}') from e


def save_scene(path: str, scene: SceneConfig) -> None:
    with open(path, 'w') as f:
        f.write(scene.model_dump_json(indent=2))


def load_manifest(path: str) -> RunManifest:
    with open(path) as f:
        text = f.read()
    try:
        return RunManifest.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f'invalid manifest {path}: {e}') from e


def save_manifest(path: str, manifest: RunManifest) -> None:
    with open(path, 'w') as f:
        f.write(manifest.model_dump_json(indent=2))


def scene_from_dict(data: Dict) -> SceneConfig:
    try:
        return SceneConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f'invalid scene: {e}') from e


def manifest_from_dict(data: Dict) -> RunManifest:
    try:
        return RunManifest.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f'invalid manifest: {e}') from e


def optional_path(path: Optional[str]) -> Optional[str]:
    return path if path and os.path.exists(path) else None
