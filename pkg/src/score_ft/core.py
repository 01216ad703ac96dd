"""Shared value types and the ``.fseq`` binary feature-file codec.

All numerics are float64 in memory. Feature files store float32.

``.fseq`` layout (little-endian)::

    offset  size  field
    0       4     magic b"FSEQ"
    4       4     uint32 version (= 1)
    8       4     uint32 T (frames)
    12      4     uint32 D (dims per frame)
    16      4*T*D float32 payload, frame-major
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

__all__ = [
    "Waveform",
    "FeatureSequence",
    "AlignmentPath",
    "FeatureFileError",
    "as_frames",
    "write_feature_file",
    "read_feature_file",
    "FSEQ_MAGIC",
    "FSEQ_VERSION",
]

FSEQ_MAGIC = b"FSEQ"
FSEQ_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FeatureFileError(ValueError):
    """Raised for malformed ``.fseq`` files."""


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono PCM audio as float64 samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """A T x D matrix of frame vectors.

    ``frame_hop_s`` is optional metadata (seconds between frames).
    """

    frames: np.ndarray
    frame_hop_s: Optional[float] = None

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be a non-empty T x D matrix, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain NaN or Inf")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.n_frames

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return self.frames.shape == other.frames.shape and bool(np.array_equal(self.frames, other.frames))


def as_frames(x: Union[FeatureSequence, np.ndarray, Sequence]) -> np.ndarray:
    """Return a float64 ``(T, D)`` array from a FeatureSequence or array-like."""
    if isinstance(x, FeatureSequence):
        return x.frames
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty T x D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class AlignmentPath:
    """Monotonic warping path through an m x n grid, 1-based index pairs."""

    steps: Tuple[Tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        steps = tuple((int(i), int(j)) for i, j in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise ValueError("alignment path is empty")
        if steps[0] != (1, 1):
            raise ValueError(f"path must start at (1, 1), starts at {steps[0]}")
        for (i0, j0), (i1, j1) in zip(steps, steps[1:]):
            if (i1 - i0, j1 - j0) not in ((1, 0), (0, 1), (1, 1)):
                raise ValueError(f"illegal step {(i0, j0)} -> {(i1, j1)}")

    @property
    def end(self) -> Tuple[int, int]:
        return self.steps[-1]

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def cost(self, cost_matrix: np.ndarray) -> float:
        idx = np.array(self.steps) - 1
        return float(cost_matrix[idx[:, 0], idx[:, 1]].sum())


def write_feature_file(seq: Union[FeatureSequence, np.ndarray], path) -> None:
    frames = as_frames(seq)
    t, d = frames.shape
    payload = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(FSEQ_MAGIC, FSEQ_VERSION, t, d))
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write feature file {os.fspath(path)!r}: {exc.strerror or exc}") from exc


def read_feature_file(path) -> FeatureSequence:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read feature file {os.fspath(path)!r}: {exc.strerror or exc}") from exc
    if len(blob) < _HEADER.size:
        raise FeatureFileError(f"{os.fspath(path)}: truncated header ({len(blob)} bytes, need {_HEADER.size})")
    magic, version, t, d = _HEADER.unpack_from(blob)
    if magic != FSEQ_MAGIC:
        raise FeatureFileError(f"{os.fspath(path)}: bad magic {magic!r} (expected {FSEQ_MAGIC!r})")
    if version != FSEQ_VERSION:
        raise FeatureFileError(f"{os.fspath(path)}: unsupported version {version} (expected {FSEQ_VERSION})")
    if t < 1 or d < 1:
        raise FeatureFileError(f"{os.fspath(path)}: empty shape T={t}, D={d}")
    need = 4 * t * d
    have = len(blob) - _HEADER.size
    if have < need:
        raise FeatureFileError(f"{os.fspath(path)}: truncated payload ({have} bytes, need {need} for T={t}, D={d})")
    if have > need:
        raise FeatureFileError(f"{os.fspath(path)}: {have - need} trailing bytes after payload")
    frames = np.frombuffer(blob, dtype="<f4", count=t * d, offset=_HEADER.size).reshape(t, d)
    return FeatureSequence(frames.astype(np.float64))
