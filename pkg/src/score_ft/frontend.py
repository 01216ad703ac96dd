"""WAV ingestion and log-mel filterbank features."""

from __future__ import annotations

import os
import wave
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .core import FeatureSequence, Waveform

__all__ = [
    "MelConfig",
    "WavFormatError",
    "load_wav",
    "save_wav",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "mel_center_frequencies",
    "n_frames",
    "log_mel",
]


class WavFormatError(ValueError):
    """The file is not 16-bit PCM mono WAV at the expected rate."""


@dataclass(frozen=True)
class MelConfig:
    sample_rate_hz: int = 16000
    win_length_samples: int = 400
    hop_length_samples: int = 160
    n_fft: int = 512
    n_mels: int = 40
    fmin_hz: float = 20.0
    fmax_hz: float = 7600.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.win_length_samples < 1 or self.win_length_samples > self.n_fft:
            raise ValueError(
                f"win_length_samples must be in [1, n_fft={self.n_fft}], got {self.win_length_samples}"
            )
        if self.hop_length_samples < 1:
            raise ValueError(f"hop_length_samples must be >= 1, got {self.hop_length_samples}")
        if self.n_mels < 1:
            raise ValueError(f"n_mels must be >= 1, got {self.n_mels}")
        if not 0.0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise ValueError(
                f"need 0 <= fmin_hz < fmax_hz <= sample_rate/2, got fmin={self.fmin_hz}, fmax={self.fmax_hz}"
            )
        if self.log_floor <= 0:
            raise ValueError(f"log_floor must be positive, got {self.log_floor}")

    def to_dict(self):
        return asdict(self)


def load_wav(path, expected_rate=None) -> Waveform:
    """Read a 16-bit PCM mono WAV file.

    Samples are scaled by 1/32768. If ``expected_rate`` is given, a file at
    any other rate is rejected; nothing is resampled.
    """
    name = os.fspath(path)
    try:
        with wave.open(name, "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{name}: not a PCM WAV file ({exc})") from exc
    except EOFError as exc:
        raise WavFormatError(f"{name}: truncated WAV header") from exc
    if channels != 1:
        raise WavFormatError(f"{name}: mono required, file has {channels} channels")
    if width != 2:
        raise WavFormatError(f"{name}: 16-bit PCM required, file has {8 * width}-bit samples")
    if expected_rate is not None and rate != expected_rate:
        raise WavFormatError(f"{name}: sample rate {rate} Hz, pipeline expects {expected_rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise WavFormatError(f"{name}: no samples")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def _quantize(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")


def save_wav(w: Waveform, path) -> None:
    """Write ``w`` as 16-bit PCM mono. Out-of-range amplitudes are clipped with a warning."""
    samples = w.samples
    if samples.size == 0:
        raise ValueError("cannot write an empty waveform")
    peak = float(np.max(np.abs(samples)))
    if peak > 1.0:
        warnings.warn(f"clipping waveform with peak amplitude {peak:.3f} to [-1, 1]", RuntimeWarning, stacklevel=2)
        samples = np.clip(samples, -1.0, 1.0)
    with wave.open(os.fspath(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate_hz)
        wf.writeframes(_quantize(samples).tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2))
    return edges[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2))
    bins = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate_hz / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def n_frames(n_samples: int, win: int, hop: int) -> int:
    return 1 + (n_samples - win) // hop


def log_mel(w: Waveform, cfg: MelConfig = MelConfig()) -> FeatureSequence:
    """Log mel energies, one frame per hop, no centering or padding.

    Frames: Hann window of ``win_length_samples`` zero-padded to ``n_fft``,
    power spectrum, triangular mel filters, ``ln(max(energy, log_floor))``.
    """
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(f"waveform is {w.sample_rate_hz} Hz, mel config expects {cfg.sample_rate_hz} Hz")
    x = w.samples
    win, hop = cfg.win_length_samples, cfg.hop_length_samples
    if x.shape[0] < win:
        raise ValueError(f"waveform has {x.shape[0]} samples, shorter than one window ({win})")
    t = n_frames(x.shape[0], win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:t]
    window = np.hanning(win + 1)[:-1]  # periodic Hann
    power = np.abs(np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)) ** 2
    energy = power @ mel_filterbank(cfg).T
    feats = np.log(np.maximum(energy, cfg.log_floor))
    return FeatureSequence(feats, frame_hop_s=hop / cfg.sample_rate_hz)
