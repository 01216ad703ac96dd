"""Content-preserving perturbations: speed perturbation then pitch shift."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import Waveform

__all__ = [
    "PerturbConfig",
    "speed_perturb",
    "pitch_shift",
    "phase_vocoder_stretch",
    "draw_perturbation",
    "make_perturbed",
    "perturb_rng",
]

PV_N_FFT = 1024
PV_HOP = 256


@dataclass(frozen=True)
class PerturbConfig:
    speed_factors: Tuple[float, ...] = (0.9, 1.0, 1.1)
    pitch_semitone_choices: Tuple[int, ...] = (-2, -1, 0, 1, 2)
    seed: int = 42

    def __post_init__(self):
        speeds = tuple(float(s) for s in self.speed_factors)
        semis = tuple(int(s) for s in self.pitch_semitone_choices)
        if not speeds:
            raise ValueError("speed_factors must be non-empty")
        if not semis:
            raise ValueError("pitch_semitone_choices must be non-empty")
        for s in speeds:
            if not 0.5 < s < 2.0:
                raise ValueError(f"speed factor {s} outside (0.5, 2.0)")
        for s in semis:
            if not -12 <= s <= 12:
                raise ValueError(f"semitone choice {s} outside [-12, 12]")
        if int(self.seed) < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        object.__setattr__(self, "speed_factors", speeds)
        object.__setattr__(self, "pitch_semitone_choices", semis)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _resample_linear(x: np.ndarray, factor: float) -> np.ndarray:
    # Output sample t reads input position t * factor.
    n_out = _round_half_up(x.shape[0] / factor)
    pos = np.arange(n_out) * factor
    return np.interp(pos, np.arange(x.shape[0]), x)


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Play ``w`` ``factor`` times faster: length /factor, frequencies *factor."""
    if not 0.5 < factor < 2.0:
        raise ValueError(f"speed factor {factor} outside (0.5, 2.0)")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    return Waveform(_resample_linear(w.samples, factor), w.sample_rate_hz)


def phase_vocoder_stretch(x: np.ndarray, stretch: float, out_length: int,
                          n_fft: int = PV_N_FFT, hop: int = PV_HOP) -> np.ndarray:
    """Time-stretch ``x`` by ``stretch`` (>1 lengthens) keeping frequencies.

    Synthesis hop is ``round(hop * stretch)``. The result is cut or
    zero-padded to ``out_length`` samples.
    """
    if x.shape[0] < n_fft:
        raise ValueError(f"signal has {x.shape[0]} samples, shorter than one STFT window ({n_fft})")
    hop_s = max(1, _round_half_up(hop * stretch))
    half = n_fft // 2
    padded = np.pad(x, (half, half + hop))
    n_fr = 1 + (padded.shape[0] - n_fft) // hop
    window = np.hanning(n_fft + 1)[:-1]
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_fr]
    spec = np.fft.rfft(frames * window, axis=1)
    mag, phase = np.abs(spec), np.angle(spec)

    omega = 2.0 * np.pi * np.arange(n_fft // 2 + 1) / n_fft
    delta = np.diff(phase, axis=0) - omega * hop
    delta = np.mod(delta + np.pi, 2.0 * np.pi) - np.pi
    inst_freq = omega + delta / hop
    out_phase = np.empty_like(phase)
    out_phase[0] = phase[0]
    out_phase[1:] = phase[0] + np.cumsum(inst_freq * hop_s, axis=0)

    synth = np.fft.irfft(mag * np.exp(1j * out_phase), n=n_fft, axis=1) * window
    total = (n_fr - 1) * hop_s + n_fft
    out = np.zeros(total)
    wsum = np.zeros(total)
    wsq = window ** 2
    for f in range(n_fr):
        s = f * hop_s
        out[s:s + n_fft] += synth[f]
        wsum[s:s + n_fft] += wsq
    out /= np.maximum(wsum, 1e-3 * wsq.max())
    out = out[half:half + out_length]
    if out.shape[0] < out_length:
        out = np.pad(out, (0, out_length - out.shape[0]))
    return out


def pitch_shift(w: Waveform, semitones: int) -> Waveform:
    """Scale all frequencies by ``2 ** (semitones / 12)`` with duration kept.

    Resamples by the ratio (moving pitch and duration together), then
    phase-vocoder stretches back to the input length.
    """
    if int(semitones) != semitones or not -12 <= semitones <= 12:
        raise ValueError(f"semitones {semitones} outside integer range [-12, 12]")
    if semitones == 0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    if len(w) < PV_N_FFT:
        raise ValueError(f"waveform has {len(w)} samples, shorter than one STFT window ({PV_N_FFT})")
    ratio = 2.0 ** (semitones / 12.0)
    shifted = _resample_linear(w.samples, ratio)
    out = phase_vocoder_stretch(shifted, ratio, len(w))
    return Waveform(out, w.sample_rate_hz)


def perturb_rng(seed: int, draw_index: int) -> np.random.Generator:
    """Independent generator for one perturbation draw."""
    return np.random.default_rng([int(seed), int(draw_index)])


def draw_perturbation(cfg: PerturbConfig, rng: np.random.Generator) -> Tuple[float, int]:
    factor = cfg.speed_factors[rng.integers(len(cfg.speed_factors))]
    semis = cfg.pitch_semitone_choices[rng.integers(len(cfg.pitch_semitone_choices))]
    return factor, semis


def make_perturbed(w: Waveform, cfg: PerturbConfig, rng: np.random.Generator) -> Waveform:
    """Draw a speed factor and a semitone shift, apply speed first, then pitch."""
    factor, semis = draw_perturbation(cfg, rng)
    return pitch_shift(speed_perturb(w, factor), semis)
