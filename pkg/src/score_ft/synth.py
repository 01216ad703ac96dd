"""Synthetic speech-like corpus: harmonic tones with a per-utterance
fundamental and a sequence of changing spectral envelopes ("phones")."""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from .core import Waveform
from .frontend import save_wav

__all__ = ["harmonic_utterance", "make_corpus", "write_corpus"]


def harmonic_utterance(rng: np.random.Generator, sample_rate: int = 16000,
                       min_s: float = 1.0, max_s: float = 2.0,
                       f0_range=(100.0, 250.0), n_segments=(3, 7), noise_std: float = 3e-3) -> Waveform:
    """One utterance: fixed f0, harmonic amplitudes follow a piecewise envelope.

    Each segment has two or three Gaussian "formant" bumps; adjacent
    segments are crossfaded over 20 ms. A white-noise floor of
    ``noise_std`` stands in for recording noise, so empty bands are not at
    the log floor.
    """
    n = int(rng.uniform(min_s, max_s) * sample_rate)
    f0 = rng.uniform(*f0_range)
    n_harm = int(min(sample_rate / 2 - 200, 4000) // f0)
    harm_freqs = f0 * np.arange(1, n_harm + 1)
    n_seg = int(rng.integers(n_segments[0], n_segments[1] + 1))

    bounds = np.sort(rng.uniform(0, n, n_seg - 1)).astype(int)
    edges = np.concatenate([[0], bounds, [n]])
    envelopes = []
    for _ in range(n_seg):
        centers = rng.uniform(250, 3500, size=int(rng.integers(2, 4)))
        widths = rng.uniform(100, 400, size=centers.size)
        env = np.exp(-0.5 * ((harm_freqs[:, None] - centers) / widths) ** 2).sum(axis=1) + 0.02
        envelopes.append(env)
    envelopes = np.array(envelopes)  # (n_seg, n_harm)

    # per-sample segment weights with short linear crossfades
    t = np.arange(n)
    fade = int(0.02 * sample_rate)
    weights = np.zeros((n_seg, n))
    for s in range(n_seg):
        rise = np.clip((t - edges[s] + fade / 2) / fade, 0, 1) if s > 0 else np.ones(n)
        fall = np.clip((edges[s + 1] + fade / 2 - t) / fade, 0, 1) if s < n_seg - 1 else np.ones(n)
        weights[s] = np.minimum(rise, fall)
    weights /= weights.sum(axis=0, keepdims=True)

    phases = rng.uniform(0, 2 * np.pi, size=n_harm)
    amp = weights.T @ envelopes  # (n, n_harm)
    carriers = np.sin(2 * np.pi * harm_freqs[None, :] * t[:, None] / sample_rate + phases)
    x = np.sum(amp * carriers, axis=1)
    x *= 0.5 / np.max(np.abs(x))
    x += rng.normal(0.0, noise_std, size=n)
    return Waveform(x, sample_rate)


def make_corpus(n: int, seed: int = 0, sample_rate: int = 16000) -> List[Waveform]:
    rng = np.random.default_rng(seed)
    return [harmonic_utterance(rng, sample_rate) for _ in range(n)]


def write_corpus(out_dir, n: int, seed: int = 0, sample_rate: int = 16000) -> List[Path]:
    """Write ``n`` utterances as WAV files; returns their paths (a manifest)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, w in enumerate(make_corpus(n, seed, sample_rate)):
        p = out / f"utt_{k:04d}.wav"
        save_wav(w, p)
        paths.append(p)
    return paths
