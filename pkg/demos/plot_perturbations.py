"""
Speed and pitch perturbations
=============================

Speed perturbation resamples the waveform, so both tempo and pitch move.
Pitch shifting keeps the duration and moves only the pitch.
We check both on pure tones and then on a synthetic utterance.
"""

import numpy as np

from score_ft.core import Waveform
from score_ft.frontend import log_mel
from score_ft.perturb import PerturbConfig, make_perturbed, perturb_rng, pitch_shift, speed_perturb
from score_ft.synth import make_corpus

SR = 16000


def tone(freq, seconds=1.0):
    t = np.arange(int(seconds * SR)) / SR
    return Waveform(0.5 * np.sin(2 * np.pi * freq * t), SR)


def peak(w):
    spec = np.abs(np.fft.rfft(w.samples * np.hanning(len(w))))
    return np.argmax(spec) * SR / len(w)


a = tone(440)
for f in (0.9, 1.0, 1.1):
    s = speed_perturb(a, f)
    print(f"speed {f}: {len(a)} -> {len(s)} samples, peak {peak(s):.0f} Hz")

b = tone(220)
for st in (-2, -1, 0, 1, 2, 12):
    p = pitch_shift(b, st)
    print(f"pitch {st:+d} st: peak {peak(p):.0f} Hz (expected {220 * 2 ** (st / 12):.0f}), length {len(p)}")

# Random draws as used during training: one speed factor and one shift per draw.
utt = make_corpus(1, seed=3)[0]
cfg = PerturbConfig()
for draw in range(4):
    w = make_perturbed(utt, cfg, perturb_rng(cfg.seed, draw))
    print(f"draw {draw}: {len(utt)} -> {len(w)} samples, {log_mel(w).frames.shape[0]} frames")
