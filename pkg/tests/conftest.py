import sys

import numpy as np
import pytest

from score_ft.model import backward, encode, forward, project_l2
from score_ft.softdtw import normalized_divergence


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def peak_hz(samples, sample_rate):
    """Frequency of the largest Hann-windowed FFT bin, with parabolic refinement."""
    spec = np.abs(np.fft.rfft(samples * np.hanning(len(samples))))
    k = int(np.argmax(spec[1:-1])) + 1
    a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
    offset = 0.5 * (a - c) / (a - 2 * b + c)
    return (k + offset) * sample_rate / len(samples)


def sine(freq, seconds=1.0, sample_rate=16000, amp=0.5):
    from score_ft.core import Waveform

    t = np.arange(int(seconds * sample_rate)) / sample_rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sample_rate)


def _twin_loss_grads(theta, phi, head, a, b):
    x, ct = forward(theta, head, a, True)
    y, cf = forward(phi, head, b, False)
    _, gx, gy = normalized_divergence(x, y)
    g = backward(theta, head, ct, gx)
    g += backward(phi, head, cf, gy)
    return g


def _twin_loss(theta, phi, head, a, b):
    return normalized_divergence(project_l2(head, encode(theta, a)), project_l2(head, encode(phi, b)))[0]


def check_end_to_end_gradients(theta, head, a, b, rtol):
    """Finite-difference every learnable and head parameter of the twin loss."""
    phi = theta.copy()
    # move the learnable twin away from the frozen one so the loss is not at a stationary point
    rng = np.random.default_rng(99)
    for layer in theta.learnable_layers:
        layer.weight += rng.normal(scale=0.05, size=layer.weight.shape)
    g = _twin_loss_grads(theta, phi, head, a, b)
    for layer, (dw, db) in zip(theta.learnable_layers, g.layers):
        for name, analytic in (("weight", dw), ("bias", db)):
            target = getattr(layer, name)
            original = target.copy()

            def f(v):
                target[...] = v
                return _twin_loss(theta, phi, head, a, b)

            numeric = central_diff(f, original)
            target[...] = original
            np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=1e-9)
    for name, analytic in (("weight", g.head[0]), ("bias", g.head[1])):
        target = getattr(head, name)
        original = target.copy()

        def f(v):
            target[...] = v
            return _twin_loss(theta, phi, head, a, b)

        numeric = central_diff(f, original)
        target[...] = original
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=1e-9)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(report):
        ok, name, detail = report[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {name} -- {detail}")
