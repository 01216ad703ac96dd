"""Frame-wise encoder stack, projection head with L2 normalization, and
exact reverse-mode gradients.

Checkpoint files (``.sckp``, little-endian)::

    magic b"SCKP" | uint32 version (= 1) | uint32 tensor count
    per tensor: uint32 name length | name (UTF-8) | uint32 rows | uint32 cols
                | rows*cols float32, row-major

Tensor names: ``theta.<k>.weight``, ``theta.<k>.bias`` (bias stored as a
1 x D row), ``phi.<k>.*`` for the frozen twin, ``head.weight``,
``head.bias``, and ``meta.activations`` / ``meta.n_frozen`` (small
float-coded tensors).
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import as_frames

__all__ = [
    "Layer",
    "EncoderParams",
    "ProjectionHead",
    "ForwardCache",
    "Gradients",
    "init_encoder",
    "init_head",
    "encode",
    "project_l2",
    "forward",
    "backward",
    "param_hash",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "L2_EPS",
]

L2_EPS = 1e-12
ACTIVATIONS = ("identity", "tanh")
SCKP_MAGIC = b"SCKP"
SCKP_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Layer:
    weight: np.ndarray  # (D_out, D_in)
    bias: np.ndarray  # (D_out,)
    activation: str = "tanh"

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).ravel()
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ValueError(f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def copy(self):
        return Layer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class EncoderParams:
    layers: List[Layer]
    n_frozen: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("encoder needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer {k} outputs {a.out_dim} dims but layer {k + 1} expects {b.in_dim}")
        if not 0 <= self.n_frozen < len(self.layers):
            raise ValueError(f"n_frozen must be in [0, {len(self.layers)}), got {self.n_frozen}")

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def learnable_layers(self) -> List[Layer]:
        return self.layers[self.n_frozen:]

    def copy(self):
        return EncoderParams([layer.copy() for layer in self.layers], self.n_frozen)


@dataclass
class ProjectionHead:
    weight: np.ndarray  # (P, D)
    bias: np.ndarray  # (P,)

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).ravel()
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ValueError("head bias/weight shape mismatch")
        if self.weight.shape[0] > self.weight.shape[1]:
            raise ValueError(f"projection must not expand: {self.weight.shape[1]} -> {self.weight.shape[0]}")

    def copy(self):
        return ProjectionHead(self.weight.copy(), self.bias.copy())


def _uniform_layer(rng, d_in, d_out, activation):
    bound = 1.0 / np.sqrt(d_in)
    return Layer(rng.uniform(-bound, bound, size=(d_out, d_in)), np.zeros(d_out), activation)


def init_encoder(dims: Sequence[int] = (40, 64, 64, 64, 64), n_frozen: int = 2,
                 activation: str = "tanh", rng: Optional[np.random.Generator] = None) -> EncoderParams:
    """Fan-in uniform init, zero biases."""
    rng = np.random.default_rng(0) if rng is None else rng
    layers = [_uniform_layer(rng, a, b, activation) for a, b in zip(dims[:-1], dims[1:])]
    return EncoderParams(layers, n_frozen)


def init_head(in_dim: int = 64, out_dim: int = 16, rng: Optional[np.random.Generator] = None) -> ProjectionHead:
    rng = np.random.default_rng(0) if rng is None else rng
    layer = _uniform_layer(rng, in_dim, out_dim, "identity")
    return ProjectionHead(layer.weight, layer.bias)


def _activate(pre, activation):
    return np.tanh(pre) if activation == "tanh" else pre


def encode(params: EncoderParams, feats, n_layers: Optional[int] = None) -> np.ndarray:
    """Frame-wise forward pass; ``n_layers`` stops early (layer selection)."""
    h = as_frames(feats)
    if h.shape[1] != params.in_dim:
        raise ValueError(f"features have {h.shape[1]} dims, encoder expects {params.in_dim}")
    for layer in params.layers[:n_layers]:
        h = _activate(h @ layer.weight.T + layer.bias, layer.activation)
    return h


def _normalize(v):
    norms = np.linalg.norm(v, axis=1)
    return v / np.maximum(norms, L2_EPS)[:, None], norms


def project_l2(head: ProjectionHead, z) -> np.ndarray:
    """Affine projection of each frame, then scale to unit L2 norm."""
    z = as_frames(z)
    if z.shape[1] != head.weight.shape[1]:
        raise ValueError(f"frames have {z.shape[1]} dims, head expects {head.weight.shape[1]}")
    return _normalize(z @ head.weight.T + head.bias)[0]


@dataclass
class ForwardCache:
    learnable: bool
    layer_inputs: List[np.ndarray]  # inputs of the learnable layers, in order
    layer_outputs: List[np.ndarray]
    z: np.ndarray  # encoder output
    norms: np.ndarray  # ||v|| per frame before normalization
    x: np.ndarray  # normalized projection


@dataclass
class Gradients:
    layers: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)  # (dW, db) per learnable layer
    head: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __iadd__(self, other: "Gradients"):
        if other.layers:
            if self.layers:
                self.layers = [(a + c, b + d) for (a, b), (c, d) in zip(self.layers, other.layers)]
            else:
                self.layers = [(a.copy(), b.copy()) for a, b in other.layers]
        if other.head is not None:
            if self.head is None:
                self.head = (other.head[0].copy(), other.head[1].copy())
            else:
                self.head = (self.head[0] + other.head[0], self.head[1] + other.head[1])
        return self

    def scale(self, c: float) -> "Gradients":
        return Gradients(
            [(a * c, b * c) for a, b in self.layers],
            None if self.head is None else (self.head[0] * c, self.head[1] * c),
        )


def forward(params: EncoderParams, head: ProjectionHead, feats, learnable: bool) -> Tuple[np.ndarray, ForwardCache]:
    """Encode, project and normalize, keeping what ``backward`` needs.

    The output does not depend on ``learnable``; it only decides whether the
    encoder activations are cached for parameter gradients.
    """
    h = as_frames(feats)
    if h.shape[1] != params.in_dim:
        raise ValueError(f"features have {h.shape[1]} dims, encoder expects {params.in_dim}")
    inputs, outputs = [], []
    for k, layer in enumerate(params.layers):
        if learnable and k >= params.n_frozen:
            inputs.append(h)
        h = _activate(h @ layer.weight.T + layer.bias, layer.activation)
        if learnable and k >= params.n_frozen:
            outputs.append(h)
    x, norms = _normalize(h @ head.weight.T + head.bias)
    return x, ForwardCache(learnable, inputs, outputs, h, norms, x)


def backward(params: EncoderParams, head: ProjectionHead, cache: Optional[ForwardCache],
             grad_x: np.ndarray) -> Gradients:
    """Chain ``dLoss/dX`` back to the head and, for a learnable cache, the top layers."""
    if cache is None:
        raise ValueError("backward needs the cache from forward()")
    g = np.asarray(grad_x, dtype=np.float64)
    if g.shape != cache.x.shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {cache.x.shape}")
    # L2 normalization: dv = (I - x x^T) g / ||v||
    big = cache.norms > L2_EPS
    dv = np.where(
        big[:, None],
        (g - cache.x * np.sum(cache.x * g, axis=1, keepdims=True)) / np.maximum(cache.norms, L2_EPS)[:, None],
        g / L2_EPS,
    )
    grads = Gradients(head=(dv.T @ cache.z, dv.sum(axis=0)))
    if not cache.learnable:
        return grads
    dh = dv @ head.weight
    layer_grads = []
    for layer, h_in, h_out in zip(reversed(params.learnable_layers), reversed(cache.layer_inputs),
                                  reversed(cache.layer_outputs)):
        dpre = dh * (1.0 - h_out ** 2) if layer.activation == "tanh" else dh
        layer_grads.append((dpre.T @ h_in, dpre.sum(axis=0)))
        dh = dpre @ layer.weight
    grads.layers = layer_grads[::-1]
    return grads


def param_hash(params: EncoderParams) -> str:
    """SHA-256 over every weight and bias, bit-exact."""
    h = hashlib.sha256()
    for layer in params.layers:
        h.update(np.ascontiguousarray(layer.weight).tobytes())
        h.update(np.ascontiguousarray(layer.bias).tobytes())
        h.update(layer.activation.encode())
    return h.hexdigest()


def _encoder_tensors(prefix, params):
    out = {}
    for k, layer in enumerate(params.layers):
        out[f"{prefix}.{k}.weight"] = layer.weight
        out[f"{prefix}.{k}.bias"] = layer.bias[None, :]
    return out


def save_checkpoint(path, theta: EncoderParams, phi: EncoderParams, head: ProjectionHead) -> None:
    tensors: Dict[str, np.ndarray] = {}
    tensors.update(_encoder_tensors("theta", theta))
    tensors.update(_encoder_tensors("phi", phi))
    tensors["head.weight"] = head.weight
    tensors["head.bias"] = head.bias[None, :]
    codes = [ACTIVATIONS.index(layer.activation) for layer in theta.layers]
    tensors["meta.activations"] = np.array([codes], dtype=np.float64)
    tensors["meta.n_frozen"] = np.array([[theta.n_frozen, phi.n_frozen]], dtype=np.float64)
    parts = [SCKP_MAGIC, struct.pack("<II", SCKP_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.atleast_2d(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<II", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {os.fspath(path)!r}: {exc.strerror or exc}") from exc


def _read_tensors(blob, name):
    if blob[:4] != SCKP_MAGIC:
        raise CheckpointError(f"{name}: bad magic {blob[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != SCKP_VERSION:
            raise CheckpointError(f"{name}: unsupported version {version}")
        pos, tensors = 12, {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            tname = blob[pos + 4:pos + 4 + nlen].decode("utf-8")
            pos += 4 + nlen
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
            size = 4 * rows * cols
            if pos + size > len(blob):
                raise CheckpointError(f"{name}: truncated tensor {tname!r}")
            tensors[tname] = np.frombuffer(blob, "<f4", rows * cols, pos).reshape(rows, cols).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"{name}: truncated checkpoint") from exc
    return tensors


def load_checkpoint(path) -> Tuple[EncoderParams, EncoderParams, ProjectionHead]:
    """Inverse of ``save_checkpoint`` (values come back at float32 precision)."""
    with open(path, "rb") as fh:
        tensors = _read_tensors(fh.read(), os.fspath(path))
    acts = [ACTIVATIONS[int(c)] for c in tensors["meta.activations"][0]]
    n_frozen = tensors["meta.n_frozen"][0].astype(int)

    def build(prefix, frozen):
        layers = [Layer(tensors[f"{prefix}.{k}.weight"], tensors[f"{prefix}.{k}.bias"][0], act)
                  for k, act in enumerate(acts)]
        return EncoderParams(layers, int(frozen))

    head = ProjectionHead(tensors["head.weight"], tensors["head.bias"][0])
    return build("theta", n_frozen[0]), build("phi", n_frozen[1]), head
