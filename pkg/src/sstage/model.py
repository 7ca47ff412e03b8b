"""Graph-convolution encoder, multi-attention and two-stream decoder.

Activations are laid out [B, C, T, K]: channels, then time, then agents.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from . import graph
from .autodiff import (
    DimensionError,
    Module,
    Parameter,
    Tensor,
    batch_norm2d,
    conv2d,
    cumsum,
    dropout,
    matmul,
    mul,
    prelu,
    reshape,
    softmax,
)
from .autodiff.tensor import DEFAULT_DTYPE, add, permute
from .data import Scene


@dataclass
class ModelConfig:
    modes: int = 2
    t_in: int = 8
    t_out: int = 12
    d_in: int = 2
    d_out: int = 2
    dropout_rate: float = 0.1
    prelu_init: float = 0.25
    attn_softmax_axis: int = 1

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("modes must be >= 1")
        if self.d_out != self.d_in:
            raise ValueError("the trajectory stream needs d_out == d_in")

    @property
    def traj_channels(self) -> int:
        return self.modes * self.t_out


@dataclass
class PredictionSet:
    displacements: np.ndarray  # [M, T_out, 2, K]
    probs: np.ndarray  # [M, K]

    @property
    def modes(self) -> int:
        return self.probs.shape[0]


# -- layers ----------------------------------------------------------------
class Conv2d(Module):
    def __init__(self, cin, cout, kernel, padding, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        kh, kw = kernel
        bound = 1.0 / np.sqrt(cin * kh * kw)
        self.weight = Parameter(rng.uniform(-bound, bound, (cin, cout, kh, kw)), dtype=dtype)
        self.bias = Parameter(np.zeros(cout), dtype=dtype)
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.gamma = Parameter(np.ones(channels), dtype=dtype)
        self.beta = Parameter(np.zeros(channels), dtype=dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm2d(x, self.gamma, self.beta, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.eps, self.momentum)


class PReLU(Module):
    def __init__(self, init=0.25, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.alpha = Parameter(np.array([init]), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return prelu(x, self.alpha)


# -- blocks ----------------------------------------------------------------
class GraphConvBlock(Module):
    """BN, PReLU, temporal conv, BN, dropout, 1x1 conv, PReLU; then mixing over
    agents with the per-step adjacency."""

    def __init__(self, cfg: ModelConfig, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        c = cfg.d_in
        self.bn1 = BatchNorm2d(c, dtype=dtype)
        self.act1 = PReLU(cfg.prelu_init, dtype)
        self.tconv = Conv2d(c, c, (3, 1), (1, 0), rng, dtype)
        self.bn2 = BatchNorm2d(c, dtype=dtype)
        self.conv1x1 = Conv2d(c, c, (1, 1), (0, 0), rng, dtype)
        self.act2 = PReLU(cfg.prelu_init, dtype)
        self.dropout_rate = cfg.dropout_rate

    def features(self, v: Tensor, rng=None, trace=None) -> Tensor:
        h = _traced(trace, "l1.BatchNorm2d", self.bn1(v))
        h = _traced(trace, "l1.PReLU", self.act1(h))
        h = _traced(trace, "l1.Conv2d", self.tconv(h))
        h = _traced(trace, "l1.BatchNorm2d#2", self.bn2(h))
        h = _traced(trace, "l1.Dropout", dropout(h, self.dropout_rate, self.training, rng))
        h = _traced(trace, "l2.Conv2d", self.conv1x1(h))
        return _traced(trace, "l2.PReLU", self.act2(h))

    def __call__(self, v: Tensor, A: np.ndarray, rng=None, trace=None) -> Tensor:
        h = self.features(v, rng, trace)
        return _traced(trace, "graph_update", mix_agents(h, A))


def mix_agents(h: Tensor, A: np.ndarray) -> Tensor:
    """out[b, c, t, k] = sum_j A[t, k, j] * h[b, c, t, j]."""
    B, C, T, K = h.shape
    if A.shape != (T, K, K):
        raise DimensionError(f"adjacency must be [{T},{K},{K}] to match features {list(h.shape)}, got {list(A.shape)}")
    rows = reshape(h, (B, C, T, 1, K))
    at = Tensor(np.ascontiguousarray(A.transpose(0, 2, 1)), dtype=h.dtype)
    return reshape(matmul(rows, at), (B, C, T, K))


def multi_attention(features: Tensor, weights: Tensor) -> Tensor:
    """Residual attention: weights * features + features."""
    return add(mul(weights, features), features)


class AttentionBlock(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        c = cfg.d_in
        self.bn1 = BatchNorm2d(c, dtype=dtype)
        self.act = PReLU(cfg.prelu_init, dtype)
        self.tconv = Conv2d(c, c, (3, 1), (1, 0), rng, dtype)
        self.bn2 = BatchNorm2d(c, dtype=dtype)
        self.softmax_axis = cfg.attn_softmax_axis

    def weights(self, f: Tensor, trace=None) -> Tensor:
        h = _traced(trace, "attn.BatchNorm2d", self.bn1(f))
        h = _traced(trace, "attn.PReLU", self.act(h))
        h = _traced(trace, "attn.Conv2d", self.tconv(h))
        h = _traced(trace, "attn.BatchNorm2d#2", self.bn2(h))
        return _traced(trace, "attn.Softmax", softmax(h, self.softmax_axis))

    def __call__(self, f: Tensor, trace=None) -> Tensor:
        return _traced(trace, "multi_attention", multi_attention(f, self.weights(f, trace)))


class TrajectoryDecoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        ch = cfg.traj_channels
        self.conv1 = Conv2d(cfg.t_in, ch, (3, 3), (1, 1), rng, dtype)
        self.act = PReLU(cfg.prelu_init, dtype)
        self.conv2 = Conv2d(ch, ch, (3, 3), (1, 1), rng, dtype)
        self.modes, self.t_out = cfg.modes, cfg.t_out

    def __call__(self, f: Tensor, trace=None) -> Tensor:
        B, C, T, K = f.shape
        h = permute(f, (0, 2, 1, 3))  # time becomes the channel axis
        h = _traced(trace, "d.Conv2d", self.conv1(h))
        h = _traced(trace, "d.PReLU", self.act(h))
        h = _traced(trace, "traj.Conv2d", self.conv2(h))
        return _traced(trace, "traj.reshape", reshape(h, (B, self.modes, self.t_out, C, K)))


class ProbabilityDecoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.conv = Conv2d(cfg.d_in * cfg.t_in, cfg.modes, (3, 3), (1, 1), rng, dtype)

    def logits(self, f: Tensor, trace=None) -> Tensor:
        B, C, T, K = f.shape
        if C * T != self.conv.weight.shape[0]:
            raise DimensionError(f"probability stream expects {self.conv.weight.shape[0]} combined channels, got {C}x{T}")
        h = reshape(f, (B, C * T, 1, K))
        return _traced(trace, "prob.Conv2d", self.conv(h))

    def __call__(self, f: Tensor, trace=None) -> Tensor:
        logits = self.logits(f, trace)
        B, M, _, K = logits.shape
        return reshape(softmax(logits, 1), (M, K))


def _traced(trace, name, t):
    if trace is not None:
        trace.append((name, tuple(t.shape)))
    return t


# -- network ---------------------------------------------------------------
@dataclass
class ForwardOutput:
    displacements: Tensor  # [M, T_out, 2, K]
    probs: Tensor  # [M, K]

    def prediction(self) -> PredictionSet:
        return PredictionSet(self.displacements.values.copy(), self.probs.values.copy())


class STAGE(Module):
    """Graph convolutions, multi-attention and the two decoder streams."""

    def __init__(self, cfg: Optional[ModelConfig] = None, seed: int = 0, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        self.gcn = GraphConvBlock(self.cfg, rng, dtype)
        self.attn = AttentionBlock(self.cfg, rng, dtype)
        self.traj = TrajectoryDecoder(self.cfg, rng, dtype)
        self.prob = ProbabilityDecoder(self.cfg, rng, dtype)

    @property
    def dtype(self):
        return self.traj.conv1.weight.dtype

    def encode(self, V: np.ndarray, A: np.ndarray, rng=None, trace=None) -> Tensor:
        v = Tensor(V[None], dtype=self.dtype)
        f = self.gcn(v, A, rng, trace)
        return self.attn(f, trace)

    def forward_graph(self, g: graph.GraphSequence, rng=None, trace=None) -> ForwardOutput:
        if g.V.shape[1] != self.cfg.t_in:
            raise DimensionError(f"time axis has {g.V.shape[1]} steps, model expects {self.cfg.t_in}")
        f = self.encode(g.V, g.A, rng, trace)
        traj = self.traj(f, trace)
        M, T, C, K = traj.shape[1:]
        disp = reshape(traj, (M, T, C, K))
        probs = self.prob(f, trace)
        return ForwardOutput(disp, probs)

    def __call__(self, scene: Scene, rng=None, trace=None) -> ForwardOutput:
        if scene.num_agents < 1:
            raise ValueError("scene has no agents")
        return self.forward_graph(graph.build(scene), rng, trace)

    def predict(self, scene: Scene) -> PredictionSet:
        was = self.training
        self.eval()
        try:
            return self(scene).prediction()
        finally:
            self.train(was)


def forward(model: STAGE, scene: Scene, training: bool = False, rng=None) -> PredictionSet:
    model.train(training)
    return model(scene, rng).prediction()


def to_absolute(displacements, scene: Scene):
    """Future positions [M, T_out, 2, K] from per-step displacements.

    Accepts an array, a ``PredictionSet`` or a ``Tensor``; tensors stay on the
    differentiable path.
    """
    last = scene.observed[:, -1, :].T  # [2, K]
    if isinstance(displacements, PredictionSet):
        displacements = displacements.displacements
    if isinstance(displacements, Tensor):
        anchor = Tensor(last[None, None], dtype=displacements.dtype)
        return add(cumsum(displacements, axis=1), anchor)
    d = np.asarray(displacements, dtype=np.float64)
    return np.cumsum(d, axis=1) + last[None, None]


# -- checkpoints -----------------------------------------------------------
MAGIC = b"SSTG"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(state: Dict[str, np.ndarray]) -> bytes:
    payload = bytearray()
    for name in sorted(state):
        arr = np.asarray(state[name])
        raw = name.encode("utf-8")
        payload += struct.pack("<H", len(raw)) + raw
        payload += struct.pack("<B", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return MAGIC + bytes([VERSION]) + bytes(payload) + struct.pack("<I", zlib.crc32(payload))


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if blob[4] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob[4]}")
    payload, crc = blob[5:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    state, pos = {}, 0
    try:
        while pos < len(payload):
            (n,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            vals = np.frombuffer(payload, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            state[name] = vals.reshape(dims).astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or malformed checkpoint: {exc}") from None
    return state


def save_checkpoint(model: STAGE, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_checkpoint(model.state_dict()))


def load_checkpoint(path: Union[str, Path], dropout_rate: float = 0.1) -> STAGE:
    """Rebuild a model from a checkpoint; mode count and horizons come from weight shapes."""
    state = decode_checkpoint(Path(path).read_bytes())
    try:
        modes = state["prob.conv.weight"].shape[1]
        t_in = state["traj.conv1.weight"].shape[0]
        t_out = state["traj.conv1.weight"].shape[1] // modes
        d_in = state["gcn.bn1.gamma"].shape[0]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks parameter {exc}") from None
    model = STAGE(ModelConfig(modes=modes, t_in=t_in, t_out=t_out, d_in=d_in, d_out=d_in,
                              dropout_rate=dropout_rate))
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from None
    model.eval()
    return model
