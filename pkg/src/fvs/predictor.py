"""Toy-scale learned pose predictor: flow encoder + LSTM cell + FC head.

The encoder runs four stride-2 3x3 convolutions (channels 8/16/32/64)
over a 2-channel OIS-free flow grid and global-average-pools to a
64-dim latent.  That latent, concatenated with the flattened relative
rotation histories, feeds one LSTM cell (hidden 128) and two FC stages
(128 -> 64 -> 4); the 4-vector plus a fixed identity bias is normalized
into the incremental rotation.  With all parameters zero the output is
exactly the identity rotation.

Weights file (little-endian): magic ``FVSW``, u32 version, then per
tensor: u16 name length, name bytes, u32 rank, u32 dims..., f64 data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError, InvalidArgumentError
from .rotmath import Quaternion

WEIGHTS_MAGIC = b"FVSW"
WEIGHTS_VERSION = 1

IDENTITY_BIAS = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(slots=True)
class PredictorConfig:
    flow_size: int = 64
    history_n: int = 10
    enc_channels: tuple = (8, 16, 32, 64)
    hidden: int = 128
    fc_hidden: int = 64
    init_scale: float = 0.1
    flow_unit: float = 1511.8  # flow pixels normalized by focal length

    @property
    def input_dim(self) -> int:
        return self.enc_channels[-1] + (2 * self.history_n + 1) * 4 + self.history_n * 4


class PredictorNet:
    """Parameter container plus the graph-building forward pass."""

    def __init__(self, cfg: PredictorConfig = None, seed: int = 0):
        self.cfg = cfg or PredictorConfig()
        rng = np.random.default_rng(seed)
        s = self.cfg.init_scale
        self.params: dict[str, Tensor] = {}
        c_in = 2
        for i, c_out in enumerate(self.cfg.enc_channels):
            self._add(f"enc{i}_w", rng.normal(scale=s / np.sqrt(c_in * 9), size=(c_out, c_in, 3, 3)))
            self._add(f"enc{i}_b", np.zeros(c_out))
            c_in = c_out
        d_in = self.cfg.input_dim
        h = self.cfg.hidden
        self._add("lstm_w", rng.normal(scale=s / np.sqrt(d_in + h), size=(4 * h, d_in + h)))
        self._add("lstm_b", np.zeros(4 * h))
        self._add("fc1_w", rng.normal(scale=s / np.sqrt(h), size=(self.cfg.fc_hidden, h)))
        self._add("fc1_b", np.zeros(self.cfg.fc_hidden))
        self._add("fc2_w", rng.normal(scale=s / np.sqrt(self.cfg.fc_hidden), size=(4, self.cfg.fc_hidden)))
        self._add("fc2_b", np.zeros(4))

    def _add(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_parameters(self) -> None:
        for p in self.params.values():
            p.data[:] = 0.0

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def init_state(self):
        h = self.cfg.hidden
        return Tensor(np.zeros(h)), Tensor(np.zeros(h))

    # -- forward ------------------------------------------------------------

    def encode_flow(self, flow_grid: np.ndarray) -> Tensor:
        """2 x S x S flow grid (pixels) -> latent vector tensor."""
        if flow_grid.shape != (2, self.cfg.flow_size, self.cfg.flow_size):
            raise InvalidArgumentError(
                f"flow grid shape {flow_grid.shape} != (2, {self.cfg.flow_size}, {self.cfg.flow_size})"
            )
        x = Tensor(flow_grid / self.cfg.flow_unit)
        for i in range(len(self.cfg.enc_channels)):
            x = ad.relu(ad.conv2d(x, self.params[f"enc{i}_w"], self.params[f"enc{i}_b"]))
        pooled = ad.t_mean(ad.reshape(x, (x.shape[0], -1)), axis=1)
        return pooled

    def lstm_step(self, x: Tensor, state):
        h_prev, c_prev = state
        hid = self.cfg.hidden
        joint = ad.concat([x, h_prev])
        gates = ad.add(ad.matmul(self.params["lstm_w"], joint), self.params["lstm_b"])
        i_g = ad.sigmoid(gates[slice(0, hid)])
        f_g = ad.sigmoid(gates[slice(hid, 2 * hid)])
        g_g = ad.tanh(gates[slice(2 * hid, 3 * hid)])
        o_g = ad.sigmoid(gates[slice(3 * hid, 4 * hid)])
        c = ad.add(ad.mul(f_g, c_prev), ad.mul(i_g, g_g))
        h = ad.mul(o_g, ad.tanh(c))
        return h, c

    def forward_graph(self, flow_grid: np.ndarray, h_r_flat, h_v_flat, state):
        """Full step; histories may be tensors (training) or arrays."""
        z = self.encode_flow(flow_grid)
        joint = ad.concat([z, ad.as_tensor(h_r_flat), ad.as_tensor(h_v_flat)])
        h, c = self.lstm_step(joint, state)
        y = ad.add(ad.matmul(self.params["fc1_w"], h), self.params["fc1_b"])
        y = ad.relu(y)
        y = ad.add(ad.matmul(self.params["fc2_w"], y), self.params["fc2_b"])
        dq = ad.quat_normalize(ad.add(y, IDENTITY_BIAS))
        return dq, (h, c)


def forward(net: PredictorNet, state, flow_grid: np.ndarray, history):
    """Inference step: plain values in, (Quaternion, new state) out.

    ``state`` is (h, c) numpy arrays, zeros at stream start.
    """
    h = Tensor(np.asarray(state[0], dtype=float))
    c = Tensor(np.asarray(state[1], dtype=float))
    dq, (h2, c2) = net.forward_graph(
        flow_grid, history.flat_real(), history.flat_virtual(), (h, c)
    )
    q = Quaternion(*dq.data)
    return q, (h2.data.copy(), c2.data.copy())


def backward(net: PredictorNet, loss: Tensor) -> dict:
    """Reverse sweep from a scalar loss; returns per-parameter gradients."""
    net.zero_grads()
    loss.backward()
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros(p.data.shape))
        for name, p in net.params.items()
    }


# ---------------------------------------------------------------------------
# weights file


def save_weights(path, net: PredictorNet) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC + struct.pack("<I", WEIGHTS_VERSION))
        for name in sorted(net.params):
            data = net.params[name].data
            nb = name.encode("ascii")
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.astype("<f8").tobytes())


def load_weights(path, net: PredictorNet) -> None:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8 or head[:4] != WEIGHTS_MAGIC:
            raise FormatError("bad weights magic", path=path)
        (version,) = struct.unpack("<I", head[4:])
        if version != WEIGHTS_VERSION:
            raise FormatError(f"unsupported weights version {version}", path=path)
        seen = set()
        while True:
            raw = fh.read(2)
            if not raw:
                break
            (nlen,) = struct.unpack("<H", raw)
            name = fh.read(nlen).decode("ascii")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
            if name not in net.params:
                raise FormatError(f"unknown tensor {name!r}", path=path)
            if net.params[name].data.shape != data.shape:
                raise FormatError(
                    f"tensor {name!r} shape {data.shape} != {net.params[name].data.shape}",
                    path=path,
                )
            net.params[name].data = data.astype(float).copy()
            seen.add(name)
        missing = set(net.params) - seen
        if missing:
            raise FormatError(f"missing tensors {sorted(missing)}", path=path)
