"""Reconstruction network (residual CNN) and registration network (small U-Net)."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

SLOPE = 0.1


def _conv_params(rng, c_in: int, c_out: int, k: int = 3, zero: bool = False):
    if zero:
        w = np.zeros((c_out, c_in, k, k))
    else:
        w = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k))
    return Tensor(w, requires_grad=True), Tensor(np.zeros(c_out), requires_grad=True)


@dataclass
class ReconNetParams:
    blocks: int
    width: int
    params: "OrderedDict[str, Tensor]" = field(default_factory=OrderedDict)

    def hyper(self) -> dict:
        return {"blocks": self.blocks, "width": self.width}

    def count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    @staticmethod
    def expected_count(blocks: int, width: int) -> int:
        # head 2->W, B blocks of two WxW convs, tail W->2; all 3x3 with bias
        return (18 * width + width) + blocks * 2 * (9 * width * width + width) + (18 * width + 2)


@dataclass
class RegNetParams:
    levels: int
    width: int
    params: "OrderedDict[str, Tensor]" = field(default_factory=OrderedDict)

    def hyper(self) -> dict:
        return {"levels": self.levels, "width": self.width}

    def count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    @staticmethod
    def expected_count(levels: int, width: int) -> int:
        ch = [width * 2 ** l for l in range(levels + 1)]
        n = 9 * 4 * ch[0] + ch[0]
        for l in range(1, levels + 1):
            n += 9 * ch[l - 1] * ch[l] + ch[l]  # stride-2 encoder conv
            n += 9 * (ch[l] + ch[l - 1]) * ch[l - 1] + ch[l - 1]  # decoder conv after skip concat
        return n + 9 * ch[0] * 2 + 2


def init_recon(blocks: int = 4, width: int = 32, seed: int = 0, zero_tail: bool = True) -> ReconNetParams:
    """He-initialised residual CNN; with ``zero_tail`` the last conv starts at zero,
    so the untrained network is the identity on its input."""
    rng = np.random.default_rng(seed)
    p = OrderedDict()
    p["head.w"], p["head.b"] = _conv_params(rng, 2, width)
    for i in range(blocks):
        p[f"block{i}.conv1.w"], p[f"block{i}.conv1.b"] = _conv_params(rng, width, width)
        p[f"block{i}.conv2.w"], p[f"block{i}.conv2.b"] = _conv_params(rng, width, width)
    p["tail.w"], p["tail.b"] = _conv_params(rng, width, 2, zero=zero_tail)
    for name, t in p.items():
        t.name = name
    return ReconNetParams(blocks, width, p)


def init_reg(levels: int = 3, width: int = 16, seed: int = 0) -> RegNetParams:
    rng = np.random.default_rng(seed)
    ch = [width * 2 ** l for l in range(levels + 1)]
    p = OrderedDict()
    p["enc0.w"], p["enc0.b"] = _conv_params(rng, 4, ch[0])
    for l in range(1, levels + 1):
        p[f"enc{l}.w"], p[f"enc{l}.b"] = _conv_params(rng, ch[l - 1], ch[l])
    for l in range(levels, 0, -1):
        p[f"dec{l}.w"], p[f"dec{l}.b"] = _conv_params(rng, ch[l] + ch[l - 1], ch[l - 1])
    # zero head: the initial field is the identity transform
    p["flow.w"], p["flow.b"] = _conv_params(rng, ch[0], 2, zero=True)
    for name, t in p.items():
        t.name = name
    return RegNetParams(levels, width, p)


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return T.reshape(x, (1,) + x.shape), True
    return x, False


def recon_forward(net: ReconNetParams, zero_filled: Tensor) -> Tensor:
    """Residual CNN on 2-channel (real, imag) images; returns input + learned correction."""
    x, squeeze = _as_batch(zero_filled)
    if x.ndim != 4 or x.shape[1] != 2:
        raise ValueError(f"recon_forward: expected 2-channel input, got shape {zero_filled.shape}")
    p = net.params
    h = T.conv2d(T.as_real(x), p["head.w"], p["head.b"], padding=1)
    for i in range(net.blocks):
        r = T.leaky_relu(T.conv2d(h, p[f"block{i}.conv1.w"], p[f"block{i}.conv1.b"], padding=1), SLOPE)
        h = h + T.conv2d(r, p[f"block{i}.conv2.w"], p[f"block{i}.conv2.b"], padding=1)
    out = T.as_complex(T.as_real(x) + T.conv2d(h, p["tail.w"], p["tail.b"], padding=1))
    return T.reshape(out, zero_filled.shape) if squeeze else out


def reg_forward(net: RegNetParams, moving: Tensor, reference: Tensor) -> Tensor:
    """Displacement field (N, 2, H, W) mapping ``moving`` onto ``reference``."""
    m, squeeze = _as_batch(moving)
    r, _ = _as_batch(reference)
    if m.shape != r.shape:
        raise ValueError(f"reg_forward: moving {moving.shape} and reference {reference.shape} differ")
    if m.shape[1] != 2:
        raise ValueError(f"reg_forward: expected 2-channel images, got {moving.shape}")
    div = 2 ** net.levels
    if m.shape[2] % div or m.shape[3] % div:
        raise ValueError(f"reg_forward: spatial size {m.shape[2:]} must be divisible by 2^levels = {div}")
    p = net.params
    h = T.leaky_relu(T.conv2d(T.concat([T.as_real(m), T.as_real(r)], axis=1),
                              p["enc0.w"], p["enc0.b"], padding=1), SLOPE)
    skips = [h]
    for l in range(1, net.levels + 1):
        h = T.leaky_relu(T.conv2d(h, p[f"enc{l}.w"], p[f"enc{l}.b"], stride=2, padding=1), SLOPE)
        skips.append(h)
    for l in range(net.levels, 0, -1):
        h = T.concat([T.upsample2(h), skips[l - 1]], axis=1)
        h = T.leaky_relu(T.conv2d(h, p[f"dec{l}.w"], p[f"dec{l}.b"], padding=1), SLOPE)
    flow = T.conv2d(h, p["flow.w"], p["flow.b"], padding=1)
    return T.reshape(flow, flow.shape[1:]) if squeeze else flow


def clone_params(params: "OrderedDict[str, Tensor]") -> "OrderedDict[str, Tensor]":
    out = OrderedDict()
    for k, v in params.items():
        out[k] = Tensor(v.data.copy(), requires_grad=True, name=k)
    return out
