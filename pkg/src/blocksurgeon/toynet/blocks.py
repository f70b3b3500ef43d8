"""The base NAF-like block and its six cheaper alternatives.

Each block maps ``(B, C, H, W) -> (B, C, H, W)`` as ``x + correction(x)``.
The correction path ends in a projection named ``proj`` that is zero at
initialisation, so a fresh block is the identity.

Kinds (``C`` = slot channels):

* base: layer norm, 1x1 expand to 2C, 3x3 depthwise, simple gate, simplified
  channel attention, 1x1 projection
* alt1: relu then a plain 3x3 conv
* alt2: 3x3 depthwise then 1x1 pointwise
* alt3: base without channel attention
* alt4: base with attention replaced by a learned per-channel scale
* alt5: a single 1x1 pointwise conv
* alt6: learned scalar gate on the identity plus a 1x1 conv
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .. import ops
from ..tensor import Tensor
from .config import BlockKind

LN_EPS = 1e-6

# Primitive ops per kind; the latency simulator charges for exactly these.
PRIMITIVES: dict[BlockKind, tuple[str, ...]] = {
    BlockKind.BASE: ("layer_norm", "expand", "dwconv3_2x", "gate", "pool", "attn_conv", "attn_mul", "proj", "add"),
    BlockKind.ALT1: ("relu", "conv3", "add"),
    BlockKind.ALT2: ("dwconv3", "proj", "add"),
    BlockKind.ALT3: ("layer_norm", "expand", "dwconv3_2x", "gate", "proj", "add"),
    BlockKind.ALT4: ("layer_norm", "expand", "dwconv3_2x", "gate", "chan_scale", "proj", "add"),
    BlockKind.ALT5: ("proj", "add"),
    BlockKind.ALT6: ("scalar_gate", "add", "proj", "add"),
}


def _conv_init(rng: np.random.Generator, out_c: int, in_c: int, k: int) -> np.ndarray:
    fan_in = in_c * k * k
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(out_c, in_c, k, k))


def init_block(kind: BlockKind, channels: int, rng: np.random.Generator, zero_proj: bool = True) -> dict[str, np.ndarray]:
    """Fresh parameters for one block, keyed by block-local names."""
    c = channels
    p: dict[str, np.ndarray] = {}
    if kind in (BlockKind.BASE, BlockKind.ALT3, BlockKind.ALT4):
        p["norm.gain"] = np.ones(c)
        p["norm.offset"] = np.zeros(c)
        p["expand.w"] = _conv_init(rng, 2 * c, c, 1)
        p["expand.b"] = np.zeros(2 * c)
        p["dw.w"] = _conv_init(rng, 2 * c, 1, 3)
        p["dw.b"] = np.zeros(2 * c)
        if kind is BlockKind.BASE:
            p["sca.w"] = _conv_init(rng, c, c, 1)
            p["sca.b"] = np.zeros(c)
        if kind is BlockKind.ALT4:
            p["chscale"] = np.ones((1, c, 1, 1))
        p["proj.w"] = _conv_init(rng, c, c, 1)
    elif kind is BlockKind.ALT1:
        p["proj.w"] = _conv_init(rng, c, c, 3)
    elif kind is BlockKind.ALT2:
        p["dw.w"] = _conv_init(rng, c, 1, 3)
        p["dw.b"] = np.zeros(c)
        p["proj.w"] = _conv_init(rng, c, c, 1)
    elif kind is BlockKind.ALT5:
        p["proj.w"] = _conv_init(rng, c, c, 1)
    elif kind is BlockKind.ALT6:
        p["gate"] = np.zeros((1, 1, 1, 1))
        p["proj.w"] = _conv_init(rng, c, c, 1)
    else:
        raise ValueError(f"unknown kind {kind}")
    p["proj.b"] = np.zeros(c)
    if zero_proj:
        p["proj.w"] = np.zeros_like(p["proj.w"])
    else:
        p["proj.w"] = p["proj.w"] * 0.1
    return p


def _norm(p, x: Tensor, bypass_norm: bool) -> Tensor:
    if bypass_norm:
        # Identity up to a constant positive rescale; the constant carries no
        # gradient. Keeps magnitudes bounded when the gates compound.
        m = float(np.mean(np.abs(x.data)))
        return ops.scale(x, 1.0 / m) if m > 0 else x
    return ops.layer_norm_channels(x, p("norm.gain"), p("norm.offset"), LN_EPS)


def _gated(p, x: Tensor, bypass_norm: bool) -> Tensor:
    h = _norm(p, x, bypass_norm)
    h = ops.conv2d(h, p("expand.w"), p("expand.b"))
    h = ops.depthwise_conv2d(h, p("dw.w"), p("dw.b"), padding=1)
    return ops.simple_gate(h)


def block_parts(kind: BlockKind, p: Callable[[str], Tensor], x: Tensor,
                bypass_norm: bool = False) -> tuple[Tensor, Tensor, int]:
    """Split a block into ``(skip, h, padding)`` with output ``skip + proj(h)``.

    ``proj`` is the final convolution with parameters ``proj.w``/``proj.b``.
    """
    if kind is BlockKind.BASE:
        h = _gated(p, x, bypass_norm)
        att = ops.conv2d(ops.global_avg_pool(h), p("sca.w"), p("sca.b"))
        return x, ops.mul(h, att), 0
    if kind is BlockKind.ALT1:
        return x, ops.relu(x), 1
    if kind is BlockKind.ALT2:
        return x, ops.depthwise_conv2d(x, p("dw.w"), p("dw.b"), padding=1), 0
    if kind is BlockKind.ALT3:
        return x, _gated(p, x, bypass_norm), 0
    if kind is BlockKind.ALT4:
        return x, ops.mul(_gated(p, x, bypass_norm), p("chscale")), 0
    if kind is BlockKind.ALT5:
        return x, x, 0
    if kind is BlockKind.ALT6:
        return ops.add(x, ops.mul(x, p("gate"))), x, 0
    raise ValueError(f"unknown kind {kind}")


def block_forward(kind: BlockKind, p: Callable[[str], Tensor], x: Tensor, bypass_norm: bool = False) -> Tensor:
    """Apply one block; ``p`` resolves a block-local parameter name."""
    skip, h, pad = block_parts(kind, p, x, bypass_norm)
    return ops.add(skip, ops.conv2d(h, p("proj.w"), p("proj.b"), padding=pad))


def resolver(params: Mapping[str, Tensor], prefix: str) -> Callable[[str], Tensor]:
    return lambda name: params[prefix + name]
