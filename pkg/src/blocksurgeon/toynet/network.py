"""Assembled U-shaped restoration network."""

from __future__ import annotations

import zlib
from typing import Iterable, Mapping

import numpy as np

from .. import ops
from ..tensor import Tensor
from .blocks import block_forward, init_block, resolver
from .config import BlockKind, ConfigError, NetworkConfig


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for one parameter group, independent of every other group."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def slot_prefix(slot_id: str, j: int = 0) -> str:
    return f"{slot_id}.b{j}."


class Network:
    """Parameters plus the topology described by a :class:`NetworkConfig`.

    Parameter names are ``stem.*``, ``down{i}.*``, ``up{i}.*``, ``tail.*`` and
    ``<slot>.b<j>.<block-local name>`` for the ``j``-th block of a slot.
    """

    def __init__(self, config: NetworkConfig, params: Mapping[str, Tensor]):
        self.config = config
        self.params: dict[str, Tensor] = dict(params)

    # ------------------------------------------------------------------ params
    @property
    def param_names(self) -> list[str]:
        return list(self.params)

    def slot_params(self, slot_id: str) -> dict[str, Tensor]:
        pre = slot_id + "."
        return {k: v for k, v in self.params.items() if k.startswith(pre)}

    def param_count(self, slot_id: str | None = None) -> int:
        group = self.params if slot_id is None else self.slot_params(slot_id)
        return sum(t.size for t in group.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.params.values()])

    def load_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.param_count():
            raise ConfigError(f"flat vector has {theta.size} entries, network has {self.param_count()}")
        off = 0
        for t in self.params.values():
            n = t.size
            t.data = theta[off:off + n].reshape(t.shape).copy()
            off += n

    def slot_slices(self) -> dict[str, list[tuple[int, int]]]:
        """Flat-vector ranges owned by each slot."""
        out: dict[str, list[tuple[int, int]]] = {s: [] for s in self.config.slot_ids}
        off = 0
        for name, t in self.params.items():
            head = name.split(".", 1)[0]
            if head in out:
                out[head].append((off, off + t.size))
            off += t.size
        return out

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})

    def unflatten(self, flat: Tensor) -> dict[str, Tensor]:
        """Parameter views of a flat tensor, recorded on the active tape."""
        out = {}
        off = 0
        for name, t in self.params.items():
            out[name] = ops.view(flat, off, t.shape)
            off += t.size
        return out

    def with_slot(self, slot_id: str, kind: BlockKind, block_params: Mapping[str, np.ndarray | Tensor]) -> "Network":
        """Copy of this network whose slot runs ``kind`` with the given block-local parameters."""
        spec = self.config.slot(slot_id)
        if spec.frozen and kind is not BlockKind.BASE:
            raise ConfigError(f"slot {slot_id} is frozen")
        config = self.config.with_kinds({slot_id: kind})
        params = {}
        pre = slot_id + "."
        for name, t in self.params.items():
            if name.startswith(pre):
                continue
            params[name] = t.copy()
        merged = {}
        for name in self._ordered_names(config):
            if name.startswith(pre):
                local = name[len(pre):]
                val = block_params[local]
                merged[name] = Tensor(np.array(val.data if isinstance(val, Tensor) else val, dtype=np.float64))
            else:
                merged[name] = params[name]
        return Network(config, merged)

    @staticmethod
    def _ordered_names(config: NetworkConfig) -> list[str]:
        return list(_init_params(config, 0, True))

    # ----------------------------------------------------------------- forward
    def forward(
        self,
        x: Tensor,
        *,
        params: Mapping[str, Tensor] | None = None,
        capture: dict | None = None,
        inject: Mapping[str, Tensor] | None = None,
        identity: Iterable[str] = (),
        bypass_norm: bool = False,
    ) -> Tensor:
        """Restore a batch.

        Args:
            params: parameter tensors to use instead of ``self.params``.
            capture: filled with ``slot_id -> (input, output)`` tensors.
            inject: replaces the input of the named slots.
            identity: slots whose block is skipped entirely.
            bypass_norm: run every layer norm as the identity.
        """
        p = self.params if params is None else params
        cfg = self.config
        identity = set(identity)
        inject = inject or {}
        if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ConfigError(f"input must be (B, {cfg.in_channels}, H, W), got {x.shape}")
        scale = 2 ** cfg.levels
        if x.shape[2] % scale or x.shape[3] % scale:
            raise ConfigError(f"spatial size must be divisible by {scale}")

        def run_slot(slot_id: str, h: Tensor) -> Tensor:
            if slot_id in inject:
                h = inject[slot_id]
            spec = cfg.slot(slot_id)
            inp = h
            if slot_id not in identity:
                for j in range(spec.depth):
                    h = block_forward(spec.kind, resolver(p, slot_prefix(slot_id, j)), h, bypass_norm)
            if capture is not None:
                capture[slot_id] = (inp, h)
            return h

        h = ops.conv2d(x, p["stem.w"], p["stem.b"], padding=1)
        skips = []
        for i in range(cfg.levels):
            h = run_slot(f"enc{i}", h)
            skips.append(h)
            h = ops.conv2d(h, p[f"down{i}.w"], p[f"down{i}.b"], stride=2)
        h = run_slot("mid", h)
        for i in reversed(range(cfg.levels)):
            h = ops.conv2d(ops.upsample_nearest2x(h), p[f"up{i}.w"], p[f"up{i}.b"])
            h = ops.add(h, skips[i])
            h = run_slot(f"dec{i}", h)
        corr = ops.conv2d(h, p["tail.w"], p["tail.b"], padding=1)
        return ops.add(x, corr)

    def __call__(self, x: Tensor, **kw) -> Tensor:
        return self.forward(x, **kw)

    def predict(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Tape-free forward over a numpy batch."""
        outs = [self.forward(Tensor(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)


def _conv_w(rng, out_c, in_c, k):
    return rng.normal(0.0, 1.0 / np.sqrt(in_c * k * k), size=(out_c, in_c, k, k))


def _init_params(config: NetworkConfig, seed: int, zero_init: bool) -> dict[str, np.ndarray]:
    w, cin = config.width, config.in_channels
    out: dict[str, np.ndarray] = {}

    def add(prefix: str, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            out[prefix + k] = v

    def conv(name: str, out_c: int, in_c: int, k: int) -> None:
        rng = param_rng(seed, name)
        add(name + ".", {"w": _conv_w(rng, out_c, in_c, k), "b": np.zeros(out_c)})

    def slot(slot_id: str) -> None:
        spec = config.slot(slot_id)
        for j in range(spec.depth):
            pre = slot_prefix(slot_id, j)
            add(pre, init_block(spec.kind, spec.channels, param_rng(seed, pre), zero_proj=zero_init))

    conv("stem", w, cin, 3)
    for i in range(config.levels):
        c = w * 2 ** i
        slot(f"enc{i}")
        conv(f"down{i}", 2 * c, c, 2)
    slot("mid")
    for i in reversed(range(config.levels)):
        c = w * 2 ** i
        conv(f"up{i}", c, 2 * c, 1)
        slot(f"dec{i}")
    tail = _conv_w(param_rng(seed, "tail"), cin, w, 3)
    add("tail.", {"w": np.zeros_like(tail) if zero_init else tail * 0.1, "b": np.zeros(cin)})
    return out


def build_network(config: NetworkConfig, seed: int = 0, zero_init: bool = True) -> Network:
    """Deterministically initialised network.

    Each parameter group draws from its own generator keyed by ``(seed, name)``,
    so changing one slot's kind leaves every other group's values untouched.
    With ``zero_init`` every block projection and the tail conv start at zero,
    making the whole network the identity map.
    """
    config.validate()
    arrays = _init_params(config, seed, zero_init)
    return Network(config, {k: Tensor(v, name=k) for k, v in arrays.items()})
