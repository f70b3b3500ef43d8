"""Feature-level distillation of replacement blocks and stitching them in."""

from __future__ import annotations

import concurrent.futures
import logging
import math
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import ops
from .io import CorruptArtifactError, dump_json, load_checkpoint, load_json, save_checkpoint
from .tensor import Tape, Tensor, backward
from .toynet.blocks import block_forward, block_parts, init_block, resolver
from .toynet.config import ALTERNATIVES, BlockKind, ConfigError, NetworkConfig
from .toynet.data import PairedDataset
from .toynet.network import Network
from .toynet.train import Adam

logger = logging.getLogger(__name__)

DEFAULT_FRACTION = 0.25
DEFAULT_STEPS = 400
DEFAULT_LR = 1e-3
CHECK_EVERY = 50


class DistillationDivergedError(ArithmeticError):
    def __init__(self, slot: str, kind: BlockKind, step: int):
        super().__init__(f"distillation of {slot}/{kind.value} diverged at step {step}")
        self.step = step


class MissingSurrogateError(KeyError):
    def __init__(self, slot: str, kind: BlockKind):
        super().__init__(f"no surrogate for slot {slot!r}, kind {kind.value!r}")
        self.slot = slot
        self.kind = kind


def worker_count() -> int:
    env = os.environ.get("BLOCKSURGEON_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def subsample_data(dataset: PairedDataset, fraction: float, seed: int) -> PairedDataset:
    """Seeded subset of ``ceil(fraction * N)`` pairs, kept in original order."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    k = math.ceil(fraction * n - 1e-9)
    if k >= n:
        return dataset.subset(range(n))
    idx = np.sort(np.random.default_rng(seed).choice(n, size=k, replace=False))
    return dataset.subset(idx)


def capture_features(network: Network, slot_id: str, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tensors entering and leaving ``slot_id`` during a forward pass of ``network``."""
    if slot_id not in network.config.slot_ids:
        raise KeyError(slot_id)
    ins, outs = [], []
    for start in range(0, len(batch), 32):
        cap: dict = {}
        network.forward(Tensor(batch[start:start + 32]), capture=cap)
        ins.append(cap[slot_id][0].data)
        outs.append(cap[slot_id][1].data)
    return np.concatenate(ins), np.concatenate(outs)


@dataclass
class Surrogate:
    slot: str
    kind: BlockKind
    params: dict[str, np.ndarray]
    final_mse: float
    fraction: float
    steps: int
    seed: int
    initial_mse: float = float("nan")
    curve: list[float] = field(default_factory=list)

    def meta(self) -> dict:
        return {"slot": self.slot, "kind": self.kind.value, "final_mse": self.final_mse,
                "initial_mse": self.initial_mse, "fraction": self.fraction, "steps": self.steps, "seed": self.seed}


def pair_seed(master_seed: int, slot: str, kind: BlockKind) -> int:
    return (master_seed * 1_000_003 + zlib.crc32(f"{slot}/{kind.value}".encode())) % (2 ** 31)


def init_surrogate(teacher: Network, slot_id: str, kind: BlockKind, seed: int) -> dict[str, np.ndarray]:
    """Fresh surrogate parameters.

    Weights whose name and shape match the teacher block are inherited; the
    final projection always starts at zero so the surrogate begins as the
    identity.
    """
    spec = teacher.config.slot(slot_id)
    rng = np.random.default_rng(seed)
    params = {}
    for j in range(spec.depth):
        for name, arr in init_block(kind, spec.channels, rng, zero_proj=True).items():
            key = f"b{j}.{name}"
            src = teacher.params.get(slot_id + "." + key)
            if src is not None and not name.startswith("proj.") and src.shape == arr.shape:
                arr = src.data.copy()
            params[key] = arr
    return params


def _apply(kind: BlockKind, depth: int, params: Mapping[str, Tensor], x: Tensor) -> Tensor:
    for j in range(depth):
        x = block_forward(kind, resolver(params, f"b{j}."), x)
    return x


def _im2col(h: np.ndarray, k: int, pad: int) -> np.ndarray:
    """Rows of ``(C * k * k)`` patch values, one row per output pixel."""
    b, c, hh, ww = h.shape
    if k == 1:
        return h.transpose(0, 2, 3, 1).reshape(-1, c)
    hp = np.pad(h, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, c, k, k, hh, ww))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = hp[:, :, i:i + hh, j:j + ww]
    return cols.reshape(b, c * k * k, hh * ww).transpose(0, 2, 1).reshape(-1, c * k * k)


def fit_projection(kind: BlockKind, depth: int, params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> None:
    """Least-squares fit of the last block's final projection, in place.

    The block output is ``skip + proj(h)`` with ``proj`` linear, so the
    feature-MSE-optimal projection for the current ``h`` has a closed form.
    """
    t = {k: Tensor(v) for k, v in params.items()}
    h_in = _apply(kind, depth - 1, t, Tensor(x))
    last = f"b{depth - 1}."
    skip, h, pad = block_parts(kind, resolver(t, last), h_in)
    w = params[last + "proj.w"]
    out_c, _, k, _ = w.shape
    design = _im2col(h.data, k, pad)
    design = np.hstack([design, np.ones((design.shape[0], 1))])
    target = (y - skip.data).transpose(0, 2, 3, 1).reshape(-1, out_c)
    sol, *_ = np.linalg.lstsq(design, target, rcond=None)
    params[last + "proj.w"] = sol[:-1].T.reshape(w.shape).copy()
    params[last + "proj.b"] = sol[-1].copy()


def _feature_mse(kind: BlockKind, depth: int, params: Mapping[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> float:
    t = {k: Tensor(v) for k, v in params.items()}
    total = 0.0
    for s in range(0, len(x), 32):
        out = _apply(kind, depth, t, Tensor(x[s:s + 32])).data
        total += float(np.sum((out - y[s:s + 32]) ** 2))
    return total / y.size


def distill_block(slot_id: str, kind: BlockKind, teacher: Network, subset: PairedDataset,
                  steps: int = DEFAULT_STEPS, lr: float = DEFAULT_LR, seed: int = 0,
                  batch_size: int = 8, eval_inputs: np.ndarray | None = None,
                  fraction: float = float("nan"), allow_base: bool = False,
                  readout_fit: bool = True) -> Surrogate:
    """Train one surrogate block to reproduce the teacher slot's output features.

    The surrogate sees the teacher's own slot inputs (teacher forcing at the
    block boundary). Unless ``readout_fit`` is off, the zero-initialised final
    projection is first solved by least squares, then every parameter is
    refined with Adam. The parameters with the lowest full-subset feature
    MSE among the periodic checkpoints are kept. ``final_mse`` is measured on ``eval_inputs`` when given,
    otherwise on the training subset. ``allow_base`` permits self-distillation
    of the base kind, which is only useful as a convergence check.
    """
    spec = teacher.config.slot(slot_id)
    if spec.frozen:
        raise ConfigError(f"slot {slot_id} is frozen")
    if kind is BlockKind.BASE and not allow_base:
        raise ConfigError("the base kind is not distilled")
    x_all, y_all = capture_features(teacher, slot_id, subset.blurred)
    params = init_surrogate(teacher, slot_id, kind, seed)
    start = dict(params)
    if readout_fit:
        fit_projection(kind, spec.depth, params, x_all, y_all)
    tensors = {k: Tensor(v, name=k) for k, v in params.items()}
    opt = Adam(tensors, lr=lr)
    rng = np.random.default_rng(seed + 1)
    curve: list[float] = []
    best = math.inf
    kept = {k: v.copy() for k, v in params.items()}
    kept_mse = _feature_mse(kind, spec.depth, kept, x_all, y_all)
    n = len(x_all)
    order = rng.permutation(n)
    pos = 0
    for step in range(steps):
        if pos + batch_size > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        with Tape() as tape:
            loss = ops.mse_loss(_apply(kind, spec.depth, tensors, Tensor(x_all[idx])), Tensor(y_all[idx]))
        value = loss.item()
        if not math.isfinite(value):
            raise DistillationDivergedError(slot_id, kind, step)
        opt.step(backward(tape, loss))
        best = min(best, value)
        curve.append(best)
        if (step + 1) % CHECK_EVERY == 0 or step + 1 == steps:
            current = {k: t.data.copy() for k, t in tensors.items()}
            mse = _feature_mse(kind, spec.depth, current, x_all, y_all)
            if mse < kept_mse:
                kept, kept_mse = current, mse
    final = kept
    if eval_inputs is None:
        ex, ey = x_all, y_all
    else:
        ex, ey = capture_features(teacher, slot_id, eval_inputs)
    return Surrogate(
        slot=slot_id, kind=kind, params=final,
        final_mse=_feature_mse(kind, spec.depth, final, ex, ey),
        initial_mse=_feature_mse(kind, spec.depth, start, ex, ey),
        fraction=fraction, steps=steps, seed=seed, curve=curve,
    )


class SurrogateSet(Mapping):
    """Trained surrogates keyed by ``(slot_id, kind)``."""

    def __init__(self, items: Iterable[Surrogate] = ()):
        self._items: dict[tuple[str, BlockKind], Surrogate] = {}
        for s in items:
            self._items[(s.slot, s.kind)] = s

    def __getitem__(self, key) -> Surrogate:
        return self._items[key]

    def __iter__(self) -> Iterator[tuple[str, BlockKind]]:
        return iter(sorted(self._items, key=lambda k: (k[0], k[1].index)))

    def __len__(self) -> int:
        return len(self._items)

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = []
        for key in self:
            s = self._items[key]
            name = f"{s.slot}__{s.kind.value}"
            save_checkpoint(directory / name, s.params, s.meta())
            index.append({"name": name, **s.meta()})
        dump_json(directory / "index.json", {"surrogates": index})

    @classmethod
    def load(cls, directory: Path) -> "SurrogateSet":
        directory = Path(directory)
        index = load_json(directory / "index.json")
        items = []
        try:
            for e in index["surrogates"]:
                params, _ = load_checkpoint(directory / e["name"])
                items.append(Surrogate(slot=e["slot"], kind=BlockKind.parse(e["kind"]), params=params,
                                       final_mse=e["final_mse"], initial_mse=e.get("initial_mse", float("nan")),
                                       fraction=e["fraction"], steps=e["steps"], seed=e["seed"]))
        except (KeyError, TypeError) as e:
            raise CorruptArtifactError(f"bad surrogate index in {directory}: {e}") from None
        return cls(items)


def _distill_job(args) -> Surrogate:
    slot, kind, teacher, subset, steps, lr, seed, eval_inputs, fraction = args
    return distill_block(slot, kind, teacher, subset, steps=steps, lr=lr, seed=seed,
                         eval_inputs=eval_inputs, fraction=fraction)


def distill_all(teacher: Network, subset: PairedDataset, kinds: Iterable[BlockKind] = ALTERNATIVES,
                slots: Iterable[str] | None = None, steps: int = DEFAULT_STEPS, lr: float = DEFAULT_LR,
                master_seed: int = 0, workers: int | None = None, eval_inputs: np.ndarray | None = None,
                fraction: float = float("nan")) -> SurrogateSet:
    """Distill every (slot, kind) pair; results do not depend on ``workers``."""
    slots = list(teacher.config.searchable if slots is None else slots)
    kinds = [k for k in kinds if k is not BlockKind.BASE]
    jobs = [(s, k, teacher, subset, steps, lr, pair_seed(master_seed, s, k), eval_inputs, fraction)
            for s in slots for k in kinds]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        results = [_distill_job(j) for j in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_distill_job, jobs))
    return SurrogateSet(results)


def stitch(base: Network, surrogates: Mapping, config: NetworkConfig | Mapping[str, BlockKind]) -> Network:
    """Base network with the slots named in ``config`` swapped for their surrogates."""
    kinds = config.kinds() if isinstance(config, NetworkConfig) else dict(config)
    net = base
    for slot_id in base.config.slot_ids:
        kind = kinds.get(slot_id, BlockKind.BASE)
        if kind is BlockKind.BASE:
            continue
        try:
            s = surrogates[(slot_id, kind)]
        except KeyError:
            raise MissingSurrogateError(slot_id, kind) from None
        net = net.with_slot(slot_id, kind, s.params)
    if net is base:
        net = base.copy()
    return net
