"""Zero-cost block saliency proxies, consensus ranking and an ablation oracle.

Every data-driven proxy uses the restoration loss ``mse(network(x), target)``
on one fixed batch. Scores are aggregated per slot, so a slot holding a stack
of blocks is scored over all of its parameters.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import ops
from .tensor import GradientError, Tape, Tensor, backward, grad_of, hvp
from .toynet.data import PairedDataset
from .toynet.metrics import batch_psnr
from .toynet.network import Network

PROXIES = ("grad_norm", "snip", "grasp", "fisher", "plain", "synflow")
SIGNED = frozenset({"grasp", "plain"})
BATCH_SIZE = 8


def fixed_batch(train: PairedDataset, seed: int = 0, size: int = BATCH_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Seeded ``(blurred, sharp)`` batch drawn without replacement from ``train``."""
    n = len(train.sharp)
    idx = np.sort(np.random.default_rng(seed).choice(n, size=min(size, n), replace=False))
    return train.blurred[idx], train.sharp[idx]


def _check(name: str, g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise GradientError(f"non-finite gradient for {name}")


def _loss_grads(network: Network, batch, capture: dict | None = None):
    x, y = batch
    with Tape() as tape:
        loss = ops.mse_loss(network.forward(Tensor(x), capture=capture), Tensor(y))
    grads = backward(tape, loss)
    out = {}
    for name, t in network.params.items():
        g = grads[t]
        _check(name, g)
        out[name] = g
    return out, grads


def _per_slot(network: Network, values: Mapping[str, np.ndarray], reduce) -> dict[str, float]:
    out = {}
    for slot in network.config.slot_ids:
        names = list(network.slot_params(slot))
        out[slot] = float(reduce(names, values))
    return out


def score_grad_norm(network: Network, batch) -> dict[str, float]:
    """L2 norm of each slot's concatenated parameter gradient."""
    grads, _ = _loss_grads(network, batch)
    return _per_slot(network, grads, lambda names, g: math.sqrt(sum(float(np.sum(g[n] ** 2)) for n in names)))


def score_snip(network: Network, batch) -> dict[str, float]:
    """Sum of ``|theta * dL/dtheta|`` over each slot."""
    grads, _ = _loss_grads(network, batch)
    p = network.params
    return _per_slot(network, grads, lambda names, g: sum(float(np.sum(np.abs(p[n].data * g[n]))) for n in names))


def score_plain(network: Network, batch) -> dict[str, float]:
    """Signed sum of ``theta * dL/dtheta`` over each slot."""
    grads, _ = _loss_grads(network, batch)
    p = network.params
    return _per_slot(network, grads, lambda names, g: sum(float(np.sum(p[n].data * g[n])) for n in names))


def grasp_from(network: Network, hg: np.ndarray) -> dict[str, float]:
    """``-sum(theta * Hg)`` restricted to each slot's coordinates of the flat vector."""
    theta = network.flat()
    return {slot: -sum(float(np.dot(theta[a:b], hg[a:b])) for a, b in ranges)
            for slot, ranges in network.slot_slices().items()}


def score_grasp(network: Network, batch=None, loss_fn: Callable[[Tensor], Tensor] | None = None) -> dict[str, float]:
    """``-theta . (H g)`` per slot, with the Hessian-vector product over all parameters.

    ``loss_fn`` maps the flat parameter vector to a scalar loss; by default it
    is the restoration loss on ``batch``.
    """
    if loss_fn is None:
        x, y = Tensor(batch[0]), Tensor(batch[1])

        def loss_fn(flat: Tensor) -> Tensor:
            return ops.mse_loss(network.forward(x, params=network.unflatten(flat)), y)

    theta = network.flat()
    _, g = grad_of(loss_fn, theta)
    _check("parameters", g)
    return grasp_from(network, hvp(loss_fn, theta, g))


def score_fisher(network: Network, batch) -> dict[str, float]:
    """Per slot, ``sum_c (sum_hw a * dL/da)^2`` on the slot output, averaged over the batch."""
    captured: dict = {}
    _, grads = _loss_grads(network, batch, capture=captured)
    out = {}
    for slot in network.config.slot_ids:
        a = captured[slot][1]
        g = grads[a]
        _check(slot, g)
        per_channel = np.sum(a.data * g, axis=(2, 3))
        out[slot] = float(np.mean(np.sum(per_channel ** 2, axis=1)))
    return out


def score_synflow(network: Network, image_size: int = 32) -> dict[str, float]:
    """Data-free synaptic flow on the ``|theta|`` network with layer norms bypassed.

    ``R`` is the sum of the output for an all-ones input; each slot scores
    ``sum(theta * dR/dtheta)`` with ``theta`` already made non-negative.
    """
    params = {k: Tensor(np.abs(v.data), name=k) for k, v in network.params.items()}
    x = Tensor(np.ones((1, network.config.in_channels, image_size, image_size)))
    with Tape() as tape:
        r = ops.sum_all(network.forward(x, params=params, bypass_norm=True))
    grads = backward(tape, r)
    vals = {}
    for name, t in params.items():
        g = grads[t]
        _check(name, g)
        vals[name] = t.data * g
    return _per_slot(network, vals, lambda names, v: sum(float(np.sum(v[n])) for n in names))


@dataclass
class SaliencyReport:
    """Proxy scores per slot, in slot order."""

    scores: dict[str, dict[str, float]]

    @property
    def slots(self) -> list[str]:
        return list(self.scores)

    def proxy(self, name: str) -> dict[str, float]:
        return {s: v[name] for s, v in self.scores.items()}

    def scaled(self, name: str, factor: float) -> "SaliencyReport":
        return SaliencyReport({s: {**v, name: v[name] * factor} for s, v in self.scores.items()})

    def to_csv(self, ranking: "Ranking | None" = None) -> str:
        ranking = ranking or rank_blocks(self)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot_id", *PROXIES, "consensus_rank"])
        for slot, v in self.scores.items():
            w.writerow([slot, *(repr(v[p]) for p in PROXIES), ranking.consensus_rank(slot)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SaliencyReport":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls({r["slot_id"]: {p: float(r[p]) for p in PROXIES} for r in rows})

    def save(self, path: Path, ranking: "Ranking | None" = None) -> None:
        Path(path).write_text(self.to_csv(ranking))


def saliency_report(network: Network, batch, image_size: int | None = None) -> SaliencyReport:
    """All six proxies for every slot."""
    size = int(batch[0].shape[-1]) if image_size is None else image_size
    cols = {
        "grad_norm": score_grad_norm(network, batch),
        "snip": score_snip(network, batch),
        "grasp": score_grasp(network, batch),
        "fisher": score_fisher(network, batch),
        "plain": score_plain(network, batch),
        "synflow": score_synflow(network, size),
    }
    return SaliencyReport({s: {p: cols[p][s] for p in PROXIES} for s in network.config.slot_ids})


@dataclass
class Ranking:
    per_proxy: dict[str, list[str]]
    points: dict[str, int]
    consensus: list[str]

    def consensus_rank(self, slot: str) -> int:
        return self.consensus.index(slot) + 1


def rank_blocks(report: SaliencyReport) -> Ranking:
    """Per-proxy descending rankings and their Borda-count consensus.

    Signed proxies rank by magnitude. Ties go to the earlier slot.
    """
    slots = report.slots
    order = {s: i for i, s in enumerate(slots)}
    n = len(slots)
    per_proxy = {}
    points = {s: 0 for s in slots}
    for p in PROXIES:
        key = (lambda s: -abs(report.scores[s][p])) if p in SIGNED else (lambda s: -report.scores[s][p])
        ranked = sorted(slots, key=lambda s: (key(s), order[s]))
        per_proxy[p] = ranked
        for i, s in enumerate(ranked):
            points[s] += n - 1 - i
    consensus = sorted(slots, key=lambda s: (-points[s], order[s]))
    return Ranking(per_proxy, points, consensus)


def select_frozen(consensus: Sequence[str], k: int = 1) -> set[str]:
    """The ``k`` most salient slots."""
    if not 0 <= k <= len(consensus):
        raise ValueError(f"k must lie in [0, {len(consensus)}], got {k}")
    return set(consensus[:k])


def _predict(network: Network, x: np.ndarray, identity=(), batch_size: int = 32) -> np.ndarray:
    return np.concatenate([network.forward(Tensor(x[i:i + batch_size]), identity=identity).data
                           for i in range(0, len(x), batch_size)])


def ablation_sensitivity(network: Network, val: PairedDataset) -> dict[str, float]:
    """Validation PSNR drop when each slot's blocks are replaced by the identity."""
    base = batch_psnr(_predict(network, val.blurred), val.sharp)
    return {s: base - batch_psnr(_predict(network, val.blurred, identity=(s,)), val.sharp)
            for s in network.config.slot_ids}
