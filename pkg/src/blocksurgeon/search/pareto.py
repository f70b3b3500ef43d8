"""Two-objective Pareto bookkeeping (both objectives minimised)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass
class Observation:
    """One evaluated configuration.

    ``f1`` is the PSNR loss in dB against the base network (signed), ``f2``
    the latency penalty, ``order`` the 0-based evaluation index.
    """

    indices: tuple[int, ...]
    encoding: tuple[float, ...]
    f1: float
    f2: float
    latency_ms: float
    order: int = 0

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.f1, self.f2)

    def to_dict(self) -> dict:
        return {"indices": list(self.indices), "encoding": list(self.encoding), "f1": self.f1, "f2": self.f2,
                "latency_ms": self.latency_ms, "order": self.order}

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(tuple(d["indices"]), tuple(d["encoding"]), d["f1"], d["f2"], d["latency_ms"], d["order"])


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def nondominated(points: Iterable[Sequence[float]]) -> list[tuple[float, float]]:
    """Distinct non-dominated objective pairs, sorted by the first objective."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    front = []
    best2 = np.inf
    for p in pts:
        if p[1] < best2:
            front.append(p)
            best2 = p[1]
    return front


def hypervolume_2d(front: Iterable[Sequence[float]], ref: Sequence[float]) -> float:
    """Area dominated by ``front`` and bounded by the reference point ``ref``.

    Every point must strictly dominate ``ref``.
    """
    pts = [(float(p[0]), float(p[1])) for p in front]
    for p in pts:
        if not (p[0] < ref[0] and p[1] < ref[1]):
            raise ValueError(f"point {p} does not strictly dominate reference {tuple(ref)}")
    area = 0.0
    prev2 = float(ref[1])
    for p1, p2 in nondominated(pts):
        area += (ref[0] - p1) * (prev2 - p2)
        prev2 = p2
    return area


@dataclass
class ParetoArchive:
    members: list[Observation] = field(default_factory=list)
    ref: tuple[float, float] | None = None

    def update(self, obs: Observation) -> bool:
        """Insert ``obs`` if nothing dominates or duplicates it; returns whether it was kept."""
        y = obs.objectives
        for m in self.members:
            if dominates(m.objectives, y) or m.objectives == y:
                return False
        self.members = [m for m in self.members if not dominates(y, m.objectives)]
        self.members.append(obs)
        return True

    def objectives(self) -> list[tuple[float, float]]:
        return [m.objectives for m in self.members]

    def hypervolume(self, ref: Sequence[float] | None = None) -> float:
        r = self.ref if ref is None else ref
        if r is None:
            raise ValueError("archive has no reference point")
        return hypervolume_2d([p for p in self.objectives() if p[0] < r[0] and p[1] < r[1]], r)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, obs: Observation) -> bool:
        return any(m is obs for m in self.members)


def pareto_update(archive: ParetoArchive, obs: Observation) -> ParetoArchive:
    archive.update(obs)
    return archive


def _lowest_f2(members: Sequence[Observation]) -> Observation:
    return min(members, key=lambda m: (m.f2, m.f1, m.order))


def knee_select(archive: ParetoArchive | Sequence[Observation]) -> Observation:
    """Member farthest from the chord between the two extremes after min-max scaling."""
    members = list(archive)
    if not members:
        raise ValueError("empty archive")
    if len(members) <= 2:
        return _lowest_f2(members)
    f = np.array([m.objectives for m in members], dtype=np.float64)
    lo, hi = f.min(axis=0), f.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    z = (f - lo) / span
    a = z[np.argmin(f[:, 0] + 1e-12 * f[:, 1])]
    b = z[np.argmin(f[:, 1] + 1e-12 * f[:, 0])]
    d = b - a
    norm = float(np.hypot(d[0], d[1]))
    if norm == 0.0:
        return _lowest_f2(members)
    dist = np.abs(d[0] * (z[:, 1] - a[1]) - d[1] * (z[:, 0] - a[0])) / norm
    best = dist.max()
    tied = [m for m, dd in zip(members, dist) if dd >= best - 1e-12]
    return _lowest_f2(tied)


def least_latency_select(archive: ParetoArchive | Sequence[Observation]) -> Observation:
    members = list(archive)
    if not members:
        raise ValueError("empty archive")
    return min(members, key=lambda m: (m.latency_ms, m.f1, m.order))
