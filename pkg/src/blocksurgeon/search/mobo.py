"""Multi-objective Bayesian search over per-slot block kinds."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from ..distill import stitch
from ..profile import LatencyProfile, PenaltyScale, global_latency, penalty
from ..toynet.config import BlockKind, NetworkConfig
from ..toynet.data import PairedDataset
from ..toynet.metrics import batch_psnr
from ..toynet.network import Network
from .ehvi import ehvi
from .gp import gp_fit
from .pareto import Observation, ParetoArchive, hypervolume_2d

BRUTE_FORCE_LIMIT = 10 ** 5
DEFAULT_POOL = 2000


class SearchExhausted(RuntimeError):
    """Every configuration has already been evaluated."""


class SearchSpaceTooLarge(ValueError):
    def __init__(self, count: int, limit: int = BRUTE_FORCE_LIMIT):
        super().__init__(f"exhaustive search over {count:,} configurations exceeds the limit of {limit:,}")
        self.count = count
        self.limit = limit


def decode(x: Sequence[float], n: int) -> tuple[int, ...]:
    """Equal-interval partition of each coordinate into ``n`` options."""
    return tuple(min(int(math.floor(float(v) * n)), n - 1) if v > 0 else 0 for v in x)


def encode(indices: Sequence[int], n: int) -> tuple[float, ...]:
    """Midpoint of each index's interval."""
    for i in indices:
        if not 0 <= i < n:
            raise ValueError(f"index {i} outside [0, {n})")
    return tuple((i + 0.5) / n for i in indices)


def space_size(n: int, m: int) -> int:
    return n ** m


@dataclass
class SearchSetup:
    """What the search needs to know about the problem.

    ``measure`` maps an index vector to ``(f1, latency_ms)``. The penalty
    scale is derived from the initial design unless ``scale`` is given.
    """

    slot_ids: tuple[str, ...]
    kinds: tuple[BlockKind, ...]
    measure: Callable[[tuple[int, ...]], tuple[float, float]]
    latency_min: float
    latency_base: float
    alpha_floor: float = 0.1
    scale: PenaltyScale | None = None

    @property
    def m(self) -> int:
        return len(self.slot_ids)

    @property
    def n(self) -> int:
        return len(self.kinds)

    def kinds_of(self, indices: Sequence[int]) -> dict[str, BlockKind]:
        return {s: self.kinds[i] for s, i in zip(self.slot_ids, indices)}

    def scale_from(self, losses: Sequence[float]) -> PenaltyScale:
        spread = float(np.max(losses) - np.min(losses)) if len(losses) else 0.0
        return PenaltyScale(max(spread, self.alpha_floor), self.latency_min, self.latency_base)


def evaluate(config: NetworkConfig | Mapping[str, BlockKind], base: Network, surrogates, profile: LatencyProfile,
             scale: PenaltyScale, val: PairedDataset, base_psnr: float | None = None) -> Observation:
    """Score one configuration by stitching surrogates in; no parameter is updated."""
    kinds = config.kinds() if isinstance(config, NetworkConfig) else dict(config)
    full = {s: kinds.get(s, BlockKind.BASE) for s in base.config.slot_ids}
    if base_psnr is None:
        base_psnr = batch_psnr(base.predict(val.blurred), val.sharp)
    net = stitch(base, surrogates, full)
    f1 = base_psnr - batch_psnr(net.predict(val.blurred), val.sharp)
    lat = global_latency(profile, full)
    searchable = [s for s in base.config.slot_ids if not base.config.slot(s).frozen]
    idx = tuple(full[s].index for s in searchable)
    return Observation(idx, encode(idx, len(BlockKind)), float(f1), penalty(scale, lat), float(lat))


def make_setup(base: Network, surrogates, profile: LatencyProfile, val: PairedDataset,
               kinds: Sequence[BlockKind] = tuple(BlockKind), alpha_floor: float = 0.1) -> SearchSetup:
    """Setup whose measure stitches surrogates into ``base`` and reads latencies from ``profile``.

    ``kinds`` restricts every searchable slot to the listed kinds; Base is
    always included and always index 0.
    """
    kinds = tuple([BlockKind.BASE] + [k for k in kinds if k is not BlockKind.BASE])
    cfg = base.config
    slot_ids = tuple(cfg.searchable)
    profile.validate(cfg, kinds)
    base_psnr = batch_psnr(base.predict(val.blurred), val.sharp)

    def measure(indices: tuple[int, ...]) -> tuple[float, float]:
        chosen = {s: kinds[i] for s, i in zip(slot_ids, indices)}
        full = {s: chosen.get(s, BlockKind.BASE) for s in cfg.slot_ids}
        net = stitch(base, surrogates, full)
        f1 = base_psnr - batch_psnr(net.predict(val.blurred), val.sharp)
        return float(f1), float(global_latency(profile, full))

    lo = sum(min(profile.latency(s.id, k) for k in ([BlockKind.BASE] if s.frozen else kinds)) for s in cfg.slots)
    return SearchSetup(slot_ids, kinds, measure, lo, global_latency(profile, cfg.all_base()), alpha_floor)


@dataclass
class SearchResult:
    archive: ParetoArchive
    log: list[Observation]
    ref: tuple[float, float]
    scale: PenaltyScale
    seed: int
    init_size: int
    hv_trace: list[float] = field(default_factory=list)

    def hypervolume(self) -> float:
        return self.archive.hypervolume()


def _worse(v: float) -> float:
    # Same as 1.1 * v + 0.1 for v >= 0, and still strictly above v when v < 0.
    return v + 0.1 * abs(v) + 0.1


def reference_point(observations: Sequence[Observation]) -> tuple[float, float]:
    """Point strictly worse than every observation in both objectives."""
    return (_worse(max(o.f1 for o in observations)), _worse(max(o.f2 for o in observations)))


def latin_hypercube(m: int, count: int, seed: int) -> np.ndarray:
    return qmc.LatinHypercube(d=m, seed=np.random.default_rng(seed)).random(count)


def _neighbours(idx: Sequence[int], n: int):
    for d in range(len(idx)):
        for v in range(n):
            if v != idx[d]:
                yield tuple(idx[:d]) + (v,) + tuple(idx[d + 1:])


def candidate_pool(archive: ParetoArchive, n: int, m: int, rng: np.random.Generator, pool_size: int,
                   evaluated: set) -> list[tuple[int, ...]]:
    """Unevaluated configs from uniform draws plus one-coordinate moves of archive members."""
    seen = set()
    pool = []
    draws = [decode(x, n) for x in rng.random((pool_size, m))]
    moves = [nb for obs in archive for nb in _neighbours(obs.indices, n)]
    for idx in itertools.chain(draws, moves):
        if idx not in evaluated and idx not in seen:
            seen.add(idx)
            pool.append(idx)
    return pool


def propose(models, archive: ParetoArchive, ref: Sequence[float], rng: np.random.Generator, pool_size: int,
            n: int, m: int, evaluated: set) -> tuple[int, ...]:
    """Unevaluated config with the highest EHVI; ties go to the lowest predicted f2.

    ``models`` is ``(gp_f1, gp_f2)``. Raises :class:`SearchExhausted` when
    nothing is left to evaluate.
    """
    if len(archive) == 0:
        raise ValueError("propose needs a non-empty archive; run the initial design first")
    if len(evaluated) >= n ** m:
        raise SearchExhausted(f"all {n ** m} configurations evaluated")
    pool = candidate_pool(archive, n, m, rng, pool_size, evaluated)
    if not pool:
        pool = [idx for idx in itertools.product(range(n), repeat=m) if idx not in evaluated][:max(pool_size, 1)]
    x = np.array([encode(idx, n) for idx in pool])
    mu1, v1 = models[0].predict(x)
    mu2, v2 = models[1].predict(x)
    mu = np.stack([mu1, mu2], axis=1)
    sd = np.sqrt(np.stack([v1, v2], axis=1))
    gain = ehvi(mu, sd, archive.objectives(), ref)
    best = gain.max()
    tied = np.flatnonzero(gain >= best - 1e-15 * max(1.0, abs(best)))
    pick = tied[np.argmin(mu2[tied])]
    return pool[int(pick)]


def mobo_run(setup: SearchSetup, budget: int, init_size: int | None = None, seed: int = 0,
             pool_size: int = DEFAULT_POOL) -> SearchResult:
    """Latin-hypercube initial design followed by EHVI-driven proposals.

    The penalty scale (unless fixed in ``setup``) and the reference point are
    set once, from the initial design.
    """
    m, n = setup.m, setup.n
    total = n ** m
    init_size = max(2 * m, 8) if init_size is None else init_size
    budget = min(budget, total)
    rng = np.random.default_rng(seed)
    raw: list[tuple[tuple[int, ...], float, float]] = []
    evaluated: set = set()

    # Initial design: decode LHS rows, dropping repeats; top up from fresh rows.
    design_seed = int(rng.integers(2 ** 31))
    attempt = 0
    while len(raw) < min(init_size, budget) and len(evaluated) < total:
        for row in latin_hypercube(m, init_size, design_seed + attempt):
            idx = decode(row, n)
            if idx in evaluated or len(raw) >= min(init_size, budget):
                continue
            evaluated.add(idx)
            f1, lat = setup.measure(idx)
            raw.append((idx, f1, lat))
        attempt += 1

    scale = setup.scale or setup.scale_from([r[1] for r in raw])
    log = [Observation(idx, encode(idx, n), f1, penalty(scale, lat), lat, order=i) for i, (idx, f1, lat) in enumerate(raw)]
    ref = reference_point(log)
    archive = ParetoArchive(ref=ref)
    for obs in log:
        archive.update(obs)
    trace = [archive.hypervolume()]

    while len(log) < budget:
        x = np.array([o.encoding for o in log])
        models = (gp_fit(x, [o.f1 for o in log]), gp_fit(x, [o.f2 for o in log]))
        try:
            idx = propose(models, archive, ref, rng, pool_size, n, m, evaluated)
        except SearchExhausted:
            break
        evaluated.add(idx)
        f1, lat = setup.measure(idx)
        obs = Observation(idx, encode(idx, n), f1, penalty(scale, lat), lat, order=len(log))
        log.append(obs)
        archive.update(obs)
        trace.append(archive.hypervolume())
    return SearchResult(archive, log, ref, scale, seed, min(init_size, len(log)), trace)


@dataclass
class BruteForceResult:
    archive: ParetoArchive
    observations: list[Observation]
    scale: PenaltyScale


def brute_force_pareto(setup: SearchSetup, scale: PenaltyScale | None = None) -> BruteForceResult:
    """Evaluate every configuration in lexicographic order and keep the exact front.

    Without ``scale`` the penalty spread is taken from all observed losses.
    """
    total = setup.n ** setup.m
    if total > BRUTE_FORCE_LIMIT:
        raise SearchSpaceTooLarge(total)
    raw = [(idx, *setup.measure(idx)) for idx in itertools.product(range(setup.n), repeat=setup.m)]
    scale = scale or setup.scale or setup.scale_from([r[1] for r in raw])
    obs = [Observation(idx, encode(idx, setup.n), f1, penalty(scale, lat), lat, order=i)
           for i, (idx, f1, lat) in enumerate(raw)]
    archive = ParetoArchive()
    for o in obs:
        archive.update(o)
    return BruteForceResult(archive, obs, scale)


def run_log_csv(setup: SearchSetup, log: Sequence[Observation], archive: ParetoArchive) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", *setup.slot_ids, "f1_db", "f2", "latency_ms", "pareto_member"])
    for o in log:
        w.writerow([o.order, *(setup.kinds[i].value for i in o.indices), repr(o.f1), repr(o.f2),
                    repr(o.latency_ms), o in archive])
    return buf.getvalue()


def archive_json(setup: SearchSetup, result: SearchResult) -> dict:
    return {
        "slots": list(setup.slot_ids),
        "kinds": [k.value for k in setup.kinds],
        "reference": list(result.ref),
        "scale": result.scale.to_dict(),
        "seed": result.seed,
        "init_size": result.init_size,
        "hypervolume": result.hypervolume(),
        "archive": [o.to_dict() for o in sorted(result.archive, key=lambda o: o.f1)],
        "log": [o.to_dict() for o in result.log],
    }


def common_reference(*groups: Sequence[Observation]) -> tuple[float, float]:
    """Reference point covering every observation in ``groups``."""
    return reference_point([o for g in groups for o in g])


def front_hypervolume(observations: Sequence[Observation], ref: Sequence[float]) -> float:
    return hypervolume_2d([o.objectives for o in observations if o.f1 < ref[0] and o.f2 < ref[1]], ref)
