"""Per-block latency tables, a simulated device, and the latency penalty."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .toynet.blocks import PRIMITIVES
from .toynet.config import BlockKind, ConfigError, NetworkConfig, slot_level


class ProfileError(ValueError):
    """Base class for profile problems."""


class ProfileFormatError(ProfileError):
    pass


class MissingLatencyError(ProfileError):
    def __init__(self, slot: str, kind: BlockKind):
        super().__init__(f"profile has no latency for slot {slot!r}, kind {kind.value!r}")
        self.slot = slot
        self.kind = kind


class InvalidLatencyError(ProfileError):
    pass


@dataclass(frozen=True)
class LatencyProfile:
    device: str
    slots: Mapping[str, Mapping[BlockKind, float]]

    def latency(self, slot: str, kind: BlockKind) -> float:
        try:
            return self.slots[slot][kind]
        except KeyError:
            raise MissingLatencyError(slot, kind) from None

    def validate(self, config: NetworkConfig | None = None, kinds=tuple(BlockKind)) -> None:
        """Every latency positive and finite; with ``config``, every needed entry present."""
        for slot, table in self.slots.items():
            for kind, ms in table.items():
                if not (math.isfinite(ms) and ms > 0):
                    raise InvalidLatencyError(f"latency for {slot}/{kind.value} must be positive and finite, got {ms}")
        if config is None:
            return
        for spec in config.slots:
            needed = [BlockKind.BASE] if spec.frozen else kinds
            for kind in needed:
                self.latency(spec.id, kind)

    def to_dict(self) -> dict:
        return {"device": self.device,
                "slots": {s: {k.value: float(v) for k, v in t.items()} for s, t in self.slots.items()}}

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatencyProfile):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def parse_profile(obj) -> LatencyProfile:
    if not isinstance(obj, dict) or "slots" not in obj or not isinstance(obj["slots"], dict):
        raise ProfileFormatError("profile must be an object with a 'slots' mapping")
    slots: dict[str, dict[BlockKind, float]] = {}
    for slot, table in obj["slots"].items():
        if not isinstance(table, dict) or not table:
            raise ProfileFormatError(f"slot {slot!r} must map kinds to latencies")
        entries = {}
        for k, v in table.items():
            try:
                kind = BlockKind.parse(k)
            except ConfigError as e:
                raise ProfileFormatError(str(e)) from None
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ProfileFormatError(f"latency for {slot}/{k} is not a number")
            entries[kind] = float(v)
        slots[slot] = entries
    profile = LatencyProfile(str(obj.get("device", "unknown")), slots)
    profile.validate()
    return profile


def load_profile(path: Path, config: NetworkConfig | None = None, kinds=tuple(BlockKind)) -> LatencyProfile:
    """Read and validate a profile JSON file.

    Raises :class:`ProfileFormatError` for malformed files,
    :class:`MissingLatencyError` when ``config`` needs an absent entry and
    :class:`InvalidLatencyError` for non-positive latencies.
    """
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ProfileFormatError(f"{path}: {e}") from None
    profile = parse_profile(obj)
    profile.validate(config, kinds)
    return profile


def save_profile(path: Path, profile: LatencyProfile) -> None:
    Path(path).write_text(json.dumps(profile.to_dict(), indent=2, sort_keys=True) + "\n")


def npu_reference_profile() -> LatencyProfile:
    """Per-block latencies measured on a flagship phone NPU, applied to every slot.

    The first column of the source table is taken to be the base block.
    """
    text = resources.files("blocksurgeon").joinpath("fixtures/npu_reference.json").read_text()
    return parse_profile(json.loads(text))


def calibrate(profile: LatencyProfile, config: NetworkConfig, base_total_ms: float) -> LatencyProfile:
    """Scale every entry uniformly so the all-base network costs ``base_total_ms``."""
    current = global_latency(profile, config.all_base())
    factor = base_total_ms / current
    return LatencyProfile(profile.device, {s: {k: v * factor for k, v in t.items()} for s, t in profile.slots.items()})


# Per-primitive cost coefficients of the simulated device, in ms per unit of
# work (work ~ multiply-adds or element touches per pixel). Attention-style
# global ops are expensive on the simulated accelerator.
_NOMINAL_COST = {
    "layer_norm": 6.0, "expand": 1.0, "dwconv3_2x": 2.0, "dwconv3": 2.0, "gate": 1.0, "pool": 40.0,
    "attn_conv": 1.0, "attn_mul": 12.0, "proj": 1.0, "add": 0.5, "relu": 0.5, "conv3": 1.0,
    "chan_scale": 1.5, "scalar_gate": 1.0,
}


def _op_work(op: str, c: int, pixels: int) -> float:
    if op == "expand":
        return 2.0 * c * c * pixels
    if op in ("proj", "attn_conv"):
        return c * c * (pixels if op == "proj" else 1)
    if op == "conv3":
        return 9.0 * c * c * pixels
    if op == "dwconv3_2x":
        return 18.0 * c * pixels
    if op == "dwconv3":
        return 9.0 * c * pixels
    return float(c * pixels)


def simulate_profile(config: NetworkConfig, seed: int = 0, noise: float = 0.0, image_size: int = 32,
                     device: str = "simulated") -> LatencyProfile:
    """Additive cost model standing in for on-device measurement.

    The device's per-primitive coefficients are the nominal ones jittered by a
    seeded log-normal factor; each entry additionally gets ``(1 + noise * z)``.
    """
    rng = np.random.default_rng(seed)
    coeff = {op: c * float(np.exp(0.2 * rng.standard_normal())) for op, c in sorted(_NOMINAL_COST.items())}
    slots: dict[str, dict[BlockKind, float]] = {}
    for spec in config.slots:
        side = image_size // 2 ** slot_level(spec.id, config.levels)
        pixels = side * side
        table = {}
        kinds = [BlockKind.BASE] if spec.frozen else list(BlockKind)
        for kind in kinds:
            work = sum(coeff[op] * _op_work(op, spec.channels, pixels) for op in PRIMITIVES[kind])
            ms = spec.depth * work * 1e-4
            if noise:
                ms *= max(0.05, 1.0 + noise * rng.standard_normal())
            table[kind] = ms
        slots[spec.id] = table
    return LatencyProfile(device, slots)


def global_latency(profile: LatencyProfile, config: NetworkConfig | Mapping[str, BlockKind], overhead_ms: float = 0.0) -> float:
    """Sum of per-slot latencies for the chosen kinds plus a constant overhead."""
    kinds = config.kinds() if isinstance(config, NetworkConfig) else config
    return overhead_ms + sum(profile.latency(slot, kind) for slot, kind in kinds.items())


@dataclass(frozen=True)
class PenaltyScale:
    alpha: float
    latency_min: float
    latency_base: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if self.latency_min > self.latency_base:
            raise ValueError("minimum latency exceeds base latency")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "latency_min": self.latency_min, "latency_base": self.latency_base}


def latency_bounds(profile: LatencyProfile, config: NetworkConfig, kinds=tuple(BlockKind)) -> tuple[float, float]:
    """(fastest achievable, all-base) global latency for ``config``'s frozen pattern."""
    lo = 0.0
    for spec in config.slots:
        allowed = [BlockKind.BASE] if spec.frozen else list(kinds)
        lo += min(profile.latency(spec.id, k) for k in allowed)
    return lo, global_latency(profile, config.all_base())


def make_penalty_scale(profile: LatencyProfile, config: NetworkConfig, accuracy_losses,
                       floor: float = 0.1, kinds=tuple(BlockKind)) -> PenaltyScale:
    """Affine latency-to-penalty map whose range matches the observed accuracy losses."""
    lo, base = latency_bounds(profile, config, kinds)
    losses = np.asarray(list(accuracy_losses), dtype=np.float64)
    spread = float(losses.max() - losses.min()) if losses.size else 0.0
    return PenaltyScale(max(spread, floor), lo, base)


def penalty(scale: PenaltyScale, latency_ms: float) -> float:
    """0 at the fastest configuration, ``alpha`` at the all-base one."""
    span = scale.latency_base - scale.latency_min
    if span <= 0:
        return scale.alpha * (latency_ms - scale.latency_min)
    return scale.alpha * (latency_ms - scale.latency_min) / span


def speedup(base_ms: float, optimized_ms: float) -> float:
    if optimized_ms <= 0:
        raise ValueError("optimized latency must be positive")
    return base_ms / optimized_ms
