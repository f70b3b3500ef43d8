"""Block kinds, slot descriptions and whole-network configurations."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, replace


class ConfigError(ValueError):
    pass


class BlockKind(enum.Enum):
    BASE = "base"
    ALT1 = "alt1"
    ALT2 = "alt2"
    ALT3 = "alt3"
    ALT4 = "alt4"
    ALT5 = "alt5"
    ALT6 = "alt6"

    @property
    def index(self) -> int:
        return _KIND_ORDER.index(self)

    @classmethod
    def from_index(cls, i: int) -> "BlockKind":
        return _KIND_ORDER[i]

    @classmethod
    def parse(cls, text: str) -> "BlockKind":
        t = text.strip().lower()
        if t == "alt0":
            return cls.BASE
        try:
            return cls(t)
        except ValueError:
            raise ConfigError(f"unknown block kind {text!r}") from None

    def __str__(self) -> str:
        return self.value


_KIND_ORDER = list(BlockKind)
ALTERNATIVES = tuple(_KIND_ORDER[1:])

_SLOT_RE = re.compile(r"^(enc|dec)(\d+)$|^mid$")


@dataclass(frozen=True)
class SlotSpec:
    id: str
    channels: int
    frozen: bool = False
    kind: BlockKind = BlockKind.BASE
    depth: int = 1

    def to_dict(self) -> dict:
        d = {"id": self.id, "channels": self.channels, "frozen": self.frozen, "kind": self.kind.value}
        if self.depth != 1:
            d["depth"] = self.depth
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SlotSpec":
        try:
            return cls(
                id=str(d["id"]),
                channels=int(d["channels"]),
                frozen=bool(d.get("frozen", False)),
                kind=BlockKind.parse(d.get("kind", "base")),
                depth=int(d.get("depth", 1)),
            )
        except KeyError as e:
            raise ConfigError(f"slot entry missing field {e}") from None


def slot_level(slot_id: str, levels: int) -> int:
    """Resolution level of a slot: 0 for full resolution, ``levels`` for mid."""
    if slot_id == "mid":
        return levels
    m = _SLOT_RE.match(slot_id)
    if not m:
        raise ConfigError(f"bad slot id {slot_id!r}")
    return int(m.group(2))


@dataclass(frozen=True)
class NetworkConfig:
    """U-shaped layout: ``enc0..enc{L-1}``, ``mid``, ``dec{L-1}..dec0``.

    Each encoder is followed by a 2x strided downsample and each decoder is
    preceded by an upsample whose output is added to the matching encoder's
    output. Channels double at every downsample.
    """

    slots: tuple[SlotSpec, ...]
    width: int = 8
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        self.validate()

    @property
    def levels(self) -> int:
        return sum(1 for s in self.slots if s.id.startswith("enc"))

    @property
    def slot_ids(self) -> list[str]:
        return [s.id for s in self.slots]

    def slot(self, slot_id: str) -> SlotSpec:
        for s in self.slots:
            if s.id == slot_id:
                return s
        raise KeyError(slot_id)

    @property
    def searchable(self) -> list[str]:
        return [s.id for s in self.slots if not s.frozen]

    @property
    def frozen(self) -> list[str]:
        return [s.id for s in self.slots if s.frozen]

    def kinds(self) -> dict[str, BlockKind]:
        return {s.id: s.kind for s in self.slots}

    def validate(self) -> None:
        if self.width < 1 or self.in_channels < 1:
            raise ConfigError("width and in_channels must be positive")
        ids = self.slot_ids
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate slot ids")
        enc = [i for i in ids if i.startswith("enc")]
        dec = [i for i in ids if i.startswith("dec")]
        if len(enc) != len(dec):
            raise ConfigError(f"{len(enc)} encoders vs {len(dec)} decoders")
        levels = len(enc)
        expected = [f"enc{i}" for i in range(levels)] + ["mid"] + [f"dec{i}" for i in reversed(range(levels))]
        if ids != expected:
            raise ConfigError(f"slot order must be {expected}, got {ids}")
        for s in self.slots:
            want = self.width * 2 ** slot_level(s.id, levels)
            if s.channels != want:
                raise ConfigError(f"slot {s.id} has {s.channels} channels, expected {want}")
            if s.depth < 1:
                raise ConfigError(f"slot {s.id} depth must be >= 1")
            if s.frozen and s.kind is not BlockKind.BASE:
                raise ConfigError(f"frozen slot {s.id} must keep the base block")

    def with_kinds(self, kinds: dict[str, BlockKind]) -> "NetworkConfig":
        slots = []
        for s in self.slots:
            k = kinds.get(s.id, s.kind)
            if s.frozen and k is not BlockKind.BASE:
                raise ConfigError(f"slot {s.id} is frozen")
            slots.append(replace(s, kind=k))
        return replace(self, slots=tuple(slots))

    def with_frozen(self, frozen) -> "NetworkConfig":
        frozen = set(frozen)
        unknown = frozen - set(self.slot_ids)
        if unknown:
            raise ConfigError(f"unknown slots {sorted(unknown)}")
        slots = tuple(replace(s, frozen=s.id in frozen, kind=BlockKind.BASE if s.id in frozen else s.kind)
                      for s in self.slots)
        return replace(self, slots=slots)

    def all_base(self) -> "NetworkConfig":
        return self.with_kinds({s.id: BlockKind.BASE for s in self.slots})

    def to_dict(self) -> dict:
        return {"slots": [s.to_dict() for s in self.slots], "width": self.width, "in_channels": self.in_channels}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        try:
            slots = tuple(SlotSpec.from_dict(s) for s in d["slots"])
            return cls(slots=slots, width=int(d["width"]), in_channels=int(d["in_channels"]))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed network config: {e}") from None

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"network config is not valid JSON: {e}") from None
        return cls.from_dict(d)


def u_net(levels: int, width: int, in_channels: int = 1, depths: dict[str, int] | None = None) -> NetworkConfig:
    depths = depths or {}
    ids = [f"enc{i}" for i in range(levels)] + ["mid"] + [f"dec{i}" for i in reversed(range(levels))]
    slots = tuple(SlotSpec(i, width * 2 ** slot_level(i, levels), depth=depths.get(i, 1)) for i in ids)
    return NetworkConfig(slots=slots, width=width, in_channels=in_channels)


def desk_preset() -> NetworkConfig:
    """Two encoders, a middle block and two decoders at width 8."""
    return u_net(2, 8)


def paper_shape_preset(width: int = 4) -> NetworkConfig:
    """Nine slots, the fourth encoder holding 28 stacked base blocks."""
    return u_net(4, width, depths={"enc3": 28})


PRESETS = {"desk": desk_preset, "paper-shape": paper_shape_preset}
