"""Symbolic sound events, scenes, semantic tokens and frame headers."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .errors import EventOutOfBounds

_NOTE_RE = re.compile(r"note_(\d+)$")


class EventKind(str, enum.Enum):
    SPEECH = "speech"
    MUSIC = "music"
    AMBIENT = "ambient"

    @property
    def order(self) -> int:
        return _KIND_ORDER[self]

    @property
    def category(self) -> str:
        return _KIND_CATEGORY[self]

    @property
    def anchor(self) -> str:
        """Reserved KG entity standing for this kind in role filters."""
        return "cat_" + self.value

    @classmethod
    def from_category(cls, category: str) -> "EventKind | None":
        for kind, cat in _KIND_CATEGORY.items():
            if cat == category:
                return kind
        return None


_KIND_ORDER = {EventKind.SPEECH: 0, EventKind.MUSIC: 1, EventKind.AMBIENT: 2}
_KIND_CATEGORY = {
    EventKind.SPEECH: "speech-word",
    EventKind.MUSIC: "music-note",
    EventKind.AMBIENT: "ambient-class",
}

ALL_KINDS = frozenset(EventKind)


def note_entity(pitch: int) -> str:
    return f"note_{pitch}"


def note_pitch(entity: str) -> int:
    m = _NOTE_RE.match(entity)
    if not m or not 0 <= int(m.group(1)) <= 127:
        raise ValueError(f"music entity must be note_<0..127>, got {entity!r}")
    return int(m.group(1))


@dataclass(frozen=True)
class SoundEvent:
    kind: EventKind
    entity: str
    onset: float
    duration: float
    salience: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.onset < 0:
            raise ValueError(f"onset must be >= 0, got {self.onset}")
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if not 0 < self.salience <= 1:
            raise ValueError(f"salience must be in (0, 1], got {self.salience}")
        if self.kind is EventKind.MUSIC:
            note_pitch(self.entity)

    @property
    def end(self) -> float:
        return self.onset + self.duration

    @property
    def pitch(self) -> int:
        return note_pitch(self.entity)

    def sort_key(self) -> tuple[float, int, str]:
        return (self.onset, self.kind.order, self.entity)


@dataclass(frozen=True)
class SoundScene:
    """One sender's ground-truth timeline, kept sorted by onset."""

    sender_id: str
    events: tuple[SoundEvent, ...]
    length: float

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ValueError("scene length must be positive")
        ordered = tuple(sorted(self.events, key=SoundEvent.sort_key))
        object.__setattr__(self, "events", ordered)
        for ev in ordered:
            if ev.end > self.length + 1e-9:
                raise EventOutOfBounds(
                    f"{ev.entity} at {ev.onset}s+{ev.duration}s exceeds scene length {self.length}s"
                )


class TokenStatus(str, enum.Enum):
    INTACT = "intact"
    CORRUPTED = "corrupted"
    ERASED = "erased"


@dataclass(frozen=True)
class SemanticToken:
    entity: str
    kind: EventKind
    onset: float
    duration: float
    salience: float
    seq: int
    status: TokenStatus = TokenStatus.INTACT

    def to_event(self) -> SoundEvent:
        return SoundEvent(self.kind, self.entity, self.onset, self.duration, self.salience)


@dataclass(frozen=True)
class Slot:
    seq: int
    onset: float
    duration: float


@dataclass(frozen=True)
class FrameHeader:
    """Timing of every slot of a frame; delivered reliably, out of band."""

    frame_id: int
    slots: tuple[Slot, ...]
    total_importance: float = 0.0

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    @classmethod
    def from_tokens(
        cls, frame_id: int, tokens: list[SemanticToken], total_importance: float = 0.0
    ) -> "FrameHeader":
        slots = tuple(Slot(t.seq, t.onset, t.duration) for t in sorted(tokens, key=lambda t: t.seq))
        return cls(frame_id, slots, total_importance)

