"""Semantic encoder and decoder.

Encoding turns feature frames into events by template matching, filters them
by the sender's role and maps them to KG-linked tokens. Decoding maps received
tokens back to events and fills erased or corrupted slots with the entity the
listener's KG finds most plausible between the surrounding context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Collection, Iterable, Sequence

import numpy as np

from .dsp import (
    DEFAULT_FRAME_LENGTH,
    DEFAULT_HOP,
    DEFAULT_SAMPLE_RATE,
    FeatureFrame,
    Waveform,
    event_span,
    extract_features,
    partials,
    spectrogram,
    stable_hash,
    tone,
)
from .errors import HeaderMismatch, UnknownEntity, UnsupportedChannelCount
from .events import (
    ALL_KINDS,
    EventKind,
    FrameHeader,
    SemanticToken,
    Slot,
    SoundEvent,
    TokenStatus,
)
from .kg import KnowledgeGraph, PreferenceProfile

CONTEXT_RELATION = "followed_by"
CORRUPTION_PRIOR = 0.5
MIN_RUN_FRAMES = 2
MIN_GAIN = 0.2
DROP_SALIENCE = 0.1


@dataclass(frozen=True)
class Template:
    entity: str
    kind: EventKind
    signature: tuple[float, ...]
    tolerance_hz: float = DEFAULT_SAMPLE_RATE / DEFAULT_FRAME_LENGTH

    def __post_init__(self) -> None:
        if not self.signature:
            raise ValueError(f"template {self.entity!r} has an empty signature")


def template_for(kind: EventKind, entity: str, bin_hz: float = DEFAULT_SAMPLE_RATE / DEFAULT_FRAME_LENGTH) -> Template:
    return Template(entity, EventKind(kind), partials(kind, entity), bin_hz)


def templates_from_kg(
    kg: KnowledgeGraph, bin_hz: float = DEFAULT_SAMPLE_RATE / DEFAULT_FRAME_LENGTH
) -> list[Template]:
    """One template per sound entity (speech word, music note, ambient class) in ``kg``."""
    out = []
    for kind in EventKind:
        for eid in kg.entities_of(kind.category):
            out.append(template_for(kind, eid, bin_hz))
    return out


def _match_cost(frame: FeatureFrame, template: Template) -> float | None:
    if not frame.peaks:
        return None
    freqs = np.array([f for f, _ in frame.peaks])
    mags = np.array([m for _, m in frame.peaks])
    sig = np.array(template.signature)
    gaps = np.abs(freqs[None, :] - sig[:, None])
    covered = gaps.min(axis=1)
    if np.any(covered > template.tolerance_hz + 1e-9):
        return None
    # peaks the template does not explain count in proportion to their strength
    unexplained = gaps.min(axis=0) * (mags / mags.max())
    return float(covered.sum() + unexplained.sum())


def classify_frame(frame: FeatureFrame, templates: Sequence[Template]) -> Template | None:
    best = None
    best_key = None
    for tpl in templates:
        cost = _match_cost(frame, tpl)
        if cost is None:
            continue
        key = (cost, -len(tpl.signature), tpl.entity)
        if best_key is None or key < best_key:
            best, best_key = tpl, key
    return best


def detect_events(
    frames: Sequence[FeatureFrame],
    templates: Sequence[Template],
    *,
    hop: int = DEFAULT_HOP,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> list[SoundEvent]:
    """Label each frame with its closest template and turn runs of >= 2 frames into events."""
    if not templates:
        raise ValueError("detect_events needs at least one template")
    labels = [classify_frame(f, templates) for f in frames]
    max_energy = max((f.energy for f in frames), default=0.0)
    events = []
    i = 0
    while i < len(labels):
        tpl = labels[i]
        j = i
        while j < len(labels) and labels[j] is tpl:
            j += 1
        if tpl is not None and j - i >= MIN_RUN_FRAMES:
            energy = float(np.mean([f.energy for f in frames[i:j]]))
            salience = min(1.0, energy / max_energy) if max_energy > 0 else 1.0
            events.append(
                SoundEvent(
                    tpl.kind,
                    tpl.entity,
                    frames[i].time,
                    (j - i) * hop / sample_rate,
                    max(salience, 1e-12),
                )
            )
        i = j
    events.sort(key=SoundEvent.sort_key)
    return events


def encode(
    events: Iterable[SoundEvent],
    sender_kg: KnowledgeGraph,
    role_filter: Collection[EventKind] = ALL_KINDS,
) -> list[SemanticToken]:
    kept = []
    for ev in events:
        if ev.entity not in sender_kg:
            raise UnknownEntity(ev.entity)
        if ev.kind in role_filter:
            kept.append(ev)
    kept.sort(key=SoundEvent.sort_key)
    return [
        SemanticToken(ev.entity, ev.kind, ev.onset, ev.duration, ev.salience, seq)
        for seq, ev in enumerate(kept)
    ]


@dataclass(frozen=True)
class DecodeResult:
    events: tuple[SoundEvent, ...]
    gaps: tuple[Slot, ...]
    inferred: dict[int, str]

    @property
    def unresolved(self) -> int:
        return len(self.gaps)


def _sound_kind(kg: KnowledgeGraph, entity: str) -> EventKind | None:
    if entity not in kg:
        return None
    return EventKind.from_category(kg.entity(entity).category)


def infer_slot(
    listener_kg: KnowledgeGraph,
    prev: str | None,
    nxt: str | None,
    received: str | None = None,
) -> str | None:
    """Most plausible entity between context entities ``prev`` and ``nxt``.

    Candidates are the ``followed_by`` successors of ``prev`` (or the
    predecessors of ``nxt`` at the start of a frame), scored by
    ``relevance(prev, x) * relevance(x, nxt)``. A corrupted token's received
    entity joins the candidates with its score halved. Ties go to the
    smallest entity id; ``None`` means nothing scored above zero.
    """
    if prev is not None and prev not in listener_kg:
        prev = None
    if nxt is not None and nxt not in listener_kg:
        nxt = None

    def context_score(x: str) -> float:
        score = 1.0
        if prev is not None:
            score *= listener_kg.relevance(prev, x)
        if nxt is not None:
            score *= listener_kg.relevance(x, nxt)
        return score

    if prev is not None:
        pool = listener_kg.tails(prev, CONTEXT_RELATION)
    elif nxt is not None:
        pool = listener_kg.heads(CONTEXT_RELATION, nxt)
    else:
        pool = []
    scores = {x: context_score(x) for x in pool if _sound_kind(listener_kg, x) is not None}
    if received is not None and _sound_kind(listener_kg, received) is not None:
        weighted = CORRUPTION_PRIOR * context_score(received)
        scores[received] = max(scores.get(received, 0.0), weighted)
    ranked = sorted((-s, x) for x, s in scores.items() if s > 0)
    return ranked[0][1] if ranked else None


def decode(
    tokens: Sequence[SemanticToken],
    header: FrameHeader,
    listener_kg: KnowledgeGraph,
) -> DecodeResult:
    slot_seqs = {s.seq for s in header.slots}
    if len(tokens) > header.slot_count:
        raise HeaderMismatch(f"{len(tokens)} tokens for {header.slot_count} slots")
    by_seq: dict[int, SemanticToken] = {}
    for tok in tokens:
        if tok.seq not in slot_seqs:
            raise HeaderMismatch(f"token seq {tok.seq} not in header of frame {header.frame_id}")
        by_seq[tok.seq] = tok

    slots = sorted(header.slots, key=lambda s: s.seq)
    intact = [
        by_seq[s.seq] if s.seq in by_seq and by_seq[s.seq].status is TokenStatus.INTACT else None
        for s in slots
    ]
    events: list[SoundEvent] = []
    gaps: list[Slot] = []
    inferred: dict[int, str] = {}
    prev: str | None = None
    prev_salience: float | None = None
    for i, slot in enumerate(slots):
        tok = intact[i]
        if tok is not None:
            events.append(tok.to_event())
            prev, prev_salience = tok.entity, tok.salience
            continue
        nxt_tok = next((t for t in intact[i + 1 :] if t is not None), None)
        received = by_seq.get(slot.seq)
        corrupted = received is not None and received.status is TokenStatus.CORRUPTED
        guess = infer_slot(
            listener_kg,
            prev,
            nxt_tok.entity if nxt_tok else None,
            received.entity if corrupted else None,
        )
        if guess is None:
            gaps.append(slot)
            continue
        if corrupted:
            salience = received.salience
        else:
            around = [s for s in (prev_salience, nxt_tok.salience if nxt_tok else None) if s]
            salience = sum(around) / len(around) if around else 1.0
        kind = _sound_kind(listener_kg, guess)
        events.append(SoundEvent(kind, guess, slot.onset, slot.duration, salience))
        inferred[slot.seq] = guess
        prev, prev_salience = guess, salience
    events.sort(key=SoundEvent.sort_key)
    return DecodeResult(tuple(events), tuple(gaps), inferred)


def pan_position(entity: str) -> float:
    """Stable stereo position in [-1, 1] derived from the entity id."""
    return 2.0 * stable_hash(f"{entity}/pan") / float(2**64 - 1) - 1.0


def pan_gains(theta: float) -> tuple[float, float]:
    """Constant-power pan law: left^2 + right^2 == 1."""
    angle = (theta + 1.0) * math.pi / 4.0
    return math.cos(angle), math.sin(angle)


def mix_gain(importance: float) -> float:
    return MIN_GAIN + (1.0 - MIN_GAIN) * importance


def render(
    events: Sequence[SoundEvent],
    profile: PreferenceProfile,
    listener_kg: KnowledgeGraph,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    length: float | None = None,
) -> tuple[Waveform, Waveform]:
    """Resynthesize events to stereo, levelled by preference and panned per entity."""
    if profile.device_channels != 2:
        raise UnsupportedChannelCount(
            f"only stereo rendering is supported, got {profile.device_channels} channels"
        )
    if length is None:
        length = max((ev.end for ev in events), default=0.0)
    n = int(math.ceil(length * sample_rate - 1e-9))
    left = np.zeros(n)
    right = np.zeros(n)
    for ev in events:
        imp = listener_kg.importance(ev.entity, profile) if ev.entity in listener_kg else 0.0
        if imp == 0.0 and ev.salience < DROP_SALIENCE:
            continue
        start, stop = event_span(ev.onset, ev.duration, sample_rate)
        stop = min(stop, n)
        if stop <= start:
            continue
        sig = ev.salience * mix_gain(imp) * tone(ev.kind, ev.entity, stop - start, sample_rate)
        gl, gr = pan_gains(pan_position(ev.entity))
        left[start:stop] += gl * sig
        right[start:stop] += gr * sig
    return Waveform(left, sample_rate), Waveform(right, sample_rate)


def encode_waveform(
    w: Waveform,
    sender_kg: KnowledgeGraph,
    role_filter: Collection[EventKind] = ALL_KINDS,
    frame_length: int = DEFAULT_FRAME_LENGTH,
    hop: int = DEFAULT_HOP,
) -> list[SemanticToken]:
    """Full sender pipeline: spectrogram, features, template detection, token encoding."""
    spec = spectrogram(w, frame_length, hop)
    frames = extract_features(spec)
    templates = templates_from_kg(sender_kg, spec.bin_hz)
    events = detect_events(frames, templates, hop=hop, sample_rate=w.sample_rate) if templates else []
    return encode(events, sender_kg, role_filter)
