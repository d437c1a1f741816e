"""Importance-aware scheduling and a token-level lossy channel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import UnknownEntity
from .events import FrameHeader, SemanticToken, TokenStatus
from .kg import KnowledgeGraph, PreferenceProfile


@dataclass(frozen=True)
class ScheduledFrame:
    header: FrameHeader
    tokens: tuple[SemanticToken, ...]
    importances: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.importances):
            raise ValueError("tokens and importances differ in length")
        if len(self.tokens) > self.header.slot_count:
            raise ValueError("more tokens than header slots")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def scheduled_importance(self) -> float:
        return float(sum(self.importances))

    def serialized_duration(self, rate: float) -> float:
        return len(self.tokens) / rate


@dataclass(frozen=True)
class ChannelModel:
    rate: float
    delay: float = 0.0
    jitter_std: float = 0.0
    erasure_prob: float = 0.0
    corruption_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        for name in ("delay", "jitter_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("erasure_prob", "corruption_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.erasure_prob + self.corruption_prob > 1.0 + 1e-12:
            raise ValueError("erasure_prob + corruption_prob must not exceed 1")

    @classmethod
    def ideal(cls, rate: float, delay: float = 0.0, rng_seed: int = 0) -> "ChannelModel":
        return cls(rate, delay, rng_seed=rng_seed)


@dataclass(frozen=True)
class DeliveryRecord:
    seq: int
    status: TokenStatus
    send_time: float | None
    arrival_time: float | None
    received_entity: str | None = field(default=None)

    @property
    def delivered(self) -> bool:
        return self.arrival_time is not None


def score_and_order(
    tokens: Sequence[SemanticToken],
    profile: PreferenceProfile,
    kg: KnowledgeGraph,
    frame_id: int = 0,
) -> ScheduledFrame:
    """Rank tokens by importance to the listener; the header keeps every slot."""
    importances = []
    for tok in tokens:
        if tok.entity not in kg:
            raise UnknownEntity(tok.entity)
        importances.append(kg.importance(tok.entity, profile))
    header = FrameHeader.from_tokens(frame_id, list(tokens), float(sum(importances)))
    # sorted() is stable, so equal importances keep encode order
    order = sorted(range(len(tokens)), key=lambda i: -importances[i])
    return ScheduledFrame(
        header,
        tuple(tokens[i] for i in order),
        tuple(importances[i] for i in order),
    )


def schedule(frame: ScheduledFrame, budget: int) -> ScheduledFrame:
    """Keep the ``budget`` most important tokens; the header is untouched."""
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    k = min(budget, len(frame.tokens))
    return ScheduledFrame(frame.header, frame.tokens[:k], frame.importances[:k])


def channel_budget(channel: ChannelModel, window: float) -> int:
    return int(math.floor(channel.rate * window + 1e-9))


def transmit(
    frame: ScheduledFrame,
    channel: ChannelModel,
    start_time: float = 0.0,
    vocabulary: KnowledgeGraph | None = None,
) -> list[DeliveryRecord]:
    """Serially send the frame's tokens over ``channel``.

    Each token takes three draws from a Philox generator seeded with
    ``channel.rng_seed`` (outcome, corruption pick, jitter), so the same seed
    and token count always give the same outcomes. Corruption swaps in a
    different entity of the same category from ``vocabulary`` when one
    exists. Slots dropped by the scheduler are reported as erased with no
    times.
    """
    n = len(frame.tokens)
    rng = np.random.Generator(np.random.Philox(channel.rng_seed))
    outcome = rng.random(n)
    pick = rng.random(n)
    jitter = rng.standard_normal(n) * channel.jitter_std

    records = []
    for i, tok in enumerate(frame.tokens):
        send = start_time + (i + 1) / channel.rate
        u = outcome[i]
        if u < channel.erasure_prob:
            records.append(DeliveryRecord(tok.seq, TokenStatus.ERASED, send, None, None))
            continue
        arrival = send + channel.delay + max(0.0, float(jitter[i]))
        if u < channel.erasure_prob + channel.corruption_prob:
            entity = _substitute(tok.entity, pick[i], vocabulary)
            records.append(DeliveryRecord(tok.seq, TokenStatus.CORRUPTED, send, arrival, entity))
        else:
            records.append(DeliveryRecord(tok.seq, TokenStatus.INTACT, send, arrival, tok.entity))
    sent = {tok.seq for tok in frame.tokens}
    for slot in frame.header.slots:
        if slot.seq not in sent:
            records.append(DeliveryRecord(slot.seq, TokenStatus.ERASED, None, None, None))
    return records


def _substitute(entity: str, u: float, vocabulary: KnowledgeGraph | None) -> str:
    if vocabulary is None or entity not in vocabulary:
        return entity
    pool = [e for e in vocabulary.entities_of(vocabulary.entity(entity).category) if e != entity]
    if not pool:
        return entity
    return pool[min(int(u * len(pool)), len(pool) - 1)]


def received_tokens(frame: ScheduledFrame, records: Sequence[DeliveryRecord]) -> list[SemanticToken]:
    """Tokens as the listener sees them: delivered ones, with channel status applied."""
    by_seq = {tok.seq: tok for tok in frame.tokens}
    out = []
    for rec in records:
        if not rec.delivered:
            continue
        tok = by_seq[rec.seq]
        out.append(replace(tok, entity=rec.received_entity, status=rec.status))
    return sorted(out, key=lambda t: t.seq)
