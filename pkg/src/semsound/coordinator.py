"""Coordinator rounds: merge knowledge, apply feedback, hand out local KGs and role filters."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Sequence

from .errors import UnknownTriple
from .events import ALL_KINDS, EventKind
from .kg import KnowledgeGraph, TripleKey, merge

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeviceRegistration:
    device_id: str
    role: str
    private_kg: KnowledgeGraph = field(default_factory=KnowledgeGraph)


@dataclass(frozen=True)
class UpdatePolicy:
    min_feedback_count: int = 1
    min_interval: float = float("inf")
    alpha: float = 0.2
    hop_limit: int = 3
    role_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.min_feedback_count < 1:
            raise ValueError("min_feedback_count must be positive")
        if self.min_interval < 0:
            raise ValueError("min_interval must be nonnegative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.hop_limit < 1:
            raise ValueError("hop_limit must be positive")
        if not 0.0 < self.role_threshold <= 1.0:
            raise ValueError("role_threshold must be in (0, 1]")


@dataclass(frozen=True)
class FeedbackEvent:
    listener_id: str
    key: TripleKey
    verdict: str
    time: float = 0.0

    def __post_init__(self) -> None:
        if self.verdict not in ("positive", "negative"):
            raise ValueError(f"verdict must be 'positive' or 'negative', got {self.verdict!r}")
        object.__setattr__(self, "key", tuple(self.key))


@dataclass(frozen=True)
class RoundResult:
    global_kg: KnowledgeGraph
    locals: dict[str, KnowledgeGraph]
    role_filters: dict[str, frozenset[EventKind]]
    edges_updated: int
    skipped: tuple[FeedbackEvent, ...] = ()


def derive_role_filter(local: KnowledgeGraph, role: str, threshold: float) -> frozenset[EventKind]:
    """Kinds whose category anchor is relevant enough to the role; never empty."""
    local.entity(role)
    kinds = frozenset(
        kind
        for kind in EventKind
        if kind.anchor in local and local.relevance(role, kind.anchor) >= threshold
    )
    return kinds or ALL_KINDS


def should_update(policy: UpdatePolicy, pending_feedback: int, elapsed_since_last: float) -> bool:
    return (
        pending_feedback >= policy.min_feedback_count
        or elapsed_since_last >= policy.min_interval
    )


def round_update(
    global_kg: KnowledgeGraph,
    registrations: Sequence[DeviceRegistration],
    feedback: Sequence[FeedbackEvent],
    policy: UpdatePolicy,
) -> RoundResult:
    if not registrations:
        raise ValueError("round_update needs at least one registration")
    ids = [r.device_id for r in registrations]
    if len(set(ids)) != len(ids):
        raise ValueError("device ids must be unique")
    new = merge([global_kg] + [r.private_kg for r in registrations])
    touched: set[TripleKey] = set()
    skipped = []
    for ev in sorted(feedback, key=lambda f: f.time):
        try:
            new = new.apply_feedback(ev.key, ev.verdict, policy.alpha)
        except UnknownTriple:
            logger.warning("skipping feedback from %s on unknown triple %s", ev.listener_id, ev.key)
            skipped.append(ev)
            continue
        touched.add(ev.key)
    locals_: dict[str, KnowledgeGraph] = {}
    filters: dict[str, frozenset[EventKind]] = {}
    for reg in registrations:
        local = new.extract_local([reg.role], policy.hop_limit)
        locals_[reg.device_id] = local
        filters[reg.device_id] = derive_role_filter(local, reg.role, policy.role_threshold)
    return RoundResult(new, locals_, filters, len(touched), tuple(skipped))


class Coordinator:
    """Single logical actor; producers submit into an inbox, rounds run serially."""

    def __init__(self, global_kg: KnowledgeGraph, policy: UpdatePolicy) -> None:
        self.global_kg = global_kg
        self.policy = policy
        self.round_index = 0
        self.last_round_time = 0.0
        self._registrations: dict[str, DeviceRegistration] = {}
        self._inbox: list[FeedbackEvent] = []
        self._lock = threading.Lock()
        self.last_result: RoundResult | None = None

    def register(self, registration: DeviceRegistration) -> None:
        with self._lock:
            if registration.device_id in self._registrations:
                raise ValueError(f"device {registration.device_id!r} already registered")
            self._registrations[registration.device_id] = registration

    def submit(self, event: FeedbackEvent) -> None:
        with self._lock:
            self._inbox.append(event)

    @property
    def pending(self) -> int:
        with self._lock:
            return len(self._inbox)

    def upload(self, device_id: str, private_kg: KnowledgeGraph) -> None:
        """Queue fresh private knowledge for the next round."""
        with self._lock:
            reg = self._registrations[device_id]
            self._registrations[device_id] = DeviceRegistration(reg.device_id, reg.role, private_kg)

    def run_round(self, now: float) -> RoundResult:
        with self._lock:
            regs = list(self._registrations.values())
            inbox, self._inbox = self._inbox, []
            # private knowledge is merged once; re-merging would inflate noisy-OR
            for reg in regs:
                self._registrations[reg.device_id] = DeviceRegistration(reg.device_id, reg.role)
        result = round_update(self.global_kg, regs, inbox, self.policy)
        self.global_kg = result.global_kg
        self.round_index += 1
        self.last_round_time = now
        self.last_result = result
        return result

    def maybe_update(self, now: float) -> RoundResult | None:
        if should_update(self.policy, self.pending, now - self.last_round_time):
            return self.run_round(now)
        return None
