"""Event-driven multi-sender session and the synchronization metrics.

A session runs every sender's encode/schedule/transmit pipeline, replays the
resulting sends and arrivals through one time-ordered queue, and lets the
listener start each stream once enough importance mass has arrived. Metrics
cover the three synchronization concerns: quality (fidelity), timing (skew,
jitter, deadline misses) and, across coordinator rounds, behavior.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .codec import DecodeResult, decode, encode_waveform, render
from .dsp import DEFAULT_FRAME_LENGTH, DEFAULT_HOP, DEFAULT_SAMPLE_RATE, Waveform, stable_hash, synthesize
from .errors import ConfigError, UnknownEntity
from .events import ALL_KINDS, EventKind, SemanticToken, SoundEvent, SoundScene, TokenStatus
from .kg import KnowledgeGraph, PreferenceProfile
from .transmission import (
    ChannelModel,
    DeliveryRecord,
    ScheduledFrame,
    channel_budget,
    received_tokens,
    schedule,
    score_and_order,
    transmit,
)

logger = logging.getLogger(__name__)

DEFAULT_READINESS = 0.8
MATCH_TOLERANCE = 0.05
WEIGHT_FLOOR = 0.05
JITTER_RESOLUTION_DIGITS = 12


def derive_seed(seed: int, *labels: str) -> int:
    """Independent 64-bit seed for a named component, from one root seed."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & (2**64 - 1),
        spawn_key=tuple(stable_hash(label) & 0xFFFFFFFF for label in labels),
    )
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SenderConfig:
    sender_id: str
    scene: SoundScene
    channel: ChannelModel
    kg: KnowledgeGraph
    role_filter: frozenset[EventKind] = ALL_KINDS


@dataclass(frozen=True)
class SessionConfig:
    senders: tuple[SenderConfig, ...]
    profile: PreferenceProfile
    listener_kg: KnowledgeGraph
    latency_budget: float
    q: float = DEFAULT_READINESS
    seed: int = 0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_length: int = DEFAULT_FRAME_LENGTH
    hop: int = DEFAULT_HOP
    render_audio: bool = True

    def validate(self) -> None:
        if not self.senders:
            raise ConfigError("senders", "at least one sender is required")
        ids = [s.sender_id for s in self.senders]
        if len(set(ids)) != len(ids):
            raise ConfigError("senders", "sender ids must be unique")
        if not 0.0 <= self.q <= 1.0:
            raise ConfigError("q", f"must be in [0, 1], got {self.q}")
        if not self.latency_budget > 0:
            raise ConfigError("latency_budget", f"must be positive, got {self.latency_budget}")
        if self.sample_rate < 4000:
            raise ConfigError("sample_rate", f"must be >= 4000, got {self.sample_rate}")
        for s in self.senders:
            for ev in s.scene.events:
                if ev.entity not in s.kg:
                    raise ConfigError(
                        f"senders[{s.sender_id}].scene",
                        f"entity {ev.entity!r} missing from the sender KG",
                    )


@dataclass(frozen=True)
class LogEntry:
    time: float
    sender: str
    action: str
    detail: str = ""


@dataclass(frozen=True)
class StreamTrace:
    sender_id: str
    rate: float
    tokens: tuple[SemanticToken, ...]
    frame: ScheduledFrame
    records: tuple[DeliveryRecord, ...]
    readiness: float
    decoded: DecodeResult
    early_inferred: int = 0

    def status_of(self, seq: int) -> TokenStatus:
        for rec in self.records:
            if rec.seq == seq:
                return rec.status
        return TokenStatus.ERASED


@dataclass(frozen=True)
class SessionTrace:
    config: SessionConfig
    streams: tuple[StreamTrace, ...]
    merged: tuple[SoundEvent, ...]
    output: tuple[Waveform, Waveform] | None
    log: tuple[LogEntry, ...]

    def stream(self, sender_id: str) -> StreamTrace:
        for s in self.streams:
            if s.sender_id == sender_id:
                return s
        raise KeyError(sender_id)


def readiness_time(
    records: Sequence[DeliveryRecord],
    frame: ScheduledFrame,
    q: float,
    start_time: float = 0.0,
) -> float:
    """Earliest arrival by which ``q`` of the scheduled importance mass has arrived."""
    weight = {tok.seq: imp for tok, imp in zip(frame.tokens, frame.importances)}
    arrivals = sorted(
        (rec.arrival_time, rec.seq)
        for rec in records
        if rec.arrival_time is not None and rec.seq in weight
    )
    if not arrivals:
        return start_time
    if q <= 0.0:
        return arrivals[0][0]
    total = math.fsum(frame.importances)
    target = q * total
    cum = 0.0
    for t, seq in arrivals:
        cum += weight[seq]
        if cum >= target - 1e-12 * max(1.0, total):
            return t
    return arrivals[-1][0]


def merge_streams(
    per_sender_events: Mapping[str, Sequence[SoundEvent]],
) -> list[SoundEvent]:
    """k-way merge by onset; ties by kind order, entity id, then sender id."""
    keyed = [
        [(ev.sort_key() + (sid,), ev) for ev in events]
        for sid, events in per_sender_events.items()
    ]
    return [ev for _, ev in heapq.merge(*keyed, key=lambda pair: pair[0])]


# queue priorities for simultaneous events
_SEND, _ARRIVE, _LOST, _READY, _COMPLETE = range(5)


def run_session(config: SessionConfig) -> SessionTrace:
    config.validate()
    queue: list[tuple[float, int, int, int, str, object]] = []
    counter = itertools.count()
    pending: dict[str, dict] = {}

    for index, sender in enumerate(config.senders):
        sid = sender.sender_id
        wave = synthesize(sender.scene, config.sample_rate)
        tokens = encode_waveform(
            wave, sender.kg, sender.role_filter, config.frame_length, config.hop
        )
        try:
            ranked = score_and_order(tokens, config.profile, sender.kg, frame_id=index)
        except UnknownEntity as exc:
            raise ConfigError(f"senders[{sid}].kg", str(exc)) from None
        budget = channel_budget(sender.channel, sender.scene.length)
        frame = schedule(ranked, budget)
        seed = derive_seed(config.seed, "channel", sid, str(sender.channel.rng_seed))
        channel = ChannelModel(
            sender.channel.rate,
            sender.channel.delay,
            sender.channel.jitter_std,
            sender.channel.erasure_prob,
            sender.channel.corruption_prob,
            seed,
        )
        records = transmit(frame, channel, 0.0, sender.kg)
        ready = readiness_time(records, frame, config.q)
        pending[sid] = dict(
            index=index, tokens=tuple(tokens), frame=frame, records=tuple(records), ready=ready
        )

        def push(t: float, prio: int, action: str, payload: object) -> None:
            heapq.heappush(queue, (t, prio, index, next(counter), action, payload))

        last = ready
        for rec in records:
            if rec.send_time is None:
                continue
            push(rec.send_time, _SEND, "send", rec)
            if rec.arrival_time is None:
                push(rec.send_time, _LOST, "lost", rec)
            else:
                push(rec.arrival_time, _ARRIVE, "arrive", rec)
                last = max(last, rec.arrival_time)
        push(ready, _READY, "ready", sid)
        push(last, _COMPLETE, "complete", sid)

    log: list[LogEntry] = []
    arrived: dict[str, list[DeliveryRecord]] = {s.sender_id: [] for s in config.senders}
    results: dict[str, StreamTrace] = {}
    early: dict[str, int] = {}
    sender_ids = [s.sender_id for s in config.senders]

    while queue:
        t, _prio, index, _n, action, payload = heapq.heappop(queue)
        sid = sender_ids[index]
        state = pending[sid]
        if action in ("send", "lost", "arrive"):
            rec = payload
            if action == "arrive":
                arrived[sid].append(rec)
            detail = f"seq={rec.seq} status={rec.status.value}"
            log.append(LogEntry(t, sid, action, detail))
        elif action == "ready":
            # progressive start: decode what is here, infer the rest
            partial = decode(
                received_tokens(state["frame"], arrived[sid]),
                state["frame"].header,
                config.listener_kg,
            )
            early[sid] = len(partial.inferred)
            log.append(
                LogEntry(t, sid, "ready", f"received={len(arrived[sid])} inferred={len(partial.inferred)}")
            )
        else:
            final = decode(
                received_tokens(state["frame"], arrived[sid]),
                state["frame"].header,
                config.listener_kg,
            )
            results[sid] = StreamTrace(
                sid,
                config.senders[index].channel.rate,
                state["tokens"],
                state["frame"],
                state["records"],
                state["ready"],
                final,
                early.get(sid, 0),
            )
            log.append(
                LogEntry(t, sid, "complete", f"events={len(final.events)} gaps={final.unresolved}")
            )

    streams = tuple(results[sid] for sid in sender_ids)
    merged = merge_streams({s.sender_id: s.decoded.events for s in streams})
    output = None
    if config.render_audio:
        length = max(s.scene.length for s in config.senders)
        output = render(merged, config.profile, config.listener_kg, config.sample_rate, length)
        end = log[-1].time if log else 0.0
        log.append(LogEntry(end, "listener", "render", f"events={len(merged)}"))
    return SessionTrace(config, streams, tuple(merged), output, tuple(log))


@dataclass(frozen=True)
class SyncReport:
    fidelity: float
    start_skew: float
    rms_skew: float
    jitter: float
    deadline_misses: int
    unresolved_gaps: int
    tokens_sent: int
    tokens_dropped: int
    tokens_erased: int
    tokens_corrupted: int
    stream_skew: Mapping[str, float] = field(default_factory=dict)

    KEYS = (
        "fidelity",
        "start_skew_s",
        "rms_skew_s",
        "jitter_s",
        "deadline_misses",
        "unresolved_gaps",
        "tokens_sent",
        "tokens_dropped",
        "tokens_erased",
        "tokens_corrupted",
    )

    def as_pairs(self) -> list[tuple[str, object]]:
        values = (
            self.fidelity,
            self.start_skew,
            self.rms_skew,
            self.jitter,
            self.deadline_misses,
            self.unresolved_gaps,
            self.tokens_sent,
            self.tokens_dropped,
            self.tokens_erased,
            self.tokens_corrupted,
        )
        return list(zip(self.KEYS, values))

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.as_pairs())

    @classmethod
    def from_text(cls, text: str) -> "SyncReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls(
            float(kv["fidelity"]),
            float(kv["start_skew_s"]),
            float(kv["rms_skew_s"]),
            float(kv["jitter_s"]),
            int(kv["deadline_misses"]),
            int(kv["unresolved_gaps"]),
            int(kv["tokens_sent"]),
            int(kv["tokens_dropped"]),
            int(kv["tokens_erased"]),
            int(kv["tokens_corrupted"]),
        )


def _fmt(value: object) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def match_events(
    truth: Sequence[SoundEvent], decoded: Sequence[SoundEvent], tolerance: float = MATCH_TOLERANCE
) -> list[bool]:
    """Greedy one-to-one matching on equal entity and onset error within ``tolerance``."""
    used = [False] * len(decoded)
    matched = []
    for ev in truth:
        best = None
        for j, cand in enumerate(decoded):
            if used[j] or cand.entity != ev.entity:
                continue
            err = abs(cand.onset - ev.onset)
            if err <= tolerance + 1e-12 and (best is None or err < best[0]):
                best = (err, j)
        if best is not None:
            used[best[1]] = True
        matched.append(best is not None)
    return matched


def _weight(kg: KnowledgeGraph, entity: str, profile: PreferenceProfile) -> float:
    imp = kg.importance(entity, profile) if entity in kg else 0.0
    return max(WEIGHT_FLOOR, imp)


def stream_jitter(stream: StreamTrace) -> float:
    """Std of arrival-gap deviations from the nominal 1/rate, over intact tokens."""
    position = {tok.seq: i for i, tok in enumerate(stream.frame.tokens)}
    intact = sorted(
        (position[r.seq], r.arrival_time)
        for r in stream.records
        if r.status is TokenStatus.INTACT and r.arrival_time is not None
    )
    # quantised to 1 ps so timestamp subtraction noise does not read as jitter
    devs = [
        round((b_t - a_t) - (b_i - a_i) / stream.rate, JITTER_RESOLUTION_DIGITS)
        for (a_i, a_t), (b_i, b_t) in zip(intact, intact[1:])
    ]
    return float(np.std(devs)) if devs else 0.0


def compute_metrics(
    trace: SessionTrace,
    ground_truth: Sequence[SoundScene],
    profile: PreferenceProfile,
    listener_kg: KnowledgeGraph,
) -> SyncReport:
    num = 0.0
    den = 0.0
    by_sender = {s.sender_id: s for s in trace.streams}
    for scene in ground_truth:
        stream = by_sender.get(scene.sender_id)
        decoded = stream.decoded.events if stream else ()
        for ev, ok in zip(scene.events, match_events(scene.events, decoded)):
            w = _weight(listener_kg, ev.entity, profile)
            den += w
            if ok:
                num += w
    fidelity = num / den if den > 0 else 1.0

    ready = {s.sender_id: s.readiness for s in trace.streams}
    times = list(ready.values())
    start_skew = max(times) - min(times)
    pairs = list(itertools.combinations(times, 2))
    rms = math.sqrt(sum((a - b) ** 2 for a, b in pairs) / len(pairs)) if pairs else 0.0
    deadline = trace.config.latency_budget
    misses = sum(1 for t in times if t > deadline)

    sent = sum(len(s.frame.tokens) for s in trace.streams)
    slots = sum(s.frame.header.slot_count for s in trace.streams)
    erased = sum(
        1 for s in trace.streams for r in s.records
        if r.status is TokenStatus.ERASED and r.send_time is not None
    )
    corrupted = sum(
        1 for s in trace.streams for r in s.records if r.status is TokenStatus.CORRUPTED
    )
    return SyncReport(
        fidelity=min(1.0, max(0.0, fidelity)),
        start_skew=start_skew,
        rms_skew=rms,
        jitter=max((stream_jitter(s) for s in trace.streams), default=0.0),
        deadline_misses=misses,
        unresolved_gaps=sum(s.decoded.unresolved for s in trace.streams),
        tokens_sent=sent,
        tokens_dropped=slots - sent,
        tokens_erased=erased,
        tokens_corrupted=corrupted,
        stream_skew={sid: t - min(times) for sid, t in ready.items()},
    )
