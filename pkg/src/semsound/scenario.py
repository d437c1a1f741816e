"""Scenario documents: sectioned ``key = value`` text describing a multi-round run.

Example::

    [scenario]
    format_version = 1
    seed = 42
    rounds = 2

    [kg]
    path = global.kg
    entity = note_60 music-note
    triple = piano has_note note_60 0.9

    [device keys]
    role = pianist
    length = 2.0
    channel = rate=50 delay=0.1 jitter=0 erase=0 corrupt=0
    event = music note_60 0.1 0.3 0.9

    [listener]
    target = piano 1.0

    [policy]
    alpha = 0.2

    [round 1]
    feedback = 1.5 alice note_60 followed_by note_64 positive
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .coordinator import FeedbackEvent, UpdatePolicy
from .dsp import DEFAULT_FRAME_LENGTH, DEFAULT_HOP, DEFAULT_SAMPLE_RATE
from .errors import ParseError, ValidationError
from .events import EventKind, SoundEvent, SoundScene
from .kg import Entity, KnowledgeGraph, PreferenceProfile, dump_kg, load_kg, merge
from .transmission import ChannelModel

FORMAT_VERSION = 1
_SECTION_RE = re.compile(r"^\[(\w+)(?:\s+(\S+))?\]$")
_CHANNEL_KEYS = {
    "rate": "rate",
    "delay": "delay",
    "jitter": "jitter_std",
    "erase": "erasure_prob",
    "corrupt": "corruption_prob",
    "seed": "rng_seed",
}


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    role: str
    length: float
    channel: ChannelModel
    events: tuple[SoundEvent, ...] = ()
    private_kg: KnowledgeGraph = field(default_factory=KnowledgeGraph)

    def scene(self) -> SoundScene:
        return SoundScene(self.device_id, self.events, self.length)


@dataclass(frozen=True)
class ListenerSpec:
    listener_id: str = "listener"
    profile: PreferenceProfile = field(default_factory=PreferenceProfile)
    role: str | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    global_kg: KnowledgeGraph
    devices: tuple[DeviceSpec, ...]
    listener: ListenerSpec
    policy: UpdatePolicy = field(default_factory=UpdatePolicy)
    feedback: dict[int, tuple[FeedbackEvent, ...]] = field(default_factory=dict)
    rounds: int = 1
    seed: int = 0
    q: float = 0.8
    latency_budget: float = 1.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_length: int = DEFAULT_FRAME_LENGTH
    hop: int = DEFAULT_HOP
    format_version: int = FORMAT_VERSION

    def knowledge(self) -> KnowledgeGraph:
        """Global KG with every device's private knowledge folded in."""
        return merge([self.global_kg] + [d.private_kg for d in self.devices])


def _number(text: str, key: str, line: int, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise ParseError(f"{key}: expected a number, got {text!r}", line) from None
    if kind is float and math.isnan(value):
        raise ParseError(f"{key}: NaN is not allowed", line)
    return value


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_scenario(text: str, base_dir: str | Path | None = None) -> ScenarioConfig:
    """Parse and validate a scenario document; relative KG paths resolve against ``base_dir``."""
    sections: list[tuple[str, str | None, int, list[tuple[int, str, str]]]] = []
    for lineno, line in _lines(text):
        m = _SECTION_RE.match(line)
        if m:
            sections.append((m.group(1), m.group(2), lineno, []))
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        if not sections:
            raise ParseError("entry before the first section", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        sections[-1][3].append((lineno, key, value))

    base = Path(base_dir) if base_dir is not None else Path.cwd()
    scalars: dict[str, object] = {}
    kg_entities: list[Entity] = []
    kg_triples: list[tuple[int, str]] = []
    kg_path: str | None = None
    devices: list[dict] = []
    listener: dict | None = None
    policy_args: dict[str, object] = {}
    feedback: dict[int, list[FeedbackEvent]] = {}
    seen_single: set[str] = set()

    for name, arg, sline, entries in sections:
        if name in ("scenario", "kg", "listener", "policy"):
            if arg is not None:
                raise ParseError(f"section [{name}] takes no argument", sline)
            if name in seen_single:
                raise ParseError(f"duplicate section [{name}]", sline)
            seen_single.add(name)
        if name == "scenario":
            for ln, key, value in entries:
                if key in ("format_version", "seed", "rounds", "sample_rate", "frame_length", "hop"):
                    scalars[key] = _number(value, key, ln, int)
                elif key in ("q", "latency_budget"):
                    scalars[key] = _number(value, key, ln)
                else:
                    raise ParseError(f"unknown key {key!r} in [scenario]", ln)
        elif name == "kg":
            for ln, key, value in entries:
                if key == "path":
                    kg_path = value
                elif key == "entity":
                    kg_entities.append(_entity(value, ln))
                elif key == "triple":
                    kg_triples.append((ln, value))
                else:
                    raise ParseError(f"unknown key {key!r} in [kg]", ln)
        elif name == "device":
            if arg is None:
                raise ParseError("[device] needs an id", sline)
            if any(d["id"] == arg for d in devices):
                raise ParseError(f"duplicate device {arg!r}", sline)
            devices.append(_device(arg, sline, entries))
        elif name == "listener":
            listener = _listener(entries)
        elif name == "policy":
            policy_args = _policy(entries)
        elif name == "round":
            n = _number(arg or "", "round", sline, int)
            if n in feedback:
                raise ParseError(f"duplicate section [round {n}]", sline)
            feedback[n] = []
            for ln, key, value in entries:
                if key != "feedback":
                    raise ParseError(f"unknown key {key!r} in [round {n}]", ln)
                feedback[n].append(_feedback(value, ln))
        else:
            raise ParseError(f"unknown section [{name}]", sline)

    return _validate(scalars, kg_path, kg_entities, kg_triples, devices, listener, policy_args, feedback, base)


def _entity(value: str, ln: int) -> Entity:
    parts = value.split()
    if len(parts) != 2:
        raise ParseError("entity = <id> <category>", ln)
    try:
        return Entity(parts[0], parts[1])
    except ValueError as exc:
        raise ParseError(str(exc), ln) from None


def _build_kg(base: KnowledgeGraph, entities: list[Entity], triples: list[tuple[int, str]]) -> KnowledgeGraph:
    g = base
    for ent in entities:
        try:
            g = g.add_entity(ent.id, ent.category)
        except ValueError as exc:
            raise ValidationError(f"kg: {exc}") from None
    for ln, value in triples:
        parts = value.split()
        if len(parts) != 4:
            raise ParseError("triple = <head> <relation> <tail> <prob>", ln)
        prob = _number(parts[3], "triple prob", ln)
        try:
            g = g.add_triple(parts[0], parts[1], parts[2], prob)
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"line {ln}: triple {value!r}: {exc}") from None
    return g


def _device(device_id: str, sline: int, entries) -> dict:
    dev: dict = {"id": device_id, "line": sline, "events": [], "entities": [], "triples": []}
    for ln, key, value in entries:
        if key == "role":
            dev["role"] = value
        elif key == "length":
            dev["length"] = _number(value, "length", ln)
        elif key == "channel":
            dev["channel"] = _channel(value, ln)
        elif key == "event":
            parts = value.split()
            if len(parts) != 5:
                raise ParseError("event = <kind> <entity> <onset_s> <duration_s> <salience>", ln)
            try:
                kind = EventKind(parts[0])
            except ValueError:
                raise ParseError(f"unknown event kind {parts[0]!r}", ln) from None
            nums = [_number(p, "event", ln) for p in parts[2:]]
            try:
                dev["events"].append(SoundEvent(kind, parts[1], *nums))
            except ValueError as exc:
                raise ValidationError(f"device {device_id}: event line {ln}: {exc}") from None
        elif key == "entity":
            dev["entities"].append(_entity(value, ln))
        elif key == "triple":
            dev["triples"].append((ln, value))
        else:
            raise ParseError(f"unknown key {key!r} in [device {device_id}]", ln)
    return dev


def _channel(value: str, ln: int) -> dict:
    out: dict[str, float] = {}
    for item in value.split():
        if "=" not in item:
            raise ParseError(f"channel parameter {item!r} is not name=value", ln)
        k, v = item.split("=", 1)
        if k not in _CHANNEL_KEYS:
            raise ParseError(f"unknown channel parameter {k!r}", ln)
        out[_CHANNEL_KEYS[k]] = _number(v, f"channel.{k}", ln, int if k == "seed" else float)
    return out


def _listener(entries) -> dict:
    lis: dict = {"targets": []}
    for ln, key, value in entries:
        if key == "id":
            lis["id"] = value
        elif key == "role":
            lis["role"] = value
        elif key == "channels":
            lis["channels"] = _number(value, "channels", ln, int)
        elif key == "target":
            parts = value.split()
            if len(parts) != 2:
                raise ParseError("target = <entity> <weight>", ln)
            lis["targets"].append((parts[0], _number(parts[1], "target weight", ln)))
        else:
            raise ParseError(f"unknown key {key!r} in [listener]", ln)
    return lis


_POLICY_KEYS = {
    "min_feedback": ("min_feedback_count", int),
    "min_interval": ("min_interval", float),
    "alpha": ("alpha", float),
    "hop_limit": ("hop_limit", int),
    "theta": ("role_threshold", float),
}


def _policy(entries) -> dict:
    out: dict[str, object] = {}
    for ln, key, value in entries:
        if key not in _POLICY_KEYS:
            raise ParseError(f"unknown key {key!r} in [policy]", ln)
        attr, kind = _POLICY_KEYS[key]
        out[attr] = _number(value, key, ln, kind)
    return out


def _feedback(value: str, ln: int) -> FeedbackEvent:
    parts = value.split()
    if len(parts) != 6:
        raise ParseError("feedback = <time_s> <listener> <head> <relation> <tail> <verdict>", ln)
    try:
        return FeedbackEvent(parts[1], (parts[2], parts[3], parts[4]), parts[5], _number(parts[0], "feedback time", ln))
    except ValueError as exc:
        raise ParseError(str(exc), ln) from None


def _validate(scalars, kg_path, kg_entities, kg_triples, devices, listener, policy_args, feedback, base) -> ScenarioConfig:
    version = scalars.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ValidationError(f"format_version: unsupported version {version}")
    start = KnowledgeGraph()
    if kg_path is not None:
        path = Path(kg_path)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ValidationError(f"kg.path: file not found: {path}")
        start = load_kg(path)
    global_kg = _build_kg(start, kg_entities, kg_triples)

    if not devices:
        raise ValidationError("devices: at least one [device] section is required")
    specs = []
    for dev in devices:
        did = dev["id"]
        for req in ("role", "length", "channel"):
            if req not in dev:
                raise ValidationError(f"device {did}: missing field {req!r}")
        if "rate" not in dev["channel"]:
            raise ValidationError(f"device {did}: missing field 'channel.rate'")
        try:
            channel = ChannelModel(**dev["channel"])
        except ValueError as exc:
            raise ValidationError(f"device {did}: channel: {exc}") from None
        private = _private_kg(did, global_kg, dev["entities"], dev["triples"])
        spec = DeviceSpec(did, dev["role"], dev["length"], channel, tuple(dev["events"]), private)
        try:
            spec.scene()
        except ValueError as exc:
            raise ValidationError(f"device {did}: {exc}") from None
        specs.append(spec)

    lis = listener or {"targets": []}
    try:
        profile = PreferenceProfile(tuple(lis["targets"]), lis.get("channels", 2))
    except ValueError as exc:
        raise ValidationError(f"listener: {exc}") from None
    listener_spec = ListenerSpec(lis.get("id", "listener"), profile, lis.get("role"))
    try:
        policy = UpdatePolicy(**policy_args)
    except ValueError as exc:
        raise ValidationError(f"policy: {exc}") from None

    config = ScenarioConfig(
        global_kg=global_kg,
        devices=tuple(specs),
        listener=listener_spec,
        policy=policy,
        feedback={n: tuple(evs) for n, evs in sorted(feedback.items())},
        rounds=scalars.get("rounds", 1),
        seed=scalars.get("seed", 0),
        q=scalars.get("q", 0.8),
        latency_budget=scalars.get("latency_budget", 1.0),
        sample_rate=scalars.get("sample_rate", DEFAULT_SAMPLE_RATE),
        frame_length=scalars.get("frame_length", DEFAULT_FRAME_LENGTH),
        hop=scalars.get("hop", DEFAULT_HOP),
    )
    _check_references(config)
    return config


def _private_kg(device_id: str, global_kg: KnowledgeGraph, entities, triples) -> KnowledgeGraph:
    """Device-declared knowledge; triple endpoints may borrow categories from the global KG."""
    declared = {e.id: e for e in entities}
    for _ln, value in triples:
        parts = value.split()
        for end in (parts[0], parts[2]) if len(parts) == 4 else ():
            if end not in declared:
                if end not in global_kg:
                    raise ValidationError(f"device {device_id}: triple endpoint {end!r} is not a KG entity")
                declared[end] = global_kg.entity(end)
    return _build_kg(KnowledgeGraph(), list(declared.values()), triples)


def _check_references(config: ScenarioConfig) -> None:
    if config.rounds < 1:
        raise ValidationError("rounds: must be >= 1")
    if not 0.0 <= config.q <= 1.0:
        raise ValidationError("q: must be in [0, 1]")
    if not config.latency_budget > 0:
        raise ValidationError("latency_budget: must be positive")
    if config.sample_rate < 4000:
        raise ValidationError("sample_rate: must be >= 4000")
    fl = config.frame_length
    if fl < 64 or fl > 1024 or fl & (fl - 1):
        raise ValidationError("frame_length: must be a power of two in [64, 1024]")
    if not 0 < config.hop <= fl:
        raise ValidationError("hop: must be in (0, frame_length]")
    try:
        kg = config.knowledge()
    except ValueError as exc:
        raise ValidationError(f"kg: {exc}") from None
    for dev in config.devices:
        if dev.role not in kg:
            raise ValidationError(f"device {dev.device_id}: role {dev.role!r} is not a KG entity")
        for ev in dev.events:
            if ev.entity not in kg:
                raise ValidationError(f"device {dev.device_id}: event entity {ev.entity!r} is not a KG entity")
            cat = kg.entity(ev.entity).category
            if cat != ev.kind.category:
                raise ValidationError(
                    f"device {dev.device_id}: entity {ev.entity!r} is {cat}, not {ev.kind.category}"
                )
    if config.listener.role is not None and config.listener.role not in kg:
        raise ValidationError(f"listener: role {config.listener.role!r} is not a KG entity")
    for target, _w in config.listener.profile.targets:
        if target not in kg:
            raise ValidationError(f"listener: target {target!r} is not a KG entity")
    for n in config.feedback:
        if not 1 <= n <= config.rounds:
            raise ValidationError(f"round {n}: outside 1..{config.rounds}")


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent)


def _f(x: float) -> str:
    return repr(float(x))


def serialize_scenario(config: ScenarioConfig) -> str:
    """Canonical text form; KGs are written inline so the output stands alone."""
    out = [
        "[scenario]",
        f"format_version = {config.format_version}",
        f"seed = {config.seed}",
        f"rounds = {config.rounds}",
        f"q = {_f(config.q)}",
        f"latency_budget = {_f(config.latency_budget)}",
        f"sample_rate = {config.sample_rate}",
        f"frame_length = {config.frame_length}",
        f"hop = {config.hop}",
        "",
        "[kg]",
    ]
    out += _kg_lines(config.global_kg)
    for dev in config.devices:
        ch = dev.channel
        out += [
            "",
            f"[device {dev.device_id}]",
            f"role = {dev.role}",
            f"length = {_f(dev.length)}",
            f"channel = rate={_f(ch.rate)} delay={_f(ch.delay)} jitter={_f(ch.jitter_std)} "
            f"erase={_f(ch.erasure_prob)} corrupt={_f(ch.corruption_prob)} seed={ch.rng_seed}",
        ]
        out += [
            f"event = {ev.kind.value} {ev.entity} {_f(ev.onset)} {_f(ev.duration)} {_f(ev.salience)}"
            for ev in dev.events
        ]
        out += _kg_lines(dev.private_kg)
    lis = config.listener
    out += ["", "[listener]", f"id = {lis.listener_id}", f"channels = {lis.profile.device_channels}"]
    if lis.role is not None:
        out.append(f"role = {lis.role}")
    out += [f"target = {e} {_f(w)}" for e, w in lis.profile.targets]
    p = config.policy
    out += [
        "",
        "[policy]",
        f"min_feedback = {p.min_feedback_count}",
        f"min_interval = {_f(p.min_interval)}",
        f"alpha = {_f(p.alpha)}",
        f"hop_limit = {p.hop_limit}",
        f"theta = {_f(p.role_threshold)}",
    ]
    for n, events in sorted(config.feedback.items()):
        out += ["", f"[round {n}]"]
        out += [
            f"feedback = {_f(ev.time)} {ev.listener_id} {ev.key[0]} {ev.key[1]} {ev.key[2]} {ev.verdict}"
            for ev in events
        ]
    return "\n".join(out) + "\n"


def _kg_lines(kg: KnowledgeGraph) -> list[str]:
    lines = []
    for raw in dump_kg(kg).splitlines():
        if not raw:
            continue
        kind, rest = raw.split(" ", 1)
        lines.append(f"{kind} = {rest}")
    return lines
