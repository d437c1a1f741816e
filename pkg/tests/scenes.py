"""Random scene generators shared by the codec, sync and acceptance tests."""

from __future__ import annotations

import random

from semsound.dsp import partials
from semsound.events import EventKind, SoundEvent, SoundScene, note_entity
from semsound.kg import Entity, KnowledgeGraph

WORDS = ["hello", "world", "yes", "no", "ping", "go", "stop", "left", "right", "up", "down", "one"]
AMBIENT = ["rain", "wind", "crowd", "traffic", "birds", "sea"]
MIN_SEPARATION_HZ = 2 * 8000 / 256


def separable(freqs_a, freqs_b, min_hz=MIN_SEPARATION_HZ):
    return all(abs(a - b) >= min_hz for a in freqs_a for b in freqs_b)


def separable_vocabulary(rng: random.Random, size: int = 6):
    """Pick sound entities whose partials are pairwise at least two bins apart."""
    pool = (
        [(EventKind.SPEECH, w) for w in WORDS]
        + [(EventKind.MUSIC, note_entity(m)) for m in range(48, 97)]
        + [(EventKind.AMBIENT, a) for a in AMBIENT]
    )
    rng.shuffle(pool)
    chosen = []
    for kind, ent in pool:
        f = partials(kind, ent)
        if all(separable(f, partials(k, e)) for k, e in chosen):
            chosen.append((kind, ent))
        if len(chosen) == size:
            break
    return chosen


def vocabulary_kg(vocab) -> KnowledgeGraph:
    return KnowledgeGraph([Entity(e, k.category) for k, e in vocab])


def random_scene(rng: random.Random, vocab, sender_id="s0", max_events=10):
    """Time-disjoint events with silent gaps of 0.1 to 0.2 s between them."""
    n = rng.randint(1, max_events)
    t = rng.uniform(0.0, 0.2)
    events = []
    for _ in range(n):
        kind, ent = rng.choice(vocab)
        dur = rng.uniform(0.1, 0.4)
        events.append(SoundEvent(kind, ent, round(t, 4), round(dur, 4), round(rng.uniform(0.3, 1.0), 3)))
        t += dur + rng.uniform(0.1, 0.2)
    return SoundScene(sender_id, tuple(events), round(t + 0.05, 4))
