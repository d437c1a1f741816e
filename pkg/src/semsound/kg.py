"""Probabilistic knowledge graph.

Triples ``(head, relation, tail)`` carry the probability that the tail holds
when the head holds. Relevance between two entities is the best product of
probabilities over any directed path, found with a Dijkstra search (edge cost
``-ln p`` is nonnegative, and ordering by product is the same ordering).

Graphs are values: every mutating method returns a new graph whose
``version`` is one higher, so a graph can be shared freely once built.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    CategoryConflict,
    DuplicateTriple,
    InvalidProbability,
    ParseError,
    UnknownEntity,
    UnknownTriple,
)

logger = logging.getLogger(__name__)

CATEGORIES = (
    "speech-word",
    "music-note",
    "ambient-class",
    "concept",
    "role",
    "preference-target",
)

FEEDBACK_FLOOR = 0.01

TripleKey = tuple[str, str, str]


@dataclass(frozen=True)
class Entity:
    id: str
    category: str

    def __post_init__(self) -> None:
        if not self.id or any(ch.isspace() for ch in self.id):
            raise ValueError(f"invalid entity id {self.id!r}")
        if self.category not in CATEGORIES:
            raise ValueError(f"invalid category {self.category!r} for {self.id!r}")


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str
    prob: float

    @property
    def key(self) -> TripleKey:
        return (self.head, self.relation, self.tail)


@dataclass(frozen=True)
class PreferenceProfile:
    """Listener preferences: weighted target entities plus output channel count."""

    targets: tuple[tuple[str, float], ...] = ()
    device_channels: int = 2

    def __post_init__(self) -> None:
        targets = tuple((str(e), float(w)) for e, w in self.targets)
        object.__setattr__(self, "targets", targets)
        ids = [e for e, _ in targets]
        if len(set(ids)) != len(ids):
            raise ValueError("preference targets must be distinct")
        for e, w in targets:
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"preference weight for {e!r} outside [0, 1]: {w}")
        if self.device_channels < 1:
            raise ValueError("device_channels must be positive")

    def weight(self, entity_id: str) -> float:
        for e, w in self.targets:
            if e == entity_id:
                return w
        return 0.0

    def with_weight(self, entity_id: str, weight: float) -> "PreferenceProfile":
        targets = [(e, weight if e == entity_id else w) for e, w in self.targets]
        if entity_id not in {e for e, _ in self.targets}:
            targets.append((entity_id, weight))
        return PreferenceProfile(tuple(targets), self.device_channels)


def _check_prob(prob: float) -> float:
    prob = float(prob)
    if not (0.0 < prob <= 1.0) or math.isnan(prob):
        raise InvalidProbability(f"probability must be in (0, 1], got {prob!r}")
    return prob


class KnowledgeGraph:
    """Directed multigraph of probabilistic triples over typed entities."""

    __slots__ = ("_entities", "_triples", "version", "_adjacency", "_sssp")

    def __init__(
        self,
        entities: Iterable[Entity] = (),
        triples: Iterable[Triple] = (),
        version: int = 0,
    ) -> None:
        self._entities: dict[str, Entity] = {}
        for ent in entities:
            prev = self._entities.get(ent.id)
            if prev is not None and prev.category != ent.category:
                raise CategoryConflict(
                    f"entity {ent.id!r} has categories {prev.category!r} and {ent.category!r}"
                )
            self._entities[ent.id] = ent
        self._triples: dict[TripleKey, float] = {}
        for tr in triples:
            self._insert(tr.head, tr.relation, tr.tail, tr.prob)
        self.version = version
        self._adjacency: dict[str, dict[str, float]] | None = None
        self._sssp: dict[str, tuple[dict[str, float], dict[str, str]]] = {}

    def _insert(self, head: str, relation: str, tail: str, prob: float) -> None:
        for end in (head, tail):
            if end not in self._entities:
                raise UnknownEntity(end)
        if not relation or any(ch.isspace() for ch in relation):
            raise ValueError(f"invalid relation label {relation!r}")
        key = (head, relation, tail)
        if key in self._triples:
            raise DuplicateTriple(f"triple {key} already present")
        self._triples[key] = _check_prob(prob)

    def _derive(self, triples: Mapping[TripleKey, float] | None = None) -> "KnowledgeGraph":
        new = KnowledgeGraph.__new__(KnowledgeGraph)
        new._entities = dict(self._entities)
        new._triples = dict(self._triples if triples is None else triples)
        new.version = self.version + 1
        new._adjacency = None
        new._sssp = {}
        return new

    # -- inspection -------------------------------------------------------

    @property
    def entities(self) -> Mapping[str, Entity]:
        return dict(self._entities)

    def entity(self, entity_id: str) -> Entity:
        try:
            return self._entities[entity_id]
        except KeyError:
            raise UnknownEntity(entity_id) from None

    def __contains__(self, entity_id: object) -> bool:
        return entity_id in self._entities

    def triples(self) -> Iterator[Triple]:
        for (h, r, t), p in self._triples.items():
            yield Triple(h, r, t, p)

    def prob(self, head: str, relation: str, tail: str) -> float:
        try:
            return self._triples[(head, relation, tail)]
        except KeyError:
            raise UnknownTriple((head, relation, tail)) from None

    def has_triple(self, head: str, relation: str, tail: str) -> bool:
        return (head, relation, tail) in self._triples

    def triple_keys(self) -> set[TripleKey]:
        return set(self._triples)

    def entities_of(self, category: str) -> list[str]:
        return sorted(e.id for e in self._entities.values() if e.category == category)

    def tails(self, head: str, relation: str) -> list[str]:
        return sorted(t for (h, r, t) in self._triples if h == head and r == relation)

    def heads(self, relation: str, tail: str) -> list[str]:
        return sorted(h for (h, r, t) in self._triples if t == tail and r == relation)

    def __len__(self) -> int:
        return len(self._triples)

    def __eq__(self, other: object) -> bool:
        # Content equality; the version counter is bookkeeping.
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._entities == other._entities and self._triples == other._triples

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(entities={len(self._entities)}, "
            f"triples={len(self._triples)}, version={self.version})"
        )

    def is_subgraph_of(self, other: "KnowledgeGraph") -> bool:
        return all(
            other._entities.get(eid) == ent for eid, ent in self._entities.items()
        ) and set(self._triples) <= set(other._triples)

    # -- mutation (returns new graphs) -----------------------------------

    def add_entity(self, entity_id: str, category: str) -> "KnowledgeGraph":
        ent = Entity(entity_id, category)
        prev = self._entities.get(entity_id)
        if prev is not None:
            if prev.category != category:
                raise CategoryConflict(
                    f"entity {entity_id!r} already has category {prev.category!r}"
                )
            return self
        new = self._derive()
        new._entities[entity_id] = ent
        return new

    def add_triple(self, head: str, relation: str, tail: str, prob: float) -> "KnowledgeGraph":
        new = self._derive()
        new._insert(head, relation, tail, prob)
        return new

    def remove_triple(self, head: str, relation: str, tail: str) -> "KnowledgeGraph":
        key = (head, relation, tail)
        if key not in self._triples:
            raise UnknownTriple(key)
        triples = dict(self._triples)
        del triples[key]
        return self._derive(triples)

    def apply_feedback(
        self, key: TripleKey, verdict: str, alpha: float
    ) -> "KnowledgeGraph":
        """Move one triple's probability toward 1 (positive) or 0 (negative).

        Exponential moving average with weight ``alpha``; the result is
        floored at 0.01 so the edge stays usable.
        """
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
        if verdict not in ("positive", "negative"):
            raise ValueError(f"verdict must be 'positive' or 'negative', got {verdict!r}")
        key = tuple(key)  # type: ignore[assignment]
        if key not in self._triples:
            raise UnknownTriple(key)
        target = 1.0 if verdict == "positive" else 0.0
        p = (1.0 - alpha) * self._triples[key] + alpha * target
        triples = dict(self._triples)
        triples[key] = min(1.0, max(FEEDBACK_FLOOR, p))
        return self._derive(triples)

    # -- queries ----------------------------------------------------------

    def _adj(self) -> dict[str, dict[str, float]]:
        if self._adjacency is None:
            adj: dict[str, dict[str, float]] = {}
            for (h, _r, t), p in self._triples.items():
                row = adj.setdefault(h, {})
                # parallel relations: keep the strongest
                if p > row.get(t, 0.0):
                    row[t] = p
            self._adjacency = adj
        return self._adjacency

    def _search(self, source: str) -> tuple[dict[str, float], dict[str, str]]:
        cached = self._sssp.get(source)
        if cached is not None:
            return cached
        adj = self._adj()
        best: dict[str, float] = {source: 1.0}
        parent: dict[str, str] = {}
        done: set[str] = set()
        heap: list[tuple[float, str]] = [(-1.0, source)]
        while heap:
            neg, node = heapq.heappop(heap)
            if node in done:
                continue
            done.add(node)
            value = -neg
            for nxt in sorted(adj.get(node, {})):
                if nxt in done:
                    continue
                cand = value * adj[node][nxt]
                if cand > best.get(nxt, 0.0):
                    best[nxt] = cand
                    parent[nxt] = node
                    heapq.heappush(heap, (-cand, nxt))
        self._sssp[source] = (best, parent)
        return best, parent

    def relevance(self, source: str, target: str) -> float:
        """Best path-probability product from ``source`` to ``target`` (0 if unreachable)."""
        self.entity(source)
        self.entity(target)
        best, _ = self._search(source)
        return best.get(target, 0.0)

    def best_path(self, source: str, target: str) -> list[Triple] | None:
        """One maximizing path as a list of triples; ``[]`` when source == target."""
        self.entity(source)
        self.entity(target)
        best, parent = self._search(source)
        if target not in best:
            return None
        nodes = [target]
        while nodes[-1] != source:
            nodes.append(parent[nodes[-1]])
        nodes.reverse()
        path = []
        for h, t in zip(nodes, nodes[1:]):
            rel, prob = max(
                ((r, p) for (hh, r, tt), p in self._triples.items() if hh == h and tt == t),
                key=lambda rp: (rp[1], rp[0]),
            )
            path.append(Triple(h, rel, t, prob))
        return path

    def importance(self, entity_id: str, profile: PreferenceProfile) -> float:
        """Max over preference targets of weight times relevance; missing targets count 0."""
        self.entity(entity_id)
        best, _ = self._search(entity_id)
        score = 0.0
        for target, weight in profile.targets:
            score = max(score, weight * best.get(target, 0.0))
        return score

    def reachable(self, roots: Iterable[str], hop_limit: int | None = None) -> set[str]:
        adj = self._adj()
        seen: dict[str, int] = {}
        queue: deque[tuple[str, int]] = deque()
        for r in roots:
            self.entity(r)
            if r not in seen:
                seen[r] = 0
                queue.append((r, 0))
        while queue:
            node, depth = queue.popleft()
            if hop_limit is not None and depth >= hop_limit:
                continue
            for nxt in adj.get(node, {}):
                if nxt not in seen:
                    seen[nxt] = depth + 1
                    queue.append((nxt, depth + 1))
        return set(seen)

    def extract_local(self, roots: Sequence[str], hop_limit: int) -> "KnowledgeGraph":
        """Subgraph induced by entities within ``hop_limit`` directed hops of any root."""
        if hop_limit < 0:
            raise ValueError("hop_limit must be nonnegative")
        keep = self.reachable(roots, hop_limit)
        sub = KnowledgeGraph.__new__(KnowledgeGraph)
        sub._entities = {eid: e for eid, e in self._entities.items() if eid in keep}
        sub._triples = {
            k: p for k, p in self._triples.items() if k[0] in keep and k[2] in keep
        }
        sub.version = self.version
        sub._adjacency = None
        sub._sssp = {}
        return sub


def merge(graphs: Sequence[KnowledgeGraph]) -> KnowledgeGraph:
    """Union of graphs; a triple present in several graphs gets noisy-OR probability."""
    if not graphs:
        raise ValueError("merge needs at least one graph")
    entities: dict[str, Entity] = {}
    probs: dict[TripleKey, list[float]] = {}
    for g in graphs:
        for eid, ent in g._entities.items():
            prev = entities.get(eid)
            if prev is not None and prev.category != ent.category:
                raise CategoryConflict(
                    f"entity {eid!r} has categories {prev.category!r} and {ent.category!r}"
                )
            entities[eid] = ent
        for key, p in g._triples.items():
            probs.setdefault(key, []).append(p)
    out = KnowledgeGraph.__new__(KnowledgeGraph)
    out._entities = entities
    out._triples = {}
    for key, ps in probs.items():
        if len(ps) == 1:
            out._triples[key] = ps[0]
            continue
        # sorted so the product does not depend on input order
        combined = 1.0 - math.prod(1.0 - p for p in sorted(ps))
        out._triples[key] = min(1.0, max(combined, max(ps)))
    out.version = max(g.version for g in graphs) + 1
    out._adjacency = None
    out._sssp = {}
    return out


# -- flat file format -----------------------------------------------------


def parse_kg(text: str) -> KnowledgeGraph:
    """Parse ``entity <id> <category>`` / ``triple <h> <r> <t> <p>`` lines."""
    entities: list[Entity] = []
    triples: list[tuple[int, Triple]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "entity" and len(parts) == 3:
                entities.append(Entity(parts[1], parts[2]))
            elif parts[0] == "triple" and len(parts) == 5:
                triples.append((lineno, Triple(parts[1], parts[2], parts[3], float(parts[4]))))
            else:
                raise ParseError(f"unrecognised line {line!r}", lineno)
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    graph = KnowledgeGraph(entities)
    for lineno, tr in triples:
        try:
            graph._insert(tr.head, tr.relation, tr.tail, tr.prob)
        except (ValueError, KeyError) as exc:
            raise ParseError(str(exc), lineno) from None
    return graph


def dump_kg(graph: KnowledgeGraph) -> str:
    lines = [f"entity {e.id} {e.category}" for e in sorted(graph._entities.values(), key=lambda e: e.id)]
    lines += [
        f"triple {h} {r} {t} {p!r}" for (h, r, t), p in sorted(graph._triples.items())
    ]
    return "\n".join(lines) + "\n"


def load_kg(path: str | Path) -> KnowledgeGraph:
    return parse_kg(Path(path).read_text(encoding="utf-8"))
