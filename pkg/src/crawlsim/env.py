"""Synthetic dynamic web: a seeded, replayable timeline of pages and links.

The environment is a list of time-ordered events.  A ``NewUrl`` event
introduces a URL together with its first page version; a ``ContentChange``
event publishes a new version (new ``version_id``) for an existing URL.
Each version carries a topic state vector in [-1, 1]^k and an ordered list
of outgoing links (URL ids).

Generation rules:

* the initial pages are grown at t=0 by preferential attachment on
  in-degree (with an additive offset) plus triadic closure;
* the ``hub_count`` initial pages with the highest in-degree become hubs
  (front pages);
* new pages arrive as a Poisson process (or on a deterministic grid) and
  each one is announced on a hub, which emits a ``ContentChange`` whose
  link list holds the hub's own links plus its most recent arrivals.  Every
  announced page also links back to the page announced before it on the same
  hub, so everything stays reachable from the hubs after it rolls off the
  front page;
* hubs additionally change content at ``hub_update_rate`` per hour.
"""

from __future__ import annotations

import bisect
import dataclasses
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from crawlsim.errors import ConfigError, FetchError, TraceParseError, TraceValidationError

HOUR = 3600.0
DAY = 24 * HOUR


class EventKind(str, Enum):
    NEW_URL = "NewUrl"
    CONTENT_CHANGE = "ContentChange"


@dataclass(frozen=True)
class PageVersion:
    version_id: int
    url: int
    created_at: float
    state: tuple[float, ...]
    links: tuple[int, ...]


@dataclass(frozen=True)
class EnvEvent:
    time: float
    kind: EventKind
    version: PageVersion


@dataclass(frozen=True)
class EnvConfig:
    k: int = 50
    num_topics: int = 20
    initial_pages: int = 1000
    hub_count: int = 30
    arrival_rate: float = 20.0  # new pages per simulated hour
    hub_update_rate: float = 1.0  # content changes per hub per hour
    links_per_page: int = 4
    pref_attach_offset: float = 4.0
    duration: float = 14 * DAY
    download_time: float = 1.0
    relevance_horizon: float = DAY
    rng_seed: int = 0
    arrival_mode: str = "poisson"  # or "deterministic"
    hub_window: int = 30  # recent arrivals listed on a hub's front page
    triad_prob: float = 0.7
    topic_inherit_prob: float = 0.8
    topic_noise: float = 0.3
    out_degree_exponent: float = 2.5
    max_out_degree: int = 60
    hub_activity_skew: float = 0.0  # Zipf exponent of arrival shares across hubs
    topic_locality: float = 0.8  # chance a preferential link stays within the page's topic
    front_page_topic: bool = True  # hubs share a reserved topic of their own
    centroid_scale: float = 0.5

    def validate(self) -> "EnvConfig":
        for name in ("k", "num_topics", "initial_pages", "hub_count", "links_per_page",
                     "hub_window", "max_out_degree"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {value!r}")
        if self.hub_count > self.initial_pages:
            raise ConfigError("hub_count", "cannot exceed initial_pages")
        for name in ("arrival_rate", "hub_update_rate", "pref_attach_offset", "duration",
                     "topic_noise", "hub_activity_skew", "centroid_scale"):
            value = getattr(self, name)
            if not _finite(value) or value < 0:
                raise ConfigError(name, f"must be a finite number >= 0, got {value!r}")
        for name in ("download_time", "relevance_horizon"):
            value = getattr(self, name)
            if not _finite(value) or value <= 0:
                raise ConfigError(name, f"must be > 0, got {value!r}")
        for name in ("triad_prob", "topic_inherit_prob", "topic_locality"):
            value = getattr(self, name)
            if not _finite(value) or not 0 <= value <= 1:
                raise ConfigError(name, f"must lie in [0, 1], got {value!r}")
        if not _finite(self.out_degree_exponent) or self.out_degree_exponent <= 2:
            raise ConfigError("out_degree_exponent", "must be > 2 so the mean out-degree is finite")
        if self.arrival_mode not in ("poisson", "deterministic"):
            raise ConfigError("arrival_mode", f"must be 'poisson' or 'deterministic', got {self.arrival_mode!r}")
        if not isinstance(self.front_page_topic, bool):
            raise ConfigError("front_page_topic", f"must be true or false, got {self.front_page_topic!r}")
        if not isinstance(self.rng_seed, (int, np.integer)) or isinstance(self.rng_seed, bool):
            raise ConfigError("rng_seed", f"must be an integer, got {self.rng_seed!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(unknown[0], "unknown environment field")
        return cls(**data).validate()


def sfsw_config(**overrides) -> EnvConfig:
    """The standard scale-free small-world setup: 14 days at 12 s per fetch (about 100k downloads)."""
    return dataclasses.replace(EnvConfig(download_time=12.0), **overrides)


def _finite(value) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool) \
        and math.isfinite(value)


class Environment:
    """Immutable event timeline with per-URL version lists."""

    def __init__(self, config: EnvConfig, events: list[EnvEvent], topic_centroids: np.ndarray,
                 hubs: Sequence[int] = ()):
        self.config = config
        self.events = list(events)
        self.topic_centroids = np.asarray(topic_centroids, dtype=float)
        self.hubs = tuple(hubs)
        self.url_table: list[list[PageVersion]] = []
        self._times: list[list[float]] = []
        self.versions: list[PageVersion] = []
        for ev in self.events:
            v = ev.version
            if ev.kind is EventKind.NEW_URL:
                self.url_table.append([v])
                self._times.append([v.created_at])
            else:
                self.url_table[v.url].append(v)
                self._times[v.url].append(v.created_at)
            self.versions.append(v)
        # dense version ids index straight into this matrix
        self.states = np.array([v.state for v in self.versions], dtype=float).reshape(
            len(self.versions), config.k)
        self.states.setflags(write=False)

    @property
    def num_urls(self) -> int:
        return len(self.url_table)

    def created_at(self, url: int) -> float:
        return self._times[url][0]

    def version(self, version_id: int) -> PageVersion:
        return self.versions[version_id]

    def _live_index(self, url: int, time: float) -> int:
        if not 0 <= url < len(self.url_table):
            raise FetchError(f"unknown url {url}")
        i = bisect.bisect_right(self._times[url], time) - 1
        if i < 0:
            raise FetchError(f"url {url} does not exist yet at t={time}")
        return i

    def fetch_page(self, url: int, time: float) -> PageVersion:
        i = self._live_index(url, time)
        return self.url_table[url][i]

    def current_version_id(self, url: int, time: float) -> int:
        i = self._live_index(url, time)
        return self.url_table[url][i].version_id

    def last_change_time(self, url: int, time: float) -> float:
        return self._times[url][self._live_index(url, time)]

    def urls_at(self, time: float) -> list[int]:
        return [u for u, ts in enumerate(self._times) if ts[0] <= time]

    def snapshot_edges(self, time: float) -> list[tuple[int, int]]:
        """Links of every live version at ``time``."""
        edges = []
        for u, ts in enumerate(self._times):
            if ts[0] > time:
                continue
            for w in self.fetch_page(u, time).links:
                edges.append((u, w))
        return edges

    def link_graph(self) -> list[tuple[int, int]]:
        """Distinct URL-level links seen in any version over the whole timeline."""
        seen: set[tuple[int, int]] = set()
        edges = []
        for v in self.versions:
            for w in v.links:
                e = (v.url, w)
                if e not in seen:
                    seen.add(e)
                    edges.append(e)
        return edges

    def seed_urls(self, count: int = 10) -> list[int]:
        """Hubs first, then the remaining initial pages by in-degree at t=0."""
        indeg = np.zeros(self.num_urls, dtype=int)
        for u, w in self.snapshot_edges(0.0):
            indeg[w] += 1
        initial = self.urls_at(0.0)
        rest = sorted((u for u in initial if u not in self.hubs), key=lambda u: (-indeg[u], u))
        return (list(self.hubs) + rest)[:count]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Environment):
            return NotImplemented
        return (self.config == other.config and self.events == other.events
                and self.hubs == other.hubs
                and np.array_equal(self.topic_centroids, other.topic_centroids))

    __hash__ = None  # type: ignore[assignment]


def _state_vector(rng: np.random.Generator, centroid: np.ndarray, noise: float) -> tuple[float, ...]:
    return tuple(float(x) for x in np.tanh(centroid + noise * rng.standard_normal(centroid.shape[0])))


class _Growth:
    """Preferential attachment on in-degree with an additive offset.

    Sampling uses the two-urn trick: with probability ``offset*N / (offset*N + E)``
    pick a node uniformly, otherwise pick the head of a uniformly chosen edge.
    The same urns are kept per topic so a pick can be restricted to one topic.
    """

    def __init__(self, rng: np.random.Generator, offset: float, num_topics: int, locality: float):
        self.rng = rng
        self.offset = offset
        self.locality = locality
        self.topics: list[int] = []
        self.nodes: list[list[int]] = [[] for _ in range(num_topics)]
        self.heads: list[int] = []
        self.topic_heads: list[list[int]] = [[] for _ in range(num_topics)]

    def add_node(self, u: int, topic: int) -> None:
        self.topics.append(topic)
        self.nodes[topic].append(u)

    def add_head(self, w: int) -> None:
        self.heads.append(w)
        self.topic_heads[self.topics[w]].append(w)

    def pick(self, topic: int | None = None) -> int:
        rng = self.rng
        if topic is not None and self.nodes[topic] and rng.random() < self.locality:
            nodes, heads = self.nodes[topic], self.topic_heads[topic]
            mass_uniform = self.offset * len(nodes)
            if rng.random() * (mass_uniform + len(heads)) < mass_uniform:
                return nodes[int(rng.integers(len(nodes)))]
            return heads[int(rng.integers(len(heads)))]
        n = len(self.topics)
        mass_uniform = self.offset * n
        if rng.random() * (mass_uniform + len(self.heads)) < mass_uniform:
            return int(rng.integers(n))
        return self.heads[int(rng.integers(len(self.heads)))]


def _draw_out_degree(rng: np.random.Generator, cfg: EnvConfig) -> int:
    # Pareto with unit mean scaled by links_per_page
    a = cfg.out_degree_exponent
    xmin = (a - 2) / (a - 1)
    x = xmin * (1.0 - rng.random()) ** (-1.0 / (a - 1))
    return int(min(cfg.max_out_degree, max(1, round(cfg.links_per_page * x))))


def _choose_targets(rng, growth: _Growth, out_links, src: int, topic: int, degree: int, triad_prob: float,
                    exclude: Iterable[int] = ()) -> list[int]:
    chosen: list[int] = []
    taken = set(exclude)
    taken.add(src)
    attempts = 0
    while len(chosen) < degree and attempts < 20 * degree + 20:
        attempts += 1
        cand = None
        if chosen and rng.random() < triad_prob:
            anchor = chosen[int(rng.integers(len(chosen)))]
            nbrs = out_links[anchor]
            if nbrs:
                cand = nbrs[int(rng.integers(len(nbrs)))]
        if cand is None:
            cand = growth.pick(topic)
        if cand in taken:
            continue
        taken.add(cand)
        chosen.append(cand)
    return chosen


def generate_environment(config: EnvConfig) -> Environment:
    cfg = config.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    centroids = cfg.centroid_scale * rng.standard_normal((cfg.num_topics, cfg.k))
    # with a front-page topic, topic 0 is reserved for hub pages
    first_topic = 1 if cfg.front_page_topic and cfg.num_topics > 1 else 0

    n0 = cfg.initial_pages
    growth = _Growth(rng, cfg.pref_attach_offset, cfg.num_topics, cfg.topic_locality)
    out_links: list[list[int]] = []
    topics: list[int] = []
    indeg = [0] * n0
    for i in range(n0):
        topic = int(rng.integers(first_topic, cfg.num_topics))
        targets: list[int] = []
        if i > 0:
            degree = min(_draw_out_degree(rng, cfg), i)
            targets = _choose_targets(rng, growth, out_links, i, topic, degree, cfg.triad_prob)
        topics.append(topic)
        out_links.append(targets)
        growth.add_node(i, topic)
        for w in targets:
            growth.add_head(w)
            indeg[w] += 1

    hubs = sorted(range(n0), key=lambda u: (-indeg[u], u))[: cfg.hub_count]
    hub_set = set(hubs)
    # hubs keep their drawn topic as the section topic of what they announce
    look = {h: (0 if first_topic else topics[h]) for h in hubs}
    base_links = {h: list(out_links[h]) for h in hubs}
    announced: dict[int, list[int]] = {h: [] for h in hubs}

    for u in range(n0):
        if u in hub_set:
            continue
        h = hubs[int(rng.integers(len(hubs)))]
        prev = announced[h][-1] if announced[h] else None
        if prev is not None and prev not in out_links[u]:
            out_links[u].append(prev)
        announced[h].append(u)

    def hub_links(h: int) -> tuple[int, ...]:
        window = announced[h][-cfg.hub_window:]
        links = list(base_links[h])
        seen = set(links)
        for u in reversed(window):
            if u not in seen and u != h:
                links.append(u)
                seen.add(u)
        return tuple(links)

    events: list[EnvEvent] = []
    next_vid = 0
    for u in range(n0):
        links = hub_links(u) if u in hub_set else tuple(out_links[u])
        v = PageVersion(next_vid, u, 0.0, _state_vector(rng, centroids[look.get(u, topics[u])], cfg.topic_noise),
                        links)
        events.append(EnvEvent(0.0, EventKind.NEW_URL, v))
        next_vid += 1
    for h in hubs:
        out_links[h] = list(hub_links(h))

    # timeline of arrivals and hub refreshes, merged by time
    timeline: list[tuple[float, int, int]] = []  # (time, order, hub or -1 for arrival)
    n_arrivals = 0
    if cfg.arrival_rate > 0 and cfg.duration > 0:
        if cfg.arrival_mode == "deterministic":
            n_arrivals = int(round(cfg.arrival_rate * cfg.duration / HOUR))
            gap = HOUR / cfg.arrival_rate
            for i in range(n_arrivals):
                timeline.append(((i + 0.5) * gap, 0, -1))
        else:
            t = 0.0
            while True:
                t += rng.exponential(HOUR / cfg.arrival_rate)
                if t >= cfg.duration:
                    break
                timeline.append((t, 0, -1))
    if cfg.hub_update_rate > 0 and cfg.duration > 0:
        for h in hubs:
            if cfg.arrival_mode == "deterministic":
                count = int(round(cfg.hub_update_rate * cfg.duration / HOUR))
                gap = HOUR / cfg.hub_update_rate
                for i in range(count):
                    timeline.append(((i + 0.5) * gap, 1, h))
            else:
                t = 0.0
                while True:
                    t += rng.exponential(HOUR / cfg.hub_update_rate)
                    if t >= cfg.duration:
                        break
                    timeline.append((t, 1, h))
    timeline.sort()

    # share of arrivals announced on each hub: Zipf over a random ranking of hubs
    ranks = rng.permutation(len(hubs))
    share = (ranks + 1.0) ** -cfg.hub_activity_skew
    activity = np.cumsum(share / share.sum())
    activity[-1] = 1.0
    last_hub_time = {h: 0.0 for h in hubs}
    for t, _, who in timeline:
        if who < 0:
            u = len(out_links)
            h = hubs[int(np.searchsorted(activity, rng.random(), side="right"))]
            if rng.random() < cfg.topic_inherit_prob:
                topic = topics[h]
            else:
                topic = int(rng.integers(first_topic, cfg.num_topics))
            prev = announced[h][-1] if announced[h] else h
            degree = min(_draw_out_degree(rng, cfg), u)
            targets = [prev]
            targets += _choose_targets(rng, growth, out_links, u, topic, degree - 1, cfg.triad_prob,
                                       exclude=targets) if degree > 1 else []
            out_links.append(targets)
            topics.append(topic)
            growth.add_node(u, topic)
            for w in targets:
                growth.add_head(w)
            v = PageVersion(next_vid, u, t, _state_vector(rng, centroids[topic], cfg.topic_noise),
                            tuple(targets))
            events.append(EnvEvent(t, EventKind.NEW_URL, v))
            next_vid += 1
            announced[h].append(u)
        else:
            h = who
        if t <= last_hub_time[h]:
            # keep per-url creation times strictly increasing
            t = math.nextafter(last_hub_time[h], math.inf)
        links = hub_links(h)
        for w in links:
            if w not in out_links[h]:
                growth.add_head(w)
        out_links[h] = list(links)
        v = PageVersion(next_vid, h, t, _state_vector(rng, centroids[look[h]], cfg.topic_noise), links)
        events.append(EnvEvent(t, EventKind.CONTENT_CHANGE, v))
        next_vid += 1
        last_hub_time[h] = t

    events.sort(key=lambda e: (e.time, e.version.version_id))
    return Environment(cfg, events, centroids, hubs)


# ---------------------------------------------------------------------------
# trace files

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def save_trace(env: Environment, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        header = {"type": "header", "config": env.config.to_dict(), "hubs": list(env.hubs),
                  "topic_centroids": env.topic_centroids.tolist()}
        fh.write(_dumps(header) + "\n")
        for ev in env.events:
            v = ev.version
            fh.write(_dumps({"t": ev.time, "kind": ev.kind.value, "url_id": v.url,
                             "version_id": v.version_id, "state": list(v.state),
                             "links": list(v.links)}) + "\n")


def load_trace(path) -> Environment:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceParseError(1, "empty trace")
    try:
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise ValueError("first record must be the header")
        config = EnvConfig.from_dict(header["config"])
        centroids = np.array(header.get("topic_centroids", []), dtype=float)
        hubs = [int(h) for h in header.get("hubs", [])]
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise TraceParseError(1, f"bad header: {exc}") from exc

    events: list[EnvEvent] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            kind = EventKind(rec["kind"])
            state = tuple(float(x) for x in rec["state"])
            links = tuple(int(x) for x in rec["links"])
            v = PageVersion(int(rec["version_id"]), int(rec["url_id"]), float(rec["t"]), state, links)
            if len(state) != config.k:
                raise ValueError(f"state has {len(state)} components, expected {config.k}")
        except (ValueError, KeyError, TypeError) as exc:
            raise TraceParseError(lineno, str(exc)) from exc
        events.append(EnvEvent(v.created_at, kind, v))
    validate_events(events, config)
    return Environment(config, events, centroids, hubs)


def validate_events(events: Sequence[EnvEvent], config: EnvConfig) -> None:
    created: dict[int, float] = {}
    last: dict[int, float] = {}
    prev_time = -math.inf
    for i, ev in enumerate(events):
        v = ev.version
        if ev.time < prev_time:
            raise TraceValidationError(f"event {i}: events not sorted by time")
        prev_time = ev.time
        if v.version_id != i:
            raise TraceValidationError(f"event {i}: version_id {v.version_id} out of sequence")
        if ev.kind is EventKind.NEW_URL:
            if v.url != len(created):
                raise TraceValidationError(f"event {i}: NewUrl must introduce url {len(created)}, got {v.url}")
            created[v.url] = v.created_at
        else:
            if v.url not in created:
                raise TraceValidationError(f"event {i}: ContentChange for unknown url {v.url}")
            if v.created_at <= last[v.url]:
                raise TraceValidationError(f"event {i}: version times of url {v.url} not increasing")
        last[v.url] = v.created_at
        if any(not -1.0 <= x <= 1.0 for x in v.state):
            raise TraceValidationError(f"event {i}: state component outside [-1, 1]")
        if len(set(v.links)) != len(v.links):
            raise TraceValidationError(f"event {i}: duplicate links")
    for i, ev in enumerate(events):
        for w in ev.version.links:
            if w not in created or created[w] > ev.time:
                raise TraceValidationError(f"event {i}: link to url {w} that does not exist yet")


def rewire_environment(env: Environment, rng_seed: int) -> Environment:
    """Degree-preserving null model of a dynamic environment.

    The static links (links present in every version of a page, i.e. all links
    except a hub's rotating list of recent arrivals) are re-paired at random:
    endpoints are shuffled and matched to random origin slots, subject to no
    self-links, no duplicate targets, and no link to a page created after its
    origin.  The rotating hub links are kept, so new pages stay discoverable.
    The union link graph keeps its in- and out-degree sequences exactly.
    """
    rng = np.random.default_rng(rng_seed)
    created = [env.created_at(u) for u in range(env.num_urls)]

    # static links: present in every version and never pointing forward in time
    static: dict[int, list[int]] = {}
    dynamic: dict[int, set[int]] = {}
    for u, versions in enumerate(env.url_table):
        always = set.intersection(*(set(v.links) for v in versions))
        static[u] = [w for w in versions[0].links if w in always and created[w] <= created[u]]
        dynamic[u] = {w for v in versions for w in v.links} - set(static[u])

    def ok(u, w, own):
        return w != u and w not in own and w not in dynamic[u]

    # origin slots oldest first; targets newest first so every target's eligible
    # slots (origins no older than it) form a growing suffix of the slot list
    slots = sorted(((created[u], u) for u in static for _ in static[u]), key=lambda x: x[0])
    slot_origin = [u for _, u in slots]
    slot_time = [t for t, _ in slots]
    targets = [w for u in static for w in static[u]]
    targets = [targets[i] for i in rng.permutation(len(targets))]
    targets.sort(key=lambda w: -created[w])

    out: dict[int, list[int]] = {u: [] for u in range(env.num_urls)}
    assigned: list[tuple[int, int]] = []  # (origin, index in out[origin])
    free: list[int] = []
    boundary = len(slots)
    for w in targets:
        while boundary > 0 and slot_time[boundary - 1] >= created[w]:
            boundary -= 1
            free.append(slot_origin[boundary])
        for _ in range(50):
            j = int(rng.integers(len(free)))
            u = free[j]
            if ok(u, w, out[u]):
                break
        else:
            u = None
            for j in rng.permutation(len(free)):
                if ok(free[j], w, out[free[j]]):
                    u = free[j]
                    break
        if u is not None:
            free[j] = free[-1]
            free.pop()
            out[u].append(w)
            assigned.append((u, len(out[u]) - 1))
            continue
        # every free slot conflicts: hand one of them an assigned target instead
        j = int(rng.integers(len(free)))
        u = free[j]
        for _ in range(100 * len(assigned) + 100):
            u2, i2 = assigned[int(rng.integers(len(assigned)))]
            w2 = out[u2][i2]
            if (u2 != u and created[w2] <= created[u] and created[w] <= created[u2]
                    and ok(u, w2, out[u]) and ok(u2, w, out[u2][:i2] + out[u2][i2 + 1:])):
                break
        else:
            raise TraceValidationError("rewiring could not resolve link conflicts")
        out[u2][i2] = w
        free[j] = free[-1]
        free.pop()
        out[u].append(w2)
        assigned.append((u, len(out[u]) - 1))

    events = []
    for ev in env.events:
        v = ev.version
        links = tuple(out[v.url]) + tuple(w for w in v.links if w in dynamic[v.url])
        events.append(EnvEvent(ev.time, ev.kind, dataclasses.replace(v, links=links)))
    return Environment(env.config, events, env.topic_centroids, env.hubs)
