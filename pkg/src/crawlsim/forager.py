"""A single crawler: weblog selection of starting URLs, TD-tuned URL ordering,
relevancy filtering, path bookkeeping and multiplication."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from crawlsim.env import Environment, PageVersion
from crawlsim.errors import EmptyFrontier, ForagerStuck, NumericError

WEBLOG_SIZE = 100
START_SIZE = 10
MAX_STEP = 100
BETA = 0.3  # weblog smoothing
GAMMA = 0.9  # TD discount
ALPHA = 0.1  # TD learning rate


@dataclass(frozen=True)
class ForagerParams:
    beta: float = BETA
    gamma: float = GAMMA
    alpha: float = ALPHA
    weblog_size: int = WEBLOG_SIZE
    start_size: int = START_SIZE
    max_step: int = MAX_STEP


@dataclass(frozen=True)
class WeblogEntry:
    url: int
    value: float


@dataclass
class Weblog:
    entries: list[WeblogEntry] = field(default_factory=list)
    capacity: int = WEBLOG_SIZE
    start_size: int = START_SIZE

    @classmethod
    def from_seeds(cls, urls: Iterable[int], capacity: int = WEBLOG_SIZE, start_size: int = START_SIZE) -> "Weblog":
        seen = dict.fromkeys(urls)
        return cls([WeblogEntry(u, 0.0) for u in seen][:capacity], capacity, start_size)

    def start_list(self) -> list[int]:
        return [e.url for e in self.entries[: self.start_size]]

    def urls(self) -> list[int]:
        return [e.url for e in self.entries]

    def as_dict(self) -> dict[int, float]:
        return {e.url: e.value for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class PathRecord:
    steps: list[int] = field(default_factory=list)
    step_rewards: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


def weblog_update(weblog: Weblog, path: PathRecord, beta: float = BETA) -> Weblog:
    """Move weblog values toward the reward collected in the rest of the path.

    A URL visited more than once in the path is credited with the remainder
    sum from its first visit.  New URLs enter with that remainder sum; known
    ones are smoothed by ``beta``.  The result is sorted by value (stable, so
    existing entries keep precedence on ties, then path order), truncated to
    capacity.
    """
    if len(path.steps) != len(path.step_rewards):
        raise ValueError("path steps and rewards differ in length")
    cum = 0.0
    remainder = [0.0] * len(path.steps)
    for i in range(len(path.steps) - 1, -1, -1):
        cum += path.step_rewards[i]
        remainder[i] = cum
    first: dict[int, float] = {}
    for url, value in zip(path.steps, remainder):
        first.setdefault(url, value)

    values = weblog.as_dict()
    for url, value in first.items():
        if url in values:
            values[url] = (1 - beta) * values[url] + beta * value
        else:
            values[url] = value
    ranked = sorted(values.items(), key=lambda kv: -kv[1])
    entries = [WeblogEntry(u, v) for u, v in ranked[: weblog.capacity]]
    return Weblog(entries, weblog.capacity, weblog.start_size)


class PageStore:
    """Latest known state vector per URL, kept as rows of one matrix."""

    def __init__(self, k: int):
        self.k = k
        self._rows: dict[int, int] = {}
        self._data = np.zeros((64, k))

    def put(self, url: int, state: Sequence[float]) -> None:
        row = self._rows.get(url)
        if row is None:
            row = len(self._rows)
            if row == self._data.shape[0]:
                self._data = np.vstack([self._data, np.zeros_like(self._data)])
            self._rows[url] = row
        self._data[row] = state

    def get(self, url: int) -> np.ndarray:
        return self._data[self._rows[url]]

    def matrix(self, urls: Sequence[int]) -> np.ndarray:
        return self._data[[self._rows[u] for u in urls]]

    def __contains__(self, url: int) -> bool:
        return url in self._rows

    def __len__(self) -> int:
        return len(self._rows)


def store_page_info(pages: Iterable[PageVersion], store: PageStore) -> PageStore:
    for page in pages:
        store.put(page.url, page.state)
    return store


def value(weights: np.ndarray, state: Sequence[float]) -> float:
    return float(np.dot(weights, state))


def url_ordering(frontier: Iterable[int], store: PageStore, weights: np.ndarray) -> int:
    """URL with the highest estimated long-term profit; ties go to the lowest id."""
    urls = sorted(frontier)
    if not urls:
        raise EmptyFrontier("frontier is empty")
    values = store.matrix(urls) @ weights
    return urls[int(np.argmax(values))]


def url_ordering_update(weights: np.ndarray, state_n: Sequence[float], state_next: Sequence[float],
                        r: float, alpha: float = ALPHA, gamma: float = GAMMA) -> np.ndarray:
    """One TD(0) step for the linear value estimate; returns new weights."""
    w = np.asarray(weights, dtype=float)
    s_n = np.asarray(state_n, dtype=float)
    s_next = np.asarray(state_next, dtype=float)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(s_n)) and np.all(np.isfinite(s_next))
            and math.isfinite(r)):
        raise NumericError("non-finite input to TD update")
    delta = td_error(w, s_n, s_next, r, gamma)
    return w + alpha * delta * s_n


def td_error(weights, state_n, state_next, r: float, gamma: float = GAMMA) -> float:
    return r + gamma * value(weights, state_next) - value(weights, state_n)


@dataclass
class ForagerState:
    id: int
    weights: np.ndarray
    weblog: Weblog
    store: PageStore
    use_weblog_update: bool = True
    use_rl_update: bool = False
    frontier: set[int] = field(default_factory=set)
    visited: set[int] = field(default_factory=set)
    seen_relevant: set[int] = field(default_factory=set)
    path_step: int = MAX_STEP + 1
    path: PathRecord = field(default_factory=PathRecord)
    pending: list[PageVersion] = field(default_factory=list)
    prev_state: np.ndarray | None = None
    params: ForagerParams = field(default_factory=ForagerParams)


def new_forager(forager_id: int, weights: np.ndarray, weblog: Weblog, *, use_weblog_update: bool,
                use_rl_update: bool, params: ForagerParams = ForagerParams()) -> ForagerState:
    """Fresh forager positioned to start a new path on its first selection."""
    return ForagerState(
        id=forager_id,
        weights=np.array(weights, dtype=float),
        weblog=weblog,
        store=PageStore(len(weights)),
        use_weblog_update=use_weblog_update,
        use_rl_update=use_rl_update,
        path_step=params.max_step + 1,
        params=params,
    )


def random_weights(rng: np.random.Generator, k: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=k)


def document_relevancy(pages: Iterable[PageVersion], state: ForagerState, now: float,
                       horizon: float = 86400.0) -> list[PageVersion]:
    """Pages at most ``horizon`` seconds old that this forager has not selected before."""
    selected = []
    for page in pages:
        if now - page.created_at <= horizon and page.version_id not in state.seen_relevant:
            state.seen_relevant.add(page.version_id)
            selected.append(page)
    return selected


def url_selection(state: ForagerState, rng: np.random.Generator) -> int:
    """Next step of the current path, or the first step of a new one.

    A new path starts when the step budget is used up or the frontier ran
    dry; the finished path then feeds the weblog (if this forager updates
    it) and the start URL is drawn uniformly from the starting list.
    """
    p = state.params
    if state.path_step <= p.max_step and state.frontier:
        step = url_ordering(state.frontier, state.store, state.weights)
        state.path_step += 1
        return step
    if state.use_weblog_update and state.path.steps:
        state.weblog = weblog_update(state.weblog, state.path, p.beta)
    start = state.weblog.start_list()
    if not start:
        if state.frontier:
            step = url_ordering(state.frontier, state.store, state.weights)
            state.path_step += 1
            return step
        raise ForagerStuck(f"forager {state.id} has no frontier and an empty weblog")
    step = start[int(rng.integers(len(start)))]
    state.frontier.clear()
    state.visited.clear()
    state.path = PathRecord()
    state.prev_state = None
    state.path_step = 1
    return step


@dataclass
class StepOutcome:
    step_url: int
    restarted: bool
    sent: list[tuple[PageVersion, float]]
    downloads: int
    time_consumed: float
    discovered: list[int]


# takes the documents a forager sends and returns one reinforcement per document
RAChannel = Callable[[Sequence[PageVersion]], Sequence[float]]


def forager_step(state: ForagerState, env: Environment, now: float, ra_channel: RAChannel,
                 rng: np.random.Generator) -> StepOutcome:
    step = url_selection(state, rng)
    restarted = state.path_step == 1

    discovered = [] if step in state.frontier or step in state.visited else [step]
    state.frontier.discard(step)
    state.visited.add(step)
    state.path.steps.append(step)
    state.path.step_rewards.append(0.0)

    page = env.fetch_page(step, now)
    # a self-link is not a second download
    linked = [env.fetch_page(w, now) for w in page.links if w != step]
    new_pages = [lp for lp in linked if lp.url not in state.visited]
    for lp in new_pages:
        if lp.url not in state.frontier:
            discovered.append(lp.url)
            state.frontier.add(lp.url)
    store_page_info(new_pages, state.store)

    relevant = document_relevancy([page, *linked], state, now, env.config.relevance_horizon)
    state.pending.extend(relevant)
    reinforcements = list(ra_channel(state.pending)) if state.pending else []
    sent = list(zip(state.pending, reinforcements))
    state.pending = []
    r = float(sum(reinforcements))
    state.path.step_rewards[-1] = r

    if state.use_rl_update and state.prev_state is not None:
        state.weights = url_ordering_update(state.weights, state.prev_state, page.state, r,
                                            state.params.alpha, state.params.gamma)
    state.prev_state = np.asarray(page.state, dtype=float)

    downloads = 1 + len(linked)
    return StepOutcome(step, restarted, sent, downloads, downloads * env.config.download_time, discovered)


def multiplication(parent: ForagerState, rng: np.random.Generator, child_id: int) -> tuple[ForagerState, ForagerState]:
    """Split the parent's weblog at random between parent and a new child.

    The child gets ``n // 2`` entries chosen uniformly, the parent keeps the
    rest; both halves keep their descending order.  Foragers that never
    update their weblog hand the child a copy of their fixed list instead,
    as does a parent whose weblog is too short to split.  Child weights copy
    the parent's when it learns by TD, otherwise they are drawn afresh.
    """
    entries = parent.weblog.entries
    n = len(entries)
    if parent.use_weblog_update and n >= 2:
        picked = set(rng.permutation(n)[: n // 2].tolist())
        child_entries = [e for i, e in enumerate(entries) if i in picked]
        parent.weblog = Weblog([e for i, e in enumerate(entries) if i not in picked],
                               parent.weblog.capacity, parent.weblog.start_size)
    else:
        child_entries = list(entries)
    k = len(parent.weights)
    weights = parent.weights.copy() if parent.use_rl_update else random_weights(rng, k)
    child = new_forager(child_id, weights,
                        Weblog(child_entries, parent.weblog.capacity, parent.weblog.start_size),
                        use_weblog_update=parent.use_weblog_update,
                        use_rl_update=parent.use_rl_update, params=parent.params)
    return parent, child
