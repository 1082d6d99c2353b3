import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crawlsim.env import EnvConfig, EnvEvent, Environment, EventKind, PageVersion
from crawlsim.errors import EmptyFrontier, ForagerStuck, NumericError
from crawlsim.forager import (
    ALPHA,
    BETA,
    GAMMA,
    MAX_STEP,
    ForagerParams,
    PageStore,
    PathRecord,
    Weblog,
    WeblogEntry,
    document_relevancy,
    forager_step,
    multiplication,
    new_forager,
    random_weights,
    store_page_info,
    td_error,
    url_ordering,
    url_ordering_update,
    url_selection,
    weblog_update,
)

DAY = 86400.0


def page(vid, url, t=0.0, state=(0.0,), links=()):
    return PageVersion(vid, url, t, tuple(state), tuple(links))


def reference_weblog_update(entries, steps, rewards, beta, capacity):
    """Independent merge: dict of values, then sort by (-value, insertion rank)."""
    cum = {}
    running = 0.0
    for url, r in reversed(list(zip(steps, rewards))):
        running += r
        cum[url] = running  # later overwrite keeps the earliest occurrence
    rank = {u: i for i, (u, _) in enumerate(entries)}
    values = dict(entries)
    for url in steps:
        if url in rank:
            continue
        rank[url] = len(rank)
    for url, c in cum.items():
        values[url] = (1 - beta) * values[url] + beta * c if url in dict(entries) else c
    order = sorted(values, key=lambda u: (-values[u], rank[u]))
    return [(u, values[u]) for u in order[:capacity]]


# -- weblog ------------------------------------------------------------------------

def test_weblog_update_from_empty():
    wl = weblog_update(Weblog(), PathRecord(["A", "B", "C"], [1, 0, 2]))
    assert [(e.url, e.value) for e in wl.entries] == [("A", 3.0), ("B", 2.0), ("C", 2.0)]


def test_weblog_update_smooths_known_url():
    wl = weblog_update(Weblog([WeblogEntry("A", 10.0)]), PathRecord(["A"], [0.0]))
    assert wl.entries[0].value == pytest.approx(7.0)


def test_weblog_update_first_occurrence_of_repeated_url():
    wl = weblog_update(Weblog(), PathRecord(["A", "B", "A"], [1, 2, 4]))
    assert wl.as_dict() == {"A": 7.0, "B": 6.0}


def test_weblog_update_evicts_lowest_at_capacity():
    entries = [WeblogEntry(i, float(200 - i)) for i in range(100)]
    path = PathRecord([1000 + j for j in range(5)], [0, 0, 0, 0, 150.0])
    wl = weblog_update(Weblog(entries), path)
    assert len(wl) == 100
    assert set(wl.urls()) == set(range(95)) | {1000, 1001, 1002, 1003, 1004}
    assert wl.start_list() == list(range(10))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 40), st.floats(-50, 300, allow_nan=False)), max_size=30,
             unique_by=lambda e: e[0]),
    st.lists(st.tuples(st.integers(0, 60), st.sampled_from([100.0, -1.0, 0.0, 99.0])), min_size=1, max_size=40),
    st.integers(1, 30),
)
def test_weblog_update_matches_reference(entries, path, capacity):
    entries = sorted(entries, key=lambda e: -e[1])[:capacity]
    steps = [u for u, _ in path]
    rewards = [r for _, r in path]
    wl = weblog_update(Weblog([WeblogEntry(u, v) for u, v in entries], capacity, 10), PathRecord(steps, rewards))
    expected = reference_weblog_update(entries, steps, rewards, BETA, capacity)
    assert [e.url for e in wl.entries] == [u for u, _ in expected]
    assert [e.value for e in wl.entries] == pytest.approx([v for _, v in expected])
    values = [e.value for e in wl.entries]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert len(set(wl.urls())) == len(wl) <= capacity
    assert wl.start_list() == wl.urls()[:10]


# -- page store and ordering -----------------------------------------------------

def test_store_newest_version_wins():
    store = store_page_info([page(0, 5, state=(0.1, 0.2))], PageStore(2))
    assert store.get(5).tolist() == [0.1, 0.2]
    store_page_info([page(1, 5, state=(0.3, -0.4))], store)
    assert store.get(5).tolist() == [0.3, -0.4]
    assert len(store) == 1


def test_store_many_pages_match_source():
    rng = np.random.default_rng(0)
    pages = [page(i, i, state=rng.uniform(-1, 1, 7)) for i in range(100)]
    store = store_page_info(pages, PageStore(7))
    for p in pages:
        assert store.get(p.url).tolist() == list(p.state)


def test_ordering_tie_goes_to_lowest_id():
    store = store_page_info([page(i, u, state=(0.3, 0.2)) for i, u in enumerate((9, 4, 7))], PageStore(2))
    assert url_ordering({9, 4, 7}, store, np.zeros(2)) == 4


def test_ordering_unit_vector():
    store = store_page_info([page(0, 1, state=(1, 0)), page(1, 2, state=(-1, 0))], PageStore(2))
    assert url_ordering({1, 2}, store, np.array([1.0, 0.0])) == 1


def test_ordering_empty_frontier():
    with pytest.raises(EmptyFrontier):
        url_ordering(set(), PageStore(2), np.zeros(2))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.floats(0.01, 100))
def test_ordering_is_brute_force_argmax_and_scale_free(seed, n, scale):
    rng = np.random.default_rng(seed)
    k = 5
    urls = rng.choice(1000, size=n, replace=False).tolist()
    states = {u: rng.uniform(-1, 1, k) for u in urls}
    w = rng.uniform(-1, 1, k)
    store = store_page_info([page(i, u, state=s) for i, (u, s) in enumerate(states.items())], PageStore(k))
    best = url_ordering(set(urls), store, w)
    top = max(float(states[u] @ w) for u in urls)
    assert best in urls
    assert best == min(u for u in urls if float(states[u] @ w) == top)
    scaled = store_page_info([page(i, u, state=s * scale) for i, (u, s) in enumerate(states.items())],
                             PageStore(k))
    assert url_ordering(set(urls), scaled, w) == best


# -- TD -----------------------------------------------------------------------------

def test_td_from_zero_weights():
    w = url_ordering_update(np.zeros(3), [1, 0, 0], [0.2, 0.5, -0.1], 100.0)
    assert w.tolist() == [10.0, 0.0, 0.0]


def test_td_no_change_when_no_error():
    w = url_ordering_update(np.zeros(3), [1, 0, 0], [0, 1, 0], 0.0)
    assert w.tolist() == [0.0, 0.0, 0.0]


def test_td_rejects_non_finite():
    with pytest.raises(NumericError):
        url_ordering_update(np.zeros(2), [np.nan, 0], [0, 0], 1.0)
    with pytest.raises(NumericError):
        url_ordering_update(np.zeros(2), [0, 0], [0, 0], float("inf"))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-100, 100))
def test_td_step_is_alpha_delta_state(seed, r):
    rng = np.random.default_rng(seed)
    w, s, s2 = rng.uniform(-1, 1, (3, 6))
    delta = r + GAMMA * sum(a * b for a, b in zip(w, s2)) - sum(a * b for a, b in zip(w, s))
    new = url_ordering_update(w, s, s2, r)
    assert new - w == pytest.approx(ALPHA * delta * s, abs=1e-9)


def two_cycle_fixed_point(a, b, r, gamma):
    """Solve v = X w with v(a) = r + g v(b) and v(b) = r + g v(a) on two orthogonal one-hot states."""
    m = np.array([[1.0, -gamma], [-gamma, 1.0]])
    return np.linalg.solve(m, [r, r])


def test_td_converges_on_two_cycle():
    s = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    r = 5.0
    w = np.zeros(2)
    delta = None
    for i in range(10_000):
        a, b = s[i % 2], s[(i + 1) % 2]
        delta = td_error(w, a, b, r)
        w = url_ordering_update(w, a, b, r)
        if abs(delta) < 1e-6:
            break
    assert abs(delta) < 1e-6
    assert w == pytest.approx(two_cycle_fixed_point(0, 1, r, GAMMA), abs=1e-5)
    assert w[0] == pytest.approx(r / (1 - GAMMA), abs=1e-5)


# -- relevancy and selection --------------------------------------------------------

def fresh_state(weblog_urls=(0,), weights=(1.0, 0.0), **kw):
    return new_forager(0, np.array(weights), Weblog.from_seeds(weblog_urls, start_size=kw.pop("start_size", 10)),
                       use_weblog_update=kw.pop("wl", True), use_rl_update=kw.pop("rl", False), **kw)


def test_relevancy_age_and_repeat():
    st_ = fresh_state()
    now = 30 * 3600.0
    old = page(0, 0, t=now - 25 * 3600)
    young = page(1, 1, t=now - 3600)
    edge = page(2, 2, t=now - DAY)
    assert document_relevancy([old, young, edge], st_, now) == [young, edge]
    assert document_relevancy([young], st_, now) == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.floats(0, 3 * DAY)), min_size=10, max_size=10),
       st.sets(st.integers(0, 30)))
def test_relevancy_matches_filter(batch, seen):
    now = 3 * DAY
    pages = [page(v, v, t=t) for v, t in batch]
    st_ = fresh_state()
    st_.seen_relevant = set(seen)
    expected = []
    taken = set(seen)
    for p in pages:
        if now - p.created_at <= DAY and p.version_id not in taken:
            expected.append(p)
            taken.add(p.version_id)
    assert document_relevancy(pages, st_, now) == expected
    assert st_.seen_relevant == taken


def test_selection_restart_at_boundary():
    st_ = fresh_state(weblog_urls=range(20))
    st_.path_step = MAX_STEP + 1
    st_.frontier = {500}
    st_.visited = {600}
    st_.path = PathRecord([3, 4], [0.0, 100.0])
    url = url_selection(st_, np.random.default_rng(0))
    assert url in st_.weblog.start_list()
    assert st_.path_step == 1 and not st_.frontier and not st_.visited
    assert st_.weblog.as_dict()[4] == 30.0  # 0.7 * 0 + 0.3 * 100


def test_selection_mid_path():
    st_ = fresh_state()
    st_.path_step = 5
    st_.frontier = {3, 8}
    store_page_info([page(0, 3, state=(0.1, 0)), page(1, 8, state=(0.9, 0))], st_.store)
    assert url_selection(st_, np.random.default_rng(0)) == 8
    assert st_.path_step == 6


def test_selection_restarts_every_max_step_plus_one():
    st_ = fresh_state()
    st_.store.put(7, (0.0, 0.0))
    rng = np.random.default_rng(1)
    restarts = []
    for i in range(1, 251):
        url_selection(st_, rng)
        if st_.path_step == 1:
            restarts.append(i)
        st_.frontier = {7}
    assert restarts == [1, 102, 203]


def test_selection_stuck_when_nothing_left():
    st_ = new_forager(0, np.zeros(2), Weblog(), use_weblog_update=True, use_rl_update=False)
    with pytest.raises(ForagerStuck):
        url_selection(st_, np.random.default_rng(0))


# -- one step in a hand-built micro environment ------------------------------------

def micro_env():
    """url0 -> {1, 2}; url1 -> {3}; url2 gains a link to the fresh url4 at t=90000."""
    versions = [
        (0.0, EventKind.NEW_URL, 0, (1.0, 0.0), (1, 2)),
        (0.0, EventKind.NEW_URL, 1, (0.5, 0.0), (3,)),
        (0.0, EventKind.NEW_URL, 2, (-0.5, 0.0), ()),
        (0.0, EventKind.NEW_URL, 3, (0.0, 1.0), ()),
        (90000.0, EventKind.NEW_URL, 4, (0.0, -1.0), ()),
        (90000.0, EventKind.CONTENT_CHANGE, 2, (-0.5, 0.0), (4,)),
    ]
    events = [EnvEvent(t, kind, PageVersion(i, u, t, s, links)) for i, (t, kind, u, s, links) in enumerate(versions)]
    cfg = EnvConfig(k=2, num_topics=1, initial_pages=4, hub_count=1, arrival_rate=0, hub_update_rate=0)
    return Environment(cfg, events, np.zeros((1, 2)), [0])


def test_micro_environment_hand_simulation():
    env = micro_env()
    st_ = fresh_state(weblog_urls=(0,), start_size=1, rl=True)
    received = []

    def channel(docs):
        received.append([d.version_id for d in docs])
        return [100.0] * len(docs)

    rng = np.random.default_rng(0)
    now = 100000.0
    trail = []
    for _ in range(6):
        out = forager_step(st_, env, now, channel, rng)
        trail.append((out.step_url, out.restarted, [v.version_id for v, _ in out.sent], out.downloads,
                      sorted(st_.frontier)))
        assert not st_.frontier & st_.visited
        now += out.time_consumed
    assert trail == [
        (0, True, [5], 3, [1, 2]),
        (1, False, [], 2, [2, 3]),
        (3, False, [], 1, [2]),
        (2, False, [4], 2, [4]),
        (4, False, [], 1, []),
        (1, True, [], 2, [3]),
    ]
    assert received == [[5], [4]]
    # one TD step after the second fetch: delta = 0 + 0.9 * 0.5 - 1
    assert st_.weblog.as_dict() == {1: 100.0, 3: 100.0, 2: 100.0, 0: 60.0, 4: 0.0}
    assert st_.weblog.urls() == [1, 3, 2, 0, 4]


def test_step_zero_links_and_nothing_fresh():
    env = micro_env()
    st_ = fresh_state(weblog_urls=(3,))
    sent = []
    out = forager_step(st_, env, 100000.0, lambda docs: sent.append(docs) or [], np.random.default_rng(0))
    assert out.downloads == 1 and out.time_consumed == 1.0
    assert out.sent == [] and sent == []


def test_td_update_in_step():
    env = micro_env()
    st_ = fresh_state(weblog_urls=(0,), rl=True)
    rng = np.random.default_rng(0)
    forager_step(st_, env, 100000.0, lambda d: [100.0] * len(d), rng)
    forager_step(st_, env, 100003.0, lambda d: [100.0] * len(d), rng)
    assert st_.weights.tolist() == pytest.approx([1.0 + ALPHA * (0.9 * 0.5 - 1.0), 0.0])


# -- multiplication ------------------------------------------------------------------

def full_weblog(n=100):
    return Weblog([WeblogEntry(i, float(n - i)) for i in range(n)])


def test_multiplication_splits_weblog():
    parent = new_forager(0, np.ones(4), full_weblog(), use_weblog_update=True, use_rl_update=False)
    before = parent.weblog.urls()
    parent, child = multiplication(parent, np.random.default_rng(3), 1)
    assert len(parent.weblog) == len(child.weblog) == 50
    assert set(parent.weblog.urls()) | set(child.weblog.urls()) == set(before)
    assert not set(parent.weblog.urls()) & set(child.weblog.urls())
    for wl in (parent.weblog, child.weblog):
        vals = [e.value for e in wl.entries]
        assert vals == sorted(vals, reverse=True)
    assert child.path_step == MAX_STEP + 1 and not child.frontier and not child.seen_relevant


def test_multiplication_odd_sizes():
    parent = new_forager(0, np.ones(4), full_weblog(7), use_weblog_update=True, use_rl_update=False)
    parent, child = multiplication(parent, np.random.default_rng(0), 1)
    assert (len(parent.weblog), len(child.weblog)) == (4, 3)


def test_multiplication_rl_copies_weights():
    parent = new_forager(0, np.array([0.1, -0.2, 0.3]), full_weblog(), use_weblog_update=True, use_rl_update=True)
    _, child = multiplication(parent, np.random.default_rng(0), 1)
    assert child.weights.tolist() == [0.1, -0.2, 0.3]
    assert child.weights is not parent.weights


def test_multiplication_wl_draws_reproducible_weights():
    def split(seed):
        parent = new_forager(0, np.zeros(5), full_weblog(), use_weblog_update=True, use_rl_update=False)
        return multiplication(parent, np.random.default_rng(seed), 1)[1]

    a, b = split(11), split(11)
    assert a.weights.tolist() == b.weights.tolist()
    assert not np.array_equal(a.weights, np.zeros(5))
    assert np.all(np.abs(a.weights) <= 1)


def test_multiplication_rl_only_child_copies_fixed_list():
    parent = new_forager(0, np.ones(3), full_weblog(10), use_weblog_update=False, use_rl_update=True)
    parent, child = multiplication(parent, np.random.default_rng(0), 1)
    assert child.weblog.urls() == parent.weblog.urls() == list(range(10))


def test_random_weights_range():
    w = random_weights(np.random.default_rng(0), 1000)
    assert w.shape == (1000,) and w.min() >= -1 and w.max() <= 1


def test_params_defaults():
    p = ForagerParams()
    assert (p.beta, p.gamma, p.alpha, p.weblog_size, p.start_size, p.max_step) == (0.3, 0.9, 0.1, 100, 10, 100)
