"""Crawl measurements from an experiment log, with the environment as ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from crawlsim.env import Environment
from crawlsim.errors import ConsistencyError, LogFormatError
from crawlsim.ra import ExperimentLog

WINDOW = 3 * 3600.0

SUMMARY_FIELDS = ("downloaded", "sent", "relevant", "found_urls", "download_efficiency",
                  "sent_efficiency", "relative_found_url", "freshness", "age_hours")


@dataclass(frozen=True)
class Counters:
    downloaded: int = 0
    sent: int = 0
    relevant: int = 0
    found_urls: int = 0


@dataclass(frozen=True)
class Summary:
    downloaded: int
    sent: int
    relevant: int
    found_urls: int
    download_efficiency: float
    sent_efficiency: float
    relative_found_url: float
    freshness: float
    age_hours: float

    def as_row(self) -> list:
        return [getattr(self, f) for f in SUMMARY_FIELDS]


@dataclass(frozen=True)
class WindowRow:
    start: float
    downloaded: int
    sent: int
    relevant: int
    download_efficiency: float
    sent_efficiency: float
    freshness: float
    age_hours: float


@dataclass(frozen=True)
class WindowSeries:
    window_length: float
    windows: list[WindowRow]


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def _reward_value(log: ExperimentLog) -> float:
    return float(log.header.get("reward", 100.0))


def accumulate(log: ExperimentLog) -> Counters:
    if not log.records:
        return Counters()
    reward = _reward_value(log)
    downloaded = sent = relevant = 0
    found: set[int] = set()
    for rec in log:
        kind = rec.get("type")
        try:
            if kind == "step":
                downloaded += int(rec["downloads"])
                found.add(int(rec["url"]))
                found.update(int(u) for u in rec["new"])
            elif kind == "send":
                sent += 1
                if float(rec["r"]) == reward:
                    relevant += 1
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(f"malformed {kind} record: {rec!r}") from exc
    return Counters(downloaded, sent, relevant, len(found))


def found_relevants(log: ExperimentLog) -> list[tuple[int, float]]:
    """(version_id, time found) of every document the RA rewarded."""
    if not log.records:
        return []
    reward = _reward_value(log)
    return [(int(r["vid"]), float(r["t"])) for r in log.of_type("send") if float(r["r"]) == reward]


def freshness_age(found: Iterable[tuple[int, float]], env: Environment, eval_time: float) -> tuple[float, float]:
    """Fraction of found documents still current at ``eval_time`` and their mean age in hours.

    A current document has age 0; an obsolete one is as old as the time since
    its URL last changed.
    """
    total = current = 0
    age = 0.0
    for vid, _ in found:
        if not 0 <= vid < len(env.versions):
            raise ConsistencyError(f"unknown version {vid}")
        url = env.versions[vid].url
        total += 1
        if env.current_version_id(url, eval_time) == vid:
            current += 1
        else:
            age += eval_time - env.last_change_time(url, eval_time)
    if total == 0:
        return 1.0, 0.0
    return current / total, age / total / 3600.0


def _total_time(log: ExperimentLog) -> float:
    return float(log.header["total_time"])


def windowed_series(log: ExperimentLog, env: Environment, window_length: float = WINDOW) -> WindowSeries:
    if not window_length > 0:
        raise ValueError("window_length must be > 0")
    if not log.records:
        return WindowSeries(window_length, [])
    total = _total_time(log)
    n = max(1, math.ceil(total / window_length)) if total > 0 else 0
    downloaded = [0] * n
    sent = [0] * n
    relevant = [0] * n
    reward = _reward_value(log)
    found_by_window: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for rec in log:
        kind = rec.get("type")
        if kind not in ("step", "send"):
            continue
        i = min(int(float(rec["t"]) // window_length), n - 1)
        if kind == "step":
            downloaded[i] += int(rec["downloads"])
        else:
            sent[i] += 1
            if float(rec["r"]) == reward:
                relevant[i] += 1
                found_by_window[i].append((int(rec["vid"]), float(rec["t"])))
    rows = []
    found_so_far: list[tuple[int, float]] = []
    for i in range(n):
        found_so_far.extend(found_by_window[i])
        end = min((i + 1) * window_length, total)
        fresh, age = freshness_age(found_so_far, env, end)
        rows.append(WindowRow(i * window_length, downloaded[i], sent[i], relevant[i],
                              _ratio(relevant[i], downloaded[i]), _ratio(relevant[i], sent[i]), fresh, age))
    return WindowSeries(window_length, rows)


def summarize(log: ExperimentLog, env: Environment, window_length: float = WINDOW) -> Summary:
    c = accumulate(log)
    series = windowed_series(log, env, window_length)
    if series.windows:
        freshness = sum(w.freshness for w in series.windows) / len(series.windows)
        age = sum(w.age_hours for w in series.windows) / len(series.windows)
    else:
        freshness, age = 1.0, 0.0
    return Summary(c.downloaded, c.sent, c.relevant, c.found_urls, _ratio(c.relevant, c.downloaded),
                   _ratio(c.relevant, c.sent), _ratio(c.found_urls, c.downloaded), freshness, age)
