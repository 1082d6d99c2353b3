"""Reinforcing agent: judges submitted documents, keeps forager scores,
multiplies and deletes foragers, and runs the fleet in time slices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterator

import numpy as np

from crawlsim.env import Environment, PageVersion
from crawlsim.errors import ConfigError, ConsistencyError, ForagerStuck, LifecycleError, LogFormatError
from crawlsim.forager import (
    ForagerParams,
    ForagerState,
    Weblog,
    forager_step,
    multiplication,
    new_forager,
    random_weights,
)


class Policy(str, Enum):
    WL = "WL"
    RL = "RL"
    WLRL = "WLRL"

    @property
    def use_weblog_update(self) -> bool:
        return self in (Policy.WL, Policy.WLRL)

    @property
    def use_rl_update(self) -> bool:
        return self in (Policy.RL, Policy.WLRL)

    @classmethod
    def parse(cls, text: str) -> "Policy":
        try:
            return cls(str(text).upper())
        except ValueError:
            raise ConfigError("policy", f"must be one of wl, rl, wlrl, got {text!r}") from None


@dataclass(frozen=True)
class RAConfig:
    reward: float = 100.0
    penalty: float = -1.0
    init_score: float = 100.0
    score_minus: float = 0.05
    score_plus: float = 1.0
    max_score: float = 200.0
    min_score: float = 0.0
    max_forager: int = 16
    min_forager: int = 2
    time_slice: float = 180.0
    total_time: float = 14 * 86400.0

    def validate(self) -> "RAConfig":
        if not isinstance(self.min_forager, int) or self.min_forager < 1:
            raise ConfigError("min_forager", "must be an integer >= 1")
        if not isinstance(self.max_forager, int) or self.max_forager < self.min_forager:
            raise ConfigError("max_forager", "must be an integer >= min_forager")
        if not self.time_slice > 0:
            raise ConfigError("time_slice", "must be > 0")
        if not self.total_time >= 0:
            raise ConfigError("total_time", "must be >= 0")
        if not self.max_score > self.min_score:
            raise ConfigError("max_score", "must exceed min_score")
        if not self.score_minus >= 0:
            raise ConfigError("score_minus", "must be >= 0")
        return self


@dataclass(frozen=True)
class FleetConfig:
    policy: Policy = Policy.WL
    params: ForagerParams = ForagerParams()
    seed_urls: tuple[int, ...] | None = None  # default: the environment's top START_SIZE pages


class Action(str, Enum):
    MULTIPLY = "Multiply"
    DELETE = "Delete"
    NONE = "None"


@dataclass
class RAState:
    relevants: set[int] = field(default_factory=set)
    scores: dict[int, Fraction] = field(default_factory=dict)
    roster: list[int] = field(default_factory=list)
    clock: float = 0.0
    # per-forager counts since the last score reset
    sent_since_reset: dict[int, int] = field(default_factory=dict)
    accepted_since_reset: dict[int, int] = field(default_factory=dict)


def _frac(x: float) -> Fraction:
    # exact decimal value as written, so 0.05 stays 1/20
    return Fraction(str(x))


class ExperimentLog:
    """Append-only record stream of one fleet run.

    Record types: ``header``, ``life`` (init/multiply/delete/reinit), ``step``,
    ``send``, ``slice`` and ``end``.
    """

    def __init__(self, records: list[dict] | None = None):
        self.records: list[dict] = records if records is not None else []

    def append(self, record: dict) -> None:
        self.records.append(record)

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentLog) and self.records == other.records

    @property
    def header(self) -> dict:
        if not self.records or self.records[0].get("type") != "header":
            raise LogFormatError("log has no header record")
        return self.records[0]

    def of_type(self, kind: str) -> list[dict]:
        return [r for r in self.records if r.get("type") == kind]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":"), allow_nan=False) + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> "ExperimentLog":
        records = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"line {lineno}: {exc}") from exc
            if not isinstance(rec, dict) or "type" not in rec:
                raise LogFormatError(f"line {lineno}: record without a type")
            records.append(rec)
        return cls(records)

    @classmethod
    def load(cls, path) -> "ExperimentLog":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


class ReinforcingAgent:
    def __init__(self, env: Environment, config: RAConfig = RAConfig(), fleet: FleetConfig = FleetConfig(),
                 rng_seed: int = 0, *, check_invariants: bool = False):
        self.env = env
        self.config = config.validate()
        self.fleet = fleet
        self.rng = np.random.default_rng(rng_seed)
        self.rng_seed = rng_seed
        self.state = RAState()
        self.foragers: dict[int, ForagerState] = {}
        self.log = ExperimentLog()
        self.check_invariants = check_invariants
        self.rewarded: set[int] = set()
        self._next_id = 0
        self._reward = _frac(config.reward)
        self._penalty = _frac(config.penalty)
        self._init = _frac(config.init_score)
        self._minus = _frac(config.score_minus)
        self._plus = _frac(config.score_plus)
        self._max = _frac(config.max_score)
        self._min = _frac(config.min_score)
        self.seed_urls = list(fleet.seed_urls) if fleet.seed_urls is not None \
            else env.seed_urls(fleet.params.start_size)

    # -- scoring ------------------------------------------------------------

    def _reset_score(self, fid: int) -> None:
        self.state.scores[fid] = self._init
        self.state.sent_since_reset[fid] = 0
        self.state.accepted_since_reset[fid] = 0

    def score(self, fid: int) -> float:
        return float(self.state.scores[fid])

    def manage_received_url(self, version: PageVersion, forager_id: int, now: float) -> float:
        """Judge one submitted document; returns the reinforcement sent back."""
        st = self.state
        if forager_id not in st.scores:
            raise LifecycleError(f"unknown forager {forager_id}")
        st.scores[forager_id] -= self._minus
        st.sent_since_reset[forager_id] += 1
        if version.version_id in st.relevants or now - version.created_at > self.env.config.relevance_horizon:
            reinforcement = self._penalty
        else:
            st.relevants.add(version.version_id)
            st.scores[forager_id] += self._plus
            st.accepted_since_reset[forager_id] += 1
            reinforcement = self._reward
            if self.check_invariants:
                if version.version_id in self.rewarded:
                    raise ConsistencyError(f"version {version.version_id} rewarded twice")
                self.rewarded.add(version.version_id)
        if self.check_invariants:
            self.assert_ledger(forager_id)
        return float(reinforcement)

    def assert_ledger(self, fid: int) -> None:
        st = self.state
        expected = self._init + self._plus * st.accepted_since_reset[fid] - self._minus * st.sent_since_reset[fid]
        if st.scores[fid] != expected:
            raise ConsistencyError(f"score ledger broken for forager {fid}: {st.scores[fid]} != {expected}")

    # -- lifecycle ----------------------------------------------------------

    def _spawn(self, weights, weblog: Weblog) -> ForagerState:
        fid = self._next_id
        self._next_id += 1
        pol = self.fleet.policy
        f = new_forager(fid, weights, weblog, use_weblog_update=pol.use_weblog_update,
                        use_rl_update=pol.use_rl_update, params=self.fleet.params)
        self.foragers[fid] = f
        self._reset_score(fid)
        return f

    def _seed_weblog(self) -> Weblog:
        p = self.fleet.params
        return Weblog.from_seeds(self.seed_urls, p.weblog_size, p.start_size)

    def initialize(self) -> None:
        for _ in range(self.config.min_forager):
            f = self._spawn(random_weights(self.rng, self.env.config.k), self._seed_weblog())
            self.state.roster.append(f.id)
            self.log.append({"type": "life", "t": self.state.clock, "f": f.id, "action": "init"})

    def decide(self, forager_id: int) -> Action:
        score = self.state.scores[forager_id]
        n = len(self.state.roster)
        if score >= self._max and n < self.config.max_forager:
            return Action.MULTIPLY
        if score <= self._min and n > self.config.min_forager:
            return Action.DELETE
        return Action.NONE

    def manage_forager(self, forager_id: int) -> Action:
        """Multiply or delete the forager that just finished its slice."""
        if forager_id not in self.foragers:
            raise LifecycleError(f"unknown forager {forager_id}")
        action = self.decide(forager_id)
        st = self.state
        if action is Action.MULTIPLY:
            parent = self.foragers[forager_id]
            child_id = self._next_id
            self._next_id += 1
            parent, child = multiplication(parent, self.rng, child_id)
            self.foragers[child_id] = child
            st.roster.insert(st.roster.index(forager_id) + 1, child_id)
            self._reset_score(forager_id)
            self._reset_score(child_id)
            self.log.append({"type": "life", "t": st.clock, "f": forager_id, "action": "multiply",
                             "child": child_id})
        elif action is Action.DELETE:
            self._delete(forager_id, "delete")
        return action

    def _delete(self, fid: int, reason: str) -> None:
        st = self.state
        st.roster.remove(fid)
        del self.foragers[fid]
        del st.scores[fid]
        del st.sent_since_reset[fid]
        del st.accepted_since_reset[fid]
        self.log.append({"type": "life", "t": st.clock, "f": fid, "action": reason})

    def _handle_stuck(self, fid: int) -> None:
        if len(self.state.roster) > self.config.min_forager:
            self._delete(fid, "delete_stuck")
        else:
            f = self.foragers[fid]
            fresh = new_forager(fid, f.weights, self._seed_weblog(), use_weblog_update=f.use_weblog_update,
                                use_rl_update=f.use_rl_update, params=f.params)
            fresh.seen_relevant = f.seen_relevant
            self.foragers[fid] = fresh
            self.log.append({"type": "life", "t": self.state.clock, "f": fid, "action": "reinit"})

    def _assert_roster(self) -> None:
        n = len(self.state.roster)
        if not self.config.min_forager <= n <= self.config.max_forager:
            raise ConsistencyError(f"roster size {n} outside bounds")

    # -- scheduling ---------------------------------------------------------

    def run(self) -> ExperimentLog:
        cfg = self.config
        st = self.state
        self.log.append({"type": "header", "policy": self.fleet.policy.value, "seed": self.rng_seed,
                         "total_time": cfg.total_time, "time_slice": cfg.time_slice,
                         "relevance_horizon": self.env.config.relevance_horizon,
                         "reward": cfg.reward, "seed_urls": list(self.seed_urls)})
        reason = "completed"
        if cfg.total_time <= 0:
            self.log.append({"type": "end", "t": st.clock, "reason": reason})
            return self.log
        self.initialize()
        env_end = self.env.config.duration if self.env.config.duration < cfg.total_time else None
        idx = 0
        stuck_run = 0
        while st.clock < cfg.total_time:
            if env_end is not None and st.clock >= env_end:
                reason = "env_exhausted"
                break
            if self.check_invariants:
                self._assert_roster()
            fid = st.roster[idx]
            forager = self.foragers[fid]
            slice_end = st.clock + cfg.time_slice
            stuck = False
            while st.clock < slice_end and st.clock < cfg.total_time:
                now = st.clock
                channel = lambda docs, _f=fid, _t=now: [self.manage_received_url(d, _f, _t) for d in docs]
                try:
                    out = forager_step(forager, self.env, now, channel, self.rng)
                except ForagerStuck:
                    stuck = True
                    break
                self.log.append({"type": "step", "t": now, "f": fid, "url": out.step_url,
                                 "restart": out.restarted, "downloads": out.downloads,
                                 "dt": out.time_consumed, "new": out.discovered})
                for doc, r in out.sent:
                    self.log.append({"type": "send", "t": now, "f": fid, "vid": doc.version_id,
                                     "url": doc.url, "r": r})
                st.clock = now + out.time_consumed
            if stuck:
                stuck_run += 1
                self._handle_stuck(fid)
                if stuck_run > 2 * len(st.roster) + 2:
                    reason = "all_stuck"
                    break
                if fid in self.foragers:
                    idx += 1
                idx %= len(st.roster)
                continue
            stuck_run = 0
            self.log.append({"type": "slice", "t": st.clock, "f": fid, "roster": len(st.roster),
                             "score": float(st.scores[fid])})
            action = self.manage_forager(fid)
            if action is not Action.DELETE:
                idx += 1
            idx %= len(st.roster)
        if self.check_invariants:
            self._assert_roster()
        self.log.append({"type": "end", "t": st.clock, "reason": reason})
        return self.log


def run(env: Environment, ra_config: RAConfig = RAConfig(), fleet_config: FleetConfig = FleetConfig(),
        rng_seed: int = 0, *, check_invariants: bool = False) -> ExperimentLog:
    agent = ReinforcingAgent(env, ra_config, fleet_config, rng_seed, check_invariants=check_invariants)
    return agent.run()
