"""Command line front door: generate, analyse and rewire environments, and run seeded replica experiments."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from crawlsim.env import EnvConfig, Environment, generate_environment, load_trace, rewire_environment, save_trace
from crawlsim.errors import ConfigError, CrawlSimError
from crawlsim.forager import ForagerParams
from crawlsim.metrics import SUMMARY_FIELDS, WINDOW, summarize, windowed_series
from crawlsim.netanalysis import degree_histogram, graph_stats
from crawlsim.ra import FleetConfig, Policy, RAConfig, run

WINDOW_FIELDS = ("downloaded", "sent", "relevant", "download_efficiency", "sent_efficiency",
                 "freshness", "age_hours")

# keys that belong to the experiment itself rather than to a component config
_EXPERIMENT_KEYS = {"policy", "replicas", "seed", "rewired", "out", "trace", "save_logs", "path_sample"}
# the environment seed is derived per replica, so it is not a settable key
_ENV_KEYS = {f.name for f in dataclasses.fields(EnvConfig)} - {"rng_seed"}
_RA_KEYS = {f.name for f in dataclasses.fields(RAConfig)}
_FORAGER_KEYS = {f.name for f in dataclasses.fields(ForagerParams)}


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    trace: Path | None = None  # replay this trace instead of generating
    ra: RAConfig = field(default_factory=RAConfig)
    params: ForagerParams = field(default_factory=ForagerParams)
    policies: tuple[Policy, ...] = (Policy.WL, Policy.RL)
    replicas: int = 3
    base_seed: int = 0
    rewired: bool = False
    output_dir: Path = Path("out")
    save_logs: bool = False
    path_sample: int = 500  # BFS sources for the path-length estimate

    def validate(self) -> "ExperimentConfig":
        if isinstance(self.replicas, bool) or not isinstance(self.replicas, int) or self.replicas < 1:
            raise ConfigError("replicas", f"must be an integer >= 1, got {self.replicas!r}")
        if isinstance(self.base_seed, bool) or not isinstance(self.base_seed, int) or self.base_seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.base_seed!r}")
        if not self.policies:
            raise ConfigError("policy", "at least one policy is required")
        if self.path_sample < 1:
            raise ConfigError("path_sample", "must be >= 1")
        self.env.validate()
        self.ra.validate()
        _validate_params(self.params)
        return self


def _validate_params(p: ForagerParams) -> None:
    for name in ("beta", "gamma", "alpha"):
        v = getattr(p, name)
        if not 0 <= v <= 1:
            raise ConfigError(name, f"must lie in [0, 1], got {v!r}")
    for name in ("weblog_size", "start_size", "max_step"):
        if getattr(p, name) < 1:
            raise ConfigError(name, "must be >= 1")
    if p.start_size > p.weblog_size:
        raise ConfigError("start_size", "cannot exceed weblog_size")


def _coerce(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {type(default).__name__}") from None
    return text


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    values: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def parse_config(values: dict[str, str] | None = None, **overrides) -> ExperimentConfig:
    """Build a validated ExperimentConfig from key=value strings plus typed overrides.

    Overrides (from command line flags) win over file values.  Any key that is
    not a field of the environment, RA, forager or experiment settings is
    rejected by name.
    """
    values = dict(values or {})
    known = _EXPERIMENT_KEYS | _ENV_KEYS | _RA_KEYS | _FORAGER_KEYS
    for key in sorted(values):
        if key not in known:
            raise ConfigError(key, f"unknown configuration key {key!r}")

    def typed(group_defaults) -> dict:
        out = {}
        for key, default in group_defaults.items():
            if key in values:
                out[key] = _coerce(key, values[key], default)
        return out

    env_kw = typed({k: getattr(EnvConfig(), k) for k in _ENV_KEYS})
    ra_kw = typed({k: getattr(RAConfig(), k) for k in _RA_KEYS})
    fp_kw = typed({k: getattr(ForagerParams(), k) for k in _FORAGER_KEYS})
    exp = typed({"replicas": 3, "seed": 0, "rewired": False, "save_logs": False, "path_sample": 500})
    exp.update({k: v for k, v in overrides.items() if v is not None})

    policy_text = exp.get("policy", values.get("policy", "wl,rl"))
    policies = tuple(dict.fromkeys(Policy.parse(p.strip()) for p in str(policy_text).split(",") if p.strip()))
    trace = exp.get("trace", values.get("trace"))
    out = exp.get("out", values.get("out", "out"))

    try:
        env = EnvConfig(**env_kw)
        ra = RAConfig(**ra_kw)
        params = ForagerParams(**fp_kw)
    except TypeError as exc:  # pragma: no cover - keys are filtered above
        raise ConfigError("config", str(exc)) from None
    cfg = ExperimentConfig(env=env, trace=Path(trace) if trace else None, ra=ra, params=params,
                           policies=policies, replicas=exp.get("replicas", 3), base_seed=exp.get("seed", 0),
                           rewired=bool(exp.get("rewired", False)), output_dir=Path(out),
                           save_logs=bool(exp.get("save_logs", False)), path_sample=exp.get("path_sample", 500))
    return cfg.validate()


# -- environment helpers ------------------------------------------------------

def build_environment(cfg: ExperimentConfig, seed: int) -> Environment:
    if cfg.trace is not None:
        env = load_trace(cfg.trace)
    else:
        env = generate_environment(dataclasses.replace(cfg.env, rng_seed=seed))
    if cfg.rewired:
        env = rewire_environment(env, seed)
    return env


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def write_graph_outputs(env: Environment, out_dir: Path, sample_size: int = 500, rng_seed: int = 0) -> dict:
    """Degree distributions in both directions plus summary graph statistics."""
    out_dir.mkdir(parents=True, exist_ok=True)
    edges = env.link_graph()
    nodes = range(env.num_urls)
    for direction in ("in", "out"):
        hist = degree_histogram(edges, direction, nodes=nodes)
        _write_csv(out_dir / f"degree_{direction}.csv", ("degree", "count", "rel_freq"), hist.rows())
    stats = graph_stats(edges, sample_size=sample_size, rng_seed=rng_seed)
    row = {"pages": env.num_urls, "edges": len(edges), **dataclasses.asdict(stats)}
    _write_csv(out_dir / "graph_stats.csv", tuple(row), [tuple(row.values())])
    return row


# -- experiments ----------------------------------------------------------------

def _mean_std(rows: list[list[float]]) -> tuple[list[float], list[float]]:
    a = np.asarray(rows, dtype=float)
    return a.mean(axis=0).tolist(), a.std(axis=0).tolist()


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every policy for every replica and write summary, window and graph CSVs.

    Replica ``r`` uses seed ``base_seed + r`` for its environment, the rewiring
    and the fleet.  On failure a ``FAILED`` marker naming the replica is left
    next to whatever outputs were completed, and the error is re-raised.
    """
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    summary_rows: dict[Policy, list[list[float]]] = {p: [] for p in cfg.policies}
    window_rows = []
    fleet = {p: FleetConfig(policy=p, params=cfg.params) for p in cfg.policies}
    graph_rows = []
    for r in range(cfg.replicas):
        seed = cfg.base_seed + r
        try:
            env = build_environment(cfg, seed)
            stats = write_graph_outputs(env, out / "graph" / f"replica_{r}", cfg.path_sample, seed)
            graph_rows.append((r, *stats.values()))
            for policy in cfg.policies:
                log = run(env, cfg.ra, fleet[policy], rng_seed=seed, check_invariants=True)
                if cfg.save_logs:
                    (out / "logs").mkdir(exist_ok=True)
                    log.save(out / "logs" / f"{policy.value}_replica_{r}.jsonl")
                summary_rows[policy].append(summarize(log, env).as_row())
                for w in windowed_series(log, env, WINDOW).windows:
                    window_rows.append((w.start, policy.value, r, *(getattr(w, f) for f in WINDOW_FIELDS)))
        except Exception as exc:
            marker.write_text(f"replica {r} (seed {seed}) failed: {type(exc).__name__}: {exc}\n", encoding="utf-8")
            _write_outputs(out, cfg, summary_rows, window_rows, graph_rows)
            raise
    _write_outputs(out, cfg, summary_rows, window_rows, graph_rows)
    return out


def _write_outputs(out: Path, cfg: ExperimentConfig, summary_rows, window_rows, graph_rows) -> None:
    rows = []
    for policy in cfg.policies:
        reps = summary_rows[policy]
        rows.extend((policy.value, str(i), *row) for i, row in enumerate(reps))
        if reps:
            mean, std = _mean_std(reps)
            rows.append((policy.value, "mean", *mean))
            rows.append((policy.value, "std", *std))
    _write_csv(out / "summary.csv", ("policy", "row", *SUMMARY_FIELDS), rows)
    window_rows = sorted(window_rows, key=lambda w: (w[1], w[2], w[0]))
    _write_csv(out / "windows.csv", ("window_start", "policy", "replica", *WINDOW_FIELDS), window_rows)
    if graph_rows:
        _write_csv(out / "graph_stats.csv", ("replica", "pages", "edges", "clustering", "avg_path_length",
                                             "exponent_in", "exponent_out"), graph_rows)
    (out / "config.json").write_text(json.dumps(_config_record(cfg), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


def _config_record(cfg: ExperimentConfig) -> dict:
    return {
        "env": cfg.env.to_dict(), "trace": str(cfg.trace) if cfg.trace else None,
        "ra": dataclasses.asdict(cfg.ra), "forager": dataclasses.asdict(cfg.params),
        "policies": [p.value for p in cfg.policies], "replicas": cfg.replicas, "seed": cfg.base_seed,
        "rewired": cfg.rewired,
    }


# -- command line ---------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crawlsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *, policy=False, replicas=False):
        p.add_argument("--config", metavar="PATH", help="flat key=value configuration file")
        p.add_argument("--seed", type=int, metavar="N", help="base seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--trace", metavar="PATH", help="use a saved environment trace")
        p.add_argument("--rewired", action="store_true", default=None, help="use the rewired environment")
        if policy:
            p.add_argument("--policy", choices=["wl", "rl", "wlrl"], action="append",
                           help="fleet policy (repeatable; default wl and rl)")
        if replicas:
            p.add_argument("--replicas", type=int, metavar="N", help="number of seeded replicas")

    common(sub.add_parser("gen-env", help="generate an environment and save its trace"))
    common(sub.add_parser("analyze", help="degree distributions and graph statistics of an environment"))
    common(sub.add_parser("rewire", help="save the rewired version of an environment"))
    common(sub.add_parser("run", help="run replica experiments"), policy=True, replicas=True)
    return ap


def _config_from_args(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    overrides = {"seed": args.seed, "out": args.out, "trace": args.trace, "rewired": args.rewired,
                 "replicas": getattr(args, "replicas", None)}
    if getattr(args, "policy", None):
        overrides["policy"] = ",".join(args.policy)
    return parse_config(values, **overrides)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        out = cfg.output_dir
        if args.command == "run":
            run_experiment(cfg)
        elif args.command == "gen-env":
            env = build_environment(cfg, cfg.base_seed)
            out.mkdir(parents=True, exist_ok=True)
            save_trace(env, out / "env.jsonl")
        elif args.command == "rewire":
            env = build_environment(dataclasses.replace(cfg, rewired=True), cfg.base_seed)
            out.mkdir(parents=True, exist_ok=True)
            save_trace(env, out / "rewired.jsonl")
        elif args.command == "analyze":
            env = build_environment(cfg, cfg.base_seed)
            row = write_graph_outputs(env, out, cfg.path_sample, cfg.base_seed)
            print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CrawlSimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
