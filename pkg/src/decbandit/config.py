"""YAML experiment files.

Errors name the offending key path and, when available, its line in the file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .agent import POLICIES
from .engine import ConfigError, SimConfig
from .graph import GraphSpec, build_graph, parse_graph_spec
from .rewards import ArmSet, parse_arm_spec
from .seeding import check_seed, graph_stream

__all__ = [
    "ExperimentFile",
    "ConfigFileError",
    "load_experiment",
    "parse_experiment",
    "resolve_seed",
    "SEED_ENV",
    "KEYS",
]

SEED_ENV = "DECBANDIT_SEED"
KEYS = ("graph", "arms", "policy", "varsigma", "beta", "T", "runs", "seed",
        "invariant_checks", "oracle", "output_dir", "snapshot_interval")
REQUIRED = ("graph", "arms", "T")


class ConfigFileError(ConfigError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None, source: str = "<config>"):
        where = source
        if line is not None:
            where += f":{line}"
        if key is not None:
            where += f": {key}"
        super().__init__(f"{where}: {message}")
        self.key = key
        self.line = line


@dataclass(frozen=True)
class ExperimentFile:
    graph: str
    arms: tuple[str, ...]
    T: int
    policy: str | tuple[str, ...] = "dec_klucb"
    varsigma: float | tuple[float, ...] = 0.01
    beta: float | tuple[float, ...] = 0.01
    runs: int = 1
    seed: int | None = None
    invariant_checks: bool = False
    oracle: bool = False
    output_dir: str | None = None
    snapshot_interval: int = 1
    source: str = field(default="<config>", compare=False)

    def graph_spec(self) -> GraphSpec:
        return parse_graph_spec(self.graph)

    def build(self, seed: int) -> SimConfig:
        """Resolve graph and arms into an engine config under the given master seed."""
        graph = build_graph(self.graph_spec(), graph_stream(seed))
        arms = ArmSet(tuple(parse_arm_spec(a) for a in self.arms))
        return SimConfig.create(
            graph, arms, policy=_listify(self.policy), varsigma=_listify(self.varsigma),
            beta=_listify(self.beta), horizon=self.T, runs=self.runs, seed=seed,
            snapshot_interval=self.snapshot_interval, check_invariants=self.invariant_checks,
            oracle_tracking=self.oracle)

    def echo(self) -> dict:
        out = {k: getattr(self, k) for k in KEYS}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def _listify(v):
    return list(v) if isinstance(v, tuple) else v


def resolve_seed(flag: int | None, file_seed: int | None) -> tuple[int, str]:
    """Seed precedence: command-line flag, config file, environment, then 0."""
    if flag is not None:
        return check_seed(flag), "flag"
    if file_seed is not None:
        return check_seed(file_seed), "config"
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return check_seed(int(env)), "env"
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={env!r} is not a valid unsigned 64-bit seed") from exc
    return 0, "default"


def _lines(text: str) -> dict[str, int]:
    """Line number (1-based) of every key path in the document."""
    out: dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = str(k.value)
                sub = f"{path}.{key}" if path else key
                out[sub] = k.start_mark.line + 1
                if isinstance(v, (yaml.MappingNode, yaml.SequenceNode)):
                    walk(v, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                out[f"{path}[{i}]"] = v.start_mark.line + 1

    if root is not None:
        walk(root, "")
    return out


def parse_experiment(text: str, source: str = "<config>") -> ExperimentFile:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigFileError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                              line=None if mark is None else mark.line + 1, source=source) from None
    lines = _lines(text)

    def fail(msg, key=None):
        raise ConfigFileError(msg, key, lines.get(key or ""), source)

    if not isinstance(data, dict):
        fail("top level must be a mapping of keys to values")
    for key in data:
        if key not in KEYS:
            fail(f"unknown key; allowed keys are {', '.join(KEYS)}", str(key))
    for key in REQUIRED:
        if key not in data:
            fail(f"missing required key {key!r}")

    def want_int(key, lo):
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, int):
            fail(f"expected an integer, got {v!r}", key)
        if v < lo:
            fail(f"must be >= {lo}, got {v}", key)
        return v

    def want_bool(key):
        v = data[key]
        if not isinstance(v, bool):
            fail(f"expected on/off (true/false), got {v!r}", key)
        return v

    def want_real_or_list(key):
        v = data[key]
        if isinstance(v, list):
            for i, x in enumerate(v):
                if isinstance(x, bool) or not isinstance(x, (int, float)) or x < 0:
                    fail(f"expected a nonnegative number, got {x!r}", f"{key}[{i}]")
            return tuple(float(x) for x in v)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
            fail(f"expected a nonnegative number or a per-agent list, got {v!r}", key)
        return float(v)

    kw = {}
    if not isinstance(data["graph"], str):
        fail("expected a graph spec string such as er(20,0.5)", "graph")
    try:
        parse_graph_spec(data["graph"])
    except ValueError as exc:
        fail(str(exc), "graph")
    kw["graph"] = data["graph"]

    arms = data["arms"]
    if not isinstance(arms, list) or not arms:
        fail("expected a non-empty list of arm specs", "arms")
    for i, a in enumerate(arms):
        try:
            parse_arm_spec(a)
        except ValueError as exc:
            fail(str(exc), f"arms[{i}]")
    kw["arms"] = tuple(arms)
    kw["T"] = want_int("T", 0)

    if "policy" in data:
        p = data["policy"]
        items = p if isinstance(p, list) else [p]
        for i, x in enumerate(items):
            if x not in POLICIES:
                fail(f"unknown policy {x!r}; expected one of {', '.join(POLICIES)}",
                     f"policy[{i}]" if isinstance(p, list) else "policy")
        kw["policy"] = tuple(p) if isinstance(p, list) else p
    for key in ("varsigma", "beta"):
        if key in data:
            kw[key] = want_real_or_list(key)
    if "runs" in data:
        kw["runs"] = want_int("runs", 1)
    if "snapshot_interval" in data:
        kw["snapshot_interval"] = want_int("snapshot_interval", 1)
    if "seed" in data:
        v = data["seed"]
        if isinstance(v, bool) or not isinstance(v, int):
            fail(f"expected an unsigned 64-bit integer, got {v!r}", "seed")
        try:
            kw["seed"] = check_seed(v)
        except ValueError as exc:
            fail(str(exc), "seed")
    for key in ("invariant_checks", "oracle"):
        if key in data:
            kw[key] = want_bool(key)
    if "output_dir" in data:
        if not isinstance(data["output_dir"], str):
            fail("expected a path string", "output_dir")
        kw["output_dir"] = data["output_dir"]
    return ExperimentFile(source=source, **kw)


def load_experiment(path) -> ExperimentFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    return parse_experiment(text, source=str(path))


def with_overrides(exp: ExperimentFile, **kw) -> ExperimentFile:
    return replace(exp, **{k: v for k, v in kw.items() if v is not None})
