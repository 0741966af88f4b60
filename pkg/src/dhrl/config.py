"""Experiment configuration documents (schema in docs/formats.md).

A config is a JSON object. Parsing is strict: unknown keys, wrong types and
out-of-domain numbers raise :class:`ConfigError` naming the offending field
and, where it can be located, the line it sits on. ``to_dict`` followed by
``from_dict`` reproduces an equal config.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dhrl.envs import GENERATORS
from dhrl.io import load_mdp
from dhrl.mdp import FiniteMdp


class ConfigError(ValueError):
    def __init__(self, message: str, field_path: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_path:
            where.append(f"field '{field_path}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.field_path = field_path
        self.line = line


@dataclass(frozen=True)
class EnvironmentSpec:
    """Either a generator with parameters, or a path to an MDP file.

    Generator parameters may be written as ``{"choice": [...]}``; each of the
    ``count`` instances then draws its own value from the instance seed.
    """

    generator: str | None = None
    params: dict = field(default_factory=dict)
    file: str | None = None
    count: int = 1
    seed: int = 0


@dataclass(frozen=True)
class DelaySpec:
    """``values`` are crossed with every instance unless ``per_instance`` is set,
    in which case each instance draws one value. ``max_delay``/``probs``
    describe a random bounded delay, planned for at ``max_delay``."""

    values: tuple[int, ...] = (0,)
    per_instance: bool = False
    max_delay: int | None = None
    probs: tuple[float, ...] | None = None


@dataclass(frozen=True)
class AbstractionSpec:
    """``None`` in ``epsilons`` means the exact belief partition."""

    epsilons: tuple[float | None, ...] = (None,)
    weighting: str = "uniform"
    partition_file: str | None = None


@dataclass(frozen=True)
class SolverSpec:
    tol: float = 1e-12
    max_iters: int = 100_000
    certificate_tol: float = 1e-10
    max_states: int = 10**6


@dataclass(frozen=True)
class QLearningSpec:
    enabled: bool = False
    epsilon: float = 0.1
    lr_scale: float = 0.5
    lr_tau: float = 1000.0
    horizon: int = 50
    check_every: int = 50
    max_steps: int = 200_000
    target_fraction: float = 0.05


@dataclass(frozen=True)
class SimulationSpec:
    """Delayed sessions driven by a uniformly random agent (one per cell and seed)."""

    enabled: bool = False
    steps: int = 10_000
    z_limit: float = 3.0
    write_traces: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    delay: DelaySpec = field(default_factory=DelaySpec)
    abstraction: AbstractionSpec = field(default_factory=AbstractionSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    qlearning: QLearningSpec = field(default_factory=QLearningSpec)
    simulation: SimulationSpec = field(default_factory=SimulationSpec)
    seeds: tuple[int, ...] = (0,)
    out: str = "results"
    base_dir: str = field(default=".", compare=False)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("base_dir")
        return _plain(doc)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# -- parsing -------------------------------------------------------------------


_SECTIONS = {
    "environment": EnvironmentSpec,
    "delay": DelaySpec,
    "abstraction": AbstractionSpec,
    "solver": SolverSpec,
    "qlearning": QLearningSpec,
    "simulation": SimulationSpec,
}


def _locate(text: str | None, key: str) -> int | None:
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Reader:
    def __init__(self, text: str | None):
        self.text = text

    def fail(self, path: str, message: str):
        raise ConfigError(message, path, _locate(self.text, path.split(".")[-1]))

    def check_keys(self, doc, allowed, path):
        if not isinstance(doc, dict):
            self.fail(path, "expected an object")
        for key in doc:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, "unknown key")

    def integer(self, value, path, lo=None):
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        if lo is not None and value < lo:
            self.fail(path, f"must be >= {lo}, got {value}")
        return value

    def number(self, value, path, lo=None, hi=None, lo_open=False, hi_open=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
            self.fail(path, f"expected a finite number, got {value!r}")
        value = float(value)
        if lo is not None and (value < lo or (lo_open and value == lo)):
            self.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {value}")
        if hi is not None and (value > hi or (hi_open and value == hi)):
            self.fail(path, f"must be {'<' if hi_open else '<='} {hi}, got {value}")
        return value


def _parse_environment(r: _Reader, doc, base_dir: Path) -> EnvironmentSpec:
    r.check_keys(doc, {"generator", "params", "file", "count", "seed"}, "environment")
    gen, path = doc.get("generator"), doc.get("file")
    if (gen is None) == (path is None):
        r.fail("environment", "give exactly one of 'generator' or 'file'")
    params = doc.get("params", {})
    if gen is not None:
        if gen not in GENERATORS:
            r.fail("environment.generator", f"unknown generator {gen!r}; expected one of {sorted(GENERATORS)}")
        if not isinstance(params, dict):
            r.fail("environment.params", "expected an object")
        for key, value in params.items():
            if isinstance(value, dict):
                if set(value) != {"choice"} or not isinstance(value["choice"], list) or not value["choice"]:
                    r.fail(f"environment.params.{key}", "expected a value or {\"choice\": [nonempty list]}")
    else:
        if params:
            r.fail("environment.params", "parameters are only allowed with a generator")
        if not (Path(path) if Path(path).is_absolute() else base_dir / path).exists():
            r.fail("environment.file", f"file not found: {path}")
    count = r.integer(doc.get("count", 1), "environment.count", lo=1)
    seed = r.integer(doc.get("seed", 0), "environment.seed", lo=0)
    return EnvironmentSpec(gen, dict(params), path, count, seed)


def _parse_delay(r: _Reader, doc) -> DelaySpec:
    r.check_keys(doc, {"values", "per_instance", "max_delay", "probs"}, "delay")
    per_instance = doc.get("per_instance", False)
    if not isinstance(per_instance, bool):
        r.fail("delay.per_instance", "expected true or false")
    max_delay, probs = doc.get("max_delay"), doc.get("probs")
    if max_delay is not None:
        max_delay = r.integer(max_delay, "delay.max_delay", lo=1)
        if doc.get("values", [max_delay]) != [max_delay]:
            r.fail("delay.values", "a random delay is planned at max_delay; omit 'values'")
        if probs is None:
            probs = [1.0 / max_delay] * max_delay
        if not isinstance(probs, list) or len(probs) != max_delay:
            r.fail("delay.probs", f"expected a list of {max_delay} probabilities")
        probs = tuple(r.number(p, "delay.probs", lo=0.0) for p in probs)
        if abs(sum(probs) - 1.0) > 1e-12:
            r.fail("delay.probs", "probabilities must sum to 1")
        return DelaySpec((max_delay,), per_instance, max_delay, probs)
    if probs is not None:
        r.fail("delay.probs", "requires max_delay")
    values = doc.get("values", [0])
    if not isinstance(values, list) or not values:
        r.fail("delay.values", "expected a nonempty list of integers")
    return DelaySpec(tuple(r.integer(v, "delay.values", lo=0) for v in values), per_instance)


def _parse_abstraction(r: _Reader, doc, base_dir: Path) -> AbstractionSpec:
    r.check_keys(doc, {"epsilons", "weighting", "partition_file"}, "abstraction")
    eps = doc.get("epsilons", [None])
    if not isinstance(eps, list) or not eps:
        r.fail("abstraction.epsilons", "expected a nonempty list (null = exact)")
    eps = tuple(None if e is None else r.number(e, "abstraction.epsilons", lo=0.0, hi=1.0, hi_open=True) for e in eps)
    weighting = doc.get("weighting", "uniform")
    if weighting not in ("uniform", "visitation"):
        r.fail("abstraction.weighting", "expected 'uniform' or 'visitation'")
    pfile = doc.get("partition_file")
    if pfile is not None:
        if not isinstance(pfile, str):
            r.fail("abstraction.partition_file", "expected a path")
        if not (Path(pfile) if Path(pfile).is_absolute() else base_dir / pfile).exists():
            r.fail("abstraction.partition_file", f"file not found: {pfile}")
    return AbstractionSpec(eps, weighting, pfile)


def _parse_solver(r: _Reader, doc) -> SolverSpec:
    r.check_keys(doc, {"tol", "max_iters", "certificate_tol", "max_states"}, "solver")
    d = SolverSpec()
    return SolverSpec(
        r.number(doc.get("tol", d.tol), "solver.tol", lo=0.0, lo_open=True),
        r.integer(doc.get("max_iters", d.max_iters), "solver.max_iters", lo=1),
        r.number(doc.get("certificate_tol", d.certificate_tol), "solver.certificate_tol", lo=0.0),
        r.integer(doc.get("max_states", d.max_states), "solver.max_states", lo=1),
    )


def _parse_qlearning(r: _Reader, doc) -> QLearningSpec:
    r.check_keys(doc, set(QLearningSpec.__dataclass_fields__), "qlearning")
    d = QLearningSpec()
    enabled = doc.get("enabled", d.enabled)
    if not isinstance(enabled, bool):
        r.fail("qlearning.enabled", "expected true or false")
    return QLearningSpec(
        enabled,
        r.number(doc.get("epsilon", d.epsilon), "qlearning.epsilon", lo=0.0, hi=1.0),
        r.number(doc.get("lr_scale", d.lr_scale), "qlearning.lr_scale", lo=0.0, hi=1.0, lo_open=True),
        r.number(doc.get("lr_tau", d.lr_tau), "qlearning.lr_tau", lo=0.0, lo_open=True),
        r.integer(doc.get("horizon", d.horizon), "qlearning.horizon", lo=1),
        r.integer(doc.get("check_every", d.check_every), "qlearning.check_every", lo=1),
        r.integer(doc.get("max_steps", d.max_steps), "qlearning.max_steps", lo=1),
        r.number(doc.get("target_fraction", d.target_fraction), "qlearning.target_fraction", lo=0.0),
    )


def _parse_simulation(r: _Reader, doc) -> SimulationSpec:
    r.check_keys(doc, set(SimulationSpec.__dataclass_fields__), "simulation")
    d = SimulationSpec()
    for key in ("enabled", "write_traces"):
        if not isinstance(doc.get(key, False), bool):
            r.fail(f"simulation.{key}", "expected true or false")
    return SimulationSpec(
        doc.get("enabled", d.enabled),
        r.integer(doc.get("steps", d.steps), "simulation.steps", lo=1),
        r.number(doc.get("z_limit", d.z_limit), "simulation.z_limit", lo=0.0, lo_open=True),
        doc.get("write_traces", d.write_traces),
    )


def from_dict(doc: dict, base_dir: str | Path = ".", text: str | None = None) -> ExperimentConfig:
    r = _Reader(text)
    base_dir = Path(base_dir)
    r.check_keys(doc, {"name", "seeds", "out", *_SECTIONS}, "")
    name = doc.get("name", "experiment")
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        r.fail("name", "expected a name made of letters, digits, '_', '.', '-'")
    if "environment" not in doc:
        r.fail("environment", "missing section")
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        r.fail("seeds", "expected a nonempty list of integers")
    seeds = tuple(r.integer(s, "seeds", lo=0) for s in seeds)
    out = doc.get("out", "results")
    if not isinstance(out, str):
        r.fail("out", "expected a path")
    return ExperimentConfig(
        name=name,
        environment=_parse_environment(r, doc["environment"], base_dir),
        delay=_parse_delay(r, doc.get("delay", {})),
        abstraction=_parse_abstraction(r, doc.get("abstraction", {}), base_dir),
        solver=_parse_solver(r, doc.get("solver", {})),
        qlearning=_parse_qlearning(r, doc.get("qlearning", {})),
        simulation=_parse_simulation(r, doc.get("simulation", {})),
        seeds=seeds,
        out=out,
        base_dir=str(base_dir),
    )


def loads_config(text: str, base_dir: str | Path = ".") -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, None, exc.lineno) from None
    return from_dict(doc, base_dir, text)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    try:
        return loads_config(text, path.parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dumps_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"


# -- instances -----------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    instance_id: str
    base: FiniteMdp
    delay: int
    params: dict


def _instance_rng(cfg: ExperimentConfig, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.environment.seed, index]))


def delay_spec(cfg: ExperimentConfig, delay: int):
    """Session delay for a cell: fixed, or the random spec wrapped to its maximum."""
    from dhrl.simulator import FixedDelay, RandomDelay, conservative_wrap

    if cfg.delay.max_delay is None:
        return FixedDelay(delay)
    return conservative_wrap(RandomDelay(cfg.delay.probs), cfg.delay.max_delay)


def base_instances(cfg: ExperimentConfig) -> list[tuple[str, FiniteMdp, dict, np.random.Generator]]:
    """Base MDPs with their ids, resolved parameters and per-instance RNG (for sampled delays)."""
    env = cfg.environment
    out = []
    for i in range(env.count):
        rng = _instance_rng(cfg, i)
        if env.file is not None:
            base = load_mdp(cfg.resolve(env.file))
            params = {"file": env.file}
            stem = Path(env.file).stem
        else:
            params = {}
            for key in sorted(env.params):
                value = env.params[key]
                if isinstance(value, dict):
                    choices = value["choice"]
                    value = choices[int(rng.integers(len(choices)))]
                params[key] = value
            if env.generator == "random" and "seed" not in params:
                params["seed"] = int(rng.integers(2**31))
            try:
                base = GENERATORS[env.generator](**params)
            except TypeError as exc:
                raise ConfigError(str(exc), "environment.params") from None
            stem = env.generator
        iid = stem if env.count == 1 else f"{stem}-{i:03d}"
        out.append((iid, base, params, rng))
    return out


def expand_instances(cfg: ExperimentConfig) -> list[Instance]:
    """Every (base MDP, delay) pair, in a fixed order."""
    out = []
    for iid, base, params, rng in base_instances(cfg):
        if cfg.delay.per_instance:
            delays = [cfg.delay.values[int(rng.integers(len(cfg.delay.values)))]]
        else:
            delays = list(cfg.delay.values)
        for d in delays:
            out.append(Instance(iid, base, d, params))
    return out
