"""Run configuration: INI-style sections of ``key = value`` pairs.

Parsing is done by :mod:`configparser`; this module maps the raw strings to
typed fields, applies defaults and checks every cross-field constraint before
anything runs. Errors carry the line number of the offending key.
"""

from __future__ import annotations

import configparser
import logging
import math
import os
import re
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .network import MIXING_KINDS, SCENARIOS

log = logging.getLogger(__name__)

SEED_ENV = "SRDO_SEED_OVERRIDE"


@dataclass(frozen=True)
class ProblemConfig:
    M: int = 250
    N: int = 20
    p: int = 5
    workers_per_partition: int = 5
    seed: int | None = None
    normalize: str = "sqrt_m"
    noise: float = 0.0
    replicas: int = 1


@dataclass(frozen=True)
class CodingConfig:
    s: tuple = (0,)
    seed: int | None = None
    max_constant: float | None = 1e3


@dataclass(frozen=True)
class TopologyConfig:
    servers: int | None = None
    gamma: tuple | None = None
    fixed_assignment: tuple | None = None
    edges: tuple | None = None
    mixing: str = "doubly_stochastic_metropolis"
    mu: float = 0.0
    nu: float | None = None
    push_source: str = "uniform"
    common_init: bool = False


@dataclass(frozen=True)
class StragglerConfig:
    scenario: str = "scenario1"
    T: int = 0
    H: int = 0
    straggle_prob: float = 0.0
    fresh_push: bool = False


@dataclass(frozen=True)
class ScheduleConfig:
    a: float = 1.0
    theta: float = 1.0
    cap: float | None = None


@dataclass(frozen=True)
class ControlConfig:
    max_iters: int = 1000
    tol: float = 0.0
    seeds: tuple = (1,)
    output: str = "out"
    diverge_ae: float = 1e12


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    coding: CodingConfig = field(default_factory=CodingConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    stragglers: StragglerConfig = field(default_factory=StragglerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    control: ControlConfig = field(default_factory=ControlConfig)

    @property
    def n_servers(self) -> int:
        return self.topology.servers or self.problem.p

    def s_for(self, i: int) -> int:
        return self.coding.s[i]

    def with_scenario(self, scenario: str) -> "RunConfig":
        return replace(self, stragglers=replace(self.stragglers, scenario=scenario))

    def with_output(self, output: str) -> "RunConfig":
        return replace(self, control=replace(self.control, output=output))


# --- value parsers -------------------------------------------------------------


def _int(v):
    return int(v)


def _float(v):
    x = float(v)
    if math.isnan(x):
        raise ValueError("NaN is not allowed")
    return x


def _opt(parse):
    def inner(v):
        return None if v.strip().lower() in ("", "none") else parse(v)
    return inner


def _bool(v):
    t = v.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _list(parse):
    def inner(v):
        return tuple(parse(x) for x in re.split(r"[,\s]+", v.strip()) if x)
    return inner


def _seeds(v):
    """``1, 2, 5`` or ``1-10`` (inclusive range), or a mix."""
    out = []
    for tok in re.split(r"[,\s]+", v.strip()):
        if not tok:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", tok)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ValueError(f"empty seed range {tok}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(tok))
    if not out:
        raise ValueError("no seeds given")
    return tuple(out)


def _edges(v):
    if v.strip().lower() == "complete":
        return None
    out = []
    for tok in re.split(r"[,\s]+", v.strip()):
        if not tok:
            continue
        m = re.fullmatch(r"(\d+)-(\d+)", tok)
        if not m:
            raise ValueError(f"edge {tok!r} is not of the form a-b")
        out.append((int(m.group(1)), int(m.group(2))))
    return tuple(out)


def _scenario(v):
    t = v.strip().lower()
    if t in ("1", "2", "3"):
        t = "scenario" + t
    if t not in SCENARIOS:
        raise ValueError(f"unknown scenario {v!r}")
    return t


def _choice(options):
    def inner(v):
        t = v.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    return inner


def _assignment(v):
    t = v.strip().lower()
    if t == "cyclic":
        return "cyclic"
    if t in ("", "none"):
        return None
    return _list(_int)(v)


SCHEMA = {
    "problem": (ProblemConfig, {
        "M": _int, "N": _int, "p": _int, "workers_per_partition": _int,
        "seed": _opt(_int), "normalize": _choice(("sqrt_m", "none")),
        "noise": _float, "replicas": _int,
    }),
    "coding": (CodingConfig, {
        "s": _list(_int), "seed": _opt(_int), "max_constant": _opt(_float),
    }),
    "topology": (TopologyConfig, {
        "servers": _opt(_int), "gamma": _opt(_list(_float)),
        "fixed_assignment": _assignment, "edges": _edges,
        "mixing": _choice(MIXING_KINDS), "mu": _float, "nu": _opt(_float),
        "push_source": _choice(("uniform", "assigned")), "common_init": _bool,
    }),
    "stragglers": (StragglerConfig, {
        "scenario": _scenario, "T": _int, "H": _int, "straggle_prob": _float,
        "fresh_push": _bool,
    }),
    "schedule": (ScheduleConfig, {"a": _float, "theta": _float, "cap": _opt(_float)}),
    "control": (ControlConfig, {
        "max_iters": _int, "tol": _float, "seeds": _seeds, "output": str,
        "diverge_ae": _float,
    }),
}


# --- parsing ---------------------------------------------------------------------


def _line_index(text: str) -> dict:
    """``(section, key) -> line number`` for error messages."""
    index = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), n)
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip()
        index.setdefault((section, key), n)
    return index


def parse_config(text: str, env=None) -> RunConfig:
    """Parse and validate a configuration; raises :class:`ConfigError`."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from exc
    lines = _line_index(text)

    blocks = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        cls, keys = SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            try:
                values[key] = keys[key](raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {key}: {exc}", line) from exc
        blocks[section] = cls(**values)
    cfg = RunConfig(**blocks)

    override = env.get(SEED_ENV)
    if override:
        try:
            seeds = _seeds(override)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}: {exc}") from exc
        cfg = replace(cfg, control=replace(cfg.control, seeds=seeds))
    return validate(cfg, lines)


def load_config(path, env=None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), env)


def validate(cfg: RunConfig, lines: dict | None = None) -> RunConfig:
    """Cross-field checks; fills per-partition lists and the cyclic assignment."""
    lines = lines or {}

    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", lines.get((section, key)))

    pr, co, to, st, sc, ct = (cfg.problem, cfg.coding, cfg.topology, cfg.stragglers,
                              cfg.schedule, cfg.control)
    for key in ("M", "N", "p", "workers_per_partition", "replicas"):
        if getattr(pr, key) < 1:
            fail("problem", key, "must be positive")
    if pr.M <= pr.N:
        fail("problem", "M", f"need M > N for an overdetermined system (M={pr.M}, N={pr.N})")
    if pr.M % (pr.p * pr.workers_per_partition):
        fail("problem", "M", f"M={pr.M} is not divisible by p*workers_per_partition="
                             f"{pr.p * pr.workers_per_partition}")
    if pr.noise < 0:
        fail("problem", "noise", "must be non-negative")

    s = co.s
    if len(s) == 1:
        s = s * pr.p
    if len(s) != pr.p:
        fail("coding", "s", f"give one value or {pr.p} values, got {len(co.s)}")
    if any(not 0 <= v < pr.workers_per_partition for v in s):
        fail("coding", "s", f"need 0 <= s < workers_per_partition={pr.workers_per_partition}")
    if co.max_constant is not None and co.max_constant <= 0:
        fail("coding", "max_constant", "must be positive")

    n = to.servers or pr.p
    if n < 1:
        fail("topology", "servers", "must be positive")
    fa = to.fixed_assignment
    if fa == "cyclic":
        fa = tuple((m % pr.p) + 1 for m in range(n))
    if fa is not None:
        if len(fa) != n:
            fail("topology", "fixed_assignment", f"need {n} entries, got {len(fa)}")
        if any(not 0 <= v <= pr.p for v in fa):
            fail("topology", "fixed_assignment", f"entries must lie in 0..{pr.p}")
    gamma = to.gamma
    if gamma is None:
        gamma = (0.0,) + (1.0 / pr.p,) * pr.p
    if len(gamma) != pr.p + 1:
        fail("topology", "gamma", f"need p+1={pr.p + 1} entries (gamma_0 first), got {len(gamma)}")
    if any(g < 0 for g in gamma) or abs(sum(gamma) - 1.0) > 1e-9:
        fail("topology", "gamma", "must be a probability vector")
    total = sum(gamma)
    gamma = tuple(g / total for g in gamma)
    if to.edges is not None:
        for a, b in to.edges:
            if not (0 <= a < n and 0 <= b < n):
                fail("topology", "edges", f"edge {a}-{b} names a server outside 0..{n - 1}")
    if not 0.0 <= to.mu < 1.0:
        fail("topology", "mu", "must lie in [0, 1)")
    if to.nu is not None and not 0.0 < to.nu < 1.0:
        fail("topology", "nu", "must lie in (0, 1)")
    if to.push_source == "assigned" and fa is None:
        fail("topology", "push_source", "'assigned' needs a fixed_assignment")

    if st.T < 0:
        fail("stragglers", "T", "must be non-negative")
    if st.H < 0:
        fail("stragglers", "H", "must be non-negative")
    if not 0.0 <= st.straggle_prob <= 1.0:
        fail("stragglers", "straggle_prob", "must lie in [0, 1]")

    if not 0.0 < sc.theta <= 1.0:
        fail("schedule", "theta", f"must lie in (0, 1], got {sc.theta}")
    if sc.a <= 0:
        fail("schedule", "a", "must be positive")
    if sc.cap is not None and sc.cap <= 0:
        fail("schedule", "cap", "must be positive")

    if ct.max_iters < 1:
        fail("control", "max_iters", "must be positive")
    if ct.tol < 0:
        fail("control", "tol", "must be non-negative")
    if len(set(ct.seeds)) != len(ct.seeds):
        fail("control", "seeds", "duplicate seeds")
    if any(v < 0 for v in ct.seeds):
        fail("control", "seeds", "seeds must be non-negative")

    nz = [g for g in gamma[1:] if g > 0]
    if fa is None and nz and pr.p >= 1.0 / min(nz):
        log.warning("p=%d violates p < 1/gamma_min=%.4g; running anyway", pr.p, 1.0 / min(nz))

    return replace(
        cfg,
        coding=replace(co, s=tuple(s)),
        topology=replace(to, fixed_assignment=fa, gamma=gamma, servers=n),
    )


def to_text(cfg: RunConfig) -> str:
    """Render a config back to the INI grammar (round-trips through ``parse_config``)."""
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            if v and isinstance(v[0], tuple):
                return ", ".join(f"{a}-{b}" for a, b in v)
            return ", ".join(fmt(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    out = []
    for section, (cls, keys) in SCHEMA.items():
        block = getattr(cfg, section)
        out.append(f"[{section}]")
        for key in keys:
            value = getattr(block, key)
            if section == "topology" and key == "edges" and value is None:
                value = "complete"
            out.append(f"{key} = {fmt(value)}")
        out.append("")
    return "\n".join(out)
