"""Flat sectioned ``key = value`` run configuration.

Every section and key is declared in :data:`SCHEMA`; anything else is an
error.  Keys left out (or given as ``default``) stay None, and each
subcommand then applies its own default.
"""

import configparser
import hashlib
from dataclasses import dataclass, field, replace

from cnodes.diffcore.optim import AdamConfig
from cnodes.errors import ConfigError
from cnodes.model.train import TrainConfig
from cnodes.solver import METHODS, SolverConfig

SUBCOMMANDS = ("demo-burgers", "demo-intersect", "pde-fit", "timeseries", "toy-classify", "cnf2d", "gradcheck", "solve")


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v):
    if isinstance(v, (tuple, list)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).replace(" ", "").split(",") if x)


def _choice(*options):
    def parse(v):
        if v not in options:
            raise ValueError(f"must be one of {options}")
        return v
    return parse


def _str(v):
    return str(v)


SCHEMA = {
    "run": {
        "subcommand": _choice(*SUBCOMMANDS),
        "seed": _int,
        "out": _str,
        "parallel": _int,
        "replicates": _int,
    },
    "solver": {
        "method": _choice(*METHODS),
        "h": _float,
        "rtol": _float,
        "atol": _float,
        "max_steps": _int,
    },
    "train": {
        "epochs": _int,
        "batch_size": _int,
        "lr": _float,
        "beta1": _float,
        "beta2": _float,
        "eps": _float,
        "grad_mode": _choice("adjoint", "discrete"),
    },
    "model": {
        "k": _int,
        "hidden": _ints,
        "balance_mode": _choice("u_only", "full"),
    },
    "task": {
        "n_train": _int,
        "n_test": _int,
        "noise": _float,
        "size": _int,
        "profile": _choice("linear", "identity", "sine"),
        "dynamics": _choice("decay", "logistic", "oscillator"),
        "t": _float,
        "trained": _bool,
        "probes": _int,
        "trace": _choice("exact", "hutchinson"),
    },
}
REQUIRED = (("run", "subcommand"),)
RUN_DEFAULTS = {"seed": 0, "out": "out", "parallel": 1, "replicates": 1}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    seed: int = 0
    out: str = "out"
    parallel: int = 1
    replicates: int = 1
    solver: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    task: dict = field(default_factory=dict)

    def get(self, section, key, default=None):
        v = getattr(self, section).get(key)
        return default if v is None else v

    def solver_config(self, base=SolverConfig()):
        s = {k: v for k, v in self.solver.items() if v is not None}
        return SolverConfig(**{**_fields(base), **s})

    def train_config(self, base=TrainConfig(), solver=None):
        t = {k: v for k, v in self.train.items() if v is not None}
        adam = AdamConfig(**{**_fields(base.adam), **{k: t.pop(k) for k in ("lr", "beta1", "beta2", "eps") if k in t}})
        return TrainConfig(**{**_fields(base), **t, "adam": adam, "solver": solver or self.solver_config(base.solver),
                              "seed": self.seed})

    def with_overrides(self, **kw):
        d = to_dict(self)
        for key, value in kw.items():
            if value is None:
                continue
            section, _, name = key.rpartition(".")
            if section:
                d[section][name] = value
            else:
                d[name] = value
        return from_dict(d)

    @property
    def digest(self):
        # where results land and how many workers compute them do not change them
        key = replace(self, out="out", parallel=1)
        return hashlib.blake2b(serialize(key).encode(), digest_size=4).hexdigest()


def _fields(obj):
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def to_dict(cfg):
    d = {k: getattr(cfg, k) for k in ("subcommand", "seed", "out", "parallel", "replicates")}
    for sec in ("solver", "train", "model", "task"):
        d[sec] = dict(getattr(cfg, sec))
    return d


def from_dict(d):
    """Validate a plain dict (as produced by :func:`to_dict`) into a RunConfig."""
    secs = {}
    for sec in ("solver", "train", "model", "task"):
        vals = {}
        for key, value in (d.get(sec) or {}).items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            vals[key] = None if value is None else _coerce(sec, key, value)
        secs[sec] = {k: vals.get(k) for k in SCHEMA[sec]}
    run = {}
    for key in SCHEMA["run"]:
        value = d.get(key, RUN_DEFAULTS.get(key))
        if value is None:
            raise ConfigError(f"missing required key {key!r} in section [run]")
        run[key] = _coerce("run", key, value)
    cfg = RunConfig(**run, **secs)
    _validate(cfg)
    return cfg


def _coerce(sec, key, value, line=None):
    try:
        return SCHEMA[sec][key](value)
    except (TypeError, ValueError) as exc:
        where = f" (line {line})" if line else ""
        raise ConfigError(f"bad value for [{sec}] {key}{where}: {exc}") from None


def _validate(cfg):
    if cfg.parallel < 1 or cfg.replicates < 1:
        raise ConfigError("parallel and replicates must be >= 1")
    cfg.solver_config()
    cfg.train_config()


def _line_numbers(text):
    """Map (section, key) to the 1-based line where it is set."""
    out, sec = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip()
        elif sec and "=" in s and not s.startswith(("#", ";")):
            out[(sec, s.split("=", 1)[0].strip())] = i
    return out


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: key outside any [section]") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: duplicate key {exc.option!r}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else "?"
        raise ConfigError(f"{source}: line {lineno}: cannot parse") from None
    lines = _line_numbers(text)
    raw = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, value in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{source}: line {lines.get((sec, key), '?')}: unknown key {key!r} in [{sec}]")
            if value.strip() in ("", "default"):
                continue
            raw.setdefault(sec, {})[key] = _coerce(sec, key, value.strip(), lines.get((sec, key)))
    for sec, key in REQUIRED:
        if key not in raw.get(sec, {}):
            raise ConfigError(f"{source}: missing required key {key!r} in section [{sec}]")
    d = dict(raw.pop("run"))
    d.update(raw)
    return from_dict(d)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def _show(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg):
    lines = ["[run]"]
    for key in SCHEMA["run"]:
        lines.append(f"{key} = {_show(getattr(cfg, key))}")
    for sec in ("solver", "train", "model", "task"):
        lines.append("")
        lines.append(f"[{sec}]")
        for key in SCHEMA[sec]:
            v = getattr(cfg, sec).get(key)
            lines.append(f"{key} = {'default' if v is None else _show(v)}")
    return "\n".join(lines) + "\n"
