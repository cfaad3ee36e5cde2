"""Flat ``key = value`` experiment configuration."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

ESTIMATOR_CHOICES = ("naive", "conditional")
WALK_CHOICES = ("simple", "lazy")
SCENERY_CHOICES = ("gaussian", "rademacher", "laplace", "uniform")
B_RULES = ("fixed", "power", "sigma")


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "^" in part:
            base, exp = part.split("^")
            out.append(int(base) ** int(exp))
        else:
            out.append(int(part))
    if not out or any(v < 1 for v in out):
        raise ValueError("n values must be positive integers")
    return tuple(out)


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


# key -> (parser, default); a default of None marks a required key
SCHEMA = {
    "experiment": (str, "run"),
    "estimator": (_choice(ESTIMATOR_CHOICES), None),
    "d": (_positive_int, None),
    "law": (_choice(WALK_CHOICES), None),
    "scenery": (_choice(SCENERY_CHOICES), None),
    "scenery_param": (float, 1.0),
    "n": (_int_list, None),
    "b_rule": (_choice(B_RULES), "fixed"),
    "b": (float, 0.0),
    "b_coef": (float, 1.0),
    "b_beta": (float, 0.5),
    "replicas": (_positive_int, None),
    "inner_replicas": (_positive_int, 1000),
    "seed": (int, None),
    "workers": (_positive_int, 0),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict
    digest: str

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None


def parse_config(text: str) -> dict:
    """Parse and validate config text; unknown or repeated keys are errors."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    out = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                out[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        elif default is None:
            raise ConfigError(f"missing required key {key!r}")
        else:
            out[key] = default
    if out["d"] < 2:
        raise ConfigError("d must be >= 2")
    return out


def load_config(path: str | os.PathLike) -> RunConfig:
    data = open(path, "rb").read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8: {exc}") from None
    values = parse_config(text)
    env = os.environ.get("SCENERYLAB_SEED")
    if env is not None and env.strip():
        try:
            values["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"SCENERYLAB_SEED={env!r} is not an integer") from None
    return RunConfig(values, hashlib.sha256(data).hexdigest())
