"""Run configuration: flat ``key = value`` files, flag overrides and validation.

Precedence, highest first: command-line flags, the ``VIANA_OUT``
environment variable (output directory only), the config file, defaults.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, fields

from .errors import ConfigTypeError, RangeError, UnknownKey


@dataclass(frozen=True)
class RunConfig:
    # map
    a0: str = "auto"
    m: int = 2
    k: int = 1
    bracket_lo: float = 1.4
    bracket_hi: float = 1.7
    eps: float = 1e-3
    d: int = 16
    eps_max: float = 0.05
    # hyperbolic returns
    eta: float = 0.1
    c: float = 0.10
    c_prime: float = 0.11
    p0: int = 50
    # runs
    seed: int = 0
    shards: int = 1
    workers: int = 1
    samples: int = 0
    n_max: int = 0
    n: int = 0
    burn_in: int = 1000
    budget: int = 400
    starts: int = 1000
    curves: int = 100
    pushes: int = 50
    rects: int = 100
    phi: str = "x"
    psi: str = "x"
    lag: int = -1
    batches: int = 20
    gamma: float = 1.0
    N: int = 4096
    margin: float = 0.05
    delta: float = 0.2
    out: str = "."

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_defaults(self, **defaults) -> "RunConfig":
        """Fill run-size fields left at 0 (or -1 for ``lag``) with subcommand defaults."""
        upd = {}
        for key, value in defaults.items():
            cur = getattr(self, key)
            if (key == "lag" and cur < 0) or (key != "lag" and cur == 0):
                upd[key] = value
        return dataclasses.replace(self, **upd) if upd else self


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TYPES = {"int": int, "float": float, "str": str}


def _convert(key: str, raw, line=None):
    typ = _TYPES[_FIELDS[key].type]
    if isinstance(raw, typ) and not isinstance(raw, bool):
        return raw
    text = str(raw).strip()
    try:
        if typ is int:
            val = float(text) if any(ch in text for ch in ".eE") else int(text, 0)
            if isinstance(val, float):
                if not val.is_integer():
                    raise ValueError
                val = int(val)
            return val
        if typ is float:
            val = float(text)
            if not math.isfinite(val):
                raise ValueError
            return val
        return text
    except ValueError:
        raise ConfigTypeError(f"expected {typ.__name__}, got {text!r}", key, line) from None


def _check_ranges(cfg: RunConfig, lines: dict):
    def bad(key, msg):
        raise RangeError(msg, key, lines.get(key))

    if cfg.a0 != "auto":
        try:
            a0 = float(cfg.a0)
        except ValueError:
            raise ConfigTypeError(f"a0 must be 'auto' or a number, got {cfg.a0!r}", "a0",
                                  lines.get("a0")) from None
        if not 1.0 < a0 < 2.0:
            bad("a0", "a0 must lie in (1, 2)")
    if cfg.d < 16:
        bad("d", "d must be >= 16")
    if not 0.0 < cfg.eps_max:
        bad("eps_max", "eps_max must be positive")
    if not 0.0 <= cfg.eps < cfg.eps_max:
        bad("eps", f"eps must lie in [0, {cfg.eps_max})")
    if not 0.0 < cfg.eta < 1.0 / 3.0:
        bad("eta", "eta must lie in (0, 1/3)")
    if not 0.0 < cfg.c < cfg.c_prime:
        bad("c_prime" if cfg.c > 0 else "c", "need 0 < c < c_prime")
    if cfg.m < 1 or cfg.k < 1:
        bad("m" if cfg.m < 1 else "k", "preperiod and period must be >= 1")
    if not 1.0 <= cfg.bracket_lo < cfg.bracket_hi <= 2.0:
        bad("bracket_hi", "need 1 <= bracket_lo < bracket_hi <= 2")
    for key in ("p0", "shards", "workers", "batches"):
        if getattr(cfg, key) < 1:
            bad(key, f"{key} must be >= 1")
    for key in ("samples", "n_max", "n", "burn_in", "budget", "starts", "curves", "pushes", "rects"):
        if getattr(cfg, key) < 0:
            bad(key, f"{key} must be >= 0")
    if cfg.seed < 0 or cfg.seed >= 2 ** 64:
        bad("seed", "seed must be a 64-bit unsigned integer")
    if cfg.gamma <= 0:
        bad("gamma", "gamma must be positive")
    if cfg.N < 4:
        bad("N", "N must be >= 4")
    if cfg.margin < 0:
        bad("margin", "margin must be >= 0")
    if cfg.delta <= 0:
        bad("delta", "delta must be positive")


def read_config_file(path: str) -> tuple[dict, dict]:
    """Parse a flat ``key = value`` file into ``(values, line numbers)``.

    ``#`` starts a comment; blank lines are ignored.
    """
    values, lines = {}, {}
    with open(path, encoding="utf-8") as fh:
        for no, raw in enumerate(fh, 1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigTypeError(f"expected 'key = value', got {text!r}", None, no)
            key, value = (s.strip() for s in text.split("=", 1))
            key = key.replace("-", "_")
            if key not in _FIELDS:
                raise UnknownKey(f"unknown key {key!r}", key, no)
            values[key] = _convert(key, value, no)
            lines[key] = no
    return values, lines


def parse_config(path: str | None = None, flags: dict | None = None, env=None) -> RunConfig:
    """Resolve a :class:`RunConfig` from a file, flag overrides and the environment."""
    env = os.environ if env is None else env
    values, lines = read_config_file(path) if path else ({}, {})
    if env.get("VIANA_OUT"):
        values["out"] = env["VIANA_OUT"]
        lines.pop("out", None)
    for key, value in (flags or {}).items():
        if value is None:
            continue
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise UnknownKey(f"unknown key {key!r}", key)
        values[key] = _convert(key, value)
        lines.pop(key, None)
    cfg = RunConfig(**values)
    _check_ranges(cfg, lines)
    return cfg
