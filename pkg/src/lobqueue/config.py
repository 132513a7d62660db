"""Flat ``key = value`` configuration shared by all commands.

Model keys: rho_xy, rho_xz, rho_yz, phi0, sigma_b, sigma_a, reset_b_dist,
reset_a_dist, tick, spread, depth. Run keys: seed, buckets, modes, paths,
dt, workers, bridge_correction, max_epochs, near_side, on_unsorted,
symmetric, free_depth, restarts, mc_paths, mc_dt, grid.

Reset distributions are written ``lognormal:median=M,dispersion=S``,
``empirical:PATH`` (a CSV with a ``qty`` column, relative to the config
file) or ``empirical:v1;v2;...``.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import os
from dataclasses import dataclass, field

from .errors import DomainError, InputError
from .model import (CorrelationTriple, EmpiricalReset, LogNormalReset, ModelParams,
                    ResetDistribution)

MODEL_KEYS = ("rho_xy", "rho_xz", "rho_yz", "phi0", "sigma_b", "sigma_a", "reset_b_dist",
              "reset_a_dist", "tick", "spread", "depth")
RUN_KEYS = ("seed", "buckets", "modes", "paths", "dt", "workers", "bridge_correction",
            "max_epochs", "near_side", "on_unsorted", "symmetric", "free_depth", "restarts",
            "mc_paths", "mc_dt", "grid")

DEFAULTS = {
    "rho_xy": "-0.1", "rho_xz": "0.0", "rho_yz": "0.0", "phi0": "3.5",
    "sigma_b": "1.0", "sigma_a": "1.0",
    "reset_b_dist": "lognormal:median=1.0,dispersion=0.5",
    "reset_a_dist": "lognormal:median=1.0,dispersion=0.5",
    "tick": "1.0", "spread": "1.0",
    "seed": "12345", "buckets": "20", "modes": "40", "paths": "100000", "dt": "0.001",
    "workers": "1", "bridge_correction": "true", "max_epochs": "10000", "near_side": "Bid",
    "on_unsorted": "reject", "symmetric": "true", "free_depth": "false", "restarts": "3",
    "mc_paths": "2000", "mc_dt": "0.01", "grid": "-0.9:0.9:19",
}

_SECTION = "lobqueue"


@dataclass(frozen=True)
class Config:
    values: dict
    path: str | None = None
    base_dir: str = field(default=".", compare=False)

    def get(self, key: str) -> str | None:
        return self.values.get(key, DEFAULTS.get(key))

    def override(self, **kv) -> Config:
        vals = dict(self.values)
        for k, v in kv.items():
            if v is not None:
                vals[k] = str(v)
        return Config(vals, self.path, self.base_dir)

    def _typed(self, key: str, conv, what: str):
        raw = self.get(key)
        try:
            return conv(raw)
        except (TypeError, ValueError):
            raise InputError(f"config key {key} must be {what}, got {raw!r}", path=self.path) from None

    def float(self, key: str) -> float:
        return self._typed(key, float, "a number")

    def int(self, key: str) -> int:
        return self._typed(key, int, "an integer")

    def bool(self, key: str) -> bool:
        def conv(raw):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return self._typed(key, conv, "a boolean")

    def depth(self) -> float | None:
        raw = self.get("depth")
        return None if raw in (None, "") else self.float("depth")

    def grid(self) -> list[float]:
        raw = self.get("grid")
        try:
            lo, hi, n = raw.split(":")
            lo, hi, n = float(lo), float(hi), int(n)
        except ValueError:
            raise InputError(f"grid must look like lo:hi:count, got {raw!r}", path=self.path) from None
        if n < 1 or not -1 <= lo <= hi <= 1:
            raise InputError("grid bounds must satisfy -1 <= lo <= hi <= 1 with count >= 1",
                             path=self.path)
        if n == 1:
            return [lo]
        return [lo + (hi - lo) * k / (n - 1) for k in range(n)]

    def reset(self, key: str) -> ResetDistribution:
        return parse_reset(self.get(key), self.base_dir, self.path)

    def model_params(self) -> ModelParams:
        """Build and validate the model parameters (DomainError if invalid)."""
        corr = CorrelationTriple(self.float("rho_xy"), self.float("rho_xz"), self.float("rho_yz"))
        return ModelParams(corr, phi0=self.float("phi0"), sigma_b=self.float("sigma_b"),
                           sigma_a=self.float("sigma_a"), reset_b=self.reset("reset_b_dist"),
                           reset_a=self.reset("reset_a_dist"), tick=self.float("tick"),
                           spread=self.float("spread"), depth=self.depth())

    def resolved(self) -> dict:
        """Every key with its effective value."""
        out = {k: DEFAULTS.get(k) for k in MODEL_KEYS + RUN_KEYS}
        out.update(self.values)
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.resolved().items()) if v is not None)


def parse_reset(text: str, base_dir: str = ".", path: str | None = None) -> ResetDistribution:
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "lognormal":
            kv = dict(item.split("=", 1) for item in rest.split(",") if item.strip())
            kv = {k.strip(): float(v) for k, v in kv.items()}
            unknown = set(kv) - {"median", "dispersion"}
            if unknown or "median" not in kv:
                raise ValueError
            return LogNormalReset(kv["median"], kv.get("dispersion", 0.5))
        if kind == "empirical":
            rest = rest.strip()
            if ";" in rest or _is_number(rest):
                return EmpiricalReset(tuple(float(v) for v in rest.split(";") if v.strip()))
            file = rest if os.path.isabs(rest) else os.path.join(base_dir, rest)
            return EmpiricalReset(tuple(_read_qty_column(file)), source=rest)
    except DomainError:
        raise
    except (ValueError, KeyError):
        pass
    raise InputError(f"cannot parse reset distribution {text!r}", path=path)


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _read_qty_column(file: str) -> list[float]:
    try:
        with open(file, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as err:
        raise InputError(f"cannot open reset sample file: {err.strerror}", path=file) from err
    try:
        return [float(r["qty"]) for r in rows]
    except (KeyError, ValueError, TypeError):
        raise InputError("reset sample file needs a numeric qty column", path=file) from None


def load_config(path: str | None) -> Config:
    if path is None:
        return Config({})
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise InputError(f"cannot read config: {err.strerror}", path=path) from err
    return parse_config(text, path)


def parse_config(text: str, path: str | None = None) -> Config:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=path or "<config>")
    except configparser.Error as err:
        line = getattr(err, "lineno", None)
        raise InputError(f"malformed config: {err.message.splitlines()[0]}",
                         line=None if line is None else line - 1, path=path) from None
    values = dict(parser[_SECTION])
    unknown = sorted(set(values) - set(MODEL_KEYS + RUN_KEYS))
    if unknown:
        raise InputError(f"unknown config key(s): {', '.join(unknown)}", path=path)
    base = os.path.dirname(os.path.abspath(path)) if path else "."
    return Config(values, path, base)


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
