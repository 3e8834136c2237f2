"""Flat key=value experiment configuration."""
from __future__ import annotations

import math

import numpy as np
from dataclasses import dataclass, field

from .exponents import ParameterError, ProblemParams, WeightCase, check_alpha


class ConfigError(ValueError):
    """Invalid configuration; the message carries file:line when known."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    s = s.strip()
    if not s:
        return ()
    return tuple(float(x) for x in s.split(","))


def _float_or_none(s: str):
    s = s.strip()
    return None if s in ("", "none", "auto") else float(s)


def _case(s: str) -> str:
    return WeightCase(s.strip().upper()).value


COMMANDS = ("exponent", "kernel-probe", "simulate", "picard", "sweep", "smallness")

# key -> (parser, default, help)
KEYS: dict[str, tuple] = {
    "command": (str, "", "subcommand the file was written for (informational)"),
    "p": (_float_or_none, None, "exponent of v in the u equation"),
    "q": (_float_or_none, None, "exponent of u in the v equation"),
    "r": (float, 0.0, "time-weight exponent of the u source"),
    "s": (float, 0.0, "time-weight exponent of the v source"),
    "alpha": (float, 0.0, "degeneracy exponent of the weight"),
    "N": (int, 1, "spatial dimension (1 or 2 for simulations)"),
    "case": (_case, "A", "weight case: A = |x_1|^alpha, B = |x|^alpha"),
    "L": (float, 1000.0, "half-width of the truncation box"),
    "cells": (int, 4001, "cells per axis (odd)"),
    "shape": (str, "auto", "initial data shape: gaussian, critical, delta, auto"),
    "scale": (float, 0.1, "amplitude factor applied to the data shape"),
    "v_scale": (_float_or_none, None, "separate amplitude for v0 (default: scale)"),
    "width": (float, 1.0, "Gaussian width"),
    "T_max": (float, 1000.0, "final time"),
    "M_blow": (_float_or_none, None, "blow-up threshold (default blow_factor * initial size)"),
    "blow_factor": (float, 1e8, "threshold factor over ||u0||+||v0||"),
    "dt0": (float, 1e-3, "initial time step"),
    "dt_max": (float, math.inf, "largest time step"),
    "dt_min": (_float_or_none, None, "step underflow limit (default 1e-12 T_max)"),
    "adaptive": (_bool, True, "adaptive time stepping"),
    "sample_start": (float, 1e-2, "first time on the geometric sample ladder"),
    "samples_per_decade": (int, 12, "ladder density"),
    "dump_snapshots": (_bool, False, "write field CSVs at the sample times"),
    "probe_t_min": (float, 0.1, "kernel probe: first time"),
    "probe_t_max": (float, 1.0, "kernel probe: last time"),
    "probe_points": (int, 11, "kernel probe: number of times"),
    "probe_steps": (int, 400, "implicit substeps per semigroup application"),
    "T": (float, 0.1, "picard: horizon"),
    "levels": (int, 50, "picard: uniform time levels"),
    "n_max": (int, 200, "picard: iteration cap"),
    "tol": (float, 1e-12, "picard: relative gap tolerance"),
    "approx_n": (_float_or_none, None, "picard: f_n index for exponents below 1"),
    "p_values": (_floats, (), "sweep: comma-separated p values"),
    "q_values": (_floats, (), "sweep: comma-separated q values"),
    "scales": (_floats, (0.05, 1.0), "sweep: comma-separated data scales"),
    "critical_margin": (float, 0.02, "sweep: relative band around the critical curve left unscored"),
    "workers": (int, 1, "sweep: worker processes"),
    "c_start": (float, 0.1, "smallness: first scale"),
    "bisections": (int, 6, "smallness: bisection steps"),
    "max_expand": (int, 8, "smallness: doublings/halvings allowed"),
    "out": (str, "out", "output directory"),
}

REQUIRED = {
    "exponent": ("p", "q"),
    "kernel-probe": (),
    "simulate": ("p", "q"),
    "picard": ("p", "q"),
    "sweep": (),
    "smallness": ("p", "q"),
}


@dataclass
class ExperimentConfig:
    command: str
    values: dict
    source: dict = field(default_factory=dict)  # key -> "file:line" or "--flag"
    path: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def params(self) -> ProblemParams:
        v = self.values
        return ProblemParams(v["p"], v["q"], v["r"], v["s"], v["alpha"], v["N"], v["case"])

    def manifest(self) -> str:
        lines = ["# resolved configuration; rerun with: fujitalab "
                 f"{self.command} --config <this file>", f"command={self.command}"]
        for key in KEYS:
            if key == "command":
                continue
            lines.append(f"{key}={format_value(self.values[key])}")
        return "\n".join(lines) + "\n"


def format_value(x) -> str:
    if x is None:
        return "none"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, tuple):
        return ",".join(repr(float(e)) for e in x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def read_pairs(path: str) -> list[tuple[str, str, int]]:
    """(key, raw value, line number) triples; comments and blank lines skipped."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    out, seen = [], {}
    for i, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{i}: expected key=value, got {body!r}")
        key, raw = (x.strip() for x in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{i}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{i}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = i
        out.append((key, raw, i))
    return out


def parse_config(path: str | None, command: str, overrides: dict | None = None) -> ExperimentConfig:
    """Resolve defaults <- file <- overrides and validate every invariant."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    values = {k: spec[1] for k, spec in KEYS.items()}
    source: dict[str, str] = {}
    if path is not None:
        for key, raw, line in read_pairs(path):
            try:
                values[key] = KEYS[key][0](raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{line}: bad value for {key!r}: {exc}") from exc
            source[key] = f"{path}:{line}"
    for key, raw in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown option --{key}")
        try:
            values[key] = KEYS[key][0](raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"--{key}: bad value: {exc}") from exc
        source[key] = f"--{key}"
    values["command"] = command
    cfg = ExperimentConfig(command, values, source, path)
    validate(cfg)
    return cfg


def _where(cfg: ExperimentConfig, *keys: str) -> str:
    for k in keys:
        if k in cfg.source:
            return cfg.source[k] + ": "
    return (cfg.path + ": ") if cfg.path else ""


def validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    for key in REQUIRED[cfg.command]:
        if v[key] in (None, ()):
            raise ConfigError(f"{cfg.path + ': ' if cfg.path else ''}missing required key {key!r}")
    if cfg.command != "sweep" and v["p"] is not None and v["q"] is not None:
        try:
            cfg.params()
        except ParameterError as exc:
            msg = str(exc)
            keys = ("alpha", "case", "N") if "alpha" in msg else \
                   ("r", "s") if "r > -1" in msg else ("p", "q")
            raise ConfigError(_where(cfg, *keys) + msg) from exc
    try:
        check_alpha(v["case"], v["alpha"], v["N"])
    except ParameterError as exc:
        raise ConfigError(_where(cfg, "alpha", "case") + str(exc)) from exc
    if cfg.command != "exponent":
        if v["N"] not in (1, 2):
            raise ConfigError(_where(cfg, "N") + f"simulations support N in {{1, 2}}, got {v['N']}")
        if v["cells"] < 3 or v["cells"] % 2 == 0:
            raise ConfigError(_where(cfg, "cells") + f"cells must be odd and >= 3, got {v['cells']}")
        if not v["L"] > 0:
            raise ConfigError(_where(cfg, "L") + "L must be positive")
    if not v["T_max"] > 0 or not v["dt0"] > 0:
        raise ConfigError(_where(cfg, "T_max", "dt0") + "T_max and dt0 must be positive")
    if not 0 < v["sample_start"] <= v["T_max"]:
        raise ConfigError(_where(cfg, "sample_start") + "sample_start must lie in (0, T_max]")
    if v["shape"] not in ("gaussian", "critical", "delta", "auto"):
        raise ConfigError(_where(cfg, "shape") + f"unknown shape {v['shape']!r}")
    if not v["probe_t_min"] < v["probe_t_max"]:
        raise ConfigError(_where(cfg, "probe_t_min") + "probe_t_min must be below probe_t_max")
    if v["approx_n"] is not None and (v["approx_n"] < 1 or int(v["approx_n"]) != v["approx_n"]):
        raise ConfigError(_where(cfg, "approx_n") + "approx_n must be a positive integer")
    if v["workers"] < 1:
        raise ConfigError(_where(cfg, "workers") + "workers must be >= 1")
