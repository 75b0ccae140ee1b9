"""Flat ``key = value`` configuration files.

Blank lines and lines starting with ``#`` or ``;`` are ignored.  Lists are
comma separated.  Example::

    experiment = faults
    seeds = 1, 2, 3
    m_values = 15
    iterations = 25000
    burn_in = 10000
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import InvalidSpec

EXPERIMENTS = ("faults", "sliding_doors", "ordering", "custom")


def read_flat_config(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string("[root]\n" + text)
    return dict(parser["root"])


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "faults"
    seeds: tuple = (1, 2, 3, 4, 5)
    m_values: tuple = (15,)
    iterations: int = 25_000
    burn_in: int = 10_000
    thin: int = 1
    predict_thin: int = 5
    phi_proposal_sd: float = 0.3
    out_dir: str = "."
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    # faults: (x_start, x_end, y) of each horizontal fault
    fault1: tuple = (0.0, 1.7, 0.7)
    fault2: tuple = (0.7, 2.0, 1.3)
    grid_size: int = 67
    orderings: tuple = ("x", "y", "sum")

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidSpec(f"unknown experiment {self.experiment!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidSpec("replicate seeds must be distinct")
        if any(m < 1 for m in self.m_values):
            raise InvalidSpec("m must be at least 1")
        if not 0 <= self.burn_in < self.iterations:
            raise InvalidSpec("need 0 <= burn_in < iterations")

    @classmethod
    def from_mapping(cls, mapping: dict, **overrides) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in {**mapping, **overrides}.items():
            if raw is None:
                continue
            if key not in kinds:
                raise InvalidSpec(f"unknown config key {key!r}")
            if key in ("seeds", "m_values"):
                kw[key] = _ints(raw) if isinstance(raw, str) else tuple(int(v) for v in raw)
            elif key in ("fault1", "fault2"):
                kw[key] = _floats(raw) if isinstance(raw, str) else tuple(float(v) for v in raw)
            elif key == "orderings":
                kw[key] = tuple(v.strip() for v in raw.split(",")) if isinstance(raw, str) else tuple(raw)
            elif key in ("experiment", "out_dir"):
                kw[key] = str(raw)
            elif key == "phi_proposal_sd":
                kw[key] = float(raw)
            else:
                kw[key] = int(raw)
        return cls(**kw)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        return cls.from_mapping(read_flat_config(path), **overrides)
