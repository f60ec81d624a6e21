"""Run configuration and its flat ``key = value`` file format.

Lines look like ``beta = 1/10``; ``#`` starts a comment.  Keys are the field
names of :class:`RunConfig`.  Tuple-valued fields take comma-separated values.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any

from .synth import StreamSchedule, Style, SynthConfig

POLICIES = ("CASA", "NAL", "UAL", "NONE")
# accuracy to beat / MAE to undercut before a pseudo-domain counts as learned
DEFAULT_K = {"classification": 0.9, "regression": 5.0}
# squared loss has a much larger curvature than softmax cross-entropy on these inputs
DEFAULT_LR = {"classification": 0.5, "regression": 0.02}


class ConfigError(ValueError):
    pass


def parse_fraction(value: str | float | Fraction) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10 ** 9)
    return Fraction(str(value).strip())


@dataclass
class RunConfig:
    policy: str = "CASA"
    seed: int = 0
    # stream consumption
    B: int = 8
    T: int = 8
    b: int = 2
    # labelling
    beta: Fraction = Fraction(1, 10)
    n: int | None = None  # NAL stride, defaults to ceil(1/beta)
    u_quantile: float | None = None  # UAL selectivity, defaults to 1 - beta
    W: int = 200
    K: int = 10
    p_drop: float = 0.25
    # pseudo-domains
    k: float | None = None  # completion threshold; task default when None
    P: int = 10
    t: float | None = None  # None: t_factor * mean pairwise base-embedding distance
    t_factor: float = 1.0
    o: int = 10
    z: int = 10
    e: int = 30
    min_group: int = 4
    extractor_seed: int = 0
    # memory / learner
    M: int = 128
    lr: float | None = None  # task default when None
    base_epochs: int = 20
    base_batch: int = 16
    # benchmark
    task: str = "classification"
    schedule: str = "gradual"
    overlap: int = 100
    segment_lengths: tuple[int, ...] = (500, 500, 500, 500)
    base_size: int = 500
    test_size: int = 200
    validation_size: int = 100
    styles: tuple[Style, ...] = field(default_factory=lambda: SynthConfig().styles)

    def __post_init__(self):
        self.beta = parse_fraction(self.beta)
        self.validate()

    @property
    def stride(self) -> int:
        if self.n is not None:
            return self.n
        return math.ceil(1 / self.beta) if self.beta > 0 else 0

    @property
    def completion_k(self) -> float:
        if self.k is not None:
            return self.k
        return DEFAULT_K[self.task]

    @property
    def step_size(self) -> float:
        if self.lr is not None:
            return self.lr
        return DEFAULT_LR[self.task]

    @property
    def ual_quantile(self) -> float:
        return float(1 - self.beta) if self.u_quantile is None else self.u_quantile

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        for name in ("B", "T", "b", "P", "o", "z", "e", "M", "W", "K", "min_group", "base_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.base_epochs < 0:
            raise ConfigError("base_epochs must be non-negative")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be positive")
        if self.t is not None and self.t <= 0:
            raise ConfigError("t must be positive")
        if self.t_factor <= 0:
            raise ConfigError("t_factor must be positive")
        if not 0 <= self.p_drop < 1:
            raise ConfigError("p_drop must lie in [0, 1)")
        if self.u_quantile is not None and not 0 <= self.u_quantile <= 1:
            raise ConfigError("u_quantile must lie in [0, 1]")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.schedule not in ("ordered", "gradual", "random"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if len(self.styles) != len(self.segment_lengths):
            raise ConfigError("need one style per segment")
        if self.M < len(self.segment_lengths):
            # quotas of M/D must stay at least one entry for a plausible number of domains
            raise ConfigError("memory capacity M is smaller than the number of domains")
        if self.lr is not None and self.lr < 0:
            raise ConfigError("lr must be non-negative")

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            task=self.task,
            styles=tuple(self.styles),
            segment_lengths=tuple(self.segment_lengths),
            base_size=self.base_size,
            test_size=self.test_size,
            validation_size=self.validation_size,
            schedule=StreamSchedule(self.schedule, self.overlap),
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "beta":
                v = str(v)
            elif f.name == "styles":
                v = [dataclasses.asdict(s) for s in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        out["resolved_k"] = self.completion_k
        out["resolved_lr"] = self.step_size
        out["resolved_n"] = self.stride
        out["resolved_u_quantile"] = self.ual_quantile
        return out


def _coerce(name: str, raw: str) -> Any:
    raw = raw.strip()
    if name == "beta":
        return parse_fraction(raw)
    if name == "styles":
        # "blur:noise:gain:offset, blur:noise:gain:offset, ..."
        styles = []
        for part in raw.split(","):
            vals = [float(v) for v in part.strip().split(":")]
            if len(vals) != 4:
                raise ConfigError(f"style {part!r} needs blur:noise:gain:offset")
            styles.append(Style(*vals))
        return tuple(styles)
    if name == "segment_lengths":
        return tuple(int(v) for v in raw.split(","))
    if name in ("n", "u_quantile", "t", "k", "lr") and raw.lower() in ("", "none", "auto"):
        return None
    if name in ("policy", "task", "schedule"):
        return raw.upper() if name == "policy" else raw.lower()
    if name in ("n",):
        return int(raw)
    if name in ("u_quantile", "t", "k", "lr"):
        return float(raw)
    default = RunConfig.__dataclass_fields__[name].default
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str, **overrides) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path: str | Path, **overrides) -> RunConfig:
    return parse_config_text(Path(path).read_text(), **overrides)
