"""Synthetic domain-shifted streams.

Each domain renders the same kind of payload (class-dependent band textures, or
a latent-driven texture for regression) through its own "acquisition style":
blur, contrast gain, intensity offset and additive noise.  Labels depend only
on the payload, so a domain change is pure covariate shift.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial.distance import pdist

TaskKind = Literal["classification", "regression"]
ScheduleMode = Literal["ordered", "gradual", "random"]


@dataclass(frozen=True)
class Style:
    blur: float = 0.0
    noise: float = 0.0
    gain: float = 1.0
    offset: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.blur, self.noise, self.gain, self.offset])


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    style: Style
    length: int


@dataclass(frozen=True)
class StreamSchedule:
    mode: ScheduleMode = "gradual"
    overlap: int = 100


@dataclass(frozen=True)
class StreamItem:
    """What a policy is allowed to see: no label, no domain."""

    id: int
    patch: np.ndarray = field(repr=False, compare=False)

    @property
    def features(self) -> np.ndarray:
        return self.patch.reshape(-1)


@dataclass(frozen=True)
class Sample:
    id: int
    patch: np.ndarray = field(repr=False, compare=False)
    label: float | int
    domain: int

    @property
    def features(self) -> np.ndarray:
        return self.patch.reshape(-1)

    def item(self) -> StreamItem:
        return StreamItem(self.id, self.patch)


@dataclass
class Dataset:
    """Base set, stream and per-domain held-out sets of one generated benchmark."""

    task: TaskKind
    base: list[Sample]
    stream: list[Sample]
    validation: dict[int, list[Sample]]
    test: dict[int, list[Sample]]
    boundaries: list[int]  # cumulative segment ends within the stream
    n_classes: int = 0

    @property
    def domains(self) -> list[int]:
        return sorted(self.test)

    def all_samples(self) -> Iterable[tuple[str, Sample]]:
        yield from (("base", s) for s in self.base)
        yield from (("stream", s) for s in self.stream)
        for split, sets in (("validation", self.validation), ("test", self.test)):
            for d in sorted(sets):
                yield from ((split, s) for s in sets[d])

    def true_domain_of(self) -> dict[int, int]:
        return {s.id: s.domain for _, s in self.all_samples()}

    def labels(self) -> dict[int, float | int]:
        return {s.id: s.label for _, s in self.all_samples()}


@dataclass(frozen=True)
class SynthConfig:
    task: TaskKind = "classification"
    n_classes: int = 3
    size: int = 16
    styles: tuple[Style, ...] = (
        Style(blur=0.0, noise=0.03, gain=1.0, offset=0.0),
        Style(blur=1.2, noise=0.03, gain=0.9, offset=0.25),
        Style(blur=0.0, noise=0.12, gain=0.55, offset=0.3),
        Style(blur=1.0, noise=0.0, gain=0.5, offset=-0.3),
    )
    segment_lengths: tuple[int, ...] = (500, 500, 500, 500)
    base_size: int = 500
    test_size: int = 200
    validation_size: int = 100
    schedule: StreamSchedule = StreamSchedule()
    min_separation: float = 0.05
    regression_noise: float = 0.5

    def domain_specs(self) -> list[DomainSpec]:
        if len(self.styles) != len(self.segment_lengths):
            raise ValueError("need one style per segment")
        return [DomainSpec(i + 1, s, n) for i, (s, n) in enumerate(zip(self.styles, self.segment_lengths))]


def class_prototypes(n_classes: int, size: int) -> np.ndarray:
    """One horizontal band per class; bands widen with the class index.

    Band width doubles as a brightness cue inside a single domain, which is
    exactly the cue that offset/gain shifts break.
    """
    protos = np.zeros((n_classes, size, size))
    rows = np.arange(size)[:, None] - (size - 1) / 2
    for k in range(n_classes):
        half = 1.0 + 4.0 * k / max(n_classes - 1, 1)
        protos[k] = np.broadcast_to(np.abs(rows) < half, (size, size))
    return protos


def _regression_bases(size: int, q: int = 4) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    bases = [
        np.sin(np.pi * xx),
        np.sin(np.pi * yy),
        np.cos(np.pi * (xx + yy)) * 0.5 + 0.5,
        np.exp(-((xx - 0.5) ** 2 + (yy - 0.5) ** 2) / 0.08),
    ]
    return np.stack(bases[:q])


def render_patch(payload: np.ndarray, style: Style, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply blur, contrast gain, offset, additive noise and clamping, in that order."""
    x = np.asarray(payload, dtype=np.float64)
    if style.blur > 0:
        x = gaussian_filter(x, sigma=style.blur, mode="reflect")
    x = (x - 0.5) * style.gain + 0.5
    x = x + style.offset
    if style.noise > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy styles")
        x = x + rng.normal(0.0, style.noise, size=x.shape)
    return np.clip(x, 0.0, 1.0)


class _PayloadSource:
    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        if cfg.task == "classification":
            self.protos = class_prototypes(cfg.n_classes, cfg.size)
        else:
            self.bases = _regression_bases(cfg.size)
            self.coef = np.array([3.0, -2.0, 4.0, 5.0])[: len(self.bases)]

    def draw(self) -> tuple[np.ndarray, float | int]:
        rng = self.rng
        if self.cfg.task == "classification":
            label = int(rng.integers(self.cfg.n_classes))
            shift = rng.integers(-1, 2, size=2)
            shape = np.roll(self.protos[label], tuple(shift), axis=(0, 1))
            amp = rng.uniform(0.45, 0.6)
            background = rng.uniform(0.2, 0.3)
            return background + amp * shape, label
        z = rng.uniform(0.0, 1.0, size=len(self.bases))
        texture = np.tensordot(z, self.bases, axes=1) / len(self.bases)
        texture = 0.2 + 0.6 * texture
        label = float(self.coef @ z * 4.0 + rng.normal(0.0, self.cfg.regression_noise))
        return texture, label


def _check_styles(cfg: SynthConfig) -> None:
    arrs = [s.as_array() for s in cfg.styles]
    for i in range(len(arrs)):
        for j in range(i + 1, len(arrs)):
            if np.max(np.abs(arrs[i] - arrs[j])) < cfg.min_separation:
                raise ValueError(f"styles of domains {i + 1} and {j + 1} are closer than {cfg.min_separation}")


def schedule_domains(lengths: Sequence[int], schedule: StreamSchedule, rng: np.random.Generator) -> np.ndarray:
    """Domain index (0-based) of every stream position."""
    lengths = list(lengths)
    seq = np.concatenate([np.full(n, d) for d, n in enumerate(lengths)]).astype(int)
    if schedule.mode == "ordered":
        return seq
    if schedule.mode == "random":
        return rng.permutation(seq)
    if schedule.mode != "gradual":
        raise ValueError(f"unknown schedule mode {schedule.mode!r}")
    w = schedule.overlap
    if w < 0:
        raise ValueError("overlap must be non-negative")
    for a, b in zip(lengths, lengths[1:]):
        if w > a or w > b:
            raise ValueError(f"overlap {w} wider than an adjacent segment ({a}, {b})")
    if w < 2:
        return seq
    ends = np.cumsum(lengths)
    for d in range(len(lengths) - 1):
        start = ends[d] - w // 2
        window = np.arange(start, start + w)
        n_next = int(np.sum(seq[window] == d + 1))
        ramp = (np.arange(w) + 0.5) / w
        chosen = rng.choice(w, size=n_next, replace=False, p=ramp / ramp.sum())
        labels = np.full(w, d)
        labels[chosen] = d + 1
        seq[window] = labels
    return seq


def generate(cfg: SynthConfig = SynthConfig(), seed: int = 0) -> Dataset:
    """Generate base set (domain 1 only), stream, and held-out sets.

    Ids are unique across all splits.
    """
    specs = cfg.domain_specs()
    if len(specs) < 2:
        raise ValueError("need at least two domains")
    _check_styles(cfg)
    rng = np.random.default_rng(seed)
    payloads = _PayloadSource(cfg, rng)
    next_id = 0

    def make(style: Style, domain: int) -> Sample:
        nonlocal next_id
        payload, label = payloads.draw()
        s = Sample(next_id, render_patch(payload, style, rng), label, domain)
        next_id += 1
        return s

    base = [make(specs[0].style, 1) for _ in range(cfg.base_size)]
    order = schedule_domains(cfg.segment_lengths, cfg.schedule, rng)
    stream = [make(specs[d].style, specs[d].domain_id) for d in order]
    validation = {sp.domain_id: [make(sp.style, sp.domain_id) for _ in range(cfg.validation_size)] for sp in specs}
    test = {sp.domain_id: [make(sp.style, sp.domain_id) for _ in range(cfg.test_size)] for sp in specs}
    return Dataset(
        task=cfg.task,
        base=base,
        stream=stream,
        validation=validation,
        test=test,
        boundaries=np.cumsum(cfg.segment_lengths).tolist(),
        n_classes=cfg.n_classes if cfg.task == "classification" else 0,
    )


def separability(embeddings: np.ndarray, domains: np.ndarray) -> float:
    """Mean between-domain distance over mean within-domain distance."""
    x = np.asarray(embeddings, dtype=np.float64)
    d = np.asarray(domains)
    if len(x) != len(d):
        raise ValueError("one domain tag per embedding required")
    dist = pdist(x)
    i, j = np.triu_indices(len(d), 1)
    same = d[i] == d[j]
    if same.all() or not same.any():
        raise ValueError("separability needs at least two domains and a repeated tag")
    return float(dist[~same].mean() / dist[same].mean())


def write_ndjson(ds: Dataset, path: str | Path) -> None:
    """Records: ``{"id", "split", "shape", "patch" (row-major), "label", "domain"}``.

    The first line is a header record ``{"task", "n_classes", "boundaries"}``.
    """
    with open(path, "w") as fh:
        fh.write(json.dumps({"task": ds.task, "n_classes": ds.n_classes, "boundaries": ds.boundaries}) + "\n")
        for split, s in ds.all_samples():
            rec = {
                "id": s.id,
                "split": split,
                "shape": list(s.patch.shape),
                "patch": s.patch.reshape(-1).tolist(),
                "label": s.label,
                "domain": s.domain,
            }
            fh.write(json.dumps(rec) + "\n")


def read_ndjson(path: str | Path) -> Dataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        ds = Dataset(header["task"], [], [], {}, {}, list(header["boundaries"]), header["n_classes"])
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            patch = np.asarray(rec["patch"], dtype=np.float64).reshape(rec["shape"])
            s = Sample(rec["id"], patch, rec["label"], rec["domain"])
            split = rec["split"]
            if split == "base":
                ds.base.append(s)
            elif split == "stream":
                ds.stream.append(s)
            elif split in ("validation", "test"):
                getattr(ds, split).setdefault(s.domain, []).append(s)
            else:
                raise ValueError(f"unknown split {split!r}")
    return ds
