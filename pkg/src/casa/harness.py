"""Evaluation harness: transfer metrics, memory composition, projections, upper bounds, reports."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import RunConfig
from .learners import higher_is_better, make_learner
from .memory import MemoryEntry
from .orchestrator import RunArtifacts, evaluate_row
from .style import fit_pca
from .synth import Dataset, generate

__all__ = [
    "bwt",
    "fwt",
    "evaluate_row",
    "Contingency",
    "memory_composition",
    "projection_export",
    "train_upper_bounds",
    "write_run",
    "write_upper_bounds",
    "collect",
    "report",
]


def _check_matrix(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] + 1:
        raise ValueError(f"expected a (T+1) x T evaluation matrix, got shape {R.shape}")
    if R.shape[1] < 2:
        raise ValueError("transfer metrics need at least two domains")
    if not np.all(np.isfinite(R)):
        raise ValueError("evaluation matrix has non-finite entries")
    return R


def bwt(R: np.ndarray, higher_is_better: bool = True) -> float:
    """Backward transfer: mean change on earlier domains between learning them and the end.

    ``R[s, d]`` is performance on domain ``d`` after stage ``s``; row 0 is the
    model before any continual training.  Negative means forgetting, also for
    lower-is-better metrics (the sign is flipped for those).
    """
    R = _check_matrix(R)
    T = R.shape[1]
    val = float(np.mean([R[T, i] - R[i + 1, i] for i in range(T - 1)]))
    return val if higher_is_better else -val


def fwt(R: np.ndarray, higher_is_better: bool = True) -> float:
    """Forward transfer: gain on each domain, just before its stage, over the base model."""
    R = _check_matrix(R)
    T = R.shape[1]
    val = float(np.mean([R[i, i] - R[0, i] for i in range(1, T)]))
    return val if higher_is_better else -val


@dataclass(frozen=True)
class Contingency:
    true_domains: list[int]
    pseudo_domains: list[int]
    counts: np.ndarray  # (len(true_domains), len(pseudo_domains))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def by_true_domain(self) -> dict[int, int]:
        return {d: int(c) for d, c in zip(self.true_domains, self.counts.sum(axis=1))}

    def by_pseudo_domain(self) -> dict[int, int]:
        return {p: int(c) for p, c in zip(self.pseudo_domains, self.counts.sum(axis=0))}

    def rows(self) -> list[tuple[int, int, int]]:
        return [
            (td, pd, int(self.counts[i, j]))
            for i, td in enumerate(self.true_domains)
            for j, pd in enumerate(self.pseudo_domains)
            if self.counts[i, j]
        ]


def memory_composition(entries: Iterable[MemoryEntry], true_domain: Mapping[int, int]) -> Contingency:
    """Count memory entries per (true domain, pseudo-domain) cell."""
    cells: dict[tuple[int, int], int] = defaultdict(int)
    for e in entries:
        cells[true_domain[e.sample.id], e.pseudo_domain] += 1
    tds = sorted({k[0] for k in cells})
    pds = sorted({k[1] for k in cells})
    counts = np.zeros((len(tds), len(pds)), dtype=np.int64)
    for (td, pd), c in cells.items():
        counts[tds.index(td), pds.index(pd)] = c
    return Contingency(tds, pds, counts)


def projection_export(
    embeddings: np.ndarray,
    tags: Sequence,
    csv_path: str | Path | None = None,
    svg_path: str | Path | None = None,
    extra_tags: Sequence | None = None,
) -> np.ndarray:
    """Project embeddings on their first two principal components.

    Writes ``x,y,tag[,member]`` rows to ``csv_path`` and a scatter plot
    coloured by tag to ``svg_path`` when given.  Returns the ``(n, 2)``
    coordinates.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise ValueError("projection needs at least 3 embeddings")
    if len(tags) != len(x) or (extra_tags is not None and len(extra_tags) != len(x)):
        raise ValueError("one tag per embedding required")
    if x.shape[1] < 2:
        x = np.hstack([x, np.zeros((len(x), 2 - x.shape[1]))])
    if not np.any(x - x.mean(axis=0)):
        coords = np.zeros((len(x), 2))
    else:
        coords = fit_pca(x, 2).project(x)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "tag"] + (["member"] if extra_tags is not None else []))
            for i, (cx, cy) in enumerate(coords):
                row = [repr(float(cx)), repr(float(cy)), tags[i]]
                if extra_tags is not None:
                    row.append(extra_tags[i])
                w.writerow(row)
    if svg_path is not None:
        _scatter_svg(coords, list(tags), svg_path)
    return coords


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save_svg(fig, path) -> None:
    # no timestamp, so repeated runs give identical files
    fig.savefig(path, format="svg", metadata={"Date": None})


def _scatter_svg(coords: np.ndarray, tags: list, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for tag in sorted(set(tags), key=str):
        m = np.array([t == tag for t in tags])
        ax.scatter(coords[m, 0], coords[m, 1], s=6, label=str(tag))
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(title="domain", fontsize=7)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def _domain_training_sets(ds: Dataset) -> dict[int, list]:
    sets: dict[int, list] = defaultdict(list)
    for s in ds.base:
        sets[s.domain].append(s)
    for s in ds.stream:
        sets[s.domain].append(s)
    return dict(sets)


def train_upper_bounds(cfg: RunConfig, dataset: Dataset | None = None) -> dict[str, list[float]]:
    """Fully supervised reference rows.

    ``DSM``: one learner per domain, trained for ``cfg.base_epochs`` epochs on every
    labelled sample of that domain and evaluated on its own test set.
    ``JModel``: one learner trained on the union and evaluated on all test sets.
    """
    ds = dataset if dataset is not None else generate(cfg.synth_config(), seed=cfg.seed)
    seed = int(np.random.SeedSequence(cfg.seed).spawn(1)[0].generate_state(1)[0])
    n_features = ds.base[0].features.size
    per_domain = _domain_training_sets(ds)

    def fit(samples):
        learner = make_learner(cfg.task, n_features, cfg.step_size, seed, max(ds.n_classes, 1))
        X = np.stack([s.features for s in samples])
        y = np.array([s.label for s in samples])
        learner.fit_epochs(X, y, cfg.base_epochs, cfg.base_batch)
        return learner

    dsm = [evaluate_row(fit(per_domain[d]), {d: ds.test[d]})[0] for d in ds.domains]
    union = [s for d in ds.domains for s in per_domain[d]]
    joint = evaluate_row(fit(union), ds.test)
    return {"DSM": dsm, "JModel": joint}


# run outputs

def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_run(art: RunArtifacts, out: str | Path, dataset: Dataset | None = None, plots: bool = True) -> Path:
    """Write metrics, transfer, budget, memory, registry and metadata files for one run."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = art.config
    hib = higher_is_better(cfg.task)
    R = art.eval_matrix

    _write_csv(
        out / "metrics.csv",
        ["checkpoint", "domain", "policy", "seed", "metric_value"],
        ([s, d, cfg.policy, cfg.seed, _fmt(R[s, j])] for s in range(len(R)) for j, d in enumerate(art.domains)),
    )
    b, f = bwt(R, hib), fwt(R, hib)
    _write_csv(out / "transfer.csv", ["policy", "seed", "bwt", "fwt"], [[cfg.policy, cfg.seed, _fmt(b), _fmt(f)]])
    _write_csv(out / "budget.csv", ["step", "spent", "outlier_count"], art.budget_trace)
    _write_csv(
        out / "memory.csv",
        ["checkpoint", "true_domain", "pseudo_domain", "count"],
        (row for table in art.memory_tables for row in table),
    )
    registry = {
        "checkpoints": [
            {"checkpoint": i, "step": art.checkpoint_steps[i], **snap} for i, snap in enumerate(art.registry_snapshots)
        ]
    }
    (out / "registry.json").write_text(json.dumps(registry, indent=1) + "\n")
    seeds = np.random.SeedSequence(cfg.seed)
    meta = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "seed_entropy": str(seeds.entropy),
        "checkpoint_steps": art.checkpoint_steps,
        "budget_total": art.ledger.total,
        "oracle_calls": art.oracle_calls,
        "threshold_t": art.t,
        "separability": art.separability,
        "n_pseudo_domains": art.n_pseudo_domains,
        "quota_ok": art.unflagged_quota_ok,
        "bwt": b,
        "fwt": f,
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    if plots:
        _trajectory_svg(R, art.domains, out / "trajectory.svg", cfg.task)
        _budget_svg(art.budget_trace, art.ledger.total, out / "budget.svg")
        embedder = art.extras.get("embedder")
        if embedder is not None and dataset is not None:
            patches = np.concatenate([np.stack([s.patch for s in dataset.test[d]]) for d in dataset.domains])
            tags = [d for d in dataset.domains for _ in dataset.test[d]]
            projection_export(embedder.embed_many(patches), tags, out / "projection.csv", out / "projection.svg")
    return out


def _trajectory_svg(R: np.ndarray, domains: Sequence[int], path: Path, task: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for j, d in enumerate(domains):
        ax.plot(range(len(R)), R[:, j], marker="o", label=f"domain {d}")
    ax.set_xlabel("checkpoint (0 = base)")
    ax.set_ylabel("accuracy" if task == "classification" else "MAE")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def _budget_svg(trace, total: int, path: Path) -> None:
    plt = _pyplot()
    steps = [t[0] for t in trace]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(steps, [t[1] for t in trace], label="labels spent")
    ax.plot(steps, [t[2] for t in trace], label="outlier memory")
    ax.axhline(total, color="grey", lw=0.8, ls="--")
    ax.set_xlabel("batch")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def write_upper_bounds(rows: Mapping[str, Sequence[float]], domains: Sequence[int], seed: int, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "upper_bounds.csv",
        ["model", "domain", "seed", "metric_value"],
        ([name, d, seed, _fmt(v)] for name, row in rows.items() for d, v in zip(domains, row)),
    )
    return out / "upper_bounds.csv"


# aggregation

def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean_std(vals: Sequence[float]) -> str:
    a = np.asarray(vals, dtype=np.float64)
    return f"{a.mean():.3f}±{a.std():.3f}"


def collect(dirs: Iterable[str | Path]) -> tuple[dict, dict]:
    """Final per-domain metrics and transfer metrics, keyed by model then domain/metric.

    Rows shared by every policy of a seed (the base model, DSM and JModel) are
    counted once per seed however many run directories repeat them.
    """
    cells: dict[tuple[str, str, int], float] = {}
    runs: dict[tuple[str, str], tuple[float, float]] = {}
    for d in map(Path, dirs):
        if (d / "metrics.csv").exists():
            rows = _read_csv(d / "metrics.csv")
            last = max(int(r["checkpoint"]) for r in rows)
            for r in rows:
                dom, seed = int(r["domain"]), r["seed"]
                if int(r["checkpoint"]) == last:
                    cells[r["policy"], seed, dom] = float(r["metric_value"])
                if int(r["checkpoint"]) == 0:
                    cells["Base", seed, dom] = float(r["metric_value"])
        if (d / "transfer.csv").exists():
            for r in _read_csv(d / "transfer.csv"):
                runs[r["policy"], r["seed"]] = (float(r["bwt"]), float(r["fwt"]))
        if (d / "upper_bounds.csv").exists():
            for r in _read_csv(d / "upper_bounds.csv"):
                cells[r["model"], r["seed"], int(r["domain"])] = float(r["metric_value"])
    final: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for (name, _, dom), v in sorted(cells.items()):
        final[name][dom].append(v)
    transfer: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for (name, _), (b, f) in sorted(runs.items()):
        transfer[name]["bwt"].append(b)
        transfer[name]["fwt"].append(f)
    return final, transfer


def report(dirs: Iterable[str | Path]) -> str:
    """Markdown table of mean±std final per-domain metrics, BWT and FWT over the given runs."""
    final, transfer = collect(dirs)
    if not final:
        raise ValueError("no run outputs found")
    domains = sorted({d for per in final.values() for d in per})
    order = ["Base", "CASA", "NAL", "UAL", "NONE", "DSM", "JModel"]
    names = [n for n in order if n in final] + sorted(n for n in final if n not in order)
    head = ["model"] + [f"domain {d}" for d in domains] + ["BWT", "FWT", "runs"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for n in names:
        cells = [n]
        cells += [_mean_std(final[n][d]) if final[n].get(d) else "-" for d in domains]
        tr = transfer.get(n, {})
        cells += [_mean_std(tr["bwt"]) if tr.get("bwt") else "-", _mean_std(tr["fwt"]) if tr.get("fwt") else "-"]
        cells.append(str(max(len(v) for v in final[n].values())))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
