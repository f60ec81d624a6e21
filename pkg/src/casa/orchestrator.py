"""Stream loop: base training, batch ingestion under a labelling policy, checkpoints."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .config import RunConfig
from .domains import PseudoDomainRegistry
from .learners import make_learner
from .memory import BalancedMemory, MemoryEntry, ReservoirMemory
from .outliers import OutlierMemory, pairwise_distances
from .style import StyleEmbedder, StyleExtractor
from .synth import Dataset, StreamItem, generate, separability

log = logging.getLogger(__name__)


class BudgetExhausted(RuntimeError):
    pass


@dataclass
class BudgetLedger:
    total: int
    spent: int = 0
    per_domain: dict = field(default_factory=dict)

    @classmethod
    def for_stream(cls, beta: Fraction, stream_len: int) -> "BudgetLedger":
        return cls(total=int(Fraction(beta) * stream_len))  # int() floors non-negative fractions

    @property
    def remaining(self) -> int:
        return self.total - self.spent

    def charge(self, domain=None) -> None:
        if self.spent >= self.total:
            raise BudgetExhausted("labelling budget exhausted")
        self.spent += 1
        if domain is not None:
            self.per_domain[domain] = self.per_domain.get(domain, 0) + 1


class Oracle:
    """Ground-truth labels keyed by sample id; every query costs one budget unit."""

    def __init__(self, labels: dict, ledger: BudgetLedger):
        self._labels = labels
        self.ledger = ledger
        self.calls = 0

    def __call__(self, item: StreamItem, domain=None):
        self.ledger.charge(domain)
        self.calls += 1
        return self._labels[item.id]


class _Policy:
    """Shared state of every stream policy: learner, memory, oracle, and training."""

    name = "NONE"

    def __init__(self, cfg: RunConfig, learner, memory, oracle: Oracle, rng: np.random.Generator):
        self.cfg = cfg
        self.learner = learner
        self.memory = memory
        self.oracle = oracle
        self.rng = rng
        self.train_steps = 0

    def process_batch(self, items: Sequence[StreamItem], step: int) -> None:
        raise NotImplementedError

    def train(self) -> None:
        for _ in range(self.cfg.b):
            batch = self.memory.sample_batch(self.cfg.T)
            X = np.stack([e.sample.features for e in batch])
            y = np.array([e.label for e in batch])
            self.learner.train_step(X, y)
            self.train_steps += 1


class NoUpdatePolicy(_Policy):
    """Static base model: the stream is observed but nothing is labelled or trained."""

    def process_batch(self, items, step):
        return None


class NalPolicy(_Policy):
    """Label every n-th stream sample."""

    name = "NAL"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.seen = 0

    def process_batch(self, items, step):
        n = self.cfg.stride
        for x in items:
            self.seen += 1
            if n and self.seen % n == 0 and self.oracle.ledger.remaining > 0:
                self.memory.insert(MemoryEntry(x, self.oracle(x), 0))
        self.train()


class UalPolicy(_Policy):
    """Label samples whose dropout uncertainty is in the top (1 - quantile) of a rolling window."""

    name = "UAL"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.window: deque = deque(maxlen=self.cfg.W)
        self.labelled = 0

    def process_batch(self, items, step):
        X = np.stack([x.features for x in items])
        u = self.learner.uncertainty(X, self.rng, k=self.cfg.K, p_drop=self.cfg.p_drop)
        q = self.cfg.ual_quantile
        for x, ux in zip(items, u):
            self.window.append(float(ux))
            threshold = float(np.quantile(np.fromiter(self.window, float), q))
            if ux >= threshold and self.oracle.ledger.remaining > 0:
                self.memory.insert(MemoryEntry(x, self.oracle(x), 0))
                self.labelled += 1
        self.train()


class CasaPolicy(_Policy):
    """Pseudo-domain driven labelling with a balanced rehearsal memory."""

    name = "CASA"

    def __init__(self, cfg, learner, memory: BalancedMemory, oracle, rng, embedder: StyleEmbedder,
                 registry: PseudoDomainRegistry, t: float):
        super().__init__(cfg, learner, memory, oracle, rng)
        self.embedder = embedder
        self.registry = registry
        self.outliers = OutlierMemory()
        self.t = t
        self.discarded = 0
        self.evicted = 0

    def _label_and_store(self, x: StreamItem, emb: np.ndarray, pd_id: int) -> None:
        y = self.oracle(x, pd_id)
        # performance is measured before the sample is trained on
        perf = float(self.learner.metric(self.learner.predict(x.features), y)[0])
        self.registry[pd_id].update_performance(perf)
        self.memory.insert(MemoryEntry(x, y, pd_id, emb), len(self.registry), self.registry.__contains__)
        members = self.memory.members(pd_id)
        self.registry.set_radius(pd_id, np.stack([m.embedding for m in members]))

    def process_batch(self, items, step, embeddings: np.ndarray | None = None):
        embs = self.embedder.embed_many(np.stack([x.patch for x in items])) if embeddings is None else embeddings
        kind, k = self.cfg.task, self.cfg.completion_k
        for x, emb in zip(items, embs):
            pd_id = self.registry.assign(emb)
            if pd_id is None:
                self.outliers.add(x, emb)
            elif self.registry[pd_id].is_complete(kind, k):
                self.discarded += 1
            elif self.oracle.ledger.remaining > 0:
                self._label_and_store(x, emb, pd_id)
        if len(self.outliers) >= self.cfg.o:
            group = self.outliers.discover(self.t, self.cfg.min_group)
            if group is not None:
                self._found_domain(group, step)
        self.evicted += len(self.outliers.tick_and_evict(self.cfg.z))
        self.train()

    def _found_domain(self, group, step: int) -> None:
        embs = np.stack([g.embedding for g in group])
        pd = self.registry.create_domain(embs, step)
        self.memory.on_new_domain(len(self.registry), pd.id)
        order = np.argsort(np.linalg.norm(embs - pd.center, axis=1), kind="stable")
        log.debug("step %d: pseudo-domain %d from %d outliers", step, pd.id, len(group))
        for i in order:
            if self.oracle.ledger.remaining <= 0:
                break
            self._label_and_store(group[i].sample, group[i].embedding, pd.id)


@dataclass
class RunArtifacts:
    config: RunConfig
    domains: list[int]
    eval_rows: list[list[float]]  # row 0: after base training; row s: after segment s
    checkpoint_steps: list[int]
    budget_trace: list[tuple[int, int, int]]  # (step, spent, outlier occupancy)
    memory_tables: list[list[tuple[int, int, int, int]]]  # per checkpoint: (checkpoint, true, pseudo, count)
    registry_snapshots: list[dict]
    ledger: BudgetLedger
    oracle_calls: int
    unflagged_quota_ok: bool
    final_memory: list[MemoryEntry]
    t: float | None
    separability: float | None
    learner: object = None
    extras: dict = field(default_factory=dict)

    @property
    def eval_matrix(self) -> np.ndarray:
        return np.asarray(self.eval_rows)

    @property
    def n_pseudo_domains(self) -> int:
        if not self.registry_snapshots:
            return 0
        return len(self.registry_snapshots[-1]["domains"])


def _stack(samples, attr="features"):
    return np.stack([getattr(s, attr) for s in samples])


def evaluate_row(learner, test_sets: dict[int, list]) -> list[float]:
    """Mean task metric of ``learner`` on each domain's test set."""
    row = []
    for d in sorted(test_sets):
        ts = test_sets[d]
        if not ts:
            raise ValueError(f"test set of domain {d} is empty")
        row.append(float(np.mean(learner.metric(learner.predict(_stack(ts)), [s.label for s in ts]))))
    return row


def dataset_separability(embedder: StyleEmbedder, ds: Dataset) -> float:
    """Between/within distance ratio of the test-set style embeddings, tagged by true domain."""
    embs = embedder.embed_many(np.concatenate([_stack(ds.test[d], "patch") for d in ds.domains]))
    tags = np.concatenate([[d] * len(ds.test[d]) for d in ds.domains])
    return separability(embs, tags)


def resolve_threshold(cfg: RunConfig, base_embeddings: np.ndarray) -> float:
    if cfg.t is not None:
        return cfg.t
    d = pairwise_distances(base_embeddings)
    iu = np.triu_indices(len(d), 1)
    return float(cfg.t_factor * d[iu].mean())


def memory_table(entries: Sequence[MemoryEntry], true_domain: dict[int, int], checkpoint: int):
    counts: dict[tuple[int, int], int] = {}
    for e in entries:
        key = (true_domain[e.sample.id], e.pseudo_domain)
        counts[key] = counts.get(key, 0) + 1
    return [(checkpoint, td, pd, c) for (td, pd), c in sorted(counts.items())]


def run_experiment(cfg: RunConfig, dataset: Dataset | None = None) -> RunArtifacts:
    """Base-train, then consume the stream batch by batch under ``cfg.policy``.

    Checkpoints sit at the true segment boundaries, which only this harness
    knows; policies see :class:`StreamItem` objects without labels or domains.
    """
    cfg.validate()
    ds = dataset if dataset is not None else generate(cfg.synth_config(), seed=cfg.seed)
    if ds.task != cfg.task:
        raise ValueError(f"dataset task {ds.task!r} does not match config task {cfg.task!r}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    learner_seed = int(seeds[0].generate_state(1)[0])
    mem_rng, policy_rng, _ = (np.random.default_rng(s) for s in seeds[1:])

    n_features = ds.base[0].features.size
    learner = make_learner(cfg.task, n_features, cfg.step_size, learner_seed, max(ds.n_classes, 1))
    Xb, yb = _stack(ds.base), np.array([s.label for s in ds.base])
    learner.fit_epochs(Xb, yb, cfg.base_epochs, cfg.base_batch)

    rows = [evaluate_row(learner, ds.test)]
    ledger = BudgetLedger.for_stream(cfg.beta, len(ds.stream))
    labels = {s.id: s.label for s in ds.stream}
    oracle = Oracle(labels, ledger)
    true_domain = ds.true_domain_of()

    base_items = [s.item() for s in ds.base]
    count = min(cfg.M, len(base_items))
    t = None
    registry = None
    stream_embs = None
    embedder = StyleEmbedder.fit(StyleExtractor(cfg.extractor_seed), _stack(ds.base, "patch"), cfg.e)
    sep = dataset_separability(embedder, ds)
    if cfg.policy == "CASA":
        base_embs = embedder.embed_many(_stack(ds.base, "patch"))
        t = resolve_threshold(cfg, base_embs)
        memory = BalancedMemory(cfg.M, mem_rng)
        memory.init_from_base(base_items, yb.tolist(), count, 0, base_embs)
        registry = PseudoDomainRegistry(cfg.P)
        registry.create_domain(np.stack([e.embedding for e in memory.entries]), 0)
        stream_embs = embedder.embed_many(_stack(ds.stream, "patch"))
        policy = CasaPolicy(cfg, learner, memory, oracle, policy_rng, embedder, registry, t)
    else:
        memory = ReservoirMemory(cfg.M, mem_rng)
        memory.init_from_base(base_items, yb.tolist(), count, 0)
        cls = {"NAL": NalPolicy, "UAL": UalPolicy, "NONE": NoUpdatePolicy}[cfg.policy]
        policy = cls(cfg, learner, memory, oracle, policy_rng)

    items = [s.item() for s in ds.stream]
    boundaries = list(ds.boundaries)
    budget_trace = []
    memory_tables = [memory_table(memory.entries, true_domain, 0)]
    registry_snaps = [registry.to_dict()] if registry is not None else []
    checkpoint_steps = [0]
    quota_ok = True
    next_b = 0
    step = 0
    for start in range(0, len(items), cfg.B):
        step += 1
        batch = items[start:start + cfg.B]
        if isinstance(policy, CasaPolicy):
            policy.process_batch(batch, step, stream_embs[start:start + cfg.B])
        else:
            policy.process_batch(batch, step)
        occupancy = len(policy.outliers) if isinstance(policy, CasaPolicy) else 0
        budget_trace.append((step, ledger.spent, occupancy))
        consumed = start + len(batch)
        while next_b < len(boundaries) and consumed >= boundaries[next_b]:
            next_b += 1
            rows.append(evaluate_row(learner, ds.test))
            checkpoint_steps.append(step)
            memory_tables.append(memory_table(memory.entries, true_domain, next_b))
            if registry is not None:
                registry_snaps.append(registry.to_dict())
                quota_ok &= casa_quota_holds(memory, len(registry))
    if ledger.spent > ledger.total:
        raise AssertionError("budget ledger overspent")
    return RunArtifacts(
        config=cfg,
        domains=ds.domains,
        eval_rows=rows,
        checkpoint_steps=checkpoint_steps,
        budget_trace=budget_trace,
        memory_tables=memory_tables,
        registry_snapshots=registry_snaps,
        ledger=ledger,
        oracle_calls=oracle.calls,
        unflagged_quota_ok=quota_ok,
        final_memory=list(memory.entries),
        t=t,
        separability=sep,
        learner=learner.snapshot(),
        extras={"train_steps": policy.train_steps, "embedder": embedder},
    )


def casa_quota_holds(memory: BalancedMemory, n_domains: int) -> bool:
    quota = -(-memory.capacity // n_domains)
    return len(memory) <= memory.capacity and all(c <= quota for c in memory.unflagged_counts().values())
