"""Few-shot evaluation protocol: splits, balanced shots, AUC, multi-seed runs."""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from tabser.errors import BackendError, MissingClassInTrain, NoEligibleClass, SingleClass, TabserError
from tabser.prompt import classify, render
from tabser.serialize import serialize_dataset

log = logging.getLogger(__name__)

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class ShotSet:
    k: int
    indices: tuple
    seed: int

    def to_dict(self):
        return {"seed": self.seed, "k": self.k, "indices": list(self.indices)}


@dataclass
class EvalReport:
    k: int
    serializer_id: str
    per_seed_auc: list
    mean: float = field(init=False)
    sd: float = field(init=False)
    shots: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.mean, self.sd = summarize(self.per_seed_auc)

    def to_dict(self):
        return {
            "k": self.k,
            "serializer_id": self.serializer_id,
            "per_seed_auc": list(self.per_seed_auc),
            "mean": self.mean,
            "sd": self.sd,
        }


def summarize(values):
    """Mean and sample standard deviation (n - 1); SD of a single value is 0."""
    values = [float(v) for v in values]
    if not values:
        return float("nan"), float("nan")
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


def split(ds, seed):
    """Seeded 80/20 split; the train part is the first floor(0.8 n) of a permutation."""
    n = ds.n if hasattr(ds, "n") else int(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(TRAIN_FRACTION * n))
    return [int(i) for i in perm[:n_train]], [int(i) for i in perm[n_train:]]


def sample_shots(ds, train, k, seed) -> ShotSet:
    """Class-balanced sample of ``k`` training rows, with replacement.

    Each class gets ``k // |C|`` draws; the ``k % |C|`` leftover draws go to
    classes picked by a seeded shuffle. The final order is shuffled too.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return ShotSet(0, (), seed)
    n_classes = len(ds.class_names)
    by_class = [[] for _ in range(n_classes)]
    for i in train:
        by_class[ds.labels[i]].append(i)
    rng = np.random.default_rng([seed, k])
    quota = [k // n_classes] * n_classes
    for c in rng.permutation(n_classes)[: k % n_classes]:
        quota[int(c)] += 1
    picked = []
    for c, q in enumerate(quota):
        if q == 0:
            continue
        if not by_class[c]:
            raise MissingClassInTrain(f"class {ds.class_names[c]!r} has no training rows")
        picked.extend(by_class[c][int(j)] for j in rng.integers(0, len(by_class[c]), size=q))
    order = rng.permutation(len(picked))
    return ShotSet(k, tuple(int(picked[j]) for j in order), seed)


def _midranks(x):
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=float)
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def auc_binary(scores, labels):
    """P(random positive outranks random negative), ties counting one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    ranks = _midranks(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def auc_macro_ovr(probs, labels):
    """Unweighted mean of one-vs-rest AUCs over classes having both outcomes."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels)
    aucs = []
    for c in range(p.shape[1]):
        target = (y == c).astype(int)
        if 0 < target.sum() < len(target):
            aucs.append(auc_binary(p[:, c], target))
    if not aucs:
        raise NoEligibleClass("no class has both positive and negative examples")
    return float(np.mean(aucs))


def evaluate_auc(probs, labels, n_classes):
    probs = np.asarray(probs, dtype=float)
    if n_classes == 2:
        return auc_binary(probs[:, 1], labels)
    return auc_macro_ovr(probs, labels)


def _classify_rows(prompts, backend, threads):
    def one(i):
        try:
            return classify(prompts[i], backend).probs
        except BackendError as e:
            raise BackendError(f"classification failed: {e}", index=i) from e

    if threads <= 1:
        return [one(i) for i in range(len(prompts))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(prompts))))


def _add_context(exc, context):
    exc.args = (f"{context}: {exc.args[0] if exc.args else ''}",) + tuple(exc.args[1:])


def run_experiment(ds, template, serializer, backend, shots_grid, seeds, threads=1):
    """Run the protocol for every (seed, k) and aggregate AUC across seeds.

    ``serializer`` is a format name understood by
    :func:`tabser.serialize.serialize_dataset` or a callable
    ``(ds, seed) -> list[SerializedExample]``. The harness does not fine-tune:
    shot sets are drawn and recorded for each k > 0 so an external trainer
    can consume them, and test rows are scored with the prompt as is, so the
    predictions for one seed are shared across k.
    """
    if isinstance(serializer, str):
        serializer_id = serializer
        fmt = serializer

        def serialize(d, s):
            return serialize_dataset(d, fmt, seed=s)

    else:
        serialize = serializer
        serializer_id = getattr(serializer, "serializer_id", getattr(serializer, "__name__", "custom"))

    seeds = list(seeds)
    shots_grid = list(shots_grid)
    aucs = {k: [] for k in shots_grid}
    shots = {k: [] for k in shots_grid}
    for seed in seeds:
        try:
            train, test = split(ds, seed)
            examples = serialize(ds, seed)
            prompts = [render(template, examples[i]) for i in test]
            probs = _classify_rows(prompts, backend, threads)
            labels = [ds.labels[i] for i in test]
        except TabserError as e:
            _add_context(e, f"seed {seed}")
            raise
        for k in shots_grid:
            try:
                if k > 0:
                    shots[k].append(sample_shots(ds, train, k, seed))
                aucs[k].append(evaluate_auc(probs, labels, len(ds.class_names)))
            except TabserError as e:
                _add_context(e, f"seed {seed}, k={k}")
                raise
            log.info("seed=%s k=%s auc=%.4f", seed, k, aucs[k][-1])
    return [EvalReport(k, serializer_id, aucs[k], shots=shots[k]) for k in shots_grid]
