"""Quantitative evaluation: augmentation-based hit rate, coverage, timing,
label-flip debugging, and the KSD distribution-shift experiment.

The hit-rate protocol perturbs a training point with a label-preserving
augmentation and asks each method to retrieve the source point among its
top-k explanations. Per-trial randomness is derived as ``seed ^ trial_index``
so trial order (or parallel execution) cannot change results.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import UnsupportedAugmentationError
from .explain import (
    ExplainerConfig,
    baseline_rep_similarity,
    baseline_tracin_last,
    build_cache,
    explain,
    self_influence_ranking,
)
from .nnet import MLPClassifier, TrainConfig, train
from .stein import (
    BaseKernel,
    RBFKernel,
    ScoreCache,
    SteinPoint,
    ksd_vstat,
    make_stein_points,
    median_heuristic_gamma,
)

__all__ = [
    "METHODS",
    "HIT_KS",
    "MetricsReport",
    "DebugReport",
    "augment_noise",
    "augment_hflip",
    "coverage",
    "hit_rate_experiment",
    "label_flip_debug_experiment",
    "ksd_shift_experiment",
    "write_csv_report",
]

METHODS = ("hd-explain", "hd-explain-star", "tracin-last", "rep-sim")
HIT_KS = (1, 3, 5)
_VARIANT_FOR_METHOD = {"hd-explain": "raw", "hd-explain-star": "last-layer"}


@dataclass
class MetricsReport:
    """Hit rate, coverage, and timing for one retrieval method.

    ``hit_rate`` and ``coverage`` map each evaluated k to a fraction;
    coverage at k is ``|union of top-k sets| / (n_test * k)``. Timing covers
    the query only (cache construction excluded); the 95% interval uses the
    normal approximation over independent queries.
    """

    method: str
    hit_rate: dict[int, float]
    coverage: dict[int, float]
    mean_ms: float
    ci95_ms: float
    trials: int
    seed: int

    def csv_rows(self) -> list[dict]:
        return [
            {
                "method": self.method,
                "k": k,
                "hit_rate": self.hit_rate[k],
                "coverage": self.coverage[k],
                "mean_ms": self.mean_ms,
                "ci95_ms": self.ci95_ms,
                "trials": self.trials,
                "seed": self.seed,
            }
            for k in sorted(self.hit_rate)
        ]


@dataclass
class DebugReport:
    """Label-flip retrieval quality: precision/recall at selected depths."""

    method: str
    flipped_indices: list[int]
    ranking: list[int]
    points: list[tuple[int, float, float]]  # (m, precision@m, recall@m)
    seed: int

    @property
    def flip_count(self) -> int:
        return len(self.flipped_indices)

    def precision_at(self, m: int) -> float:
        hits = len(set(self.ranking[:m]) & set(self.flipped_indices))
        return hits / m

    def recall_at(self, m: int) -> float:
        hits = len(set(self.ranking[:m]) & set(self.flipped_indices))
        return hits / len(self.flipped_indices)


def augment_noise(dataset: Dataset, index: int, seed: int) -> np.ndarray:
    """Perturb one training point with zero-mean Gaussian noise.

    The per-feature standard deviation is ``0.01 * feature_std[j]``, so
    constant columns stay fixed and the perturbation keeps the raw feature
    scale.
    """
    if not 0 <= index < dataset.n:
        raise ValueError(f"index {index} out of range [0, {dataset.n})")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=dataset.d) * (0.01 * dataset.feature_std)
    return dataset.features[index] + noise


def augment_hflip(dataset: Dataset, index: int) -> np.ndarray:
    """Mirror one image-shaped training point along its width axis."""
    if dataset.image_shape is None:
        raise UnsupportedAugmentationError("horizontal flip needs a dataset with image_shape")
    if not 0 <= index < dataset.n:
        raise ValueError(f"index {index} out of range [0, {dataset.n})")
    h, w, c = dataset.image_shape
    image = dataset.features[index].reshape(h, w, c)
    return image[:, ::-1, :].reshape(-1).copy()


def coverage(explanation_sets) -> float:
    """Fraction of unique explanation points: ``|union| / (n_test * k)``."""
    sets = [frozenset(s) for s in explanation_sets]
    if not sets:
        raise ValueError("coverage needs at least one explanation set")
    k = len(sets[0])
    if any(len(s) != k for s in sets):
        raise ValueError("all explanation sets must have the same size")
    union = frozenset().union(*sets)
    return len(union) / (len(sets) * k)


def _augment(dataset: Dataset, augmentation: str, index: int, seed: int) -> np.ndarray:
    if augmentation == "noise":
        return augment_noise(dataset, index, seed)
    if augmentation == "hflip":
        return augment_hflip(dataset, index)
    if augmentation == "identity":
        return dataset.features[index].copy()
    raise UnsupportedAugmentationError(
        f"unknown augmentation {augmentation!r}; expected noise, hflip, or identity"
    )


def _make_query(method: str, model: MLPClassifier, cache: ScoreCache | None,
                dataset: Dataset, config: ExplainerConfig, query_k: int):
    """Return a closure mapping a test point to its top-``query_k`` indices."""
    if method in _VARIANT_FOR_METHOD:
        if cache is None:
            raise ValueError(f"method {method!r} needs a score cache")
        want = _VARIANT_FOR_METHOD[method]
        if cache.variant != want:
            raise ValueError(f"method {method!r} needs a {want!r} cache, got {cache.variant!r}")
        query_config = replace(config, variant=want, top_k=query_k)

        def query(x_test):
            result = explain(model, cache, x_test, query_config)
            return [i for i, _, _ in result.ranked]

    elif method == "tracin-last":

        def query(x_test):
            return [i for i, _, _ in baseline_tracin_last(model, dataset, x_test)[:query_k]]

    elif method == "rep-sim":

        def query(x_test):
            return [i for i, _, _ in baseline_rep_similarity(model, dataset, x_test)[:query_k]]

    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return query


def hit_rate_experiment(model: MLPClassifier, cache: ScoreCache | None, dataset: Dataset,
                        augmentation: str, trials_per_point: int, sample_size: int,
                        config: ExplainerConfig, seed: int,
                        method: str = "hd-explain") -> MetricsReport:
    """Augmented self-retrieval over a sample of training points.

    Samples ``sample_size`` source indices without replacement, generates
    ``trials_per_point`` augmented test points for each, and counts a hit at
    k when the source index appears in the method's top-k. Coverage is
    measured per k over all produced top-k sets.
    """
    if sample_size < 1 or sample_size > dataset.n:
        raise ValueError(f"sample_size must lie in [1, {dataset.n}]")
    if trials_per_point < 1:
        raise ValueError("trials_per_point must be at least 1")
    ks = sorted(set(HIT_KS) | {config.top_k})
    query_k = min(max(ks), dataset.n)
    ks = [k for k in ks if k <= query_k]
    query = _make_query(method, model, cache, dataset, config, query_k)

    rng = np.random.default_rng(seed)
    indices = rng.choice(dataset.n, size=sample_size, replace=False)

    hits = {k: 0 for k in ks}
    topk_sets = {k: [] for k in ks}
    times_ms = []
    trial_index = 0
    for source in indices:
        source = int(source)
        for _ in range(trials_per_point):
            x_test = _augment(dataset, augmentation, source, seed ^ trial_index)
            start = time.perf_counter()
            top = query(x_test)
            times_ms.append((time.perf_counter() - start) * 1000.0)
            for k in ks:
                top_k = top[:k]
                if source in top_k:
                    hits[k] += 1
                topk_sets[k].append(frozenset(top_k))
            trial_index += 1

    total = sample_size * trials_per_point
    times_ms = np.asarray(times_ms)
    ci95 = 1.96 * times_ms.std(ddof=1) / math.sqrt(total) if total > 1 else 0.0
    return MetricsReport(
        method=method,
        hit_rate={k: hits[k] / total for k in ks},
        coverage={k: coverage(topk_sets[k]) for k in ks},
        mean_ms=float(times_ms.mean()),
        ci95_ms=float(ci95),
        trials=total,
        seed=seed,
    )


def label_flip_debug_experiment(dataset: Dataset, flip_fraction: float,
                                train_config: TrainConfig, kernel: BaseKernel | None,
                                seed: int, hidden_dims=None) -> DebugReport:
    """Flip a fraction of labels, retrain, and rank by self-influence.

    Uses the last-layer variant. ``kernel=None`` selects a median-heuristic
    RBF over the corrupted cache. Reports precision/recall at
    ``m = ceil(flips / 2)``, ``flips``, and ``2 * flips`` (capped at n).
    """
    if not 0.0 < flip_fraction < 0.5:
        raise ValueError("flip_fraction must lie in (0, 0.5)")
    flips = math.ceil(flip_fraction * dataset.n)
    if flips < 1:
        raise ValueError("flip count must be at least 1")
    rng = np.random.default_rng(seed)
    flip_idx = rng.choice(dataset.n, size=flips, replace=False)
    labels = dataset.labels.copy()
    # shift each flipped label by a nonzero offset so it always changes class
    offsets = rng.integers(1, dataset.num_classes, size=flips)
    labels[flip_idx] = (labels[flip_idx] + offsets) % dataset.num_classes
    corrupted = Dataset(
        dataset.features, labels, dataset.num_classes,
        image_shape=dataset.image_shape, feature_std=dataset.feature_std,
    )

    model = train(corrupted, train_config, hidden_dims=hidden_dims)
    cache = build_cache(model, corrupted, variant="last-layer")
    if kernel is None:
        kernel = RBFKernel(median_heuristic_gamma(cache.z))
    ranking = [i for i, _ in self_influence_ranking(cache, kernel)]

    flipped = sorted(int(i) for i in flip_idx)
    report = DebugReport(
        method="hd-explain-star",
        flipped_indices=flipped,
        ranking=ranking,
        points=[],
        seed=seed,
    )
    depths = [math.ceil(flips / 2), flips, min(2 * flips, dataset.n)]
    report.points = [(m, report.precision_at(m), report.recall_at(m)) for m in depths]
    return report


def ksd_shift_experiment(model: MLPClassifier, dataset: Dataset, shifts,
                         kernel: BaseKernel) -> list[tuple[np.ndarray, float]]:
    """KSD V-statistic of the training set under rigid feature shifts.

    Each shift may be a scalar (applied to every feature) or a length-d
    displacement vector. A zero shift is always evaluated first.
    """
    deltas = []
    for shift in shifts:
        arr = np.asarray(shift, dtype=np.float64)
        if arr.ndim == 0:
            arr = np.full(dataset.d, float(arr))
        if arr.shape != (dataset.d,):
            raise ValueError(f"shift must be scalar or length-{dataset.d}, got shape {arr.shape}")
        deltas.append((shift, arr))
    if not deltas or np.any(deltas[0][1] != 0.0):
        deltas.insert(0, (0.0, np.zeros(dataset.d)))

    results = []
    for shift, delta in deltas:
        z, scores = make_stein_points(model, dataset.features + delta, dataset.labels, "raw")
        points = [SteinPoint(z[i], scores[i]) for i in range(len(z))]
        results.append((shift, ksd_vstat(points, kernel).value))
    return results


def write_csv_report(path, fieldnames, rows, manifest: dict | None = None) -> None:
    """Atomically write a CSV report, plus a JSON manifest alongside it.

    Files are written to a temporary name and renamed into place so a failed
    run never leaves a truncated report. The manifest lands at
    ``<path>.manifest.json``.
    """
    import csv as _csv
    import json as _json

    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    os.replace(tmp, path)
    if manifest is not None:
        mpath = path + ".manifest.json"
        mtmp = mpath + ".tmp"
        with open(mtmp, "w", encoding="utf-8") as fh:
            _json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(mtmp, mpath)
