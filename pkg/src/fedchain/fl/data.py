"""Synthetic class-conditional Gaussian data and federated partitioning."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

TEST_FRACTION = 0.2


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 4
    # True marks held-out rows; None means the dataset is a single split.
    is_test: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (n, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    @property
    def train(self) -> "Dataset":
        if self.is_test is None:
            return self
        return self.subset(np.flatnonzero(~self.is_test))

    @property
    def test(self) -> "Dataset":
        if self.is_test is None:
            raise ValueError("dataset has no held-out split")
        return self.subset(np.flatnonzero(self.is_test))

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def apportion(total: int, proportions) -> np.ndarray:
    """Largest-remainder rounding of ``total * proportions`` to integers summing to ``total``."""
    p = np.asarray(proportions, dtype=np.float64)
    raw = total * p
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def make_synthetic_dataset(seed, n_samples=4000, n_features=16,
                           class_proportions=(0.25, 0.25, 0.25, 0.25),
                           class_sep=1.3, modes_per_class=3, noise=1.0) -> Dataset:
    """Gaussian mixture classes with a stratified 80/20 train/test split.

    Each class owns ``modes_per_class`` centres drawn as standard normal
    vectors scaled by ``class_sep``; a sample picks one of its class's
    centres uniformly and adds isotropic noise of scale ``noise``.
    """
    p = np.asarray(class_proportions, dtype=np.float64)
    if p.ndim != 1 or p.size < 2 or np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-9):
        raise ValueError(f"class proportions must be non-negative and sum to 1, got {tuple(p)}")
    if n_samples < p.size or n_features < 1:
        raise ValueError("need at least one sample per class and one feature")
    rng = np.random.default_rng(seed)
    n_classes = p.size
    if modes_per_class < 1:
        raise ValueError("modes_per_class must be at least 1")
    centres = rng.normal(0.0, 1.0, size=(n_classes, modes_per_class, n_features)) * class_sep
    counts = apportion(n_samples, p)

    feats, labels, test = [], [], []
    for c, n_c in enumerate(counts):
        mode = rng.integers(0, modes_per_class, size=n_c)
        feats.append(centres[c, mode] + rng.normal(0.0, noise, size=(n_c, n_features)))
        labels.append(np.full(n_c, c, dtype=np.int64))
        n_test = int(round(TEST_FRACTION * n_c))
        mask = np.zeros(n_c, dtype=bool)
        mask[rng.permutation(n_c)[:n_test]] = True
        test.append(mask)
    order = rng.permutation(n_samples)
    return Dataset(
        np.concatenate(feats)[order],
        np.concatenate(labels)[order],
        n_classes,
        np.concatenate(test)[order],
    )


class Scheme(str, enum.Enum):
    IID = "iid"
    LABEL_SKEW = "label_skew"


def partition(dataset: Dataset, n_parts: int, scheme=Scheme.IID, seed=0,
              concentration: float = 0.5) -> list[Dataset]:
    """Split the training rows of ``dataset`` into ``n_parts`` disjoint shards.

    IID shards are equal-size slices of a random permutation. Label-skewed
    shards draw, for every class, a Dirichlet(``concentration``) share of
    that class's rows per shard.
    """
    scheme = Scheme(scheme)
    train = dataset.train
    n = len(train)
    if not 1 <= n_parts <= n:
        raise ValueError(f"cannot split {n} rows into {n_parts} parts")
    rng = np.random.default_rng(seed)

    if scheme is Scheme.IID:
        shards = np.array_split(rng.permutation(n), n_parts)
    else:
        if concentration <= 0:
            raise ValueError("concentration must be positive")
        buckets = [[] for _ in range(n_parts)]
        for c in range(train.n_classes):
            rows = rng.permutation(np.flatnonzero(train.labels == c))
            share = rng.dirichlet(np.full(n_parts, concentration))
            cuts = np.cumsum(apportion(rows.size, share))[:-1]
            for k, piece in enumerate(np.split(rows, cuts)):
                buckets[k].append(piece)
        shards = [np.sort(np.concatenate(b)) for b in buckets]
    return [train.subset(idx) for idx in shards]
