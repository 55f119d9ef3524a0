"""Stratified frame sampling driven by a log-count proxy of artifact extent."""

import math
from dataclasses import dataclass

import numpy as np

MAX_WEIGHT = 50.0


def proxy_metric(labels):
    """``ceil(ln(1 + sum(labels)))``; severe A-lines count twice as much as mild."""
    total = int(np.asarray(labels, dtype=np.int64).sum())
    return math.ceil(math.log1p(total))


@dataclass
class SampleWeighting:
    K: np.ndarray
    weights: np.ndarray
    M: int

    @property
    def probabilities(self):
        return self.weights / self.weights.sum()


def compute_weights(K, clip=MAX_WEIGHT):
    """Inverse-frequency weights ``min(M / |K_n|, clip)`` over proxy values ``K``."""
    K = np.asarray(K, dtype=np.int64)
    if K.size == 0:
        raise ValueError("cannot weight an empty training set")
    values, inverse, counts = np.unique(K, return_inverse=True, return_counts=True)
    M = int(counts.max())
    weights = np.minimum(M / counts[inverse], clip)
    return SampleWeighting(K=K, weights=weights.astype(np.float64), M=M)


def weights_for_labels(label_rows, clip=MAX_WEIGHT):
    return compute_weights([proxy_metric(y) for y in label_rows], clip)


def draw(weighting, rng, batch_size):
    """I.i.d. frame indices drawn with replacement, P(n) proportional to w_n."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    w = weighting.weights if isinstance(weighting, SampleWeighting) else np.asarray(weighting, float)
    return rng.choice(len(w), size=batch_size, replace=True, p=w / w.sum())
