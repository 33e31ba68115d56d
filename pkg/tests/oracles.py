"""Independent reference implementations used to cross-check the package.

Everything here is deliberately naive (exhaustive search, explicit pair
counting, per-pixel set operations) and shared between the unit tests and the
acceptance suite.
"""
import itertools

import numpy as np


def brute_force_miou(preds, gts, num_classes):
    """Explicit per-pixel intersection/union counting."""
    inter = np.zeros(num_classes)
    union = np.zeros(num_classes)
    for p, g in zip(preds, gts):
        for c in range(num_classes):
            pc, gc = (p == c), (g == c)
            inter[c] += np.logical_and(pc, gc).sum()
            union[c] += np.logical_or(pc, gc).sum()
    ious = [inter[c] / union[c] for c in range(num_classes) if union[c] > 0]
    return float(np.mean(ious))


def ari_pair_counting(a, b):
    """O(n^2) adjusted Rand index via explicit pair agreement counts."""
    n = len(a)
    together_both = together_a = together_b = 0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            pairs += 1
            sa, sb = a[i] == a[j], b[i] == b[j]
            together_a += sa
            together_b += sb
            together_both += sa and sb
    expected = together_a * together_b / pairs
    max_index = (together_a + together_b) / 2
    if max_index == expected:
        return 1.0
    return (together_both - expected) / (max_index - expected)


def exhaustive_best_inertia_k2(points):
    """Minimum k-means objective over every 2-part partition (n <= ~12)."""
    n = len(points)
    best = np.inf
    for bits in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + bits)
        if labels.min() == labels.max():
            continue
        inertia = 0.0
        for c in (0, 1):
            cluster = points[labels == c]
            inertia += ((cluster - cluster.mean(axis=0)) ** 2).sum()
        best = min(best, inertia)
    return best


def silhouette_direct(points, labels):
    """Textbook silhouette: explicit a(i)/b(i) loops, singletons -> 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = sorted(set(labels.tolist()))
    scores = []
    for i in range(len(points)):
        own = [j for j in range(len(points)) if labels[j] == labels[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = np.mean([np.linalg.norm(points[i] - points[j]) for j in own])
        b = min(np.mean([np.linalg.norm(points[i] - points[j])
                         for j in range(len(points)) if labels[j] == c])
                for c in uniq if c != labels[i])
        denom = max(a, b)
        scores.append(0.0 if denom == 0 else (b - a) / denom)
    return float(np.mean(scores))
