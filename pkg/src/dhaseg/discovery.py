"""Latent-domain discovery: style codes from frozen conv feature statistics,
k-means partitioning, and silhouette-based selection of K."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as TF

from .data import DatasetManifest, ManifestEntry, load_image_png

STYLE_CODE_DIM = 64  # 32 channel means + 32 channel stds


class StyleEncoder:
    """Fixed 2-layer conv feature extractor (3 -> 16 -> 32 channels, 3x3, stride 1).

    Weights are drawn once from the given seed and frozen; identical seeds give
    identical encoders.
    """

    def __init__(self, seed: int = 0):
        g = torch.Generator().manual_seed(seed)

        def conv_weight(out_ch, in_ch):
            fan_in = in_ch * 9
            w = torch.randn(out_ch, in_ch, 3, 3, generator=g, dtype=torch.float64)
            return w * (2.0 / fan_in) ** 0.5

        self.w1 = conv_weight(16, 3)
        self.w2 = conv_weight(32, 16)

    def encode(self, image: np.ndarray) -> np.ndarray:
        """Image HxWx3 -> feature map (32, H, W)."""
        x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
        x = x.to(torch.float64)
        with torch.no_grad():
            h = TF.relu(TF.conv2d(x, self.w1, padding=1))
            h = TF.relu(TF.conv2d(h, self.w2, padding=1))
        return h[0].numpy()


def extract_style_code(image: np.ndarray, encoder) -> np.ndarray:
    """Per-channel mean then population std of the encoder's feature map."""
    feats = np.asarray(encoder.encode(image), dtype=np.float64)
    if feats.ndim != 3:
        raise ValueError(f"encoder must return (C, H, W) features, got {feats.shape}")
    mean = feats.mean(axis=(1, 2))
    std = feats.std(axis=(1, 2))  # population std
    return np.concatenate([mean, std])


def compute_style_codes(manifest: DatasetManifest, encoder,
                        split: str = "compound") -> tuple[list[str], np.ndarray]:
    entries = manifest.split_entries(split)
    if not entries:
        raise ValueError(f"manifest has no {split!r} entries")
    ids, codes = [], []
    for e in entries:
        img = load_image_png(manifest.resolve(e.image_path))
        ids.append(e.image_id)
        codes.append(extract_style_code(img, encoder))
    return ids, np.stack(codes)


@dataclass
class DomainAssignment:
    """Partition of the compound target into K latent domains (1-based labels)."""

    mapping: dict[str, int]
    centroids: np.ndarray  # (K, D)
    k: int = field(init=False)

    def __post_init__(self):
        self.k = self.centroids.shape[0]
        labels = set(self.mapping.values())
        if not labels <= set(range(1, self.k + 1)):
            raise ValueError("assignment labels out of range 1..K")
        if labels != set(range(1, self.k + 1)):
            raise ValueError("every cluster must be non-empty")


# ---------------------------------------------------------------------------
# k-means

def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dists(x, np.stack(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(n)])
            continue
        centers.append(x[rng.choice(n, p=d2 / total)])
    return np.stack(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    labels = np.full(x.shape[0], -1)
    prev_inertia = np.inf
    for _ in range(max_iter):
        d2 = _sq_dists(x, centers)
        new_labels = d2.argmin(axis=1)
        inertia = d2[np.arange(x.shape[0]), new_labels].sum()
        assert inertia <= prev_inertia + 1e-9, "inertia increased during Lloyd iteration"
        prev_inertia = inertia
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(centers.shape[0]):
            sel = labels == c
            if sel.any():
                centers[c] = x[sel].mean(axis=0)
            else:
                # repair: promote the point farthest from its assigned centroid
                far = d2[np.arange(x.shape[0]), labels].argmax()
                centers[c] = x[far]
                labels[far] = c
    d2 = _sq_dists(x, centers)
    labels = d2.argmin(axis=1)
    inertia = d2[np.arange(x.shape[0]), labels].sum()
    return labels, centers, float(inertia)


def kmeans(codes: np.ndarray, k: int, seed: int = 0, n_restarts: int = 10,
           max_iter: int = 300) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd's algorithm with k-means++ seeding and restarts.

    Returns (labels 0-based, centroids, inertia) of the best restart.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2:
        raise ValueError("codes must be a 2-D array")
    n = codes.shape[0]
    if k < 1:
        raise ValueError("K must be >= 1")
    if k > n:
        raise ValueError(f"K={k} exceeds number of points {n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        centers = _kmeans_pp_init(codes, k, rng)
        labels, centers, inertia = _lloyd(codes, centers.copy(), max_iter)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    exhaustive = _exhaustive_small(codes, k)
    if exhaustive is not None and exhaustive[2] < best[2]:
        best = exhaustive
    return best


_EXHAUSTIVE_LIMIT = 4096


def _exhaustive_small(codes: np.ndarray, k: int):
    """Globally optimal clustering by partition enumeration.

    Only attempted when the assignment space is small enough to enumerate;
    returns None otherwise. Guarantees the global inertia optimum on tiny
    inputs, where restarted seeding heuristics can still miss it.
    """
    n = codes.shape[0]
    if k ** n > _EXHAUSTIVE_LIMIT:
        return None
    best = None
    for assignment in itertools.product(range(k), repeat=n):
        labels = np.array(assignment)
        if len(set(assignment)) < k:
            continue
        centers = np.stack([codes[labels == c].mean(axis=0)
                            for c in range(k)])
        inertia = float(((codes - centers[labels]) ** 2).sum())
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best


def assign_domains(ids: list[str], codes: np.ndarray, k: int,
                   seed: int = 0) -> DomainAssignment:
    labels, centers, _ = kmeans(codes, k, seed=seed)
    mapping = {i: int(l) + 1 for i, l in zip(ids, labels)}
    return DomainAssignment(mapping, centers)


# ---------------------------------------------------------------------------
# silhouette and K selection

def silhouette_score(codes: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette with Euclidean distances.

    Singleton clusters and degenerate a=b=0 points contribute s=0.
    """
    codes = np.asarray(codes, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ValueError("silhouette requires K >= 2")
    dists = np.sqrt(np.maximum(_sq_dists(codes, codes), 0.0))
    scores = np.zeros(codes.shape[0])
    for i in range(codes.shape[0]):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own <= 1:
            continue  # singleton -> 0
        a = dists[i, own].sum() / (n_own - 1)
        b = min(dists[i, labels == c].mean() for c in uniq if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def select_k(codes: np.ndarray, k_range=range(2, 6), seed: int = 0) -> int:
    """Argmax of the silhouette score over k_range; ties break toward smaller K."""
    best_k, best_score = None, -np.inf
    for k in sorted(k_range):
        labels, _, _ = kmeans(codes, k, seed=seed)
        score = silhouette_score(codes, labels)
        if score > best_score:
            best_k, best_score = k, score
    return best_k


# ---------------------------------------------------------------------------
# manifest partitioning and assignment I/O

def partition_manifest(manifest: DatasetManifest,
                       assignment: DomainAssignment) -> list[DatasetManifest]:
    compound = manifest.split_entries("compound")
    compound_ids = {e.image_id for e in compound}
    assigned_ids = set(assignment.mapping)
    if assigned_ids - compound_ids:
        raise ValueError(f"assignment has unknown image ids: "
                         f"{sorted(assigned_ids - compound_ids)[:3]}")
    if compound_ids - assigned_ids:
        raise ValueError("assignment does not cover the full compound split")
    by_domain: list[list[ManifestEntry]] = [[] for _ in range(assignment.k)]
    for e in compound:
        by_domain[assignment.mapping[e.image_id] - 1].append(e)
    return [DatasetManifest(entries, root=manifest.root) for entries in by_domain]


def write_assignment(assignment: DomainAssignment, path: Path,
                     centroids_path: Path | None = None) -> None:
    lines = [f"{i}\t{j}" for i, j in assignment.mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if centroids_path is not None:
        rows = [" ".join(repr(float(v)) for v in c) for c in assignment.centroids]
        Path(centroids_path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_assignment(path: Path, centroids_path: Path) -> DomainAssignment:
    mapping = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        image_id, j = raw.split("\t")
        mapping[image_id] = int(j)
    centroids = np.array([[float(v) for v in row.split()]
                          for row in Path(centroids_path).read_text().splitlines()
                          if row.strip()])
    return DomainAssignment(mapping, centroids)
