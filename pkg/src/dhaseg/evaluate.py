"""Evaluation: confusion matrices, dataset-level mIoU, per-style aggregates,
clustering quality (ARI), biased-alignment curves, and feature export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import DatasetManifest, load_entry_arrays
from .networks import SegNetwork, images_to_tensor, load_checkpoint


def confusion_matrix(prediction: np.ndarray, ground_truth: np.ndarray,
                     num_classes: int) -> np.ndarray:
    """C x C counts, rows = ground truth, columns = prediction."""
    pred = np.asarray(prediction).ravel()
    gt = np.asarray(ground_truth).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction/ground-truth shape mismatch")
    if gt.size == 0:
        raise ValueError("empty input")
    if pred.min() < 0 or pred.max() >= num_classes or gt.max() >= num_classes:
        raise ValueError(f"labels out of range [0, {num_classes})")
    return np.bincount(gt * num_classes + pred,
                       minlength=num_classes * num_classes
                       ).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> tuple[list[float | None], float]:
    """Per-class IoU (None for classes absent from both gt and prediction) and
    their mean over present classes."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    ious, present = [], []
    for c in range(cm.shape[0]):
        denom = tp[c] + fp[c] + fn[c]
        if denom == 0:
            ious.append(None)
        else:
            v = tp[c] / denom
            ious.append(float(v))
            present.append(v)
    if not present:
        raise ValueError("no class present in either prediction or ground truth")
    return ious, float(np.mean(present))


def compute_miou(predictions, ground_truths, num_classes: int):
    """Dataset-level mIoU: confusion counts are accumulated over all images
    before the IoU ratio is taken."""
    preds = list(predictions)
    gts = list(ground_truths)
    if len(preds) != len(gts) or not preds:
        raise ValueError("need equal, non-zero numbers of predictions and truths")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(preds, gts):
        cm += confusion_matrix(p, g, num_classes)
    return iou_from_confusion(cm)


@dataclass
class DomainMetrics:
    """Per-style mIoU plus unweighted and image-weighted aggregates."""

    per_style: dict[int, float]
    open_style: int
    image_counts: dict[int, int] = field(default_factory=dict)

    @property
    def compound_mean(self) -> float:
        vals = [v for s, v in self.per_style.items() if s != self.open_style]
        return float(np.mean(vals))

    @property
    def overall_mean(self) -> float:
        return float(np.mean(list(self.per_style.values())))

    def _weighted(self, styles) -> float:
        vals = [self.per_style[s] for s in styles]
        w = [self.image_counts.get(s, 1) for s in styles]
        return float(np.average(vals, weights=w))

    @property
    def compound_mean_weighted(self) -> float:
        return self._weighted([s for s in self.per_style if s != self.open_style])

    @property
    def overall_mean_weighted(self) -> float:
        return self._weighted(list(self.per_style))


def aggregate_domains(per_style_miou: dict[int, float], open_style: int,
                      image_counts: dict[int, int] | None = None) -> DomainMetrics:
    if open_style not in per_style_miou:
        raise ValueError(f"missing open style {open_style}")
    return DomainMetrics(dict(per_style_miou), open_style, image_counts or {})


def predict_batched(seg_net: SegNetwork, images: np.ndarray,
                    batch_size: int = 32) -> np.ndarray:
    seg_net.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(images), batch_size):
            probs = seg_net(images_to_tensor(images[lo:lo + batch_size]))
            out.append(probs.argmax(dim=1).numpy())
    return np.concatenate(out)


def evaluate_per_style(seg_net: SegNetwork, manifest: DatasetManifest,
                       num_classes: int) -> dict[int, float]:
    """mIoU per true style id over the compound and open splits."""
    entries = [e for e in manifest.entries if e.split in ("compound", "open")]
    styles = sorted({e.true_style_id for e in entries})
    if None in styles:
        raise ValueError("evaluation requires ground-truth style ids")
    result = {}
    for s in styles:
        sel = [e for e in entries if e.true_style_id == s]
        images, masks = load_entry_arrays(manifest, sel)
        preds = predict_batched(seg_net, images)
        _, miou = compute_miou(preds, masks, num_classes)
        result[s] = miou
    return result


def evaluate_model(seg_net: SegNetwork, manifest: DatasetManifest,
                   num_classes: int, open_style: int) -> DomainMetrics:
    per_style = evaluate_per_style(seg_net, manifest, num_classes)
    counts = {}
    for e in manifest.entries:
        if e.split in ("compound", "open"):
            counts[e.true_style_id] = counts.get(e.true_style_id, 0) + 1
    return aggregate_domains(per_style, open_style, counts)


# ---------------------------------------------------------------------------
# clustering quality

def adjusted_rand_index(assignment, true_labels) -> float:
    """Pair-counting adjusted Rand index between two labelings of the same set."""
    a = np.asarray(list(assignment))
    b = np.asarray(list(true_labels))
    if a.shape != b.shape:
        raise ValueError("labelings must cover the same items")
    n = a.size
    if n == 0:
        raise ValueError("empty labelings")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    cont = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(cont, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(cont).sum()
    sum_a = comb2(cont.sum(axis=1)).sum()
    sum_b = comb2(cont.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0  # both labelings trivial (all-one-cluster or all-singletons)
    return float((sum_ij - expected) / (max_index - expected))


def clustering_quality(assignment_mapping: dict[str, int],
                       truth_mapping: dict[str, int]) -> float:
    ids = sorted(assignment_mapping)
    if set(ids) != set(truth_mapping):
        raise ValueError("assignment and truth must cover the same image set")
    return adjusted_rand_index([assignment_mapping[i] for i in ids],
                               [truth_mapping[i] for i in ids])


# ---------------------------------------------------------------------------
# biased-alignment curves

def biased_alignment_curves(checkpoints: list[tuple[int, Path]],
                            manifest: DatasetManifest, num_classes: int,
                            out_csv: Path | None = None,
                            plot_dir: Path | None = None,
                            style_names: dict[int, str] | None = None):
    """Per-style mIoU across training checkpoints.

    checkpoints: (iteration, checkpoint_path) pairs; at least two required.
    Returns rows of (iteration, style_id, miou); optionally writes a CSV and one
    line-plot PNG per style.
    """
    if len(checkpoints) < 2:
        raise ValueError("biased-alignment curves need at least 2 checkpoints")
    rows = []
    for iteration, path in sorted(checkpoints):
        blob = load_checkpoint(path)
        net = SegNetwork(num_classes=num_classes)
        net.load_state_dict(blob["state_dict"])
        for style, miou in sorted(evaluate_per_style(net, manifest, num_classes).items()):
            rows.append((iteration, style, miou))
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "style", "miou"])
            w.writerows(rows)
    if plot_dir is not None:
        _plot_curves(rows, Path(plot_dir), style_names or {})
    return rows


def _plot_curves(rows, plot_dir: Path, style_names: dict[int, str]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plot_dir.mkdir(parents=True, exist_ok=True)
    styles = sorted({s for _, s, _ in rows})
    for s in styles:
        pts = [(it, miou) for it, st, miou in rows if st == s]
        name = style_names.get(s, f"style{s}")
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([p[0] for p in pts], [100 * p[1] for p in pts], marker="o")
        ax.set_xlabel("iteration")
        ax.set_ylabel("mIoU (%)")
        ax.set_title(f"per-style mIoU over training: {name}")
        fig.tight_layout()
        fig.savefig(plot_dir / f"curve_{name}.png", dpi=120)
        plt.close(fig)


# ---------------------------------------------------------------------------
# feature export

def export_features(seg_net: SegNetwork, manifest: DatasetManifest,
                    layer: str = "penultimate", batch_size: int = 32):
    """Spatial-mean penultimate features, one row per image, with split/style tags."""
    if layer != "penultimate":
        raise ValueError(f"unknown layer {layer!r}")
    entries = manifest.entries
    images = load_entry_arrays(manifest, entries, with_masks=False)
    seg_net.eval()
    feats = []
    with torch.no_grad():
        for lo in range(0, len(images), batch_size):
            f = seg_net.features(images_to_tensor(images[lo:lo + batch_size]))
            feats.append(f.mean(dim=(2, 3)).numpy())
    matrix = np.concatenate(feats)
    tags = [(e.image_id, e.split, e.true_style_id) for e in entries]
    return matrix, tags


def write_features(path: Path, matrix: np.ndarray, tags) -> None:
    lines = [str(matrix.shape[1])]
    for (image_id, split, style), row in zip(tags, matrix):
        style_s = "" if style is None else str(style)
        lines.append(f"{image_id}\t{split}\t{style_s}\t" +
                     " ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_metrics_csv(path: Path, run_id: str, iteration: int,
                      per_split_rows: list[tuple[str, int, list, float]]) -> None:
    """Rows: (split, style, per-class IoUs, miou) -> CSV with one line per class
    plus a 'miou' summary line per (split, style)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "iteration", "split", "style", "class", "iou", "miou"])
        for split, style, ious, miou in per_split_rows:
            for c, v in enumerate(ious):
                w.writerow([run_id, iteration, split, style, c,
                            "" if v is None else f"{v:.6f}", f"{miou:.6f}"])
