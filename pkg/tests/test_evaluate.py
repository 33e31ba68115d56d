import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dhaseg.evaluate import (DomainMetrics, adjusted_rand_index,
                             aggregate_domains, biased_alignment_curves,
                             clustering_quality, compute_miou,
                             confusion_matrix, iou_from_confusion,
                             write_features)


from oracles import ari_pair_counting, brute_force_miou

# ---------------------------------------------------------------------------
# confusion matrix / IoU against brute-force counters


def test_confusion_matrix_hand_case():
    pred = np.array([[0, 1], [1, 1]])
    gt = np.array([[0, 0], [1, 1]])
    cm = confusion_matrix(pred, gt, 2)
    np.testing.assert_array_equal(cm, [[1, 1], [0, 2]])


def test_miou_two_by_two_hand_case():
    # class 0: inter 1, union 2 -> 1/2; class 1: inter 2, union 3 -> 2/3
    # mean = 7/12
    pred = np.array([[0, 1], [1, 1]])
    gt = np.array([[0, 0], [1, 1]])
    _, miou = compute_miou([pred], [gt], 2)
    assert miou == pytest.approx(7 / 12, abs=1e-12)


def test_miou_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for trial in range(100):
        c = int(rng.integers(2, 6))
        n = int(rng.integers(1, 4))
        shape = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        preds = [rng.integers(0, c, size=shape) for _ in range(n)]
        gts = [rng.integers(0, c, size=shape) for _ in range(n)]
        _, miou = compute_miou(preds, gts, c)
        assert miou == pytest.approx(brute_force_miou(preds, gts, c),
                                     abs=1e-12), f"trial {trial}"


def test_miou_accumulates_before_dividing():
    # two images with very different sizes of the same class: dataset-level
    # IoU is not the mean of per-image IoUs
    pred1 = np.zeros((2, 2), dtype=int)
    gt1 = np.zeros((2, 2), dtype=int)
    pred2 = np.zeros((2, 2), dtype=int)
    gt2 = np.array([[0, 1], [1, 1]])
    _, pooled = compute_miou([pred1, pred2], [gt1, gt2], 2)
    # class 0: inter 5, union 8; class 1: inter 0, union 3
    assert pooled == pytest.approx((5 / 8 + 0 / 3) / 2, abs=1e-12)
    per_image = np.mean([compute_miou([pred1], [gt1], 2)[1],
                         compute_miou([pred2], [gt2], 2)[1]])
    assert pooled != pytest.approx(per_image, abs=1e-6)


def test_absent_class_is_excluded():
    pred = np.zeros((3, 3), dtype=int)
    gt = np.zeros((3, 3), dtype=int)
    ious, miou = compute_miou([pred], [gt], 4)
    assert ious[0] == 1.0 and ious[1:] == [None, None, None]
    assert miou == 1.0


def test_iou_errors():
    with pytest.raises(ValueError):
        confusion_matrix(np.zeros((2, 2)), np.zeros((2, 3)), 2)
    with pytest.raises(ValueError):
        confusion_matrix(np.full((2, 2), 5), np.zeros((2, 2)), 2)
    with pytest.raises(ValueError):
        iou_from_confusion(np.zeros((3, 3), dtype=int))
    with pytest.raises(ValueError):
        compute_miou([], [], 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000))
def test_perfect_prediction_gives_unit_miou(c, seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, c, size=(6, 6))
    ious, miou = compute_miou([gt], [gt], c)
    assert miou == 1.0
    assert all(v in (None, 1.0) for v in ious)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.int64, (5, 5), elements=st.integers(0, 3)),
       hnp.arrays(np.int64, (5, 5), elements=st.integers(0, 3)))
def test_miou_bounded_and_symmetric_in_union(pred, gt):
    _, miou = compute_miou([pred], [gt], 4)
    assert 0.0 <= miou <= 1.0
    # IoU is symmetric under swapping prediction and ground truth
    _, swapped = compute_miou([gt], [pred], 4)
    assert miou == pytest.approx(swapped, abs=1e-12)


# ---------------------------------------------------------------------------
# adjusted Rand index against a pair-counting oracle

def test_ari_matches_pair_counting_oracle():
    rng = np.random.default_rng(1)
    for trial in range(50):
        n = int(rng.integers(3, 30))
        a = rng.integers(0, 4, size=n)
        b = rng.integers(0, 4, size=n)
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        assert adjusted_rand_index(a, b) == \
            pytest.approx(ari_pair_counting(a, b), abs=1e-9), f"trial {trial}"


def test_ari_matches_sklearn():
    from sklearn.metrics import adjusted_rand_score
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.integers(0, 3, size=40)
        b = rng.integers(0, 5, size=40)
        assert adjusted_rand_index(a, b) == \
            pytest.approx(adjusted_rand_score(a, b), abs=1e-9)


def test_ari_properties():
    a = [1, 1, 2, 2, 3, 3]
    assert adjusted_rand_index(a, a) == 1.0
    # invariant to label renaming
    assert adjusted_rand_index(a, [7, 7, 5, 5, 9, 9]) == 1.0
    # symmetric
    b = [1, 2, 1, 2, 3, 1]
    assert adjusted_rand_index(a, b) == pytest.approx(
        adjusted_rand_index(b, a), abs=1e-12)
    with pytest.raises(ValueError):
        adjusted_rand_index([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        adjusted_rand_index([], [])


def test_clustering_quality_requires_same_ids():
    assignment = {"a": 1, "b": 2}
    with pytest.raises(ValueError):
        clustering_quality(assignment, {"a": 1, "c": 2})
    truth = {"a": 2, "b": 1}
    assert clustering_quality(assignment, truth) == 1.0


# ---------------------------------------------------------------------------
# per-style aggregation

def test_aggregate_domains_means():
    per_style = {1: 0.2, 2: 0.4, 3: 0.6, 4: 0.8}
    m = aggregate_domains(per_style, open_style=4,
                          image_counts={1: 10, 2: 10, 3: 10, 4: 70})
    assert m.compound_mean == pytest.approx((0.2 + 0.4 + 0.6) / 3)
    assert m.overall_mean == pytest.approx(0.5)
    assert m.compound_mean_weighted == pytest.approx(0.4)
    assert m.overall_mean_weighted == pytest.approx(
        (0.2 + 0.4 + 0.6 + 0.8 * 7) / 10)
    with pytest.raises(ValueError):
        aggregate_domains({1: 0.5}, open_style=2)


def test_domain_metrics_unweighted_defaults():
    m = DomainMetrics({1: 0.1, 2: 0.3}, open_style=2)
    assert m.overall_mean_weighted == pytest.approx(0.2)


# ---------------------------------------------------------------------------
# curves and feature export

def test_biased_alignment_curves_need_two_checkpoints(tiny_benchmark):
    manifest, _ = tiny_benchmark
    with pytest.raises(ValueError):
        biased_alignment_curves([(100, "x.ckpt")], manifest, 5)


def test_curves_csv_and_plots(tiny_benchmark, tmp_path):
    from dhaseg.networks import SegNetwork, save_checkpoint
    manifest, config = tiny_benchmark
    ckpts = []
    for it in (100, 200):
        p = tmp_path / f"iter_{it}.ckpt"
        save_checkpoint(p, SegNetwork(seed=it).state_dict(), "h")
        ckpts.append((it, p))
    rows = biased_alignment_curves(ckpts, manifest, 5,
                                   out_csv=tmp_path / "curves.csv",
                                   plot_dir=tmp_path / "plots")
    n_styles = len(config.styles) + 1
    assert len(rows) == 2 * n_styles
    with open(tmp_path / "curves.csv") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == ["iteration", "style", "miou"]
    assert len(parsed) == 1 + len(rows)
    pngs = sorted(p.name for p in (tmp_path / "plots").glob("*.png"))
    assert len(pngs) == n_styles


def test_write_features_format(tmp_path):
    matrix = np.array([[1.5, -2.25], [0.125, 3.0]])
    tags = [("a", "source", None), ("b", "compound", 2)]
    write_features(tmp_path / "f.tsv", matrix, tags)
    lines = (tmp_path / "f.tsv").read_text().splitlines()
    assert lines[0] == "2"
    assert lines[1].split("\t") == ["a", "source", "", "1.5 -2.25"]
    assert lines[2].split("\t") == ["b", "compound", "2", "0.125 3.0"]
