import numpy as np
import pytest
import torch

from dhaseg.adapt import (ADAPT_MODES, AdaptConfig, PretrainConfig,
                          build_target_streams, build_task_streams,
                          run_adaptation, train_adapt,
                          train_source_segmentation)
from dhaseg.discovery import (StyleEncoder, assign_domains,
                              compute_style_codes, partition_manifest)
from dhaseg.hallucinate import translate_dataset
from dhaseg.losses import LossWeights
from dhaseg.networks import Generator, SegNetwork


@pytest.fixture(scope="module")
def adapt_setup(tiny_benchmark, tmp_path_factory):
    manifest, _ = tiny_benchmark
    stripped = manifest.strip_truth()
    encoder = StyleEncoder(seed=0)
    ids, codes = compute_style_codes(stripped, encoder)
    assignment = assign_domains(ids, codes, 2, seed=0)
    domains = partition_manifest(stripped, assignment)
    translated_root = tmp_path_factory.mktemp("translated")
    translated = translate_dataset(Generator(seed=0), stripped, domains,
                                   encoder, translated_root, seed=0)
    return stripped, domains, translated_root, translated


def _short(mode_seed=0, iterations=4, **kw):
    return AdaptConfig(iterations=iterations, seed=mode_seed,
                       checkpoint_every=100, log_every=1, **kw)


def _states_equal(a, b):
    return all(torch.equal(a[k], b[k]) for k in a)


def test_pretrain_reduces_task_loss(tiny_benchmark):
    from dhaseg.data import load_entry_arrays
    from dhaseg.losses import task_loss
    from dhaseg.networks import images_to_tensor
    manifest, _ = tiny_benchmark
    stripped = manifest.strip_truth()
    entries = stripped.split_entries("source")
    images, masks = load_entry_arrays(stripped, entries)
    x, y = images_to_tensor(images), torch.from_numpy(masks)
    with torch.no_grad():
        before = float(task_loss(SegNetwork(seed=0), x, y))
    net = train_source_segmentation(
        stripped, PretrainConfig(iterations=60, seed=0, augment=False))
    with torch.no_grad():
        after = float(task_loss(net, x, y))
    assert after < before


def test_pretrain_deterministic(tiny_benchmark):
    manifest, _ = tiny_benchmark
    stripped = manifest.strip_truth()
    cfg = PretrainConfig(iterations=4, seed=2)
    a = train_source_segmentation(stripped, cfg)
    b = train_source_segmentation(stripped, cfg)
    assert _states_equal(a.state_dict(), b.state_dict())


def test_task_streams_per_mode(adapt_setup):
    stripped, domains, root, translated = adapt_setup
    n_src = len(stripped.split_entries("source"))

    raw = build_task_streams("traditional_raw", stripped, None, None, 2)
    assert len(raw) == 2
    assert all(len(s.images) == n_src for s in raw)

    trans = build_task_streams("domain_wise", stripped, root, translated, 2)
    assert len(trans) == 2
    for s in trans:
        assert len(s.images) == n_src
        assert s.masks is not None

    with pytest.raises(ValueError, match="translated"):
        build_task_streams("domain_wise", stripped, None, None, 2)
    with pytest.raises(ValueError, match="expected 2"):
        build_task_streams("domain_wise", stripped, root, translated[:1], 2)


def test_target_streams_per_mode(adapt_setup):
    _, domains, _, _ = adapt_setup
    assert build_target_streams("none", domains) == []
    pooled = build_target_streams("traditional_translated", domains)
    assert len(pooled) == 1
    assert len(pooled[0].images) == sum(len(d.entries) for d in domains)
    per_dom = build_target_streams("domain_wise", domains)
    assert len(per_dom) == len(domains)


def test_unknown_mode_rejected(adapt_setup):
    stripped, domains, root, translated = adapt_setup
    with pytest.raises(ValueError, match="unknown adapt mode"):
        run_adaptation("diagonal", stripped, domains, root, translated)
    with pytest.raises(ValueError, match="scheme"):
        AdaptConfig(scheme="medium")


def test_domain_wise_instantiates_k_disjoint_discriminators(adapt_setup):
    # exercised indirectly: per-domain adversarial and discriminator losses
    # appear in the training log, one column pair per latent domain
    stripped, domains, root, translated = adapt_setup
    import csv
    import tempfile
    with tempfile.TemporaryDirectory() as td:
        log = f"{td}/log.csv"
        run_adaptation("domain_wise", stripped, domains, root, translated,
                       _short(), out_dir=None, log_path=log)
        with open(log) as fh:
            header = next(csv.reader(fh))
    assert "loss_out_1" in header and "loss_out_2" in header
    assert "loss_disc_1" in header and "loss_disc_2" in header


def test_lambda_out_zero_matches_none_mode(adapt_setup):
    # with a zero adversarial weight the domain-wise segmentation trajectory
    # is identical to training without any adversary
    stripped, domains, root, translated = adapt_setup
    base = dict(iterations=6, seed=3, checkpoint_every=100)
    none_net, _ = run_adaptation(
        "none", stripped, domains, root, translated,
        AdaptConfig(**base))
    dw_net, _ = run_adaptation(
        "domain_wise", stripped, domains, root, translated,
        AdaptConfig(weights=LossWeights(out=0.0), **base))
    assert _states_equal(none_net.state_dict(), dw_net.state_dict())
    dw_on, _ = run_adaptation(
        "domain_wise", stripped, domains, root, translated,
        AdaptConfig(**base))
    assert not _states_equal(none_net.state_dict(), dw_on.state_dict())


def test_train_adapt_checkpoints_and_log(adapt_setup, tmp_path):
    stripped, domains, root, translated = adapt_setup
    cfg = AdaptConfig(iterations=4, seed=0, checkpoint_every=2, log_every=1)
    net, ckpts = run_adaptation("domain_wise", stripped, domains, root,
                                translated, cfg, out_dir=tmp_path,
                                config_hash="h", log_path=tmp_path / "l.csv")
    assert [it for it, _ in ckpts] == [2, 4]
    assert all(p.exists() for _, p in ckpts)
    assert (tmp_path / "l.csv").exists()


def test_long_scheme_differs_from_short(adapt_setup):
    stripped, domains, root, translated = adapt_setup
    a, _ = run_adaptation("domain_wise", stripped, domains, root, translated,
                          _short(scheme="short"))
    b, _ = run_adaptation("domain_wise", stripped, domains, root, translated,
                          _short(scheme="long"))
    assert not _states_equal(a.state_dict(), b.state_dict())


def test_init_state_is_the_starting_point(adapt_setup):
    stripped, domains, root, translated = adapt_setup
    pretrained = SegNetwork(seed=11)
    init = pretrained.state_dict()
    net, _ = run_adaptation("none", stripped, domains, root, translated,
                            AdaptConfig(iterations=0, seed=3),
                            init_state=init)
    assert _states_equal(net.state_dict(), init)
    trained, _ = run_adaptation("none", stripped, domains, root, translated,
                                AdaptConfig(iterations=3, seed=3),
                                init_state=init)
    assert not _states_equal(trained.state_dict(), init)


def test_train_adapt_requires_streams():
    with pytest.raises(ValueError):
        train_adapt([], [], AdaptConfig(iterations=1))


def test_modes_tuple_is_stable():
    assert ADAPT_MODES == ("none", "traditional_raw", "traditional_translated",
                           "domain_wise", "domain_wise_raw")
