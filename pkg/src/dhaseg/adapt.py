"""Adaptation stage: supervised training on (translated) source plus output-space
adversarial alignment, with none / traditional / domain-wise adversary modes."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import losses
from .data import DatasetManifest, load_entry_arrays
from .hallucinate import TranslatedEntry
from .networks import (OutputDiscriminator, SegNetwork, images_to_tensor,
                       save_checkpoint)

ADAPT_MODES = ("none", "traditional_raw", "traditional_translated",
               "domain_wise", "domain_wise_raw")

# Offset separating the target/adversary RNG stream from the task stream, so a
# zero adversary weight cannot perturb the task-side trajectory.
_ADV_RNG_OFFSET = 999_983


@dataclass
class AdaptConfig:
    iterations: int = 3000
    scheme: str = "short"  # short = log-form GAN, long = LS-GAN
    lr_seg: float = 2.5e-4
    lr_disc: float = 1e-4
    poly_power: float = 0.9
    momentum: float = 0.9
    weights: losses.LossWeights = losses.LossWeights()
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50

    def __post_init__(self):
        if self.scheme not in ("short", "long"):
            raise ValueError(f"unknown training scheme {self.scheme!r}")


@dataclass
class PretrainConfig:
    iterations: int = 1600
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    augment: bool = True
    aug_probability: float = 0.85


def _random_photometric(rng: np.random.Generator):
    from .data import StyleParams
    return StyleParams(
        hue_shift=rng.uniform(-0.5, 0.5),
        brightness=rng.uniform(0.3, 1.5),
        contrast=rng.uniform(0.35, 1.5),
        color_cast=tuple(rng.uniform(-0.16, 0.16, size=3)),
        noise_sigma=rng.uniform(0.0, 0.18),
        seed=int(rng.integers(2 ** 31)))


def train_source_segmentation(source_manifest: DatasetManifest,
                              config: PretrainConfig = PretrainConfig(),
                              num_classes: int = 5) -> SegNetwork:
    """Supervised segmentation training on labeled source only (the source-only
    baseline, also used as the frozen semantic-consistency model).

    Photometric jitter (a label-free augmentation of the source images) makes
    the frozen model tolerant of moderate appearance shifts, standing in for
    the robustness a large pretrained backbone would provide.
    """
    from .data import apply_style
    entries = source_manifest.split_entries("source")
    images, masks = load_entry_arrays(source_manifest, entries)
    net = SegNetwork(num_classes=num_classes, seed=config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.iterations):
        idx = rng.integers(len(entries), size=config.batch_size)
        batch = images[idx]
        if config.augment:
            batch = np.stack([
                apply_style(im, _random_photometric(rng))
                if rng.random() < config.aug_probability else im
                for im in batch])
        loss = losses.task_loss(net, images_to_tensor(batch),
                                torch.from_numpy(masks[idx]))
        opt.zero_grad()
        loss.backward()
        opt.step()
    return net


class _Stream:
    """A sampled pool of images (optionally with masks)."""

    def __init__(self, images: np.ndarray, masks: np.ndarray | None = None):
        self.images = images
        self.masks = masks

    def sample(self, rng: np.random.Generator, n: int = 1):
        idx = rng.integers(len(self.images), size=n)
        if self.masks is None:
            return self.images[idx]
        return self.images[idx], self.masks[idx]


def build_task_streams(mode: str, source_manifest: DatasetManifest,
                       translated_root: Path | None,
                       translated_entries: list[list[TranslatedEntry]] | None,
                       k: int) -> list[_Stream]:
    """Task-loss data: per-domain translated source, or raw source replicated."""
    src_entries = source_manifest.split_entries("source")
    src_images, src_masks = load_entry_arrays(source_manifest, src_entries)
    if mode in ("traditional_raw", "domain_wise_raw"):
        return [_Stream(src_images, src_masks)] * k
    if translated_entries is None or translated_root is None:
        raise ValueError(f"mode {mode!r} requires translated-source manifests")
    if len(translated_entries) != k:
        raise ValueError(f"expected {k} translated manifests, got {len(translated_entries)}")
    masks_by_id = {e.image_id: m for e, m in zip(src_entries, src_masks)}
    from .data import load_image_png
    streams = []
    for dom in translated_entries:
        imgs = np.stack([load_image_png(Path(translated_root) / t.output_path)
                         for t in dom])
        msks = np.stack([masks_by_id[t.source_image_id] for t in dom])
        streams.append(_Stream(imgs, msks))
    return streams


def build_target_streams(mode: str,
                         domain_manifests: list[DatasetManifest]) -> list[_Stream]:
    """Adversary data: one stream per discriminator (pooled for traditional)."""
    if mode == "none":
        return []
    per_domain = [load_entry_arrays(m, m.entries, with_masks=False)
                  for m in domain_manifests]
    if mode.startswith("traditional"):
        return [_Stream(np.concatenate(per_domain))]
    return [_Stream(imgs) for imgs in per_domain]


def train_adapt(task_streams: list[_Stream], target_streams: list[_Stream],
                config: AdaptConfig = AdaptConfig(), num_classes: int = 5,
                out_dir: Path | None = None, config_hash: str = "",
                log_path: Path | None = None,
                init_state: dict | None = None):
    """Alternating adaptation training.

    Per iteration: one segmentation step on the task batch (one image per task
    stream), one adversarial segmentation step weighted by lambda_out (skipped
    when the weight is zero), then one step per output discriminator.
    The segmentation network starts from ``init_state`` when given (fine-tuning
    a source-pretrained model), otherwise from a fresh seeded initialization.
    Returns (seg_net, checkpoints) where checkpoints is a list of
    (iteration, path) pairs (empty when out_dir is None).
    """
    if not task_streams:
        raise ValueError("at least one task stream required")
    k_disc = len(target_streams)
    use_ls = config.scheme == "long"
    lam_out = config.weights.out

    net = SegNetwork(num_classes=num_classes, seed=config.seed)
    if init_state is not None:
        net.load_state_dict(init_state)
    opt_f = torch.optim.SGD(net.parameters(), lr=config.lr_seg,
                            momentum=config.momentum)
    discs = [OutputDiscriminator(num_classes, seed=config.seed + 1000 + d)
             for d in range(k_disc)]
    opt_ds = [torch.optim.Adam(d.parameters(), lr=config.lr_disc, betas=(0.9, 0.99))
              for d in discs]

    rng_task = np.random.default_rng(config.seed)
    rng_adv = np.random.default_rng(config.seed + _ADV_RNG_OFFSET)

    checkpoints: list[tuple[int, Path]] = []
    log_rows = []
    t_start = time.time()

    def save_ckpt(iteration):
        if out_dir is None:
            return
        path = Path(out_dir) / "checkpoints" / f"iter_{iteration:06d}.ckpt"
        save_checkpoint(path, net.state_dict(), config_hash,
                        extra={"iteration": iteration})
        checkpoints.append((iteration, path))

    for it in range(config.iterations):
        lr = config.lr_seg * (1.0 - it / config.iterations) ** config.poly_power
        for grp in opt_f.param_groups:
            grp["lr"] = lr

        # segmentation step on the task batch
        batch = [s.sample(rng_task) for s in task_streams]
        imgs = np.concatenate([b[0] for b in batch])
        msks = np.concatenate([b[1] for b in batch])
        src_probs = net(images_to_tensor(imgs))
        loss_task = losses.cross_entropy_from_probs(src_probs, torch.from_numpy(msks))
        opt_f.zero_grad()
        loss_task.backward()
        opt_f.step()
        src_probs = src_probs.detach()

        loss_outs = [float("nan")] * k_disc
        loss_ds = [float("nan")] * k_disc
        if k_disc:
            tgt_imgs = [s.sample(rng_adv) for s in target_streams]
            # adversarial segmentation step, fully gated by lambda_out; the
            # objective sums the per-domain alignment terms
            if lam_out > 0.0:
                adv = torch.zeros(())
                for d, disc, ti in zip(range(k_disc), discs, tgt_imgs):
                    score = disc(net(images_to_tensor(ti)))
                    l = (losses.ls_output_adapt_loss(score) if use_ls
                         else losses.output_adapt_loss(score))
                    loss_outs[d] = float(l.detach())
                    adv = adv + l
                opt_f.zero_grad()
                (lam_out * adv).backward()
                opt_f.step()

            # discriminator steps (disjoint parameters per discriminator)
            n_per = max(len(imgs) // k_disc, 1)
            for d, (disc, opt_d, ti) in enumerate(zip(discs, opt_ds, tgt_imgs)):
                if len(target_streams) == 1:
                    sp = src_probs  # traditional: pooled source probabilities
                else:
                    sp = src_probs[d * n_per:(d + 1) * n_per]
                with torch.no_grad():
                    tp = net(images_to_tensor(ti))
                d_src, d_tgt = disc(sp), disc(tp)
                l_d = (losses.ls_output_discriminator_loss(d_src, d_tgt) if use_ls
                       else losses.output_discriminator_loss(d_src, d_tgt))
                loss_ds[d] = float(l_d.detach())
                opt_d.zero_grad()
                l_d.backward()
                opt_d.step()

        if (it + 1) % config.checkpoint_every == 0:
            save_ckpt(it + 1)
        if it % config.log_every == 0 or it == config.iterations - 1:
            log_rows.append([it, float(loss_task.detach()), *loss_outs, *loss_ds,
                             round(time.time() - t_start, 3)])

    if not checkpoints or checkpoints[-1][0] != config.iterations:
        save_ckpt(config.iterations)
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss_task",
                        *[f"loss_out_{d + 1}" for d in range(k_disc)],
                        *[f"loss_disc_{d + 1}" for d in range(k_disc)],
                        "wall_time_s"])
            w.writerows(log_rows)
    return net, checkpoints


def run_adaptation(mode: str, source_manifest: DatasetManifest,
                   domain_manifests: list[DatasetManifest],
                   translated_root: Path | None,
                   translated_entries: list[list[TranslatedEntry]] | None,
                   config: AdaptConfig = AdaptConfig(), num_classes: int = 5,
                   out_dir: Path | None = None, config_hash: str = "",
                   log_path: Path | None = None,
                   init_state: dict | None = None):
    """Assemble data streams for the requested mode and train."""
    if mode not in ADAPT_MODES:
        raise ValueError(f"unknown adapt mode {mode!r}")
    k = len(domain_manifests)
    if k < 1:
        raise ValueError("at least one latent-domain manifest required")
    task = build_task_streams(mode, source_manifest, translated_root,
                              translated_entries, k)
    target = build_target_streams(mode, domain_manifests)
    return train_adapt(task, target, config, num_classes, out_dir, config_hash,
                       log_path, init_state=init_state)
