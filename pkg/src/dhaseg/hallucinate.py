"""Hallucination stage: train the exemplar-guided translator against the image,
style-pair, and semantic-consistency objectives, then translate the whole
source set into every discovered latent domain."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .data import (DatasetManifest, ManifestEntry, load_entry_arrays,
                   save_image_png)
from .discovery import extract_style_code
from .losses import LossWeights
from .networks import (Generator, ImageDiscriminator, StyleDiscriminator,
                       freeze, images_to_tensor, tensor_to_images)


@dataclass
class HallucinationConfig:
    iterations: int = 1600
    lr: float = 2e-4
    weights: LossWeights = LossWeights()
    seed: int = 0
    log_every: int = 50


@dataclass
class TranslatedEntry:
    source_image_id: str
    domain: int
    exemplar_image_id: str
    output_path: str


def translate(generator: Generator, source_image: np.ndarray, exemplar,
              style_encoder=None) -> np.ndarray:
    """Translate one source image guided by an exemplar image or style code."""
    exemplar = np.asarray(exemplar, dtype=np.float64)
    if exemplar.ndim == 3:
        if style_encoder is None:
            raise ValueError("image exemplar requires a style encoder")
        code = extract_style_code(exemplar, style_encoder)
    elif exemplar.ndim == 1:
        if exemplar.shape[0] != generator.style_dim:
            raise ValueError(f"style code must have length {generator.style_dim}")
        code = exemplar
    else:
        raise ValueError("exemplar must be an image or a style-code vector")
    x = images_to_tensor(source_image)
    s = torch.from_numpy(code).to(x.dtype)[None]
    with torch.no_grad():
        out = generator(x, s)
    return tensor_to_images(out)[0].astype(np.float64)


class _DomainPool:
    """In-memory images and style codes for one latent domain."""

    def __init__(self, manifest: DatasetManifest, entries: list[ManifestEntry],
                 style_encoder):
        self.ids = [e.image_id for e in entries]
        self.images = load_entry_arrays(manifest, entries, with_masks=False)
        self.codes = np.stack([extract_style_code(img, style_encoder)
                               for img in self.images]).astype(np.float32)


def train_hallucination(source_manifest: DatasetManifest,
                        domain_manifests: list[DatasetManifest],
                        f_seg, style_encoder,
                        config: HallucinationConfig = HallucinationConfig(),
                        log_path: Path | None = None) -> Generator:
    """Alternating GAN training of the translator.

    Every iteration carries one source image per latent domain; the exemplar
    index is re-sampled uniformly from the domain pool each time.
    """
    if not domain_manifests:
        raise ValueError("no latent-domain manifests given")
    k = len(domain_manifests)
    weights = config.weights

    src_entries = source_manifest.split_entries("source")
    src_images, src_masks = load_entry_arrays(source_manifest, src_entries)
    pools = [_DomainPool(m, m.entries, style_encoder) for m in domain_manifests]
    for j, pool in enumerate(pools):
        if len(pool.ids) < 2:
            raise ValueError(f"latent domain {j + 1} needs at least 2 images")

    generator = Generator(seed=config.seed)
    d_img = ImageDiscriminator(seed=config.seed + 1)
    d_sty = StyleDiscriminator(seed=config.seed + 2)
    freeze(f_seg)
    opt_g = torch.optim.RMSprop(generator.parameters(), lr=config.lr)
    opt_d = torch.optim.RMSprop(list(d_img.parameters()) + list(d_sty.parameters()),
                                lr=config.lr)
    rng = np.random.default_rng(config.seed)

    log_rows = []
    t_start = time.time()
    for it in range(config.iterations):
        src_idx = rng.integers(len(src_entries), size=k)
        src = images_to_tensor(src_images[src_idx])
        labels = torch.from_numpy(src_masks[src_idx])

        ex_idx = [rng.integers(len(p.ids)) for p in pools]
        exemplars = images_to_tensor(np.stack(
            [p.images[i] for p, i in zip(pools, ex_idx)]))
        codes = torch.from_numpy(np.stack(
            [p.codes[i] for p, i in zip(pools, ex_idx)]))

        # same-domain pairs (two distinct images) and one cross pair per l != j
        pair_a, pair_b, cross_a, cross_b = [], [], [], []
        for j, p in enumerate(pools):
            i1, i2 = rng.choice(len(p.ids), size=2, replace=False)
            pair_a.append(p.images[i1])
            pair_b.append(p.images[i2])
            for l, q in enumerate(pools):
                if l != j:
                    cross_a.append(p.images[rng.integers(len(p.ids))])
                    cross_b.append(q.images[rng.integers(len(q.ids))])
        pair_a = images_to_tensor(np.stack(pair_a))
        pair_b = images_to_tensor(np.stack(pair_b))
        cross_a = images_to_tensor(np.stack(cross_a))
        cross_b = images_to_tensor(np.stack(cross_b))

        fake = generator(src, codes)

        # discriminator step (image and style-pair discriminators jointly)
        fake_d = fake.detach()
        loss_di = losses.gan_discriminator_loss(d_img(exemplars), d_img(fake_d))
        loss_ds = losses.style_discriminator_loss(
            d_sty(pair_a, pair_b),
            [d_sty(cross_a, cross_b)],
            d_sty(exemplars, fake_d))
        opt_d.zero_grad()
        (loss_di + loss_ds).backward()
        opt_d.step()

        # generator step
        loss_gan = losses.gan_generator_loss(d_img(fake))
        loss_sem = losses.semantic_consistency_loss(f_seg, fake, labels)
        loss_style = losses.style_generator_loss(d_sty(exemplars, fake))
        loss_g = (weights.gan * loss_gan + weights.sem * loss_sem
                  + weights.style * loss_style)
        if not torch.isfinite(loss_g):
            raise losses.NonFiniteLossError(f"generator loss diverged at iter {it}")
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        if it % config.log_every == 0 or it == config.iterations - 1:
            log_rows.append([it] + [float(x.detach()) for x in
                                    (loss_g, loss_gan, loss_sem, loss_style,
                                     loss_di, loss_ds)]
                            + [round(time.time() - t_start, 3)])

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss_g", "loss_gan", "loss_sem",
                        "loss_style", "loss_d_img", "loss_d_sty", "wall_time_s"])
            w.writerows(log_rows)
    return generator


def translate_dataset(generator: Generator, source_manifest: DatasetManifest,
                      domain_manifests: list[DatasetManifest], style_encoder,
                      out_dir: Path, seed: int = 0,
                      batch_size: int = 16) -> list[list[TranslatedEntry]]:
    """Translate every source image into every latent domain.

    Writes PNGs plus one manifest per domain (TSV: source_image_id, domain,
    exemplar_image_id, output_path). Labels stay the original source masks.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    src_entries = source_manifest.split_entries("source")
    src_images = load_entry_arrays(source_manifest, src_entries, with_masks=False)
    rng = np.random.default_rng(seed)
    generator.eval()

    all_entries = []
    for j, dm in enumerate(domain_manifests, start=1):
        pool = _DomainPool(dm, dm.entries, style_encoder)
        ex_idx = rng.integers(len(pool.ids), size=len(src_entries))
        entries = []
        for lo in range(0, len(src_entries), batch_size):
            hi = min(lo + batch_size, len(src_entries))
            x = images_to_tensor(src_images[lo:hi])
            s = torch.from_numpy(pool.codes[ex_idx[lo:hi]])
            with torch.no_grad():
                outs = tensor_to_images(generator(x, s))
            for off, img in enumerate(outs):
                e = src_entries[lo + off]
                rel = f"images/{e.image_id}_d{j}.png"
                save_image_png(np.clip(img, 0, 1), out_dir / rel)
                entries.append(TranslatedEntry(
                    e.image_id, j, pool.ids[ex_idx[lo + off]], rel))
        write_translated_manifest(entries, out_dir / f"translated_d{j}.tsv")
        all_entries.append(entries)
    return all_entries


def write_translated_manifest(entries: list[TranslatedEntry], path: Path) -> None:
    lines = [f"{e.source_image_id}\t{e.domain}\t{e.exemplar_image_id}\t{e.output_path}"
             for e in entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_translated_manifest(path: Path) -> list[TranslatedEntry]:
    entries = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
        entries.append(TranslatedEntry(fields[0], int(fields[1]), fields[2], fields[3]))
    return entries
