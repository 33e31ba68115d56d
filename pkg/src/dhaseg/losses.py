"""Loss functions for the hallucination and adaptation stages.

Discriminator outputs are probabilities in (0,1). "Value" functions follow the
maximization form of the written objectives; "*_loss" functions are the
minimization forms actually optimized. Generator/segmentation adversarial terms
use the non-saturating direction.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

_EPS = 1e-12


class NonFiniteLossError(RuntimeError):
    """Raised when a loss becomes non-finite (training divergence signal)."""


def _check_finite(x: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteLossError(f"{name} is non-finite")
    return x


def _log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp_min(_EPS))


def _mean(x) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=torch.get_default_dtype()) \
        if not torch.is_tensor(x) else x
    return x.mean() if x.ndim > 0 else x


@dataclass(frozen=True)
class LossWeights:
    """The five lambda coefficients of the total objective."""

    gan: float = 1.0
    sem: float = 10.0
    style: float = 10.0
    out: float = 0.01
    task: float = 1.0

    def __post_init__(self):
        for name in ("gan", "sem", "style", "out", "task"):
            v = getattr(self, name)
            if not (v >= 0.0) or v != v:
                raise ValueError(f"lambda_{name} must be a non-negative finite real")


# ---------------------------------------------------------------------------
# image-level GAN (translated-vs-target)

def gan_discriminator_loss(d_real, d_fake) -> torch.Tensor:
    """-E[log D(real)] - E[log(1 - D(fake))]."""
    loss = -_mean(_log(_mean_tensor(d_real))) - _mean(_log(1.0 - _mean_tensor(d_fake)))
    return _check_finite(loss, "gan_discriminator_loss")


def gan_generator_loss(d_fake) -> torch.Tensor:
    """Non-saturating generator objective: -E[log D(fake)]."""
    return _check_finite(-_mean(_log(_mean_tensor(d_fake))), "gan_generator_loss")


def _mean_tensor(x) -> torch.Tensor:
    return x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)


# ---------------------------------------------------------------------------
# style-consistency GAN on image pairs

def style_consistency_value(d_same, d_cross, d_translated) -> torch.Tensor:
    """Written objective value: E[log D(same-domain pair)]
    + sum over other domains of E[log(1 - D(cross pair))]
    + E[log(1 - D(target, translated))]."""
    value = _mean(_log(_mean_tensor(d_same)))
    for d in (d_cross if isinstance(d_cross, (list, tuple)) else [d_cross]):
        value = value + _mean(_log(1.0 - _mean_tensor(d)))
    value = value + _mean(_log(1.0 - _mean_tensor(d_translated)))
    return _check_finite(value, "style_consistency_value")


def style_discriminator_loss(d_same, d_cross, d_translated) -> torch.Tensor:
    return -style_consistency_value(d_same, d_cross, d_translated)


def style_generator_loss(d_translated) -> torch.Tensor:
    """Non-saturating: generator maximizes log D on the (target, translated) pair."""
    return _check_finite(-_mean(_log(_mean_tensor(d_translated))),
                         "style_generator_loss")


# ---------------------------------------------------------------------------
# output-space alignment

def output_alignment_value(d_translated_src, d_target) -> torch.Tensor:
    """E[log D(F(translated source))] + E[log(1 - D(F(target)))]."""
    value = _mean(_log(_mean_tensor(d_translated_src))) \
        + _mean(_log(1.0 - _mean_tensor(d_target)))
    return _check_finite(value, "output_alignment_value")


def output_discriminator_loss(d_translated_src, d_target) -> torch.Tensor:
    return -output_alignment_value(d_translated_src, d_target)


def output_adapt_loss(d_target) -> torch.Tensor:
    """Segmentation-side term: make target predictions look source-like."""
    return _check_finite(-_mean(_log(_mean_tensor(d_target))), "output_adapt_loss")


def ls_output_discriminator_loss(d_translated_src, d_target) -> torch.Tensor:
    """Least-squares variant with labels 1 (translated source) / 0 (target)."""
    loss = _mean((_mean_tensor(d_translated_src) - 1.0) ** 2) \
        + _mean(_mean_tensor(d_target) ** 2)
    return _check_finite(loss, "ls_output_discriminator_loss")


def ls_output_adapt_loss(d_target) -> torch.Tensor:
    return _check_finite(_mean((_mean_tensor(d_target) - 1.0) ** 2),
                         "ls_output_adapt_loss")


# ---------------------------------------------------------------------------
# pixel-wise cross entropy

def cross_entropy_from_probs(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Pixel-mean cross-entropy of (B,C,H,W) probabilities against (B,H,W) labels."""
    if probs.ndim != 4:
        raise ValueError(f"expected (B,C,H,W) probabilities, got {tuple(probs.shape)}")
    if labels.shape != (probs.shape[0], probs.shape[2], probs.shape[3]):
        raise ValueError("labels shape does not match probabilities")
    c = probs.shape[1]
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    picked = probs.gather(1, labels.unsqueeze(1).long()).squeeze(1)
    return _check_finite(-_log(picked).mean(), "cross_entropy")


def semantic_consistency_loss(f_seg, translated: torch.Tensor,
                              source_labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the frozen source-trained segmenter on translated images
    against the original source annotation."""
    return cross_entropy_from_probs(f_seg(translated), source_labels)


def task_loss(seg_net, image: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return cross_entropy_from_probs(seg_net(image), labels)


# ---------------------------------------------------------------------------
# total objective

def total_loss(per_domain_components: list[dict], weights: LossWeights) -> torch.Tensor:
    """Weighted sum over latent domains of the five loss components.

    Each dict may carry keys 'gan', 'sem', 'style', 'out', 'task'; missing
    components count as zero.
    """
    total = torch.zeros((), dtype=torch.float64)
    for comps in per_domain_components:
        for name in ("gan", "sem", "style", "out", "task"):
            if name in comps:
                total = total + getattr(weights, name) * _mean_tensor(comps[name]).double()
    return _check_finite(total, "total_loss")
