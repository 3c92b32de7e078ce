"""Adversarial, cycle and combined translation objectives.

Conventions: ``disc_objective`` is minimised by the discriminator (it is the
negated two-sample log-likelihood, so minimising it maximises the adversarial
value). ``gen_objective`` is the non-saturating generator loss -E[log D(fake)]
rather than E[log(1 - D(fake))], which stalls when D wins early.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import torch

from ..core import LossWeights
from ..miloss import HistogramSpec, mi_loss_batch

EPS = 1e-7
GAN_VARIANTS = ("cross_entropy", "least_squares")


def _nonempty(*batches: torch.Tensor) -> None:
    for b in batches:
        if b.shape[0] == 0:
            raise ValueError("empty batch")


def _clamp(scores: torch.Tensor) -> torch.Tensor:
    return scores.clamp(EPS, 1.0 - EPS)


def adversarial_value(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """E[log D(real)] + E[log(1 - D(fake))], the quantity the discriminator maximises."""
    return torch.log(_clamp(d_real)).mean() + torch.log1p(-_clamp(d_fake)).mean()


def disc_objective(d_real: torch.Tensor, d_fake: torch.Tensor, variant: str = "cross_entropy") -> torch.Tensor:
    if variant == "cross_entropy":
        return -adversarial_value(d_real, d_fake)
    if variant == "least_squares":
        return 0.5 * ((d_real - 1.0) ** 2).mean() + 0.5 * (d_fake**2).mean()
    raise ValueError(f"unknown gan_variant {variant!r}")


def gen_objective(d_fake: torch.Tensor, variant: str = "cross_entropy") -> torch.Tensor:
    if variant == "cross_entropy":
        return -torch.log(_clamp(d_fake)).mean()
    if variant == "least_squares":
        return 0.5 * ((d_fake - 1.0) ** 2).mean()
    raise ValueError(f"unknown gan_variant {variant!r}")


def gan_loss(
    disc: Callable[[torch.Tensor], torch.Tensor],
    real_batch: torch.Tensor,
    fake_batch: torch.Tensor,
    variant: str = "cross_entropy",
) -> tuple[torch.Tensor, torch.Tensor]:
    """(discriminator objective, generator objective) for one generator/discriminator pair.

    The discriminator term sees a detached fake, so its gradient never reaches
    the generator.
    """
    _nonempty(real_batch, fake_batch)
    d_obj = disc_objective(disc(real_batch), disc(fake_batch.detach()), variant)
    g_obj = gen_objective(disc(fake_batch), variant)
    return d_obj, g_obj


def cycle_loss(G: Callable, F: Callable, batch_a: torch.Tensor, batch_b: torch.Tensor) -> torch.Tensor:
    """Mean absolute reconstruction error of a -> G -> F and b -> F -> G, summed."""
    _nonempty(batch_a, batch_b)
    return (F(G(batch_a)) - batch_a).abs().mean() + (G(F(batch_b)) - batch_b).abs().mean()


@dataclass
class TranslationBatch:
    images_a: torch.Tensor  # (B, 3, H, W)
    depth_a: torch.Tensor  # (B, H, W) mm
    mask_a: torch.Tensor  # (B, H, W) bool
    images_b: torch.Tensor  # (B', 3, H, W)


@dataclass
class Objective:
    total: torch.Tensor
    terms: dict[str, torch.Tensor]
    fake_a: torch.Tensor = field(repr=False)
    fake_b: torch.Tensor = field(repr=False)


def cyclegan_objective(G, F, D_A, D_B, batch: TranslationBatch, w: LossWeights, variant: str = "cross_entropy") -> Objective:
    """Generator-side CycleGAN objective without any structure term."""
    a, b = batch.images_a, batch.images_b
    _nonempty(a, b)
    fake_b = G(a)
    fake_a = F(b)
    gan_G = gen_objective(D_B(fake_b), variant)
    gan_F = gen_objective(D_A(fake_a), variant)
    cyc = (F(fake_b) - a).abs().mean() + (G(fake_a) - b).abs().mean()
    total = w.lambda_gan * gan_G + w.lambda_gan * gan_F + w.lambda_cyc * cyc
    return Objective(total, {"gan_G": gan_G, "gan_F": gan_F, "cyc": cyc}, fake_a, fake_b)


def total_objective(
    G, F, D_A, D_B,
    batch: TranslationBatch,
    w: LossWeights,
    spec: HistogramSpec,
    variant: str = "cross_entropy",
    log_mi: bool = True,
) -> Objective:
    """CycleGAN objective plus the weighted MI term on the A->B path.

    With ``lambda_mi == 0`` the MI term is not added at all, so the total is
    bit-for-bit the vanilla objective. It is still evaluated without gradient
    for logging when ``log_mi`` is set.
    """
    obj = cyclegan_objective(G, F, D_A, D_B, batch, w, variant)
    if w.lambda_mi > 0:
        mi = mi_loss_batch(batch.depth_a, batch.mask_a, obj.fake_b, spec)
        obj.total = obj.total + w.lambda_mi * mi
    elif log_mi:
        with torch.no_grad():
            mi = mi_loss_batch(batch.depth_a, batch.mask_a, obj.fake_b, spec)
    else:
        mi = torch.tensor(math.nan)
    obj.terms["mi"] = mi
    return obj


def weighted_sum(terms: dict[str, torch.Tensor], w: LossWeights) -> torch.Tensor:
    """Recombine a breakdown; used to check the bookkeeping identity."""
    out = w.lambda_gan * terms["gan_G"] + w.lambda_gan * terms["gan_F"] + w.lambda_cyc * terms["cyc"]
    if w.lambda_mi > 0:
        out = out + w.lambda_mi * terms["mi"]
    return out
