"""Translation training loop and inference helpers."""

from __future__ import annotations

import csv
import logging
import math
import random
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..checkpoint import load_checkpoint, save_checkpoint, to_plain
from ..core import Image, LossWeights, PairedSample, UnpairedSample, ValidationError
from ..miloss import HistogramSpec
from .losses import GAN_VARIANTS, TranslationBatch, disc_objective, total_objective
from .networks import Generator, NetworkConfig, build_discriminator, build_generator, pad_to_multiple

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "step", "gan_G", "gan_F", "cyc", "mi", "total")


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class TranslationTrainConfig:
    loss_weights: LossWeights = field(default_factory=LossWeights)
    epochs: int = 30
    learning_rate: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    batch_size: int = 4
    gan_variant: str = "cross_entropy"
    seed: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)
    lr_decay: bool = False  # linear decay to zero over the second half of training
    identity_weight: float = 0.0
    pool_size: int = 0
    checkpoint_every: int = 1  # epochs; 0 writes only the final set

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.gan_variant not in GAN_VARIANTS:
            raise ValidationError(f"gan_variant must be one of {GAN_VARIANTS}, got {self.gan_variant!r}")
        object.__setattr__(self, "betas", tuple(self.betas))


@dataclass
class TranslationModels:
    G: Generator
    F: Generator
    D_A: torch.nn.Module
    D_B: torch.nn.Module

    def generators(self):
        return list(self.G.parameters()) + list(self.F.parameters())

    def discriminators(self):
        return list(self.D_A.parameters()) + list(self.D_B.parameters())

    def modules(self) -> dict[str, torch.nn.Module]:
        return {"G": self.G, "F": self.F, "D_A": self.D_A, "D_B": self.D_B}


@dataclass
class TranslationResult:
    models: TranslationModels
    curve: list[dict]
    checkpoints: list[Path] = field(default_factory=list)

    def epoch_means(self, key: str) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for row in self.curve:
            by_epoch.setdefault(row["epoch"], []).append(row[key])
        return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]


@contextmanager
def deterministic(seed: int):
    """Seed every RNG in play and force deterministic kernels for the duration."""
    prev = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev)


def build_models(config: TranslationTrainConfig) -> TranslationModels:
    probabilistic = config.gan_variant == "cross_entropy"
    torch.manual_seed(config.seed)
    return TranslationModels(
        build_generator(config.network, "A2B"),
        build_generator(config.network, "B2A"),
        build_discriminator(config.network, probabilistic),
        build_discriminator(config.network, probabilistic),
    )


def images_to_tensor(images: Sequence[Image], dtype=torch.float32) -> torch.Tensor:
    arr = np.stack([im.pixels.transpose(2, 0, 1) for im in images])
    return torch.from_numpy(arr).to(dtype)


def depths_to_tensors(samples: Sequence[PairedSample], dtype=torch.float32):
    d = np.stack([np.where(s.depth.valid_mask, s.depth.values, 0.0) for s in samples])
    m = np.stack([s.depth.valid_mask for s in samples])
    return torch.from_numpy(d).to(dtype), torch.from_numpy(m)


class ImagePool:
    """History buffer of generated images; size 0 passes images straight through."""

    def __init__(self, size: int, gen: torch.Generator):
        self.size = size
        self.gen = gen
        self.items: list[torch.Tensor] = []

    def query(self, images: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return images
        out = []
        for im in images:
            im = im.unsqueeze(0)
            if len(self.items) < self.size:
                self.items.append(im)
                out.append(im)
            elif torch.rand((), generator=self.gen) < 0.5:
                k = int(torch.randint(len(self.items), (), generator=self.gen))
                out.append(self.items[k].clone())
                self.items[k] = im
            else:
                out.append(im)
        return torch.cat(out)


def _set_requires_grad(params, flag: bool) -> None:
    for p in params:
        p.requires_grad_(flag)


def _check_finite(terms: dict[str, torch.Tensor], epoch: int, step: int) -> None:
    bad = {k: float(v.detach()) for k, v in terms.items() if not math.isfinite(float(v.detach()))}
    if bad:
        raise NonFiniteLossError(f"non-finite loss at epoch {epoch} step {step}: {bad}")


def generator_step(models, opt_G, batch, config: TranslationTrainConfig, spec: HistogramSpec):
    """One generator update. Discriminator parameters receive no gradient."""
    _set_requires_grad(models.discriminators(), False)
    obj = total_objective(models.G, models.F, models.D_A, models.D_B, batch, config.loss_weights, spec, config.gan_variant)
    loss = obj.total
    if config.identity_weight > 0:
        idt = (models.G(batch.images_b) - batch.images_b).abs().mean() + (models.F(batch.images_a) - batch.images_a).abs().mean()
        loss = loss + config.identity_weight * idt
    opt_G.zero_grad(set_to_none=True)
    loss.backward()
    opt_G.step()
    _set_requires_grad(models.discriminators(), True)
    return obj


def discriminator_step(models, opt_D, batch, fake_a, fake_b, config: TranslationTrainConfig):
    """One discriminator update on detached fakes. Generators receive no gradient."""
    v = config.gan_variant
    loss_B = disc_objective(models.D_B(batch.images_b), models.D_B(fake_b.detach()), v)
    loss_A = disc_objective(models.D_A(batch.images_a), models.D_A(fake_a.detach()), v)
    loss = 0.5 * (loss_A + loss_B)
    opt_D.zero_grad(set_to_none=True)
    loss.backward()
    opt_D.step()
    return loss_A.detach(), loss_B.detach()


def _lr_lambda(config: TranslationTrainConfig):
    if not config.lr_decay:
        return lambda epoch: 1.0
    half = config.epochs // 2
    return lambda epoch: 1.0 if epoch < half else max(0.0, 1.0 - (epoch - half) / max(config.epochs - half, 1))


def train_translation(
    config: TranslationTrainConfig,
    domain_a: Sequence[PairedSample],
    domain_b: Sequence[UnpairedSample],
    spec: HistogramSpec | None = None,
    out_dir: str | Path | None = None,
    max_steps: int | None = None,
) -> TranslationResult:
    """Alternating G/D training. Writes checkpoints and ``translation_curve.csv`` when ``out_dir`` is set."""
    if not domain_a or not domain_b:
        raise ValidationError("both domains need at least one sample")
    spec = spec or HistogramSpec()
    a_img = images_to_tensor([s.image for s in domain_a])
    a_dep, a_mask = depths_to_tensors(domain_a)
    b_img = images_to_tensor([s.image for s in domain_b])
    n_a, n_b = a_img.shape[0], b_img.shape[0]
    bs = config.batch_size
    steps_per_epoch = math.ceil(n_a / bs)

    curve: list[dict] = []
    ckpts: list[Path] = []
    with deterministic(config.seed):
        models = build_models(config)
        gen = torch.Generator().manual_seed(config.seed)
        opt_G = torch.optim.Adam(models.generators(), lr=config.learning_rate, betas=config.betas)
        opt_D = torch.optim.Adam(models.discriminators(), lr=config.learning_rate, betas=config.betas)
        sched = [torch.optim.lr_scheduler.LambdaLR(o, _lr_lambda(config)) for o in (opt_G, opt_D)]
        pool_a, pool_b = ImagePool(config.pool_size, gen), ImagePool(config.pool_size, gen)
        step = 0
        for epoch in range(1, config.epochs + 1):
            perm_a = torch.randperm(n_a, generator=gen)
            perm_b = torch.randperm(n_b, generator=gen)
            for k in range(steps_per_epoch):
                ia = perm_a[k * bs : (k + 1) * bs]
                ib = perm_b[torch.arange(k * bs, k * bs + len(ia)) % n_b]
                batch = TranslationBatch(a_img[ia], a_dep[ia], a_mask[ia], b_img[ib])
                obj = generator_step(models, opt_G, batch, config, spec)
                row = {"epoch": epoch, "step": step, **{k2: float(v.detach()) for k2, v in obj.terms.items()}, "total": float(obj.total.detach())}
                _check_finite({**obj.terms, "total": obj.total}, epoch, step)
                d_a, d_b = discriminator_step(models, opt_D, batch, pool_a.query(obj.fake_a.detach()), pool_b.query(obj.fake_b.detach()), config)
                _check_finite({"disc_A": d_a, "disc_B": d_b}, epoch, step)
                curve.append({c: row[c] for c in CURVE_COLUMNS})
                step += 1
                if max_steps is not None and step >= max_steps:
                    break
            for s in sched:
                s.step()
            log.info("translation epoch %d: %s", epoch, {c: round(curve[-1][c], 4) for c in CURVE_COLUMNS[2:]})
            if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                ckpts.append(save_translation_set(Path(out_dir) / "checkpoints" / f"translation_epoch_{epoch:03d}.pt", models, config, epoch))
            if max_steps is not None and step >= max_steps:
                break

    result = TranslationResult(models, curve, ckpts)
    if out_dir is not None:
        out = Path(out_dir)
        result.checkpoints += save_final_networks(out / "checkpoints", models, config, epoch)
        write_curve(out / "logs" / "translation_curve.csv", curve)
    return result


def write_curve(path: str | Path, rows: list[dict], columns: Sequence[str] = CURVE_COLUMNS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def save_translation_set(path, models: TranslationModels, config, epoch: int) -> Path:
    state = {k: m.state_dict() for k, m in models.modules().items()}
    return save_checkpoint(path, "translation_set", state, config, {"epoch": epoch})


def save_final_networks(ckpt_dir: Path, models: TranslationModels, config, epoch: int) -> list[Path]:
    """One file per network: G.pt (A2B), F.pt (B2A), D_A.pt, D_B.pt."""
    paths = []
    for name, m in models.modules().items():
        kind = "generator" if name in ("G", "F") else "discriminator"
        meta = {"epoch": epoch, "name": name}
        if kind == "generator":
            meta["direction"] = m.direction
        paths.append(save_checkpoint(ckpt_dir / f"{name}.pt", kind, {name: m.state_dict()}, config, meta))
    return paths


def load_generator(path: str | Path, require_direction: str | None = None) -> Generator:
    payload = load_checkpoint(path, "generator")
    direction = payload["meta"]["direction"]
    if require_direction is not None and direction != require_direction:
        raise ValidationError(f"{path}: generator direction is {direction}, expected {require_direction}")
    net = NetworkConfig(**payload["config"]["network"])
    g = build_generator(net, direction)
    g.load_state_dict(payload["state"][payload["meta"]["name"]])
    g.eval()
    return g


@torch.no_grad()
def translate_batch(G: Generator, images: torch.Tensor) -> torch.Tensor:
    x, (h, w) = pad_to_multiple(images, G.stride)
    return G(x)[..., :h, :w].clamp(0.0, 1.0)


def translate(G: Generator, image: Image | Sequence[Image]) -> Image | list[Image]:
    """Translate one image or a list (order preserved). Output has the input's size, values in [0, 1]."""
    single = isinstance(image, Image)
    imgs = [image] if single else list(image)
    dtype = next(G.parameters()).dtype
    out = translate_batch(G, images_to_tensor(imgs, dtype)).double().numpy().transpose(0, 2, 3, 1)
    res = [Image(np.clip(o, 0.0, 1.0)) for o in out]
    return res[0] if single else res


def config_from_dict(d: dict) -> TranslationTrainConfig:
    d = dict(d)
    if "loss_weights" in d:
        d["loss_weights"] = LossWeights(**d["loss_weights"])
    if "network" in d:
        d["network"] = NetworkConfig(**d["network"])
    return TranslationTrainConfig(**d)


def config_to_dict(c: TranslationTrainConfig) -> dict:
    return to_plain(c)
