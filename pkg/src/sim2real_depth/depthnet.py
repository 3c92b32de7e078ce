"""Supervised monocular depth: residual encoder, skip-connected decoder, MSE on valid pixels."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint, to_plain
from .core import DepthMap, Image, PairedSample, ValidationError
from .dataio.augment import AugmentationSpec, draw_transform
from .translation.train import NonFiniteLossError, deterministic, write_curve

log = logging.getLogger(__name__)

DEPTH_CURVE_COLUMNS = ("epoch", "step", "loss", "rmse")


@dataclass(frozen=True)
class DepthNetConfig:
    # (3, 4, 6, 3) at width 64 is the 34-layer residual layout
    layers: tuple[int, ...] = (3, 4, 6, 3)
    width: int = 64
    label_scale: float = 1.0  # mm per unit of the positive output activation
    min_depth: float = 1e-3  # added after softplus, in output units

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(v) for v in self.layers))
        if not self.layers or min(self.layers) < 1 or self.width < 1:
            raise ValidationError(f"bad depth network shape layers={self.layers} width={self.width}")
        if not (self.label_scale > 0 and self.min_depth > 0):
            raise ValidationError("label_scale and min_depth must be positive")


@dataclass(frozen=True)
class DepthTrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 8
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    train_resize: tuple[int, int] | None = None  # (W, H) applied before cropping
    inference_size: tuple[int, int] = (256, 256)  # (W, H)
    network: DepthNetConfig = field(default_factory=DepthNetConfig)
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or not self.learning_rate > 0 or self.batch_size < 1:
            raise ValidationError("epochs, learning_rate and batch_size must be positive")
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "inference_size", tuple(self.inference_size))
        if self.train_resize is not None:
            object.__setattr__(self, "train_resize", tuple(self.train_resize))


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + (x if self.down is None else self.down(x)))


class DepthModel(nn.Module):
    def __init__(self, cfg: DepthNetConfig = DepthNetConfig()):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        self.stem = nn.Sequential(nn.Conv2d(3, w, 7, 2, 3, bias=False), nn.BatchNorm2d(w), nn.ReLU(inplace=True))
        self.pool = nn.MaxPool2d(3, 2, 1)
        stages, cin = [], w
        for i, n in enumerate(cfg.layers):
            cout = w * 2**i
            blocks = [BasicBlock(cin, cout, 1 if i == 0 else 2)]
            blocks += [BasicBlock(cout, cout, 1) for _ in range(n - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = cout
        self.stages = nn.ModuleList(stages)
        # feature pyramid: stem at 1/2, then one entry per stage (1/4, 1/8, ...)
        feat_ch = [w] + [w * 2**i for i in range(len(cfg.layers))]
        self.stride = 2 ** len(feat_ch)
        self.up_convs = nn.ModuleList()
        self.fuse_convs = nn.ModuleList()
        x_ch = feat_ch[-1]
        # skip levels from second-deepest down to the stem, then a final full-resolution step
        for skip in feat_ch[-2::-1] + [0]:
            out = max((skip or feat_ch[0]) // 2, 4)
            self.up_convs.append(nn.Sequential(nn.Conv2d(x_ch, out, 3, 1, 1), nn.ELU(inplace=True)))
            self.fuse_convs.append(nn.Sequential(nn.Conv2d(out + skip, out, 3, 1, 1), nn.ELU(inplace=True)))
            x_ch = out
        self.head = nn.Conv2d(x_ch, 1, 3, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) in [0, 1] -> (B, H, W) strictly positive depth in mm."""
        h, w = x.shape[-2:]
        ph, pw = (-h) % self.stride, (-w) % self.stride
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        feats = [self.stem(x)]
        y = self.pool(feats[0])
        for stage in self.stages:
            y = stage(y)
            feats.append(y)
        targets = feats[-2::-1] + [None]
        y = feats[-1]
        for up, fuse, skip in zip(self.up_convs, self.fuse_convs, targets):
            y = up(y)
            size = skip.shape[-2:] if skip is not None else x.shape[-2:]
            y = F.interpolate(y, size=size, mode="nearest")
            y = fuse(y if skip is None else torch.cat([y, skip], 1))
        out = (F.softplus(self.head(y)) + self.cfg.min_depth) * self.cfg.label_scale
        return out[:, 0, :h, :w]


def masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.to(pred.dtype)
    return ((pred - target) ** 2 * m).sum() / m.sum().clamp_min(1.0)


@dataclass
class DepthTrainResult:
    model: DepthModel
    curve: list[dict]
    checkpoint: Path | None = None


def _as_pairs(pairs) -> list[tuple[Image, DepthMap]]:
    out = []
    for p in pairs:
        if isinstance(p, PairedSample):
            out.append((p.image, p.depth))
        else:
            img, dep = p
            if img.shape != dep.shape:
                raise ValidationError(f"image {img.shape} and depth {dep.shape} are not aligned")
            out.append((img, dep))
    if not out:
        raise ValidationError("no training pairs")
    return out


def _resize_pair(img: np.ndarray, dep: np.ndarray, mask: np.ndarray, size):
    import cv2

    img = cv2.resize(img, size, interpolation=cv2.INTER_LINEAR)
    dep = cv2.resize(dep, size, interpolation=cv2.INTER_NEAREST)
    mask = cv2.resize(mask.astype(np.uint8), size, interpolation=cv2.INTER_NEAREST).astype(bool)
    return img, dep, mask


def _prepare(pairs, config: DepthTrainConfig):
    imgs, deps, masks = [], [], []
    for img, dep in pairs:
        i, d, m = img.pixels, np.where(dep.valid_mask, dep.values, 0.0), dep.valid_mask
        if config.train_resize is not None:
            i, d, m = _resize_pair(i, d, m, config.train_resize)
        imgs.append(i)
        deps.append(d)
        masks.append(m)
    return imgs, deps, masks


def _batch(imgs, deps, masks, idx, config: DepthTrainConfig, rng: np.random.Generator):
    bi, bd, bm = [], [], []
    for k in idx:
        t = draw_transform(imgs[k].shape[:2], config.augmentation, rng)
        bi.append(t(imgs[k]).transpose(2, 0, 1))
        bd.append(t(deps[k]))
        bm.append(t(masks[k]))
    return (
        torch.from_numpy(np.stack(bi)).float(),
        torch.from_numpy(np.stack(bd)).float(),
        torch.from_numpy(np.stack(bm)),
    )


def build_depth_model(config: DepthTrainConfig) -> DepthModel:
    torch.manual_seed(config.seed)
    return DepthModel(config.network)


def train_depth(
    config: DepthTrainConfig,
    pairs: Sequence[PairedSample] | Sequence[tuple[Image, DepthMap]],
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> DepthTrainResult:
    """Fit a depth model with masked MSE (mm^2). ``resume`` continues a saved run up to ``config.epochs``."""
    pairs = _as_pairs(pairs)
    imgs, deps, masks = _prepare(pairs, config)
    n = len(imgs)
    bs = min(config.batch_size, n)
    with deterministic(config.seed):
        model = build_depth_model(config)
        opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=config.betas)
        gen = torch.Generator().manual_seed(config.seed)
        rng = np.random.default_rng(config.augmentation.seed + config.seed)
        curve: list[dict] = []
        start, step = 1, 0
        if resume is not None:
            payload = load_checkpoint(resume, "depth_model")
            model.load_state_dict(payload["state"]["model"])
            opt.load_state_dict(payload["meta"]["optimizer"])
            gen.set_state(payload["meta"]["torch_rng"])
            rng.bit_generator.state = payload["meta"]["numpy_rng"]
            curve = list(payload["meta"]["curve"])
            start = payload["meta"]["epoch"] + 1
            step = curve[-1]["step"] + 1 if curve else 0
        model.train()
        epoch = start - 1
        for epoch in range(start, config.epochs + 1):
            perm = torch.randperm(n, generator=gen).tolist()
            for k in range(0, n, bs):
                x, d, m = _batch(imgs, deps, masks, perm[k : k + bs], config, rng)
                loss = masked_mse(model(x), d, m)
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(f"non-finite depth loss at epoch {epoch} step {step}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                lv = float(loss.detach())
                curve.append({"epoch": epoch, "step": step, "loss": lv, "rmse": math.sqrt(lv)})
                step += 1
            log.info("depth epoch %d: rmse %.3f", epoch, curve[-1]["rmse"])
            if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                save_depth_checkpoint(Path(out_dir) / "checkpoints" / f"depth_epoch_{epoch:03d}.pt", model, opt, gen, rng, config, epoch, curve)
        model.eval()
        ckpt = None
        if out_dir is not None:
            ckpt = save_depth_checkpoint(Path(out_dir) / "checkpoints" / "depth.pt", model, opt, gen, rng, config, epoch, curve)
            write_curve(Path(out_dir) / "logs" / "depth_curve.csv", curve, DEPTH_CURVE_COLUMNS)
    return DepthTrainResult(model, curve, ckpt)


def save_depth_checkpoint(path, model, opt, gen, rng, config, epoch, curve) -> Path:
    meta = {
        "epoch": epoch,
        "optimizer": opt.state_dict(),
        "torch_rng": gen.get_state(),
        "numpy_rng": rng.bit_generator.state,
        "curve": curve,
    }
    return save_checkpoint(path, "depth_model", {"model": model.state_dict()}, config, meta)


def depth_config_from_dict(d: dict) -> DepthTrainConfig:
    d = dict(d)
    if "augmentation" in d:
        d["augmentation"] = AugmentationSpec(**d["augmentation"])
    if "network" in d:
        d["network"] = DepthNetConfig(**d["network"])
    return DepthTrainConfig(**d)


def load_depth_model(path: str | Path) -> tuple[DepthModel, DepthTrainConfig]:
    payload = load_checkpoint(path, "depth_model")
    config = depth_config_from_dict(payload["config"])
    model = DepthModel(config.network)
    model.load_state_dict(payload["state"]["model"])
    model.eval()
    return model, config


@torch.no_grad()
def predict_depth(model: DepthModel, image: Image, inference_size: tuple[int, int] = (256, 256)) -> DepthMap:
    """Resize to ``inference_size`` (W, H), predict, resize back to the input size."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(image.pixels.transpose(2, 0, 1)))[None].to(dtype)
    h, w = image.shape
    W, H = inference_size
    if (H, W) != (h, w):
        x = F.interpolate(x, size=(H, W), mode="bilinear", align_corners=False)
    y = model(x)[:, None]
    if (H, W) != (h, w):
        y = F.interpolate(y, size=(h, w), mode="bilinear", align_corners=False)
    model.train(was_training)
    floor = model.cfg.min_depth * model.cfg.label_scale
    return DepthMap(y[0, 0].double().clamp_min(floor).numpy())


def depth_train_config_to_dict(c: DepthTrainConfig) -> dict:
    return to_plain(c)
