"""CycleGAN-style generator and patch discriminator."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class NetworkConfig:
    gen_width: int = 64
    gen_blocks: int = 9
    disc_width: int = 64
    disc_layers: int = 3
    # start G/F at the identity map (zero-initialised residual on the logit of the input)
    identity_init: bool = False


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(ch, ch, 3),
            nn.InstanceNorm2d(ch),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(ch, ch, 3),
            nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Two stride-2 downsamples, residual blocks, two upsamples, sigmoid output.

    Spatial size must be a multiple of 4; ``translate`` pads other sizes.
    """

    stride = 4

    def __init__(self, width: int = 64, n_blocks: int = 9, identity_init: bool = False, direction: str = "A2B"):
        super().__init__()
        self.direction = direction
        self.identity_init = identity_init
        w = width
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(3, w, 7), nn.InstanceNorm2d(w), nn.ReLU(inplace=True)]
        for mult in (1, 2):
            layers += [
                nn.Conv2d(w * mult, w * mult * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(w * mult * 2),
                nn.ReLU(inplace=True),
            ]
        layers += [ResidualBlock(w * 4) for _ in range(n_blocks)]
        for mult in (4, 2):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(w * mult, w * mult // 2, 3, padding=1),
                nn.InstanceNorm2d(w * mult // 2),
                nn.ReLU(inplace=True),
            ]
        self.body = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(w, 3, 7))
        if identity_init:
            nn.init.zeros_(self.head[1].weight)
            nn.init.zeros_(self.head[1].bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.head(self.body(x))
        if self.identity_init:
            xc = x.clamp(1e-4, 1 - 1e-4)
            out = out + torch.log(xc) - torch.log1p(-xc)
        return torch.sigmoid(out)


class PatchDiscriminator(nn.Module):
    """Patch classifier; emits probabilities when ``probabilistic`` else raw scores."""

    def __init__(self, width: int = 64, n_layers: int = 3, probabilistic: bool = True):
        super().__init__()
        self.probabilistic = probabilistic
        layers = [nn.Conv2d(3, width, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
        ch = width
        for k in range(1, n_layers + 1):
            nxt = width * min(2**k, 8)
            stride = 2 if k < n_layers else 1
            layers += [nn.Conv2d(ch, nxt, 4, stride=stride, padding=1), nn.InstanceNorm2d(nxt), nn.LeakyReLU(0.2, inplace=True)]
            ch = nxt
        layers.append(nn.Conv2d(ch, 1, 4, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.net(x)
        return torch.sigmoid(s) if self.probabilistic else s


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def build_generator(cfg: NetworkConfig, direction: str) -> Generator:
    g = Generator(cfg.gen_width, cfg.gen_blocks, cfg.identity_init, direction)
    init_weights(g.body)
    if not cfg.identity_init:
        init_weights(g.head)
    return g


def build_discriminator(cfg: NetworkConfig, probabilistic: bool) -> PatchDiscriminator:
    d = PatchDiscriminator(cfg.disc_width, cfg.disc_layers, probabilistic)
    init_weights(d)
    return d


def pad_to_multiple(x: torch.Tensor, k: int) -> tuple[torch.Tensor, tuple[int, int]]:
    h, w = x.shape[-2:]
    ph, pw = (-h) % k, (-w) % k
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    return x, (h, w)
