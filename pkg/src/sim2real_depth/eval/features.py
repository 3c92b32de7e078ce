"""Image feature extractors for distribution metrics.

Every extractor exposes an ``id`` string that is stored next to any FID/KID
value it produced; values from different extractors are not comparable.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..core import Image, ValidationError


class FeatureExtractor(Protocol):
    id: str

    def __call__(self, images: Sequence[Image]) -> np.ndarray: ...


class RandomConvExtractor:
    """Fixed random three-layer conv net with mean/std pooling.

    Weights come from a seeded numpy generator, so features are identical
    across processes and machines. Hermetic stand-in for a pretrained network.
    """

    def __init__(self, seed: int = 0, dim: int = 64, input_size: int = 64):
        if dim % 2:
            raise ValidationError("dim must be even (mean and std halves)")
        self.seed, self.dim, self.input_size = seed, dim, input_size
        self.id = f"randconv-v1-s{seed}-d{dim}-r{input_size}"
        rng = np.random.default_rng(seed)
        shapes = [(16, 3, 5, 5), (32, 16, 3, 3), (dim // 2, 32, 3, 3)]
        self.weights = [torch.from_numpy(rng.normal(0.0, np.sqrt(2.0 / np.prod(s[1:])), size=s)) for s in shapes]
        self.biases = [torch.from_numpy(rng.normal(0.0, 0.1, size=s[0])) for s in shapes]

    @torch.no_grad()
    def __call__(self, images: Sequence[Image]) -> np.ndarray:
        if len(images) == 0:
            raise ValidationError("no images to featurise")
        x = torch.from_numpy(np.stack([im.pixels.transpose(2, 0, 1) for im in images]))
        x = F.interpolate(x, size=(self.input_size, self.input_size), mode="bilinear", align_corners=False)
        x = (x - 0.5) * 2.0
        for w, b in zip(self.weights, self.biases):
            x = F.relu(F.conv2d(x, w, b, stride=2, padding=w.shape[-1] // 2))
        flat = x.flatten(2)
        return torch.cat([flat.mean(-1), flat.std(-1, unbiased=False)], dim=1).numpy()


class InceptionExtractor:
    """2048-d pool features of torchvision's ImageNet Inception-v3.

    Needs the pretrained weights (downloaded by torchvision on first use);
    for realistic-scale evaluation only.
    """

    id = "torchvision-inception_v3-pool3"

    def __init__(self, batch_size: int = 32):
        from torchvision.models import Inception_V3_Weights, inception_v3

        self.batch_size = batch_size
        self.net = inception_v3(weights=Inception_V3_Weights.DEFAULT, aux_logits=True)
        self.net.fc = torch.nn.Identity()
        self.net.eval()

    @torch.no_grad()
    def __call__(self, images: Sequence[Image]) -> np.ndarray:
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        out = []
        for k in range(0, len(images), self.batch_size):
            x = torch.from_numpy(np.stack([im.pixels.transpose(2, 0, 1) for im in images[k : k + self.batch_size]])).float()
            x = F.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
            out.append(self.net((x - mean) / std).numpy())
        return np.concatenate(out).astype(np.float64)


def extract_features(images: Sequence[Image], extractor: FeatureExtractor) -> tuple[np.ndarray, str]:
    """Features in input order plus the extractor id they must be reported with."""
    if len(images) == 0:
        raise ValidationError("no images to featurise")
    return np.asarray(extractor(images), dtype=np.float64), extractor.id


def get_extractor(name: str) -> FeatureExtractor:
    if name.startswith("randconv"):
        return RandomConvExtractor()
    if name == "inception":
        return InceptionExtractor()
    raise ValidationError(f"unknown feature extractor {name!r} (choose 'randconv' or 'inception')")
