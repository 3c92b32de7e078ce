"""Dataset manifests and PNG image/depth storage.

Manifest layout (JSON, paths relative to the manifest's directory)::

    {"dataset_name": "...", "domain": "A" | "B", "depth_scale_mm": 0.01,
     "image_size": [W, H],                      # optional, enforced when present
     "sequences": [{"sequence_id": "...", "frames": [...], "depths": [...],
                    "frame_indices": [...]}]}   # depths only for domain A

Images are 8-bit RGB PNG. Depths are 16-bit single-channel PNG where
``mm = value * depth_scale_mm`` and value 0 marks an invalid pixel.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

from ..core import DepthMap, Domain, Image, PairedSample, UnpairedSample, ValidationError


class ManifestError(ValidationError):
    pass


@dataclass(frozen=True)
class SequenceManifest:
    sequence_id: str
    frames: tuple[str, ...]
    domain: Domain
    depths: tuple[str, ...] | None = None
    frame_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain.parse(self.domain))
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.depths is not None:
            object.__setattr__(self, "depths", tuple(self.depths))
        idx = tuple(range(len(self.frames))) if self.frame_indices is None else tuple(int(i) for i in self.frame_indices)
        object.__setattr__(self, "frame_indices", idx)
        if len(idx) != len(self.frames):
            raise ManifestError(f"{self.sequence_id}: {len(idx)} frame indices for {len(self.frames)} frames")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ManifestError(f"{self.sequence_id}: frame indices must be strictly increasing")
        has_depth = self.depths is not None
        if has_depth != (self.domain is Domain.A):
            raise ManifestError(f"{self.sequence_id}: depth paths must be present iff domain is A")
        if has_depth and len(self.depths) != len(self.frames):
            raise ManifestError(f"{self.sequence_id}: {len(self.depths)} depths for {len(self.frames)} frames")

    def __len__(self) -> int:
        return len(self.frames)

    def to_dict(self) -> dict:
        d = {"sequence_id": self.sequence_id, "frames": list(self.frames), "frame_indices": list(self.frame_indices)}
        if self.depths is not None:
            d["depths"] = list(self.depths)
        return d


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    domain: Domain
    sequences: tuple[SequenceManifest, ...]
    depth_scale_mm: float = 1.0
    image_size: tuple[int, int] | None = None  # (width, height)
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain.parse(self.domain))
        object.__setattr__(self, "sequences", tuple(self.sequences))
        object.__setattr__(self, "root", Path(self.root))
        if not self.depth_scale_mm > 0:
            raise ManifestError(f"depth_scale_mm must be positive, got {self.depth_scale_mm}")
        for s in self.sequences:
            if s.domain is not self.domain:
                raise ManifestError(f"sequence {s.sequence_id} tagged {s.domain.value}, dataset is {self.domain.value}")
        ids = [s.sequence_id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate sequence ids")

    @property
    def n_frames(self) -> int:
        return sum(len(s) for s in self.sequences)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def to_dict(self) -> dict:
        d = {
            "dataset_name": self.dataset_name,
            "domain": self.domain.value,
            "depth_scale_mm": self.depth_scale_mm,
            "sequences": [s.to_dict() for s in self.sequences],
        }
        if self.image_size is not None:
            d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict, root: str | Path = ".") -> "DatasetManifest":
        domain = Domain.parse(d["domain"])
        seqs = tuple(
            SequenceManifest(
                s["sequence_id"],
                tuple(s["frames"]),
                domain,
                tuple(s["depths"]) if s.get("depths") is not None else None,
                tuple(s["frame_indices"]) if "frame_indices" in s else None,
            )
            for s in d["sequences"]
        )
        size = tuple(d["image_size"]) if d.get("image_size") else None
        return cls(d["dataset_name"], domain, seqs, float(d.get("depth_scale_mm", 1.0)), size, Path(root))

    def subset(self, sequences) -> "DatasetManifest":
        return replace(self, sequences=tuple(sequences))


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from None
    return DatasetManifest.from_dict(d, root=path.parent)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(path, (json.dumps(manifest.to_dict(), indent=2) + "\n").encode())
    return path


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# PNG codecs


def read_image(path: str | Path) -> Image:
    arr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if arr is None:
        raise FileNotFoundError(f"cannot read image: {path}")
    return Image.from_uint8(cv2.cvtColor(arr, cv2.COLOR_BGR2RGB))


def write_image(path: str | Path, image: Image) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ok, buf = cv2.imencode(".png", cv2.cvtColor(image.to_uint8(), cv2.COLOR_RGB2BGR))
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    atomic_write_bytes(path, buf.tobytes())


def read_depth(path: str | Path, depth_scale_mm: float) -> DepthMap:
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FileNotFoundError(f"cannot read depth: {path}")
    if arr.ndim != 2 or arr.dtype != np.uint16:
        raise ManifestError(f"{path}: expected 16-bit single-channel PNG, got {arr.dtype} {arr.shape}")
    mask = arr > 0
    return DepthMap(arr.astype(np.float64) * depth_scale_mm, mask)


def encode_depth(depth: DepthMap, depth_scale_mm: float) -> np.ndarray:
    units = np.where(depth.valid_mask, np.rint(np.nan_to_num(depth.values) / depth_scale_mm), 0)
    if units.max(initial=0) > 65535:
        raise ValidationError(f"depth {depth.values[depth.valid_mask].max():.1f} mm overflows 16 bits at scale {depth_scale_mm}")
    # valid pixels that round to zero would read back as invalid
    units = np.where(depth.valid_mask, np.maximum(units, 1), 0)
    return units.astype(np.uint16)


def write_depth(path: str | Path, depth: DepthMap, depth_scale_mm: float) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ok, buf = cv2.imencode(".png", encode_depth(depth, depth_scale_mm))
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    atomic_write_bytes(path, buf.tobytes())


def _check_size(manifest: DatasetManifest, path: Path, shape: tuple[int, int]) -> None:
    if manifest.image_size is not None:
        w, h = manifest.image_size
        if shape != (h, w):
            raise ManifestError(f"{path}: decoded size {shape[1]}x{shape[0]} disagrees with manifest {w}x{h}")


def iter_frames(manifest: DatasetManifest):
    """Yield (sequence, position, frame_path, depth_path_or_None)."""
    for seq in manifest.sequences:
        for k, frame in enumerate(seq.frames):
            yield seq, k, frame, (seq.depths[k] if seq.depths is not None else None)


def load_paired(manifest: DatasetManifest) -> list[PairedSample]:
    if manifest.domain is not Domain.A:
        raise ManifestError(f"{manifest.dataset_name}: paired loading needs a domain-A manifest")
    out = []
    for seq, k, frame, depth_rel in iter_frames(manifest):
        img_path, dep_path = manifest.resolve(frame), manifest.resolve(depth_rel)
        img = read_image(img_path)
        _check_size(manifest, img_path, img.shape)
        dep = read_depth(dep_path, manifest.depth_scale_mm)
        _check_size(manifest, dep_path, dep.shape)
        if dep.shape != img.shape:
            raise ManifestError(f"{dep_path}: depth {dep.shape} does not match image {img.shape}")
        out.append(PairedSample(img, dep, seq.sequence_id, seq.frame_indices[k]))
    return out


def load_unpaired(manifest: DatasetManifest) -> list[UnpairedSample]:
    out = []
    for seq, k, frame, _ in iter_frames(manifest):
        path = manifest.resolve(frame)
        img = read_image(path)
        _check_size(manifest, path, img.shape)
        out.append(UnpairedSample(img, seq.sequence_id, seq.frame_indices[k]))
    return out


def write_dataset(
    outdir: str | Path,
    name: str,
    samples: list,
    depth_scale_mm: float = 0.01,
) -> Path:
    """Write PairedSample or UnpairedSample lists as PNGs plus a manifest; returns manifest path."""
    outdir = Path(outdir)
    if not samples:
        raise ValidationError("no samples to write")
    domain = Domain.A if isinstance(samples[0], PairedSample) else Domain.B
    grouped: dict[str, list] = {}
    for s in samples:
        grouped.setdefault(s.sequence_id, []).append(s)
    seqs = []
    for sid, items in grouped.items():
        items.sort(key=lambda s: s.frame_index)
        frames, depths = [], []
        for s in items:
            rel = f"images/{sid}/{s.frame_index:06d}.png"
            write_image(outdir / rel, s.image)
            frames.append(rel)
            if domain is Domain.A:
                drel = f"depths/{sid}/{s.frame_index:06d}.png"
                write_depth(outdir / drel, s.depth, depth_scale_mm)
                depths.append(drel)
        seqs.append(
            SequenceManifest(sid, tuple(frames), domain, tuple(depths) if domain is Domain.A else None,
                             tuple(s.frame_index for s in items))
        )
    h, w = samples[0].image.shape
    manifest = DatasetManifest(name, domain, tuple(seqs), depth_scale_mm, (w, h), outdir)
    return save_manifest(manifest, outdir / "manifest.json")
