"""Procedural colon-like renders with analytic depth.

Domain A ("synthetic"): Lambertian tubes and folded walls lit by a point light
at the camera, flat tissue colour. Domain B ("clinical"): a disjoint set of
renders from the same scene distribution, with a pinker albedo, vessel-like
texture and saturated specular highlights. ``generate_toy_eval`` renders
B-style frames *with* depth so that depth models can be scored on the target
style.

Both domains share the scene distribution on purpose: the gap between them
is appearance only, which is the part image translation can close. Axial
tube and oblique wall sequences alternate at ``oblique_fraction`` rather
than being drawn at random, so small datasets keep the intended mix.

Depths are z-depth in millimetres, clipped to ``DEPTH_RANGE``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..core import DepthMap, Image, PairedSample, UnpairedSample

DEPTH_RANGE = (10.0, 200.0)
FRAMES_PER_SEQUENCE = 4
LIGHT_REFERENCE_MM = 16.0  # distance at which a head-on surface reaches full brightness


@dataclass(frozen=True)
class ToyStyle:
    albedo: tuple[float, float, float]
    oblique_fraction: float
    specular: float = 0.0
    vessels: float = 0.0
    gamma: float = 2.2
    gain: float = 1.0


STYLE_A = ToyStyle(albedo=(0.95, 0.72, 0.55), oblique_fraction=0.5)
STYLE_B = ToyStyle(albedo=(0.92, 0.50, 0.48), oblique_fraction=0.5, specular=1.5, vessels=0.45, gain=1.15)


def _rays(res: int) -> tuple[np.ndarray, np.ndarray]:
    # ~90 degree field of view
    f = res / 2.0
    c = (res - 1) / 2.0
    j, i = np.meshgrid(np.arange(res), np.arange(res))
    return (j - c) / f, (i - c) / f


def _tube_depth(x, y, p) -> np.ndarray:
    """z-depth of a ray hitting a folded cylinder, solved by fixed-point iteration on the fold radius."""
    ax = np.array([p["tilt_x"], p["tilt_y"], 1.0])
    ax /= np.linalg.norm(ax)
    off = np.array([p["off_x"], p["off_y"], 0.0])
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    da = d @ ax
    d_perp = d - da[..., None] * ax
    o = -off
    o_perp = o - (o @ ax) * ax
    a = (d_perp**2).sum(-1)
    b = 2 * (d_perp @ o_perp)
    t = np.full(x.shape, 60.0)
    for _ in range(25):
        s = t * da + o @ ax
        fold = 0.5 + 0.5 * np.cos(2 * np.pi * s / p["period"] + p["phase"])
        r = p["radius"] * (1.0 - p["fold_depth"] * fold**2)
        c = (o_perp**2).sum() - r**2
        disc = np.maximum(b * b - 4 * a * c, 0.0)
        # damped update; the undamped map oscillates on steep fold flanks
        t = 0.5 * t + 0.5 * (-b + np.sqrt(disc)) / (2 * np.maximum(a, 1e-9))
    z = t * d[..., 2]
    return z


def _wall_depth(x, y, p) -> np.ndarray:
    n = np.array([p["nx"], p["ny"], 1.0])
    n /= np.linalg.norm(n)
    denom = np.maximum(n[0] * x + n[1] * y + n[2], 0.05)
    z = p["dist"] / denom
    u = x * np.cos(p["fold_angle"]) + y * np.sin(p["fold_angle"])
    folds = np.cos(2 * np.pi * u * p["fold_freq"] + p["phase"])
    return z * (1.0 - p["fold_depth"] * folds)


def _scene_params(rng: np.random.Generator, oblique: bool) -> dict:
    if oblique:
        ang = rng.uniform(0, 2 * np.pi)
        tilt = rng.uniform(0.4, 1.3)
        return {
            "kind": "wall",
            "nx": tilt * np.cos(ang),
            "ny": tilt * np.sin(ang),
            "dist": rng.uniform(18, 40),
            "fold_angle": rng.uniform(0, np.pi),
            "fold_freq": rng.uniform(0.6, 1.6),
            "fold_depth": rng.uniform(0.05, 0.15),
            "phase": rng.uniform(0, 2 * np.pi),
        }
    return {
        "kind": "tube",
        "tilt_x": rng.uniform(-0.35, 0.35),
        "tilt_y": rng.uniform(-0.35, 0.35),
        "off_x": rng.uniform(-6, 6),
        "off_y": rng.uniform(-6, 6),
        "radius": rng.uniform(22, 32),
        "period": rng.uniform(25, 45),
        "fold_depth": rng.uniform(0.15, 0.3),
        "phase": rng.uniform(0, 2 * np.pi),
    }


def _jitter(p: dict, rng: np.random.Generator, k: int) -> dict:
    """Small per-frame drift so frames of a sequence look like consecutive video."""
    q = dict(p)
    q["phase"] = p["phase"] + 0.15 * k
    if p["kind"] == "tube":
        q["off_x"] = p["off_x"] + rng.normal(0, 0.3)
        q["off_y"] = p["off_y"] + rng.normal(0, 0.3)
    else:
        q["dist"] = p["dist"] * (1 + rng.normal(0, 0.02))
    return q


def render_depth(params: dict, res: int) -> np.ndarray:
    x, y = _rays(res)
    z = _tube_depth(x, y, params) if params["kind"] == "tube" else _wall_depth(x, y, params)
    return np.clip(z, *DEPTH_RANGE)


def _normals(z: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts = np.stack([x * z, y * z, z], axis=-1)
    du = np.gradient(pts, axis=1)
    dv = np.gradient(pts, axis=0)
    n = np.cross(du, dv)
    n /= np.linalg.norm(n, axis=-1, keepdims=True) + 1e-12
    view = -pts / np.linalg.norm(pts, axis=-1, keepdims=True)
    # orient towards the camera
    n *= np.sign((n * view).sum(-1, keepdims=True) + 1e-12)
    return n, pts


def _vessel_texture(res: int, rng: np.random.Generator) -> np.ndarray:
    """Thin dark branching lines: zero crossings of smoothed noise."""
    noise = ndimage.gaussian_filter(rng.normal(size=(res, res)), sigma=res / 12)
    noise /= noise.std() + 1e-12
    lines = np.exp(-((noise / 0.12) ** 2))
    return ndimage.gaussian_filter(lines, 0.6)


def shade(depth: np.ndarray, style: ToyStyle, rng: np.random.Generator) -> np.ndarray:
    res = depth.shape[0]
    x, y = _rays(res)
    n, pts = _normals(depth, x, y)
    dist = np.linalg.norm(pts, axis=-1)
    view = -pts / dist[..., None]
    cos = np.clip((n * view).sum(-1), 0.0, 1.0)
    falloff = (LIGHT_REFERENCE_MM / dist) ** 2
    radiance = style.gain * cos * falloff
    albedo = np.broadcast_to(np.asarray(style.albedo), depth.shape + (3,)).copy()
    if style.vessels > 0:
        v = _vessel_texture(res, rng)
        albedo *= 1.0 - style.vessels * v[..., None] * np.array([0.4, 1.0, 0.9])
    rgb = albedo * radiance[..., None]
    if style.specular > 0:
        # light and viewer coincide, so the half-vector is the view direction
        spec = style.specular * cos**40 * np.minimum(falloff, 2.0)
        rgb = rgb + spec[..., None]
    rgb = np.clip(rgb, 0.0, 1.0) ** (1.0 / style.gamma)
    return np.clip(rgb, 0.0, 1.0)


def _is_oblique(seq: int, fraction: float) -> bool:
    """Evenly spaced selection: exactly floor(n * fraction) of the first n sequences are oblique."""
    return int((seq + 1) * fraction) > int(seq * fraction)


def _render_sequence(rng, style: ToyStyle, res: int, n_frames: int, seq: int):
    base = _scene_params(rng, _is_oblique(seq, style.oblique_fraction))
    for k in range(n_frames):
        d = render_depth(_jitter(base, rng, k), res)
        yield k, shade(d, style, rng), d


def _render(n: int, res: int, style: ToyStyle, rng: np.random.Generator, prefix: str):
    out = []
    seq = 0
    while len(out) < n:
        for k, rgb, d in _render_sequence(rng, style, res, min(FRAMES_PER_SEQUENCE, n - len(out)), seq):
            out.append((f"{prefix}{seq:03d}", k, rgb, d))
        seq += 1
    return out


def generate_toy_dataset(
    n_pairs: int, resolution: int = 64, seed: int = 0
) -> tuple[list[PairedSample], list[UnpairedSample]]:
    """``n_pairs`` depth-annotated A renders and ``n_pairs`` B renders of different scenes."""
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    rng_a, rng_b = np.random.default_rng(seed).spawn(2)
    pairs = [
        PairedSample(Image(rgb), DepthMap(d), sid, k)
        for sid, k, rgb, d in _render(n_pairs, resolution, STYLE_A, rng_a, "toyA_")
    ]
    unpaired = [
        UnpairedSample(Image(rgb), sid, k) for sid, k, rgb, _ in _render(n_pairs, resolution, STYLE_B, rng_b, "toyB_")
    ]
    return pairs, unpaired


def generate_toy_eval(n: int, resolution: int = 64, seed: int = 1000) -> list[PairedSample]:
    """Target-style (B) renders with ground-truth depth, for scoring depth models."""
    rng = np.random.default_rng([seed, 0xE7A1])
    return [
        PairedSample(Image(rgb), DepthMap(d), sid, k)
        for sid, k, rgb, d in _render(n, resolution, STYLE_B, rng, "toyE_")
    ]
