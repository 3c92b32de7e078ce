"""Independent reference implementations shared by the unit and acceptance tests.

Deliberately written as plain loops / a different algorithm from the library code.
"""

import math

import numpy as np
from scipy import ndimage

from sim2real_depth.core import Image
from sim2real_depth.dataio.geometry import CameraIntrinsics


def brute_force_histogram(depth, intens, mask, n_bins, d_range, i_range):
    """Per-pixel loop with explicit edge comparisons, independent of the vectorised binning."""
    counts = np.zeros((n_bins, n_bins))

    def which(v, lo, hi):
        width = (hi - lo) / n_bins
        for k in range(n_bins - 1):
            if v < lo + (k + 1) * width:
                return k
        return n_bins - 1

    for r in range(depth.shape[0]):
        for c in range(depth.shape[1]):
            if mask[r, c]:
                counts[which(depth[r, c], *d_range), which(intens[r, c], *i_range)] += 1
    return counts


def brute_force_mi(counts):
    n = counts.sum()
    mi = 0.0
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            if counts[i, j] > 0:
                mi += counts[i, j] / n * math.log(n * counts[i, j] / (counts[i].sum() * counts[:, j].sum()))
    return mi


def smooth_image(h=96, w=96, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    chans = []
    for _ in range(3):
        a, b, c = rng.uniform(1, 4, 3)
        chans.append(0.5 + 0.25 * np.sin(2 * np.pi * a * xx + c) * np.cos(2 * np.pi * b * yy))
    return Image(np.stack(chans, -1))


def forward_distort(image: Image, intr: CameraIntrinsics) -> Image:
    """Independent forward model: for every distorted pixel, invert r_d = r f(r) by Newton and sample the pinhole image."""
    h, w = image.shape
    k1, k2, k3, k4 = intr.distortion
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    xd, yd = (cols - intr.cx) / intr.fx, (rows - intr.cy) / intr.fy
    rd = np.hypot(xd, yd)
    r = rd.copy()
    for _ in range(50):
        g = r * (1 + k1 * r**2 + k2 * r**4 + k3 * r**6 + k4 * r**8) - rd
        dg = 1 + 3 * k1 * r**2 + 5 * k2 * r**4 + 7 * k3 * r**6 + 9 * k4 * r**8
        r = r - g / dg
    scale = np.where(rd > 0, r / np.where(rd > 0, rd, 1), 1.0)
    src_c = intr.fx * xd * scale + intr.cx
    src_r = intr.fy * yd * scale + intr.cy
    out = np.stack(
        [ndimage.map_coordinates(image.pixels[..., ch], [src_r, src_c], order=3, mode="nearest") for ch in range(3)],
        -1,
    )
    return Image(np.clip(out, 0, 1))
