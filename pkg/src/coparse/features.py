"""Deterministic appearance features.

Two descriptor families: a 40-bin region histogram (24 color bins, 8 per RGB
channel, plus 16 gradient-orientation bins weighted by gradient magnitude)
compared with a bounded chi-square distance, and a classic HOG descriptor
(8x8 cells, 9 unsigned orientation bins, 2x2 blocks, L2-hys) for template
detection.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DegenerateRegionError, PatchTooSmallError

CELL = 8
HOG_BINS = 9
COLOR_BINS = 8          # per RGB channel
GRAD_BINS = 16


def luma(pixels: np.ndarray) -> np.ndarray:
    """Rec. 601 luminance as float64."""
    px = pixels.astype(np.float64)
    return 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]


def gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(d/drow, d/dcol) central differences, one-sided at the borders."""
    gy, gx = np.gradient(gray.astype(np.float64))
    return gy, gx


def region_histogram(image, region_mask: np.ndarray) -> np.ndarray:
    """40-bin appearance histogram of the masked pixels.

    Color and gradient halves are each normalized to mass 0.5; a region with
    zero gradient energy gets a uniform gradient half.
    """
    mask = np.asarray(region_mask, dtype=bool)
    if mask.shape != image.pixels.shape[:2]:
        raise DegenerateRegionError(f"{image.id}: mask shape mismatch")
    if not mask.any():
        raise DegenerateRegionError(f"{image.id}: empty region mask")
    px = image.pixels[mask]
    color = np.zeros(3 * COLOR_BINS)
    for ch in range(3):
        bins = px[:, ch].astype(np.int64) * COLOR_BINS // 256
        color[ch * COLOR_BINS:(ch + 1) * COLOR_BINS] = np.bincount(bins, minlength=COLOR_BINS)
    color *= 0.5 / color.sum()

    gy, gx = gradients(luma(image.pixels))
    mag = np.hypot(gx[mask], gy[mask])
    theta = np.mod(np.arctan2(gy[mask], gx[mask]), 2.0 * np.pi)
    obin = np.minimum((theta * GRAD_BINS / (2.0 * np.pi)).astype(np.int64), GRAD_BINS - 1)
    grad = np.bincount(obin, weights=mag, minlength=GRAD_BINS)
    total = grad.sum()
    if total <= 0.0:
        grad = np.full(GRAD_BINS, 0.5 / GRAD_BINS)
    else:
        grad *= 0.5 / total
    return np.concatenate([color, grad])


def chi_square(a: np.ndarray, b: np.ndarray) -> float:
    """0.5 * sum (a-b)^2 / (a+b); zero-denominator terms contribute 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = a + b
    num = (a - b) ** 2
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return float(0.5 * terms.sum())


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resampling of a 2-D float raster."""
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape
    r = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    c = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    r0 = np.clip(np.floor(r).astype(np.int64), 0, h - 1)
    c0 = np.clip(np.floor(c).astype(np.int64), 0, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = np.clip(r - r0, 0.0, 1.0)[:, None]
    fc = np.clip(c - c0, 0.0, 1.0)[None, :]
    top = src[r0[:, None], c0] * (1 - fc) + src[r0[:, None], c1] * fc
    bot = src[r1[:, None], c0] * (1 - fc) + src[r1[:, None], c1] * fc
    return top * (1 - fr) + bot * fr


def nearest_resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    src = np.asarray(mask, dtype=bool)
    h, w = src.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return src[rows[:, None], cols[None, :]]


def orientation_bins(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and unsigned 9-bin orientation index per pixel."""
    gy, gx = gradients(gray)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    obin = np.minimum((theta * HOG_BINS / np.pi).astype(np.int64), HOG_BINS - 1)
    return mag, obin


def block_normalize(cells: np.ndarray) -> np.ndarray:
    """L2-hys over 2x2 cell blocks: normalize, clip at 0.2, renormalize.

    Zero blocks stay zero through the epsilon guard. Input (CY, CX, 9),
    output (CY-1, CX-1, 36).
    """
    cy, cx, _ = cells.shape
    blocks = np.concatenate([
        cells[:-1, :-1], cells[:-1, 1:], cells[1:, :-1], cells[1:, 1:],
    ], axis=2)
    eps = 1e-10
    norm = np.sqrt((blocks ** 2).sum(axis=2, keepdims=True) + eps ** 2)
    blocks = blocks / norm
    blocks = np.minimum(blocks, 0.2)
    norm = np.sqrt((blocks ** 2).sum(axis=2, keepdims=True) + eps ** 2)
    return blocks / norm


def hog_length(template: tuple[int, int]) -> int:
    cy, cx = template
    return (cy - 1) * (cx - 1) * 4 * HOG_BINS


def hog(patch: np.ndarray, template: tuple[int, int]) -> np.ndarray:
    """HOG descriptor of a patch resampled to the template's pixel grid."""
    cy, cx = template
    if cy < 2 or cx < 2:
        raise PatchTooSmallError(f"template {template} smaller than 2x2 cells")
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 3:
        patch = luma(patch)
    if patch.shape[0] < 2 or patch.shape[1] < 2:
        raise PatchTooSmallError(f"patch {patch.shape} too small")
    resized = bilinear_resize(patch, cy * CELL, cx * CELL)
    mag, obin = orientation_bins(resized)
    cells = kernels.cell_histograms(np.ascontiguousarray(mag),
                                    np.ascontiguousarray(obin), cy, cx)
    return block_normalize(cells).ravel()


def template_from_bbox(height: int, width: int, max_cells: int = 8) -> tuple[int, int]:
    """Cell grid nearest the bbox aspect ratio with the longer side at max_cells."""
    if height >= width:
        cy = max_cells
        cx = int(np.clip(round(max_cells * width / height), 2, max_cells))
    else:
        cx = max_cells
        cy = int(np.clip(round(max_cells * height / width), 2, max_cells))
    return cy, cx
