"""Corpus data model: images, superpixels, partitions, regions, propagations.

All types are immutable after construction; coordinates are normalized to
[0, 1]^2 using pixel centers ((row + 0.5) / H, (col + 0.5) / W) so location
statistics transfer across image sizes. Label 0 is the reserved background
label of the corpus vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import MalformedInputError

BACKGROUND = 0


@dataclass(frozen=True)
class ImageRecord:
    id: str
    pixels: np.ndarray          # (H, W, 3) uint8
    tags: frozenset[int]        # vocabulary indices present at image level
    superpixel_map: np.ndarray  # (H, W) int64, values 0..M-1
    contour_map: np.ndarray     # (H, W) bool
    ground_truth: np.ndarray | None = None  # (H, W) int64 vocabulary indices

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def superpixel_count(self) -> int:
        return int(self.superpixel_map.max()) + 1


@dataclass(frozen=True)
class Superpixel:
    id: int
    pixel_count: int
    centroid: tuple[float, float]          # normalized (row, col)
    bbox: tuple[int, int, int, int]        # (r0, c0, r1, c1), half-open


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of superpixels to regions, canonical first-occurrence labels."""

    assignment: np.ndarray  # (M,) int64, values 0..K-1

    @property
    def k(self) -> int:
        return int(self.assignment.max()) + 1 if self.assignment.size else 0

    @staticmethod
    def from_assignment(assignment) -> "Partition":
        arr = np.asarray(assignment, dtype=np.int64)
        if arr.ndim != 1 or arr.size == 0:
            raise MalformedInputError("partition assignment must be a nonempty 1-D array")
        _, first, inverse = np.unique(arr, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first, kind="stable"), kind="stable")
        canon = order[inverse]
        canon.flags.writeable = False
        return Partition(assignment=canon)

    def equals(self, other: "Partition") -> bool:
        return np.array_equal(self.assignment, other.assignment)

    def edge_labels(self, pairs: np.ndarray) -> np.ndarray:
        """Merge indicator per (u, v) pair: 1 iff endpoints share a region."""
        a = self.assignment
        return (a[pairs[:, 0]] == a[pairs[:, 1]]).astype(np.int64)

    @staticmethod
    def from_edge_labels(node_count: int, pairs: np.ndarray, merged: np.ndarray) -> "Partition":
        """Rebuild a partition as connected components of merged pairs."""
        parent = np.arange(node_count)

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for (u, v), m in zip(np.asarray(pairs), np.asarray(merged)):
            if m:
                ru, rv = find(int(u)), find(int(v))
                if ru != rv:
                    parent[max(ru, rv)] = min(ru, rv)
        roots = np.array([find(i) for i in range(node_count)])
        return Partition.from_assignment(roots)


@dataclass(frozen=True)
class Region:
    id: tuple[str, int]                 # (image id, region index)
    superpixels: tuple[int, ...]
    mask: np.ndarray                    # (H, W) bool
    centroid: tuple[float, float]       # normalized (row, col)
    area_fraction: float
    label: int | None = None


@dataclass(frozen=True)
class PropagationRecord:
    """A detection mask placed into a target image by one exemplar."""

    source_exemplar: str
    target_image: str
    x: int                               # column of the mask's top-left
    y: int                               # row of the mask's top-left
    mask: np.ndarray                     # (h, w) bool
    score: float                         # calibrated detection score in (0, 1)


def validate_image_record(record: ImageRecord, vocabulary_size: int | None = None) -> None:
    """Check the full set of raster invariants; raise MalformedInputError."""
    px = record.pixels
    if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
        raise MalformedInputError(f"{record.id}: pixels must be (H, W, 3) uint8")
    h, w = px.shape[:2]
    sp = record.superpixel_map
    if sp.shape != (h, w):
        raise MalformedInputError(f"{record.id}: superpixel map shape mismatch")
    if record.contour_map.shape != (h, w):
        raise MalformedInputError(f"{record.id}: contour map shape mismatch")
    if sp.min() != 0:
        raise MalformedInputError(f"{record.id}: superpixel ids must start at 0")
    m = int(sp.max()) + 1
    counts = np.bincount(sp.ravel(), minlength=m)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise MalformedInputError(f"{record.id}: superpixel ids not contiguous (missing {missing})")
    # 4-connectivity: each id must form a single connected component
    n_components, _ = _count_components(sp, m)
    bad = np.flatnonzero(n_components != 1)
    if bad.size:
        raise MalformedInputError(f"{record.id}: superpixel {int(bad[0])} is not 4-connected")
    gt = record.ground_truth
    if gt is not None:
        if gt.shape != (h, w):
            raise MalformedInputError(f"{record.id}: ground truth shape mismatch")
        if vocabulary_size is not None and (gt.min() < 0 or gt.max() >= vocabulary_size):
            raise MalformedInputError(f"{record.id}: ground truth label outside vocabulary")
    if vocabulary_size is not None:
        for tag in record.tags:
            if not 0 <= tag < vocabulary_size:
                raise MalformedInputError(f"{record.id}: tag {tag} outside vocabulary")


def _count_components(spmap: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Components per superpixel id via union-find over same-id 4-neighbors."""
    h, w = spmap.shape
    idx = np.arange(h * w).reshape(h, w)
    pairs = []
    same_h = spmap[:, :-1] == spmap[:, 1:]
    pairs.append((idx[:, :-1][same_h], idx[:, 1:][same_h]))
    same_v = spmap[:-1, :] == spmap[1:, :]
    pairs.append((idx[:-1, :][same_v], idx[1:, :][same_v]))
    parent = np.arange(h * w)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a_arr, b_arr in pairs:
        for a, b in zip(a_arr.tolist(), b_arr.tolist()):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(h * w)])
    comp_count = np.zeros(m, dtype=np.int64)
    flat = spmap.ravel()
    root_set = np.unique(roots)
    for r in root_set.tolist():
        comp_count[flat[r]] += 1
    return comp_count, roots


def superpixels_of(image: ImageRecord) -> list[Superpixel]:
    """One Superpixel per map value, ascending ids; deterministic."""
    sp = image.superpixel_map
    h, w = sp.shape
    if sp.min() != 0:
        raise MalformedInputError(f"{image.id}: superpixel ids must start at 0")
    m = int(sp.max()) + 1
    counts = np.bincount(sp.ravel(), minlength=m)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise MalformedInputError(f"{image.id}: superpixel ids not contiguous (missing {missing})")
    rows = np.arange(h, dtype=np.float64)[:, None] + 0.5
    cols = np.arange(w, dtype=np.float64)[None, :] + 0.5
    rsum = np.bincount(sp.ravel(), weights=np.broadcast_to(rows, (h, w)).ravel(), minlength=m)
    csum = np.bincount(sp.ravel(), weights=np.broadcast_to(cols, (h, w)).ravel(), minlength=m)
    slices = ndimage.find_objects(sp + 1)
    out = []
    for i in range(m):
        sl = slices[i]
        bbox = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
        out.append(Superpixel(
            id=i,
            pixel_count=int(counts[i]),
            centroid=(rsum[i] / counts[i] / h, csum[i] / counts[i] / w),
            bbox=bbox,
        ))
    return out


def regions_of(image: ImageRecord, partition: Partition) -> list[Region]:
    """Materialize partition regions with masks, centroids and areas."""
    sp = image.superpixel_map
    m = int(sp.max()) + 1
    if partition.assignment.shape[0] != m:
        raise MalformedInputError(
            f"{image.id}: partition length {partition.assignment.shape[0]} != superpixel count {m}")
    h, w = sp.shape
    region_map = partition.assignment[sp]
    out = []
    for k in range(partition.k):
        mask = region_map == k
        ys, xs = np.nonzero(mask)
        n = ys.size
        members = tuple(int(j) for j in np.flatnonzero(partition.assignment == k))
        out.append(Region(
            id=(image.id, k),
            superpixels=members,
            mask=mask,
            centroid=((ys.sum() + 0.5 * n) / n / h, (xs.sum() + 0.5 * n) / n / w),
            area_fraction=n / (h * w),
        ))
    return out


def superpixel_adjacency(spmap: np.ndarray, contour: np.ndarray | None = None):
    """4-adjacent superpixel pairs, optionally flagged by boundary contours.

    Returns (pairs, flags): pairs is (P, 2) int64 with u < v sorted
    lexicographically; flags[i] is 1 iff any contour pixel lies on either
    side of the shared boundary of pair i (all zeros when contour is None).
    """
    m = int(spmap.max()) + 1
    a_h, b_h = spmap[:, :-1], spmap[:, 1:]
    a_v, b_v = spmap[:-1, :], spmap[1:, :]
    diff_h = a_h != b_h
    diff_v = a_v != b_v
    lo = np.concatenate([np.minimum(a_h[diff_h], b_h[diff_h]),
                         np.minimum(a_v[diff_v], b_v[diff_v])])
    hi = np.concatenate([np.maximum(a_h[diff_h], b_h[diff_h]),
                         np.maximum(a_v[diff_v], b_v[diff_v])])
    if contour is not None:
        c = contour.astype(bool)
        f_h = c[:, :-1][diff_h] | c[:, 1:][diff_h]
        f_v = c[:-1, :][diff_v] | c[1:, :][diff_v]
        flags = np.concatenate([f_h, f_v]).astype(np.int64)
    else:
        flags = np.zeros(lo.size, dtype=np.int64)
    keys = lo.astype(np.int64) * m + hi
    uniq, inverse = np.unique(keys, return_inverse=True)
    agg = np.zeros(uniq.size, dtype=np.int64)
    np.maximum.at(agg, inverse, flags)
    pairs = np.stack([uniq // m, uniq % m], axis=1)
    return pairs, agg
