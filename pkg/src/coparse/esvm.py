"""Exemplar detectors: region selection, hinge-loss training, logistic
calibration, and sliding-window propagation of segmentation masks.

One linear classifier is trained per selected region (single positive
against sampled negatives), its raw responses are mapped through a fitted
logistic so scores are comparable across exemplars, and the top detections
place the exemplar's mask into other images.
"""

from __future__ import annotations

import base64
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import features, kernels
from .core import ImageRecord, PropagationRecord, Region
from .errors import InsufficientDataError, MalformedInputError

NEGATIVES_PER_EXEMPLAR = 200
CALIBRATION_RIDGE = 1e-3   # keeps alpha finite on separable score sets


@dataclass(frozen=True)
class Exemplar:
    id: str
    w: np.ndarray                      # template HOG weights plus trailing bias
    alpha: float
    beta: float
    source_region: tuple[str, int]
    mask: np.ndarray                   # bool at template pixel resolution
    template: tuple[int, int]          # (cells_y, cells_x)


@dataclass(frozen=True)
class DetectionWindow:
    image_id: str
    x: int
    y: int
    width: int
    height: int
    raw_score: float
    calibrated: float


# ---------------------------------------------------------------------------
# Region selection
# ---------------------------------------------------------------------------

def region_saliency(image: ImageRecord, region: Region,
                    a_min: float, a_max: float) -> float:
    """Area-gated centrality times contrast against the border band."""
    if not a_min <= region.area_fraction <= a_max:
        return 0.0
    dy = region.centroid[0] - 0.5
    dx = region.centroid[1] - 0.5
    centrality = float(np.exp(-(dy * dy + dx * dx) / 0.18))
    band = ndimage.binary_dilation(region.mask, iterations=5) & ~region.mask
    if not band.any():
        return 0.0
    contrast = features.chi_square(
        features.region_histogram(image, region.mask),
        features.region_histogram(image, band))
    return centrality * contrast


def select_regions(image: ImageRecord, regions: list[Region],
                   a_min: float = 0.02, a_max: float = 0.6,
                   tau_sel: float = 0.05, n_sel: int = 4) -> list[int]:
    """Region indices ranked by saliency, thresholded and capped."""
    scored = []
    for region in regions:
        s = region_saliency(image, region, a_min, a_max)
        if s > tau_sel:
            scored.append((-s, region.id[1]))
    scored.sort()
    return [k for _, k in scored[:n_sel]]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def esvm_energy(w: np.ndarray, positive: np.ndarray, negatives: np.ndarray,
                lam1: float, lam2: float) -> float:
    """0.5*||w||^2 + lam1*hinge(positive) + lam2*sum hinge(negatives).

    Negatives enter with flipped sign so a large response on a negative is
    penalized.
    """
    margin_pos = 1.0 - float(w @ positive)
    margins_neg = 1.0 + negatives @ w
    return (0.5 * float(w @ w)
            + lam1 * max(0.0, margin_pos)
            + lam2 * float(np.maximum(0.0, margins_neg).sum()))


def esvm_subgradient(w: np.ndarray, positive: np.ndarray, negatives: np.ndarray,
                     lam1: float, lam2: float) -> np.ndarray:
    g = w.copy()
    if 1.0 - float(w @ positive) > 0.0:
        g -= lam1 * positive
    active = (1.0 + negatives @ w) > 0.0
    if active.any():
        g += lam2 * negatives[active].sum(axis=0)
    return g


@dataclass(frozen=True)
class TrainResult:
    w: np.ndarray
    energy: float
    best_energy_trace: np.ndarray   # best-so-far energy per step, non-increasing


def _augment(f: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(f, dtype=np.float64), [1.0]])


def train_esvm(positive: np.ndarray, negatives: list[np.ndarray] | np.ndarray,
               lam1: float = 0.5, lam2: float = 0.01,
               iterations: int = 1500, seed: int = 0) -> TrainResult:
    """Deterministic projected subgradient descent from 3 fixed starts.

    Features are taken as given; callers wanting a bias append a constant
    coordinate (build_exemplar does).
    """
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.ndim != 2 or negs.shape[0] == 0:
        raise InsufficientDataError("at least one negative example is required")
    if lam1 <= 0 or lam2 <= 0:
        raise MalformedInputError("regularization weights must be positive")
    pos = np.asarray(positive, dtype=np.float64)
    dim = pos.size
    radius = np.sqrt(2.0 * (lam1 + lam2 * negs.shape[0]))
    rng = np.random.default_rng([seed, 0x5E5])
    w = np.stack([
        np.zeros(dim),
        pos / (pos @ pos),
        rng.standard_normal(dim) * 0.01,
    ])  # the 3 fixed restarts run side by side, one row each
    n_restarts = w.shape[0]
    best_local = np.full(n_restarts, np.inf)
    w_best = w.copy()
    traces = np.empty((iterations + 1, n_restarts))
    for t in range(1, iterations + 2):
        # energy and subgradient share one pass over the margins
        margin_pos = 1.0 - w @ pos
        margins_neg = 1.0 + negs @ w.T           # (n_neg, n_restarts)
        active = margins_neg > 0.0
        e = (0.5 * (w * w).sum(axis=1) + lam1 * np.maximum(0.0, margin_pos)
             + lam2 * np.where(active, margins_neg, 0.0).sum(axis=0))
        improved = e < best_local
        best_local = np.where(improved, e, best_local)
        w_best[improved] = w[improved]
        traces[t - 1] = best_local
        if t > iterations:
            break
        g = w.copy()
        g[margin_pos > 0.0] -= lam1 * pos
        g += lam2 * (negs.T @ active).T
        w = w - g / t   # step 1/t suits the unit-strongly-convex objective
        norms = np.sqrt((w * w).sum(axis=1))
        over = norms > radius
        if over.any():
            w[over] *= (radius / norms[over])[:, None]
    winner = int(np.argmin(best_local))
    return TrainResult(w=w_best[winner], energy=float(best_local[winner]),
                       best_energy_trace=traces[:, winner].copy())


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    alpha: float
    beta: float
    degenerate: bool = False


def calibrated_score(alpha: float, beta: float, raw) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-alpha * (np.asarray(raw, dtype=np.float64) - beta)))


def calibrate(scores: np.ndarray, is_positive: np.ndarray) -> CalibrationResult:
    """Fit the logistic (alpha, beta) by damped Newton on the log-likelihood.

    A small ridge on alpha keeps the fit finite when the classes are
    separable. Single-class inputs fall back to (1, mean score) and are
    flagged degenerate.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(is_positive, dtype=bool).astype(np.float64)
    if y.min() == y.max():
        return CalibrationResult(alpha=1.0, beta=float(s.mean()), degenerate=True)
    ridge = CALIBRATION_RIDGE
    alpha, beta = 1.0, float(s.mean())

    def loglik(a, b):
        z = a * (s - b)
        # log sigma(z) computed stably for both signs
        return float((y * -np.logaddexp(0.0, -z) + (1 - y) * -np.logaddexp(0.0, z)).sum()
                     - ridge * a * a)

    ll = loglik(alpha, beta)
    for _ in range(100):
        z = alpha * (s - beta)
        p = 1.0 / (1.0 + np.exp(-z))
        r = y - p
        pq = p * (1.0 - p)
        g_a = float((r * (s - beta)).sum()) - 2.0 * ridge * alpha
        g_b = float(-alpha * r.sum())
        h_aa = -float((pq * (s - beta) ** 2).sum()) - 2.0 * ridge
        h_bb = -float(alpha * alpha * pq.sum())
        h_ab = float(alpha * (pq * (s - beta)).sum()) - float(r.sum())
        hess = np.array([[h_aa, h_ab], [h_ab, h_bb]]) - 1e-9 * np.eye(2)
        try:
            step = np.linalg.solve(hess, -np.array([g_a, g_b]))
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        improved = False
        for _ in range(30):
            na, nb = alpha + scale * step[0], beta + scale * step[1]
            if na > 1e-6:
                nll = loglik(na, nb)
                if nll > ll + 1e-12:
                    alpha, beta, ll = na, nb, nll
                    improved = True
                    break
            scale *= 0.5
        if not improved:
            break
        if abs(g_a) < 1e-9 and abs(g_b) < 1e-9:
            break
    return CalibrationResult(alpha=float(alpha), beta=float(beta))


# ---------------------------------------------------------------------------
# Exemplar construction and negative sampling
# ---------------------------------------------------------------------------

def exemplar_seed(global_seed: int, exemplar_id: str) -> list[int]:
    return [global_seed, zlib.crc32(exemplar_id.encode())]


def sample_negatives(corpus_images: list[ImageRecord], image: ImageRecord,
                     excluded: np.ndarray, bbox_hw: tuple[int, int],
                     template: tuple[int, int], count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """HOG descriptors of random crops avoiding the selected foreground.

    Half the crops come from this image (center outside ``excluded``), half
    are drawn round-robin from the other images.
    """
    bh, bw = bbox_hw
    lum_cache: dict[str, np.ndarray] = {}

    def lum(rec):
        if rec.id not in lum_cache:
            lum_cache[rec.id] = features.luma(rec.pixels)
        return lum_cache[rec.id]

    def crop(rec, forbid):
        h, w = rec.pixels.shape[:2]
        for _ in range(50):
            sc = rng.uniform(0.8, 1.25)
            ch = min(max(8, int(round(bh * sc))), h)
            cw = min(max(8, int(round(bw * sc))), w)
            y = int(rng.integers(0, h - ch + 1))
            x = int(rng.integers(0, w - cw + 1))
            if forbid is not None and forbid[y + ch // 2, x + cw // 2]:
                continue
            return lum(rec)[y:y + ch, x:x + cw]
        return lum(rec)[0:min(bh, h), 0:min(bw, w)]

    others = [rec for rec in corpus_images if rec.id != image.id]
    descs = []
    n_same = count if not others else count // 2
    for _ in range(n_same):
        descs.append(features.hog(crop(image, excluded), template))
    i = 0
    while len(descs) < count:
        rec = others[i % len(others)]
        descs.append(features.hog(crop(rec, None), template))
        i += 1
    return np.asarray(descs)


def build_exemplar(exemplar_id: str, image: ImageRecord, region: Region,
                   corpus_images: list[ImageRecord], excluded: np.ndarray,
                   lam1: float, lam2: float, seed: int) -> Exemplar:
    """Train and calibrate one exemplar from a selected region."""
    ys, xs = np.nonzero(region.mask)
    r0, r1 = int(ys.min()), int(ys.max()) + 1
    c0, c1 = int(xs.min()), int(xs.max()) + 1
    template = features.template_from_bbox(r1 - r0, c1 - c0)
    cy, cx = template
    patch = features.luma(image.pixels)[r0:r1, c0:c1]
    positive = features.hog(patch, template)
    rng = np.random.default_rng(exemplar_seed(seed, exemplar_id))
    negatives = sample_negatives(corpus_images, image, excluded,
                                 (r1 - r0, c1 - c0), template,
                                 NEGATIVES_PER_EXEMPLAR, rng)
    # bias enters as a constant feature coordinate
    pos_aug = _augment(positive)
    negs_aug = np.hstack([negatives, np.ones((negatives.shape[0], 1))])
    trained = train_esvm(pos_aug, negs_aug, lam1, lam2, seed=seed)
    raws = np.concatenate([[trained.w @ pos_aug], negs_aug @ trained.w])
    flags = np.zeros(raws.size, dtype=bool)
    flags[0] = True
    cal = calibrate(raws, flags)
    mask = features.nearest_resize_mask(region.mask[r0:r1, c0:c1],
                                        cy * features.CELL, cx * features.CELL)
    if not mask.any():
        mask = np.ones_like(mask)
    return Exemplar(id=exemplar_id, w=trained.w, alpha=cal.alpha, beta=cal.beta,
                    source_region=region.id, mask=mask, template=template)


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------

def _iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def detect(exemplar: Exemplar, image: ImageRecord,
           stride: int = 8, scales: tuple[float, ...] = (1.0, 0.8, 1.25)
           ) -> list[DetectionWindow]:
    """Score all windows of one image over the scale set, then NMS at IoU 0.5."""
    cy, cx = exemplar.template
    w_blocks = np.ascontiguousarray(exemplar.w[:-1])
    bias = float(exemplar.w[-1])
    gray = features.luma(image.pixels)
    h, w = gray.shape
    step = max(1, stride // features.CELL)
    raw_windows = []
    for s_idx, s in enumerate(scales):
        sh, sw = max(1, int(round(h * s))), max(1, int(round(w * s)))
        grid_y, grid_x = sh // features.CELL, sw // features.CELL
        if grid_y < cy or grid_x < cx:
            continue
        resized = features.bilinear_resize(gray, sh, sw)
        mag, obin = features.orientation_bins(resized)
        cells = kernels.cell_histograms(np.ascontiguousarray(mag),
                                        np.ascontiguousarray(obin),
                                        grid_y, grid_x)
        blocks = np.ascontiguousarray(features.block_normalize(cells))
        scores = kernels.score_windows(blocks, cy - 1, cx - 1, w_blocks, step) + bias
        win_h = cy * features.CELL
        win_w = cx * features.CELL
        for i in range(scores.shape[0]):
            for j in range(scores.shape[1]):
                ys = i * step * features.CELL
                xs = j * step * features.CELL
                x0 = int(round(xs * w / sw))
                y0 = int(round(ys * h / sh))
                ww = max(1, int(round(win_w * w / sw)))
                wh = max(1, int(round(win_h * h / sh)))
                x0 = min(x0, w - ww)
                y0 = min(y0, h - wh)
                raw_windows.append((float(scores[i, j]), s_idx, y0, x0, wh, ww))
    if not raw_windows:
        return []
    raws = np.array([rw[0] for rw in raw_windows])
    cal = calibrated_score(exemplar.alpha, exemplar.beta, raws)
    order = sorted(range(len(raw_windows)),
                   key=lambda i: (-cal[i], -raws[i], raw_windows[i][1],
                                  raw_windows[i][2], raw_windows[i][3]))
    kept: list[DetectionWindow] = []
    kept_boxes = []
    for i in order:
        _, _, y0, x0, wh, ww = raw_windows[i]
        box = (x0, y0, x0 + ww, y0 + wh)
        if any(_iou(box, kb) > 0.5 for kb in kept_boxes):
            continue
        kept_boxes.append(box)
        kept.append(DetectionWindow(image_id=image.id, x=x0, y=y0, width=ww,
                                    height=wh, raw_score=float(raws[i]),
                                    calibrated=float(cal[i])))
    return kept


def propagate(exemplar: Exemplar, corpus_images: list[ImageRecord],
              k: int = 5, stride: int = 8,
              scales: tuple[float, ...] = (1.0, 0.8, 1.25)
              ) -> list[PropagationRecord]:
    """Global top-k NMS-filtered detections, each carrying the resized mask."""
    if k <= 0:
        return []
    windows: list[DetectionWindow] = []
    for image in corpus_images:
        windows.extend(detect(exemplar, image, stride=stride, scales=scales))
    windows.sort(key=lambda d: (-d.calibrated, -d.raw_score, d.image_id, d.y, d.x))
    records = []
    for det in windows[:k]:
        mask = features.nearest_resize_mask(exemplar.mask, det.height, det.width)
        records.append(PropagationRecord(
            source_exemplar=exemplar.id, target_image=det.image_id,
            x=det.x, y=det.y, mask=mask, score=det.calibrated))
    return records


# ---------------------------------------------------------------------------
# Serialization (JSON-lines exemplars, JSON propagation arrays)
# ---------------------------------------------------------------------------

def mask_to_rle(mask: np.ndarray) -> dict:
    """Row-major run lengths, alternating and starting with a zero run."""
    flat = np.asarray(mask, dtype=np.uint8).ravel()
    edges = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate([[0], edges, [flat.size]]))
    counts = runs.tolist()
    if flat.size and flat[0] == 1:
        counts = [0] + counts
    return {"shape": list(mask.shape), "runs": counts}


def mask_from_rle(doc: dict) -> np.ndarray:
    shape = tuple(doc["shape"])
    total = int(np.prod(shape))
    flat = np.zeros(total, dtype=bool)
    pos, value = 0, 0
    for run in doc["runs"]:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value ^= 1
    if pos != total:
        raise MalformedInputError("run lengths do not cover the mask")
    return flat.reshape(shape)


def exemplar_to_json(exemplar: Exemplar) -> dict:
    return {
        "id": exemplar.id,
        "w": base64.b64encode(
            np.asarray(exemplar.w, dtype="<f8").tobytes()).decode("ascii"),
        "alpha": exemplar.alpha,
        "beta": exemplar.beta,
        "source_region": list(exemplar.source_region),
        "template": list(exemplar.template),
        "mask": mask_to_rle(exemplar.mask),
    }


def exemplar_from_json(doc: dict) -> Exemplar:
    w = np.frombuffer(base64.b64decode(doc["w"]), dtype="<f8").astype(np.float64)
    return Exemplar(id=doc["id"], w=w, alpha=float(doc["alpha"]),
                    beta=float(doc["beta"]),
                    source_region=(doc["source_region"][0], int(doc["source_region"][1])),
                    mask=mask_from_rle(doc["mask"]),
                    template=(int(doc["template"][0]), int(doc["template"][1])))


def propagation_to_json(record: PropagationRecord) -> dict:
    return {
        "exemplar": record.source_exemplar,
        "image": record.target_image,
        "x": record.x,
        "y": record.y,
        "score": record.score,
        "mask": mask_to_rle(record.mask),
    }


def propagation_from_json(doc: dict) -> PropagationRecord:
    return PropagationRecord(
        source_exemplar=doc["exemplar"], target_image=doc["image"],
        x=int(doc["x"]), y=int(doc["y"]), mask=mask_from_rle(doc["mask"]),
        score=float(doc["score"]))
