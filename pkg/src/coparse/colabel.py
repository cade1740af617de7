"""Label models and the multi-image labeling graph.

The per-region singleton energy combines a one-vs-one kernel-SVM appearance
vote with a per-label location Gaussian. Interior edges couple adjacent
regions of one image through appearance compatibility and a smoothed label
co-occurrence table; exterior edges couple regions of different images that
were matched by a propagated mask. All energy tables are min-shifted per
edge to be non-negative and clamped, which leaves the MAP labeling
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import features
from .core import BACKGROUND, ImageRecord, Partition, Region, regions_of, superpixel_adjacency
from .errors import ConfigError, InsufficientDataError, UnknownLabelError
from .graphcut import LabelingProblem

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
WIDE_PRIOR_VARIANCE = 0.25   # location prior for labels unseen in training


# ---------------------------------------------------------------------------
# Appearance: one-vs-one kernel SVM on 40-bin histograms
# ---------------------------------------------------------------------------

def chi_square_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise chi-square distances between rows of a and rows of b."""
    num = (a[:, None, :] - b[None, :, :]) ** 2
    den = a[:, None, :] + b[None, :, :]
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return 0.5 * terms.sum(axis=2)


@dataclass(frozen=True)
class AppearanceModel:
    gamma: float
    trained_labels: tuple[int, ...]
    # per label pair (a, b) with a < b: support vectors and signed dual coefs
    machines: tuple[tuple[int, int, np.ndarray, np.ndarray], ...]
    vocab_size: int

    def votes(self, hist: np.ndarray) -> np.ndarray:
        """Fraction of pairwise votes per label; sums to 1 over trained labels."""
        s = np.zeros(self.vocab_size)
        if len(self.trained_labels) == 1:
            s[self.trained_labels[0]] = 1.0
            return s
        if not self.machines:
            return s
        for a, b, sv, coef in self.machines:
            k = np.exp(-self.gamma * chi_square_matrix(hist[None, :], sv)[0])
            decision = float(coef @ k)
            s[a if decision >= 0 else b] += 1.0
        return s / len(self.machines)


def _dual_coordinate_ascent(kernel: np.ndarray, y: np.ndarray, c: float,
                            max_sweeps: int = 200) -> np.ndarray:
    """Box-constrained dual ascent for a bias-free kernel SVM."""
    n = y.size
    alpha = np.zeros(n)
    f = np.zeros(n)   # f_i = sum_j alpha_j y_j K_ij
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(n):
            new = alpha[i] + (1.0 - y[i] * f[i]) / kernel[i, i]
            new = min(max(new, 0.0), c)
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                f += delta * y[i] * kernel[:, i]
                biggest = max(biggest, abs(delta))
        if biggest < 1e-8:
            break
    return alpha


def train_appearance(hists: np.ndarray, labels: np.ndarray, vocab_size: int,
                     c: float = 10.0) -> AppearanceModel:
    """One-against-one decomposition with a chi-square RBF kernel."""
    hists = np.asarray(hists, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    present = sorted(set(int(v) for v in labels))
    if not present:
        raise InsufficientDataError("no training regions")
    dists = chi_square_matrix(hists, hists)
    med = float(np.median(dists[np.triu_indices(len(hists), k=1)])) if len(hists) > 1 else 0.0
    gamma = 1.0 / med if med > 1e-12 else 1.0
    machines = []
    for i, a in enumerate(present):
        for b in present[i + 1:]:
            sel = (labels == a) | (labels == b)
            idx = np.flatnonzero(sel)
            y = np.where(labels[idx] == a, 1.0, -1.0)
            k = np.exp(-gamma * dists[np.ix_(idx, idx)])
            alpha = _dual_coordinate_ascent(k, y, c)
            keep = alpha > 1e-12
            machines.append((a, b, hists[idx[keep]], alpha[keep] * y[keep]))
    return AppearanceModel(gamma=gamma, trained_labels=tuple(present),
                           machines=tuple(machines), vocab_size=vocab_size)


# ---------------------------------------------------------------------------
# Location Gaussians and co-occurrence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelModel:
    vocabulary: tuple[str, ...]
    appearance: AppearanceModel
    location_mean: np.ndarray        # (V, 2)
    location_cov: np.ndarray         # (V, 2, 2)
    cooccurrence: np.ndarray         # (V, V), symmetric positive

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)


def fit_location(centroids_by_label: dict[int, np.ndarray], vocab_size: int,
                 ridge: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Per-label mean and ridge-regularized sample covariance of centroids.

    Labels with no samples get a wide centered prior so the model stays total
    over the vocabulary.
    """
    means = np.tile([0.5, 0.5], (vocab_size, 1))
    covs = np.tile(WIDE_PRIOR_VARIANCE * np.eye(2), (vocab_size, 1, 1))
    for label, pts in centroids_by_label.items():
        if not 0 <= label < vocab_size:
            raise UnknownLabelError(f"label {label} outside vocabulary")
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        if pts.shape[0] == 0:
            continue
        means[label] = pts.mean(axis=0)
        if pts.shape[0] > 1:
            covs[label] = np.cov(pts.T, ddof=1) + ridge * np.eye(2)
        else:
            covs[label] = ridge * np.eye(2)
    return means, covs


def location_quad(model: LabelModel, label: int, point) -> float:
    """0.5 * squared Mahalanobis distance to the label's location mean."""
    if not 0 <= label < model.vocab_size:
        raise UnknownLabelError(f"label {label} outside vocabulary")
    diff = np.asarray(point, dtype=np.float64) - model.location_mean[label]
    return 0.5 * float(diff @ np.linalg.solve(model.location_cov[label], diff))


def location_score(model: LabelModel, label: int, point) -> float:
    """Mode-normalized Gaussian density in (0, 1]; exactly 1 at the mean."""
    return float(np.exp(-location_quad(model, label, point)))


def _energy_location_quad(model: LabelModel, label: int, point) -> float:
    """Location term as used inside energies.

    Background is exempt: it has no canonical location, and the centroids of
    whole training-set background components badly misstate where background
    subregions produced by grouping may sit.
    """
    if label == BACKGROUND:
        return 0.0
    return location_quad(model, label, point)


def fit_cooccurrence(label_pairs: list[tuple[int, int]], vocab_size: int) -> np.ndarray:
    """Laplace-smoothed frequency of labels occurring as region neighbors."""
    counts = np.zeros((vocab_size, vocab_size))
    for a, b in label_pairs:
        lo, hi = min(a, b), max(a, b)
        counts[lo, hi] += 1.0
    total = len(label_pairs)
    psi = (counts + 1.0) / (total + vocab_size * vocab_size)
    upper = np.triu(psi)
    return upper + np.triu(upper, k=1).T


# ---------------------------------------------------------------------------
# Ground-truth regions for model fitting
# ---------------------------------------------------------------------------

def ground_truth_components(gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """4-connected components of a label map: (component map, label per component)."""
    comp = np.zeros(gt.shape, dtype=np.int64)
    comp_labels = []
    next_id = 0
    for value in np.unique(gt):
        mask = gt == value
        lab, n = ndimage.label(mask, structure=FOUR_CONN)
        comp[mask] = lab[mask] + next_id - 1
        comp_labels.extend([int(value)] * n)
        next_id += n
    return comp, np.asarray(comp_labels, dtype=np.int64)


def ground_truth_regions(image: ImageRecord) -> list[tuple[int, np.ndarray, tuple[float, float]]]:
    """(label, histogram, centroid) per ground-truth component."""
    comp, comp_labels = ground_truth_components(image.ground_truth)
    h, w = comp.shape
    out = []
    for cid in range(comp_labels.size):
        mask = comp == cid
        ys, xs = np.nonzero(mask)
        n = ys.size
        centroid = ((ys.sum() + 0.5 * n) / n / h, (xs.sum() + 0.5 * n) / n / w)
        out.append((int(comp_labels[cid]), features.region_histogram(image, mask), centroid))
    return out


def ground_truth_adjacent_pairs(gt: np.ndarray) -> list[tuple[int, int]]:
    comp, comp_labels = ground_truth_components(gt)
    pairs, _ = superpixel_adjacency(comp)
    return [(int(comp_labels[u]), int(comp_labels[v])) for u, v in pairs]


def image_label_pairs(image: ImageRecord) -> list[tuple[int, int]]:
    """Neighbor label pairs of one training image, deduplicated.

    Each adjacent component pair contributes its label pair once per image,
    and every present label contributes a self pair (patches inside one
    region adjoin each other). Deduplication keeps the counts presence-based,
    so large-area labels do not drown the table.
    """
    found = {(int(l), int(l)) for l in np.unique(image.ground_truth)}
    found.update(ground_truth_adjacent_pairs(image.ground_truth))
    return sorted((min(a, b), max(a, b)) for a, b in found)


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------

def unary_energy(model: LabelModel, hist: np.ndarray, centroid, label: int,
                 sharpness: float = 4.0, e_max: float = 20.0) -> float:
    """-log(sig(a(S - 0.5))) - log(G), clamped to [0, e_max]."""
    s = float(model.appearance.votes(hist)[label])
    return unary_value(s, _energy_location_quad(model, label, centroid),
                       sharpness, e_max)


def unary_value(vote: float, neg_log_location: float,
                sharpness: float = 4.0, e_max: float = 20.0) -> float:
    """Singleton energy from its two parts; exposed for direct arithmetic checks."""
    margin = sharpness * (vote - 0.5)
    val = float(np.logaddexp(0.0, -margin)) + neg_log_location
    return float(min(max(val, 0.0), e_max))


def interior_appearance(chi2: float, label_m: int, label_n: int, mode: str,
                        beta_pair: float = 2.0) -> float:
    """Raw (pre-shift) appearance term of an interior or exterior edge."""
    if mode == "literal":
        return chi2 if label_m == label_n else 0.0
    if mode == "smoothing":
        return beta_pair * float(np.exp(-chi2)) if label_m != label_n else 0.0
    raise ConfigError(f"unknown pairwise mode {mode!r}")


def _shift_clamp(table: np.ndarray, e_max: float) -> np.ndarray:
    shifted = table - table.min()
    return np.minimum(shifted, e_max)


def interior_table(model: LabelModel, hist_m: np.ndarray, hist_n: np.ndarray,
                   cands_m: np.ndarray, cands_n: np.ndarray, mode: str,
                   beta_pair: float = 2.0, e_max: float = 20.0) -> np.ndarray:
    d = features.chi_square(hist_m, hist_n)
    table = np.empty((cands_m.size, cands_n.size))
    for i, lm in enumerate(cands_m):
        for j, ln in enumerate(cands_n):
            table[i, j] = (interior_appearance(d, int(lm), int(ln), mode, beta_pair)
                           - np.log(model.cooccurrence[int(lm), int(ln)]))
    return _shift_clamp(table, e_max)


def exterior_table(model: LabelModel, hist_u: np.ndarray, hist_v: np.ndarray,
                   centroid_u, centroid_v,
                   cands_u: np.ndarray, cands_v: np.ndarray, mode: str,
                   beta_pair: float = 2.0, e_max: float = 20.0) -> np.ndarray:
    d = features.chi_square(hist_u, hist_v)
    neg_log_gu = np.array([_energy_location_quad(model, int(l), centroid_u) for l in cands_u])
    neg_log_gv = np.array([_energy_location_quad(model, int(l), centroid_v) for l in cands_v])
    table = neg_log_gu[:, None] + neg_log_gv[None, :]
    for i, lu in enumerate(cands_u):
        for j, lv in enumerate(cands_v):
            table[i, j] += interior_appearance(d, int(lu), int(lv), mode, beta_pair)
    return _shift_clamp(table, e_max)


# ---------------------------------------------------------------------------
# Graph assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoLabelGraph:
    vertex_regions: tuple[Region, ...]
    vertex_index: dict[tuple[str, int], int]
    problem: LabelingProblem
    interior_edges: tuple[tuple[int, int], ...]
    exterior_edges: tuple[tuple[int, int], ...]


def region_adjacency(image: ImageRecord, partition: Partition) -> list[tuple[int, int]]:
    pairs, _ = superpixel_adjacency(image.superpixel_map)
    assign = partition.assignment
    out = set()
    for u, v in pairs:
        a, b = int(assign[u]), int(assign[v])
        if a != b:
            out.add((min(a, b), max(a, b)))
    return sorted(out)


def match_propagation_target(mask: np.ndarray, x: int, y: int,
                             regions: list[Region],
                             min_iou: float = 0.3) -> int | None:
    """Region index with maximal overlap/union against the placed mask."""
    mh, mw = mask.shape
    mask_area = int(mask.sum())
    best_iou, best_k = 0.0, None
    for region in regions:
        window = region.mask[y:y + mh, x:x + mw]
        overlap = int((window & mask).sum())
        if overlap == 0:
            continue
        union = int(region.mask.sum()) + mask_area - overlap
        iou = overlap / union
        if iou > best_iou:
            best_iou, best_k = iou, region.id[1]
    if best_k is not None and best_iou >= min_iou:
        return best_k
    return None


def build_graph(images: list[ImageRecord], partitions: dict[str, Partition],
                propagations, source_regions: dict[str, tuple[str, int]],
                model: LabelModel, mode: str = "smoothing", beta_pair: float = 2.0,
                sharpness: float = 4.0, e_max: float = 20.0) -> CoLabelGraph:
    """Assemble vertices, interior/exterior edges and all energy tables.

    ``source_regions`` maps exemplar ids to their source region ids so each
    propagation can be anchored on its source side.
    """
    vertex_regions: list[Region] = []
    vertex_index: dict[tuple[str, int], int] = {}
    hists: list[np.ndarray] = []
    candidates: list[np.ndarray] = []
    regions_by_image: dict[str, list[Region]] = {}
    for image in images:
        regs = regions_of(image, partitions[image.id])
        regions_by_image[image.id] = regs
        cand = np.array(sorted(set(image.tags) | {BACKGROUND}), dtype=np.int64)
        if cand.size == 0:
            raise ConfigError(f"{image.id}: empty candidate label set")
        for region in regs:
            vertex_index[region.id] = len(vertex_regions)
            vertex_regions.append(region)
            hists.append(features.region_histogram(image, region.mask))
            candidates.append(cand)

    unary = []
    for region, hist, cand in zip(vertex_regions, hists, candidates):
        unary.append(np.array([
            unary_energy(model, hist, region.centroid, int(l), sharpness, e_max)
            for l in cand]))

    interior: list[tuple[int, int]] = []
    for image in images:
        for a, b in region_adjacency(image, partitions[image.id]):
            interior.append((vertex_index[(image.id, a)], vertex_index[(image.id, b)]))

    exterior_set: set[tuple[int, int]] = set()
    for prop in propagations:
        src = source_regions.get(prop.source_exemplar)
        if src is None or src not in vertex_index:
            continue
        if src[0] == prop.target_image or prop.target_image not in regions_by_image:
            continue
        target_k = match_propagation_target(prop.mask, prop.x, prop.y,
                                            regions_by_image[prop.target_image])
        if target_k is None:
            continue
        u = vertex_index[src]
        v = vertex_index[(prop.target_image, target_k)]
        if u != v:
            exterior_set.add((min(u, v), max(u, v)))
    exterior = sorted(exterior_set)

    edges = []
    for u, v in interior:
        table = interior_table(model, hists[u], hists[v], candidates[u],
                               candidates[v], mode, beta_pair, e_max)
        edges.append((u, v, table))
    for u, v in exterior:
        table = exterior_table(model, hists[u], hists[v],
                               vertex_regions[u].centroid, vertex_regions[v].centroid,
                               candidates[u], candidates[v], mode, beta_pair, e_max)
        edges.append((u, v, table))

    problem = LabelingProblem(candidates=tuple(candidates), unary=tuple(unary),
                              edges=tuple(edges))
    return CoLabelGraph(vertex_regions=tuple(vertex_regions),
                        vertex_index=vertex_index, problem=problem,
                        interior_edges=tuple(interior), exterior_edges=tuple(exterior))
