"""End-to-end driver: iterate Phase I to a region fixed point, run Phase II
once over the batch, and evaluate.

Phase I loops {group -> select + train exemplars -> propagate} and stops
when no image's partition changed between consecutive iterations (the
confirming pass counts as an iteration). Phase II builds one multi-image
graph over the whole batch and minimizes it with alpha-expansion. Metric
conventions: aPA averages pixel accuracy per image; mAGR is the macro mean
over labels of per-image recall, skipping images that lack the label.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

from . import colabel, esvm, grouping
from .colabel import LabelModel
from .core import BACKGROUND, ImageRecord, Partition, regions_of
from .errors import ConfigError, MalformedInputError
from .graphcut import alpha_expansion
from .io import Corpus


@dataclass(frozen=True)
class Config:
    theta: float = 0.5
    lambda1: float = 0.5
    lambda2: float = 0.01
    k_top: int = 5
    stride: int = 8
    scales: tuple[float, ...] = (1.0, 0.8, 1.25)
    a_min: float = 0.02
    a_max: float = 0.6
    tau_sel: float = 0.05
    n_sel: int = 4
    e_max: float = 20.0
    pairwise_mode: str = "smoothing"
    beta_pair: float = 2.0
    # one-vs-one vote fractions cap at 2/V, so the sigmoid needs to be much
    # sharper than its formula-level default of 4 to spread the appearance
    # cue; see the energy arithmetic in colabel.unary_value
    sigmoid_sharpness: float = 20.0
    max_phase1_iters: int = 10
    max_sweeps: int = 10
    seed: int = 0
    fold_count: int = 10

    def validate(self) -> "Config":
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie in (0, 1)")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ConfigError("lambda1 and lambda2 must be positive")
        if self.k_top < 0 or self.stride < 1 or self.n_sel < 0:
            raise ConfigError("k_top/n_sel must be >= 0 and stride >= 1")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError("scales must be positive")
        if not 0.0 <= self.a_min < self.a_max <= 1.0:
            raise ConfigError("need 0 <= a_min < a_max <= 1")
        if self.tau_sel < 0 or self.e_max <= 0 or self.beta_pair < 0:
            raise ConfigError("tau_sel/e_max/beta_pair out of range")
        if self.pairwise_mode not in ("smoothing", "literal"):
            raise ConfigError("pairwise_mode must be 'smoothing' or 'literal'")
        if self.sigmoid_sharpness <= 0:
            raise ConfigError("sigmoid_sharpness must be positive")
        if self.max_phase1_iters < 1 or self.max_sweeps < 1 or self.fold_count < 1:
            raise ConfigError("iteration caps and fold_count must be >= 1")
        return self

    @staticmethod
    def from_json(path_or_dict) -> "Config":
        if isinstance(path_or_dict, dict):
            doc = path_or_dict
        else:
            try:
                with open(path_or_dict) as f:
                    doc = json.load(f)
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(Config)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "scales" in doc:
            doc = {**doc, "scales": tuple(doc["scales"])}
        return Config(**doc).validate()

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(Config)}
        out["scales"] = list(self.scales)
        return out


@dataclass(frozen=True)
class Metrics:
    apa: float
    magr: float
    per_label_recall: dict[str, float]

    def to_dict(self) -> dict:
        return {"aPA": self.apa, "mAGR": self.magr,
                "per_label_recall": dict(sorted(self.per_label_recall.items()))}


@dataclass(frozen=True)
class Phase1Result:
    partitions: dict[str, Partition]
    exemplars: list[esvm.Exemplar]
    propagations: list
    iteration_count: int
    converged: bool        # terminated before the cap (fixed point or closed orbit)
    fixed_point: bool      # strict consecutive-iteration equality


# ---------------------------------------------------------------------------
# Phase I
# ---------------------------------------------------------------------------

def _group_all(images: list[ImageRecord], propagations, config: Config
               ) -> dict[str, Partition]:
    partitions = {}
    for image in images:
        props = [p for p in propagations if p.target_image == image.id]
        instance = grouping.instance_for_image(image, props)
        partitions[image.id] = grouping.solve_multicut(instance, config.theta).partition
    return partitions


def _train_and_propagate(images: list[ImageRecord], partitions: dict[str, Partition],
                         config: Config):
    exemplars: list[esvm.Exemplar] = []
    for image in images:
        regions = regions_of(image, partitions[image.id])
        selected = esvm.select_regions(image, regions, config.a_min, config.a_max,
                                       config.tau_sel, config.n_sel)
        if not selected:
            continue
        excluded = np.zeros(image.pixels.shape[:2], dtype=bool)
        for k in selected:
            excluded |= regions[k].mask
        for k in selected:
            # content-based id: an unchanged region retrains into the
            # identical exemplar even when other regions renumber, which
            # keeps the iteration's fixed point reachable
            content = zlib.crc32(np.asarray(regions[k].superpixels, dtype=np.int64).tobytes())
            exemplar_id = f"{image.id}:r{content:08x}"
            exemplars.append(esvm.build_exemplar(
                exemplar_id, image, regions[k], images, excluded,
                config.lambda1, config.lambda2, config.seed))
    propagations = []
    for exemplar in exemplars:
        propagations.extend(esvm.propagate(exemplar, images, config.k_top,
                                           config.stride, config.scales))
    return exemplars, propagations


def run_cosegmentation(corpus: Corpus, config: Config,
                       image_ids: list[str] | None = None) -> Phase1Result:
    """Iterate grouping/training/propagation until regions stop changing.

    The alternation can fall into a short limit cycle instead of a fixed
    point; a repeat of any earlier joint partition state closes the orbit
    exactly (no new regions can ever appear), so the loop also terminates
    there, reporting fixed_point=False.
    """
    images = [rec for rec in corpus.images
              if image_ids is None or rec.id in set(image_ids)]
    if not images:
        raise MalformedInputError("no images selected for co-segmentation")
    exemplars: list[esvm.Exemplar] = []
    propagations: list = []
    previous: dict[str, Partition] | None = None
    seen: set[tuple] = set()
    iteration = 0
    converged = False
    fixed_point = False
    while iteration < config.max_phase1_iters:
        iteration += 1
        partitions = _group_all(images, propagations, config)
        if previous is not None and all(
                partitions[i.id].equals(previous[i.id]) for i in images):
            converged = True
            fixed_point = True
            break
        signature = tuple(partitions[i.id].assignment.tobytes() for i in images)
        if signature in seen:
            converged = True
            previous = partitions
            # refresh exemplars so their source regions exist in the
            # returned partitions
            exemplars, propagations = _train_and_propagate(images, partitions, config)
            break
        seen.add(signature)
        previous = partitions
        exemplars, propagations = _train_and_propagate(images, partitions, config)
    return Phase1Result(partitions=previous, exemplars=exemplars,
                        propagations=propagations, iteration_count=iteration,
                        converged=converged, fixed_point=fixed_point)


# ---------------------------------------------------------------------------
# Label model fitting (supervised, on ground-truth regions)
# ---------------------------------------------------------------------------

def train_label_model(corpus: Corpus, image_ids: list[str]) -> LabelModel:
    hists, labels = [], []
    centroids: dict[int, list] = {}
    pairs: list[tuple[int, int]] = []
    for image_id in image_ids:
        image = corpus.image_by_id(image_id)
        if image.ground_truth is None:
            raise MalformedInputError(f"{image_id}: ground truth required for training")
        for label, hist, centroid in colabel.ground_truth_regions(image):
            hists.append(hist)
            labels.append(label)
            centroids.setdefault(label, []).append(centroid)
        pairs.extend(colabel.image_label_pairs(image))
    vocab_size = len(corpus.vocabulary)
    appearance = colabel.train_appearance(np.asarray(hists), np.asarray(labels), vocab_size)
    means, covs = colabel.fit_location(
        {l: np.asarray(v) for l, v in centroids.items()}, vocab_size)
    psi = colabel.fit_cooccurrence(pairs, vocab_size)
    return LabelModel(vocabulary=corpus.vocabulary, appearance=appearance,
                      location_mean=means, location_cov=covs, cooccurrence=psi)


# ---------------------------------------------------------------------------
# Phase II
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Phase2Result:
    label_maps: dict[str, np.ndarray]
    total_energy: float
    per_image_energy: dict[str, float]
    sweeps: int


def run_colabeling(corpus: Corpus, phase1: Phase1Result, model: LabelModel,
                   config: Config, image_ids: list[str] | None = None) -> Phase2Result:
    """Joint MAP labeling of the whole batch, painted back to label maps."""
    images = [rec for rec in corpus.images
              if image_ids is None or rec.id in set(image_ids)]
    for image in images:
        for tag in image.tags:
            if not 0 <= tag < len(corpus.vocabulary):
                raise ConfigError(f"{image.id}: tag {tag} outside vocabulary")
    source_regions = {ex.id: ex.source_region for ex in phase1.exemplars}
    graph = colabel.build_graph(images, phase1.partitions, phase1.propagations,
                                source_regions, model, config.pairwise_mode,
                                config.beta_pair, config.sigmoid_sharpness,
                                config.e_max)
    result = alpha_expansion(graph.problem, max_sweeps=config.max_sweeps)

    label_maps = {}
    for image in images:
        label_maps[image.id] = np.zeros(image.pixels.shape[:2], dtype=np.int64)
    for idx, region in enumerate(graph.vertex_regions):
        label_maps[region.id[0]][region.mask] = int(result.labeling[idx])

    pos = graph.problem.positions(result.labeling)
    per_image = {image.id: 0.0 for image in images}
    for idx, region in enumerate(graph.vertex_regions):
        per_image[region.id[0]] += float(graph.problem.unary[idx][pos[idx]])
    interior = set(graph.interior_edges)
    for u, v, table in graph.problem.edges:
        contribution = float(table[pos[u], pos[v]])
        img_u = graph.vertex_regions[u].id[0]
        img_v = graph.vertex_regions[v].id[0]
        if (u, v) in interior:
            per_image[img_u] += contribution
        else:
            per_image[img_u] += contribution / 2.0
            per_image[img_v] += contribution / 2.0
    return Phase2Result(label_maps=label_maps, total_energy=result.energy,
                        per_image_energy=per_image, sweeps=result.sweeps)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(predictions: dict[str, np.ndarray], corpus: Corpus,
             image_ids: list[str] | None = None) -> Metrics:
    images = [rec for rec in corpus.images
              if image_ids is None or rec.id in set(image_ids)]
    accuracies = []
    recall_lists: dict[int, list[float]] = {}
    for image in images:
        gt = image.ground_truth
        if gt is None:
            raise MalformedInputError(f"{image.id}: no ground truth to evaluate against")
        pred = predictions[image.id]
        if pred.shape != gt.shape:
            raise MalformedInputError(f"{image.id}: prediction shape mismatch")
        accuracies.append(float((pred == gt).mean()))
        for label in np.unique(gt):
            mask = gt == label
            recall = float((pred[mask] == label).mean())
            recall_lists.setdefault(int(label), []).append(recall)
    per_label = {corpus.vocabulary[l]: float(np.mean(v))
                 for l, v in sorted(recall_lists.items())}
    magr = float(np.mean([np.mean(v) for _, v in sorted(recall_lists.items())]))
    return Metrics(apa=float(np.mean(accuracies)), magr=magr,
                   per_label_recall=per_label)


def background_fraction(corpus: Corpus, image_ids: list[str] | None = None) -> float:
    """Mean per-image background pixel fraction (the all-background aPA)."""
    images = [rec for rec in corpus.images
              if image_ids is None or rec.id in set(image_ids)]
    fractions = [float((rec.ground_truth == BACKGROUND).mean()) for rec in images]
    return float(np.mean(fractions))


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

def fold_assignment(image_ids: list[str], fold_count: int, seed: int) -> dict[str, int]:
    """Deterministic shuffled round-robin folds; sizes differ by at most 1."""
    if fold_count > len(image_ids):
        raise ConfigError(f"fold_count {fold_count} exceeds image count {len(image_ids)}")
    rng = np.random.default_rng([seed, 0xF01D])
    order = sorted(image_ids)
    rng.shuffle(order)
    return {image_id: i % fold_count for i, image_id in enumerate(order)}


@dataclass(frozen=True)
class FoldOutcome:
    fold: int
    test_ids: tuple[str, ...]
    metrics: Metrics
    phase1_iterations: int
    phase1_converged: bool


@dataclass(frozen=True)
class CrossValidationResult:
    folds: tuple[FoldOutcome, ...]
    apa_mean: float
    apa_std: float
    magr_mean: float
    magr_std: float
    label_maps: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def cross_validate(corpus: Corpus, config: Config) -> CrossValidationResult:
    ids = [rec.id for rec in corpus.images]
    assignment = fold_assignment(ids, config.fold_count, config.seed)
    outcomes = []
    all_maps: dict[str, np.ndarray] = {}
    for fold in range(config.fold_count):
        test_ids = sorted(i for i in ids if assignment[i] == fold)
        train_ids = sorted(i for i in ids if assignment[i] != fold)
        model = train_label_model(corpus, train_ids)
        phase1 = run_cosegmentation(corpus, config, test_ids)
        phase2 = run_colabeling(corpus, phase1, model, config, test_ids)
        metrics = evaluate(phase2.label_maps, corpus, test_ids)
        all_maps.update(phase2.label_maps)
        outcomes.append(FoldOutcome(fold=fold, test_ids=tuple(test_ids),
                                    metrics=metrics,
                                    phase1_iterations=phase1.iteration_count,
                                    phase1_converged=phase1.converged))
    apas = np.array([o.metrics.apa for o in outcomes])
    magrs = np.array([o.metrics.magr for o in outcomes])
    return CrossValidationResult(
        folds=tuple(outcomes),
        apa_mean=float(apas.mean()), apa_std=float(apas.std()),
        magr_mean=float(magrs.mean()), magr_std=float(magrs.std()),
        label_maps=all_maps)
