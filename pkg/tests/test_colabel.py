import numpy as np
import pytest

from coparse import colabel
from coparse.core import Partition, PropagationRecord
from coparse.errors import UnknownLabelError

from conftest import make_image


def random_histograms(rng, n, hot_bins):
    """Histograms concentrated on a fixed set of bins (disjoint families)."""
    out = np.zeros((n, 40))
    for i in range(n):
        weights = rng.uniform(0.5, 1.0, size=len(hot_bins))
        out[i, hot_bins] = weights / weights.sum()
    return out


def simple_model(vocab=("background", "a", "b"), mu=None):
    """Small fitted model with controllable location means."""
    rng = np.random.default_rng(0)
    hists = np.vstack([
        random_histograms(rng, 6, [0, 1, 2]),
        random_histograms(rng, 6, [10, 11]),
        random_histograms(rng, 6, [20, 21]),
    ])
    labels = np.array([0] * 6 + [1] * 6 + [2] * 6)
    appearance = colabel.train_appearance(hists, labels, len(vocab))
    centroids = {i: np.tile([[0.5, 0.5]], (4, 1)) for i in range(len(vocab))}
    if mu:
        for k, v in mu.items():
            centroids[k] = np.tile([v], (4, 1))
    means, covs = colabel.fit_location(centroids, len(vocab))
    psi = colabel.fit_cooccurrence([(0, 1), (0, 2), (1, 2)], len(vocab))
    return colabel.LabelModel(vocabulary=tuple(vocab), appearance=appearance,
                              location_mean=means, location_cov=covs,
                              cooccurrence=psi)


class TestAppearance:
    def test_single_label_always_votes_one(self):
        rng = np.random.default_rng(1)
        hists = random_histograms(rng, 5, [3, 4])
        model = colabel.train_appearance(hists, np.full(5, 2), vocab_size=4)
        votes = model.votes(random_histograms(rng, 1, [8])[0])
        assert votes[2] == 1.0
        assert votes.sum() == 1.0

    def test_two_separated_clusters_perfect_holdout(self):
        rng = np.random.default_rng(2)
        train_a = random_histograms(rng, 20, [0, 1, 2])
        train_b = random_histograms(rng, 20, [30, 31, 32])
        hists = np.vstack([train_a, train_b])
        labels = np.array([0] * 20 + [1] * 20)
        model = colabel.train_appearance(hists, labels, vocab_size=2)
        correct = 0
        for label, hot in ((0, [0, 1, 2]), (1, [30, 31, 32])):
            test = random_histograms(rng, 20, hot)
            for t in test:
                correct += int(np.argmax(model.votes(t)) == label)
        assert correct == 40

    def test_votes_sum_to_one(self):
        model = simple_model()
        rng = np.random.default_rng(3)
        for _ in range(10):
            votes = model.appearance.votes(random_histograms(rng, 1, [5, 6])[0])
            assert votes.sum() == pytest.approx(1.0)


class TestLocation:
    def test_single_sample_ridge_only(self):
        means, covs = colabel.fit_location({1: np.array([[0.4, 0.6]])}, 2)
        assert means[1].tolist() == [0.4, 0.6]
        assert np.allclose(covs[1], 1e-3 * np.eye(2))

    def test_symmetric_samples_centered(self):
        pts = np.array([[0.4, 0.4], [0.6, 0.6], [0.4, 0.6], [0.6, 0.4]])
        means, _ = colabel.fit_location({0: pts}, 1)
        assert np.allclose(means[0], [0.5, 0.5])

    def test_recovers_known_gaussian(self):
        rng = np.random.default_rng(4)
        pts = rng.multivariate_normal([0.3, 0.5], np.diag([0.01, 0.02]), size=100)
        means, covs = colabel.fit_location({0: pts}, 1)
        assert np.allclose(means[0], [0.3, 0.5], atol=0.03)
        assert covs[0][0, 0] == pytest.approx(0.01, rel=0.35)
        assert covs[0][1, 1] == pytest.approx(0.02, rel=0.35)

    def test_score_is_one_at_mean(self):
        model = simple_model(mu={1: (0.3, 0.7)})
        assert colabel.location_score(model, 1, (0.3, 0.7)) == pytest.approx(1.0)

    def test_equal_mahalanobis_equal_scores(self):
        model = simple_model()
        s1 = colabel.location_score(model, 1, (0.5 + 0.02, 0.5))
        s2 = colabel.location_score(model, 1, (0.5 - 0.02, 0.5))
        assert s1 == pytest.approx(s2)

    def test_one_sigma_principal_axis(self):
        pts = np.array([[0.5 + d, 0.5] for d in (-0.1, -0.05, 0.0, 0.05, 0.1)])
        means, covs = colabel.fit_location({0: pts}, 3)
        base = simple_model()
        model = colabel.LabelModel(vocabulary=base.vocabulary,
                                   appearance=base.appearance,
                                   location_mean=means, location_cov=covs,
                                   cooccurrence=base.cooccurrence)
        sigma = float(np.sqrt(covs[0][0, 0]))
        score = colabel.location_score(model, 0, (0.5 + sigma, 0.5))
        assert score == pytest.approx(np.exp(-0.5))

    def test_unknown_label_rejected(self):
        model = simple_model()
        with pytest.raises(UnknownLabelError):
            colabel.location_score(model, 9, (0.5, 0.5))


class TestCooccurrence:
    def test_hand_counted_example(self):
        # 3 adjacent pairs labeled {coat, pants}, 1 labeled {coat, coat}, V=2
        pairs = [(0, 1)] * 3 + [(0, 0)]
        psi = colabel.fit_cooccurrence(pairs, 2)
        assert psi[0, 1] == pytest.approx((3 + 1) / (4 + 4))
        assert psi[0, 0] == pytest.approx((1 + 1) / (4 + 4))
        assert psi[1, 1] == pytest.approx((0 + 1) / (4 + 4))

    def test_never_adjacent_floor(self):
        psi = colabel.fit_cooccurrence([(0, 1)] * 5, 3)
        assert psi[1, 2] == pytest.approx(1 / (5 + 9))

    def test_symmetric_and_positive(self):
        rng = np.random.default_rng(5)
        pairs = [tuple(rng.integers(0, 4, size=2)) for _ in range(30)]
        psi = colabel.fit_cooccurrence(pairs, 4)
        assert np.allclose(psi, psi.T)
        assert (psi > 0).all()


class TestEnergies:
    def test_unary_midpoint(self):
        assert colabel.unary_value(0.5, 0.0) == pytest.approx(np.log(2))

    def test_unary_clamps_at_e_max(self):
        assert colabel.unary_value(0.5, 1e9) == 20.0

    def test_unary_worked_example(self):
        # vote 1, one sigma off the mean: -log(sig(2)) + 0.5
        val = colabel.unary_value(1.0, 0.5, sharpness=4.0)
        assert val == pytest.approx(0.1269 + 0.5, abs=1e-4)

    def test_interior_appearance_literal_equal_labels(self):
        assert colabel.interior_appearance(0.0, 1, 1, "literal") == 0.0
        assert colabel.interior_appearance(0.7, 1, 1, "literal") == pytest.approx(0.7)
        assert colabel.interior_appearance(0.7, 1, 2, "literal") == 0.0

    def test_interior_appearance_smoothing(self):
        assert colabel.interior_appearance(0.3, 1, 1, "smoothing") == 0.0
        val = colabel.interior_appearance(1.0, 1, 2, "smoothing", beta_pair=2.0)
        assert val == pytest.approx(2.0 * np.exp(-1.0))

    def test_interior_table_min_shift_and_clamp(self):
        model = simple_model()
        rng = np.random.default_rng(6)
        h1 = random_histograms(rng, 1, [0, 1])[0]
        h2 = random_histograms(rng, 1, [20, 21])[0]
        cands = np.array([0, 1, 2])
        for mode in ("smoothing", "literal"):
            table = colabel.interior_table(model, h1, h2, cands, cands, mode)
            assert table.min() == pytest.approx(0.0, abs=1e-12)
            assert table.max() <= 20.0
            assert np.isfinite(table).all()

    def test_exterior_zero_at_means_equal_labels(self):
        model = simple_model(mu={1: (0.2, 0.8)})
        h = random_histograms(np.random.default_rng(7), 1, [10, 11])[0]
        cands = np.array([1, 2])
        table = colabel.exterior_table(model, h, h, (0.2, 0.8), (0.2, 0.8),
                                       cands, cands, "smoothing")
        assert table[0, 0] == pytest.approx(0.0, abs=1e-9)

    def test_exterior_symmetric_for_equal_histograms(self):
        model = simple_model()
        h = random_histograms(np.random.default_rng(8), 1, [10, 11])[0]
        cands = np.array([0, 1, 2])
        table = colabel.exterior_table(model, h, h, (0.45, 0.5), (0.45, 0.5),
                                       cands, cands, "smoothing")
        assert np.allclose(table, table.T)

    def test_exterior_preshift_half_nat(self):
        # G_u = exp(-0.5), G_v = 1, equal labels, chi2 = 0 -> raw 0.5
        model = simple_model(mu={1: (0.3, 0.5)})
        sigma = float(np.sqrt(model.location_cov[1][0, 0]))
        h = random_histograms(np.random.default_rng(9), 1, [10])[0]
        q_u = colabel.location_quad(model, 1, (0.3 + sigma, 0.5))
        q_v = colabel.location_quad(model, 1, (0.3, 0.5))
        raw = q_u + q_v + colabel.interior_appearance(0.0, 1, 1, "smoothing")
        assert raw == pytest.approx(0.5)


class TestBuildGraph:
    def two_region_image(self, image_id="g0"):
        spmap = np.zeros((8, 8), dtype=int)
        spmap[:, 4:] = 1
        pixels = np.full((8, 8, 3), 60, dtype=np.uint8)
        pixels[:, 4:] = (200, 40, 40)
        return make_image(spmap, pixels=pixels, tags=(0, 1), image_id=image_id)

    def test_single_image_interior_only(self):
        model = simple_model()
        image = self.two_region_image()
        parts = {image.id: Partition.from_assignment([0, 1])}
        graph = colabel.build_graph([image], parts, [], {}, model)
        assert len(graph.interior_edges) == 1
        assert graph.exterior_edges == ()
        assert len(graph.problem.candidates) == 2

    def test_propagation_builds_one_exterior_edge(self):
        model = simple_model()
        a = self.two_region_image("gA")
        b = self.two_region_image("gB")
        parts = {a.id: Partition.from_assignment([0, 1]),
                 b.id: Partition.from_assignment([0, 1])}
        mask = np.ones((8, 4), dtype=bool)
        props = [
            PropagationRecord(source_exemplar="e", target_image="gB",
                              x=4, y=0, mask=mask, score=0.9),
            PropagationRecord(source_exemplar="e", target_image="gB",
                              x=4, y=0, mask=mask, score=0.8),
        ]
        graph = colabel.build_graph([a, b], parts, props,
                                    {"e": ("gA", 1)}, model)
        assert len(graph.exterior_edges) == 1  # deduplicated
        u, v = graph.exterior_edges[0]
        assert graph.vertex_regions[u].id == ("gA", 1)
        assert graph.vertex_regions[v].id == ("gB", 1)

    def test_three_mutually_adjacent_regions(self):
        spmap = np.zeros((6, 6), dtype=int)
        spmap[:3, 3:] = 1
        spmap[3:, :] = 2
        image = make_image(spmap, tags=(0, 1, 2), image_id="tri")
        model = simple_model()
        parts = {image.id: Partition.from_assignment([0, 1, 2])}
        graph = colabel.build_graph([image], parts, [], {}, model)
        assert sorted(graph.interior_edges) == [(0, 1), (0, 2), (1, 2)]

    def test_self_image_propagation_ignored(self):
        model = simple_model()
        a = self.two_region_image("gA")
        parts = {a.id: Partition.from_assignment([0, 1])}
        props = [PropagationRecord(source_exemplar="e", target_image="gA",
                                   x=4, y=0, mask=np.ones((8, 4), bool), score=0.9)]
        graph = colabel.build_graph([a], parts, props, {"e": ("gA", 1)}, model)
        assert graph.exterior_edges == ()

    def test_energy_tables_in_range(self):
        model = simple_model()
        a = self.two_region_image("gA")
        parts = {a.id: Partition.from_assignment([0, 1])}
        graph = colabel.build_graph([a], parts, [], {}, model)
        for u in graph.problem.unary:
            assert ((u >= 0) & (u <= 20.0)).all()
        for _, _, table in graph.problem.edges:
            assert table.min() == pytest.approx(0.0, abs=1e-12)
            assert table.max() <= 20.0


class TestMatchTarget:
    def test_best_overlap_wins(self):
        from coparse.core import Region

        m1 = np.zeros((8, 8), dtype=bool)
        m1[:, :4] = True
        m2 = ~m1
        regions = [
            Region(id=("i", 0), superpixels=(0,), mask=m1, centroid=(0.5, 0.25),
                   area_fraction=0.5),
            Region(id=("i", 1), superpixels=(1,), mask=m2, centroid=(0.5, 0.75),
                   area_fraction=0.5),
        ]
        mask = np.ones((8, 3), dtype=bool)
        assert colabel.match_propagation_target(mask, 5, 0, regions) == 1

    def test_low_overlap_rejected(self):
        from coparse.core import Region

        m1 = np.ones((8, 8), dtype=bool)
        regions = [Region(id=("i", 0), superpixels=(0,), mask=m1,
                          centroid=(0.5, 0.5), area_fraction=1.0)]
        mask = np.ones((2, 2), dtype=bool)  # IoU = 4/64 < 0.3
        assert colabel.match_propagation_target(mask, 0, 0, regions) is None
