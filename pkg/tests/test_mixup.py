"""Point cloud mixup: soft-label arithmetic and per-point label migration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcda.cloud import LabeledCloud, SegLabeledCloud
from pcda.errors import DataFormatError
from pcda.mixup import mixup_classify, mixup_segment

from conftest import make_cloud


def make_pair(seed, n=32, num_classes=5):
    rng = np.random.default_rng(seed)
    a = LabeledCloud(make_cloud(seed, n), int(rng.integers(num_classes)))
    b = LabeledCloud(make_cloud(seed + 10_000, n), int(rng.integers(num_classes)))
    return a, b


class TestClassify:
    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 64))
    def test_soft_label_sums_to_one(self, seed, n):
        a, b = make_pair(seed, n)
        mixed = mixup_classify(a, b, num_classes=5, seed=seed)
        assert abs(mixed.soft_label.sum() - 1.0) <= 1e-12
        assert (mixed.soft_label >= 0).all()
        assert len(mixed.points) == n

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_label_coefficient_matches_point_counts(self, seed):
        n = 32
        a, b = make_pair(seed, n)
        mixed = mixup_classify(a, b, num_classes=5, seed=seed)
        # count how many output points came from each input
        from_a = sum(
            1 for p in mixed.points if ((a.points == p).all(axis=1)).any()
        )
        if a.label != b.label:
            assert mixed.soft_label[a.label] == pytest.approx(from_a / n, abs=1e-12)
        assert mixed.gamma == pytest.approx(from_a / n, abs=1e-12)

    def test_gamma_one_returns_pure_first_cloud(self):
        a, b = make_pair(3)
        mixed = mixup_classify(a, b, num_classes=5, gamma=1.0, seed=0)
        assert sorted(map(tuple, mixed.points)) == sorted(map(tuple, a.points))
        want = np.zeros(5)
        want[a.label] = 1.0
        assert np.array_equal(mixed.soft_label, want)

    def test_gamma_zero_returns_pure_second_cloud(self):
        a, b = make_pair(4)
        mixed = mixup_classify(a, b, num_classes=5, gamma=0.0, seed=0)
        assert sorted(map(tuple, mixed.points)) == sorted(map(tuple, b.points))
        want = np.zeros(5)
        want[b.label] = 1.0
        assert np.array_equal(mixed.soft_label, want)

    def test_same_label_concentrates_mass(self):
        a, b = make_pair(5)
        b.label = a.label
        mixed = mixup_classify(a, b, num_classes=5, seed=1)
        assert mixed.soft_label[a.label] == pytest.approx(1.0, abs=1e-12)

    def test_seeded_determinism(self):
        a, b = make_pair(6)
        m1 = mixup_classify(a, b, num_classes=5, seed=42)
        m2 = mixup_classify(a, b, num_classes=5, seed=42)
        assert np.array_equal(m1.points, m2.points)
        assert np.array_equal(m1.soft_label, m2.soft_label)

    def test_realized_gamma_tracks_beta_distribution(self):
        # Beta(1, 1) draws: realized fractions should be near-uniform
        a, b = make_pair(7, n=256)
        gammas = np.array(
            [mixup_classify(a, b, num_classes=5, seed=s).gamma for s in range(2000)]
        )
        assert 0.45 < gammas.mean() < 0.55
        # skewed Beta shifts the mass accordingly
        lo = np.array(
            [
                mixup_classify(a, b, num_classes=5, alpha=0.5, beta=2.0, seed=s).gamma
                for s in range(500)
            ]
        )
        assert lo.mean() < 0.3

    def test_size_mismatch_rejected(self):
        a = LabeledCloud(make_cloud(0, 10), 0)
        b = LabeledCloud(make_cloud(1, 11), 1)
        with pytest.raises(DataFormatError):
            mixup_classify(a, b, num_classes=3)

    def test_label_out_of_range_rejected(self):
        a = LabeledCloud(make_cloud(0, 10), 4)
        b = LabeledCloud(make_cloud(1, 10), 0)
        with pytest.raises(DataFormatError):
            mixup_classify(a, b, num_classes=3)

    def test_gamma_out_of_range_rejected(self):
        a, b = make_pair(8)
        with pytest.raises(DataFormatError):
            mixup_classify(a, b, num_classes=5, gamma=1.5)


class TestSegment:
    def seg_pair(self, seed, n=40):
        rng = np.random.default_rng(seed)
        a = SegLabeledCloud(make_cloud(seed, n), rng.integers(0, 4, size=n))
        b = SegLabeledCloud(make_cloud(seed + 10_000, n), rng.integers(0, 4, size=n))
        return a, b

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_every_point_keeps_its_own_label(self, seed):
        a, b = self.seg_pair(seed)
        mixed = mixup_segment(a, b, seed=seed)
        assert len(mixed.points) == len(a.points)
        assert len(mixed.point_labels) == len(a.points)
        lookup = {}
        for cloud in (a, b):
            for p, lab in zip(cloud.points, cloud.labels):
                lookup.setdefault(tuple(p), set()).add(int(lab))
        for p, lab in zip(mixed.points, mixed.point_labels):
            assert int(lab) in lookup[tuple(p)]

    def test_counts_match_gamma(self):
        a, b = self.seg_pair(1)
        a.labels[:] = 0
        b.labels[:] = 1
        mixed = mixup_segment(a, b, seed=3)
        n = len(a.points)
        assert (mixed.point_labels == 0).sum() == round(mixed.gamma * n)
        assert (mixed.point_labels == 1).sum() == n - round(mixed.gamma * n)

    def test_degenerate_gamma_pure_clouds(self):
        a, b = self.seg_pair(2)
        all_a = mixup_segment(a, b, gamma=1.0, seed=0)
        assert sorted(map(tuple, all_a.points)) == sorted(map(tuple, a.points))
        all_b = mixup_segment(a, b, gamma=0.0, seed=0)
        assert sorted(map(tuple, all_b.points)) == sorted(map(tuple, b.points))
