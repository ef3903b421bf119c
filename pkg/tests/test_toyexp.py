import numpy as np
import pytest

from cift import (
    DEFAULT_QA_GRID,
    DEFAULT_QX_GRID,
    ParameterError,
    affinity_quality,
    gen_controlled_affinity,
    gen_controlled_features,
    load_surface_csv,
    margin_quality,
    qy_surface,
    surface_to_csv,
)


class TestGenControlledFeatures:
    def test_zero_target_interleaves_clusters(self):
        rng = np.random.default_rng(0)
        X, labels = gen_controlled_features(0.0, n=100, classes=10, dim=16, rng=rng)
        assert abs(margin_quality(X, labels)) <= 0.05

    def test_large_target_within_calibration_band(self):
        # Tolerance is 5% relative, floored at 5% of the noise unit (1.0 here).
        rng = np.random.default_rng(1)
        for target in (0.5, 1.0, 2.0):
            X, labels = gen_controlled_features(target, n=100, classes=10, dim=16, rng=rng)
            assert abs(margin_quality(X, labels) - target) <= max(0.05 * target, 0.05)

    def test_fixed_seed_reproducible(self):
        a, la = gen_controlled_features(1.0, n=50, classes=5, dim=8, rng=np.random.default_rng(3))
        b, lb = gen_controlled_features(1.0, n=50, classes=5, dim=8, rng=np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(la, lb)

    def test_bad_arguments_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ParameterError):
            gen_controlled_features(-1.0, n=50, classes=5, dim=8, rng=rng)
        with pytest.raises(ParameterError):
            gen_controlled_features(1.0, n=5, classes=10, dim=8, rng=rng)


class TestGenControlledAffinity:
    def _labels(self, n=100, classes=10):
        return np.repeat(np.arange(classes), n // classes)

    def test_target_one_is_perfect(self):
        labels = self._labels()
        A = gen_controlled_affinity(1.0, labels, k=10, rng=np.random.default_rng(0))
        assert affinity_quality(A, labels) == 1.0

    def test_target_zero_is_fully_broken(self):
        labels = self._labels()
        A = gen_controlled_affinity(0.0, labels, k=10, rng=np.random.default_rng(0))
        assert affinity_quality(A, labels) == 0.0

    def test_half_target_hits_narrow_band(self):
        labels = self._labels()
        A = gen_controlled_affinity(0.5, labels, k=10, rng=np.random.default_rng(2))
        assert 0.49 <= affinity_quality(A, labels) <= 0.51

    def test_rows_stochastic_and_sparse(self):
        labels = self._labels()
        A = gen_controlled_affinity(0.3, labels, k=10, rng=np.random.default_rng(4))
        np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)
        assert (A != 0).sum(axis=1).max() <= 10
        assert (A >= 0).all()

    def test_infeasible_k_rejected(self):
        labels = np.array([0, 0, 1, 1])
        with pytest.raises(ParameterError):
            gen_controlled_affinity(0.5, labels, k=1, rng=np.random.default_rng(0))


class TestQySurface:
    def test_tiny_grid_shape_and_determinism(self):
        kwargs = dict(qx_grid=np.array([0.0, 1.0]), qa_grid=np.array([0.0, 1.0]),
                      repeats=3, n=20, classes=5, dim=8, k=5)
        a = qy_surface(rng=np.random.default_rng(11), **kwargs)
        b = qy_surface(rng=np.random.default_rng(11), **kwargs)
        assert len(a) == 4
        assert [(c.qx_target, c.qa_target) for c in a] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        for ca, cb in zip(a, b):
            assert ca == cb
            assert ca.repeats == 3

    def test_ideal_topology_preserves_high_margins(self):
        cells = qy_surface(qx_grid=np.array([2.0]), qa_grid=np.array([1.0]),
                           repeats=10, rng=np.random.default_rng(5),
                           n=50, classes=5, dim=8, k=10)
        (cell,) = cells
        assert cell.qy_mean > 0.5 * cell.qx_achieved

    def test_qy_non_decreasing_in_qa_within_noise(self):
        cells = qy_surface(qx_grid=np.array([1.0]), qa_grid=np.array([0.0, 0.5, 1.0]),
                           repeats=30, rng=np.random.default_rng(6),
                           n=50, classes=5, dim=8, k=10)
        means = [c.qy_mean for c in cells]
        tol = 3 * max(c.qy_std for c in cells) / np.sqrt(30)
        assert means[1] >= means[0] - tol
        assert means[2] >= means[1] - tol

    def test_default_grids(self):
        np.testing.assert_allclose(DEFAULT_QX_GRID, np.arange(0.0, 2.01, 0.25), atol=1e-12)
        np.testing.assert_allclose(DEFAULT_QA_GRID, np.arange(0.0, 1.01, 0.1), atol=1e-12)


def test_surface_csv_round_trip(tmp_path):
    cells = qy_surface(qx_grid=np.array([0.5]), qa_grid=np.array([0.4, 0.8]),
                       repeats=2, rng=np.random.default_rng(8),
                       n=40, classes=4, dim=6, k=10)
    path = tmp_path / "surface.csv"
    surface_to_csv(cells, path)
    header = path.read_text().splitlines()[0]
    assert header == "qx_target,qa_target,qx_achieved,qa_achieved,qy_mean,qy_std,repeats"
    assert load_surface_csv(path) == cells
