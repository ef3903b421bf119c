import numpy as np
import pytest
import torch

from cift import (
    DegenerateInputError,
    EnhanceParams,
    Modality,
    build_groups,
    column_stats,
    enhance,
    gen_synthetic_dataset,
    gft_transfer,
    het_transfer,
    hom_transfer,
    sample_training_batch,
)
from cift.h2ft import gft_transfer_core


def _standardized(rng, n=12, d=5):
    X = torch.as_tensor(rng.normal(size=(n, d)))
    mean, var = column_stats(X)
    return (X - mean) / torch.sqrt(var)


def _batch(num_identities=6, per=3, dim=5, P=4, K=2, seed=0):
    ds = gen_synthetic_dataset(num_identities=num_identities, per_id_per_modality=per, dim=dim, seed=seed)
    return sample_training_batch(ds, P=P, K=K, seed=seed)


class TestEnhance:
    def test_identity_on_standardized_input(self, rng):
        X = _standardized(rng)
        p = EnhanceParams.create(X.shape[1])
        out = enhance(X, p, training=True)
        np.testing.assert_allclose(out.detach().numpy(), X.numpy(), atol=1e-6)

    def test_constant_column_stays_finite(self):
        X = torch.full((4, 3), 2.5, dtype=torch.float64)
        p = EnhanceParams.create(3)
        out = enhance(X, p, training=True)
        assert torch.isfinite(out).all()

    def test_training_mode_centers_columns(self, rng):
        X = torch.as_tensor(rng.normal(loc=3.0, scale=2.0, size=(20, 4)))
        p = EnhanceParams.create(4)  # gamma=1, beta=0: output is the pre-affine standardization
        out = enhance(X, p, training=True)
        np.testing.assert_allclose(out.detach().numpy().mean(axis=0), 0.0, atol=1e-7)

    def test_running_stats_follow_ema(self, rng):
        X = torch.as_tensor(rng.normal(size=(10, 3)))
        p = EnhanceParams.create(3, momentum=0.1)
        mean, var = column_stats(X)
        enhance(X, p, training=True)
        np.testing.assert_allclose(p.running_mean.numpy(), (0.1 * mean).numpy(), atol=1e-12)
        np.testing.assert_allclose(p.running_var.numpy(), (0.9 + 0.1 * var).numpy(), atol=1e-12)

    def test_explicit_stats_bypass_running_state(self, rng):
        X = torch.as_tensor(rng.normal(size=(6, 3)))
        p = EnhanceParams.create(3)
        before = p.running_mean.clone()
        enhance(X, p, stats=column_stats(X))
        np.testing.assert_array_equal(p.running_mean.numpy(), before.numpy())

    def test_single_row_training_rejected(self):
        p = EnhanceParams.create(2)
        with pytest.raises(DegenerateInputError):
            enhance(torch.ones(1, 2, dtype=torch.float64), p, training=True)


class TestBuildGroups:
    def test_paper_scale_group_count(self):
        batch = _batch(num_identities=10, per=4, dim=6, P=8, K=4)
        groups = build_groups(batch)
        assert len(groups) == 64
        assert all(len(g.gallery) == 32 for g in groups)

    def test_minimal_batch(self):
        batch = _batch(num_identities=2, per=1, dim=4, P=1, K=1)
        groups = build_groups(batch)
        assert len(groups) == 2
        assert all(len(g.gallery) == 1 for g in groups)

    def test_each_sample_queries_once_against_full_opposite_half(self):
        batch = _batch()
        groups = build_groups(batch)
        feats, labels, vis_mask = batch.arrays()
        assert sorted(g.query_index for g in groups) == list(range(len(batch.samples)))
        for g in groups:
            opposite = np.flatnonzero(~vis_mask if g.query.modality is Modality.VIS else vis_mask)
            np.testing.assert_array_equal(np.sort(g.gallery_indices), opposite)
            np.testing.assert_array_equal(g.gallery, feats[g.gallery_indices])


class TestHetTransfer:
    def test_gallery_identical_to_query_splits_evenly(self):
        q = torch.as_tensor([1.0, 2.0, -1.0], dtype=torch.float64)
        X_G = q.reshape(1, -1).clone()
        p = EnhanceParams.create(3)
        f_q, a = het_transfer(q, X_G, p, tau_het=0.2, k=2)
        np.testing.assert_allclose(a.detach().numpy().ravel(), [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(f_q.detach().numpy(), enhance(q.reshape(1, -1), p)[0].detach().numpy(), atol=1e-12)

    def test_k1_is_one_hot_on_self(self, rng):
        q = torch.as_tensor(rng.normal(size=4))
        X_G = torch.as_tensor(rng.normal(size=(5, 4)))
        p = EnhanceParams.create(4)
        f_q, a = het_transfer(q, X_G, p, tau_het=0.2, k=1)
        expected = np.zeros(6)
        expected[0] = 1.0
        np.testing.assert_allclose(a.detach().numpy().ravel(), expected, atol=1e-12)
        np.testing.assert_allclose(f_q.detach().numpy(), enhance(q.reshape(1, -1), p)[0].detach().numpy(), atol=1e-12)

    def test_output_is_convex_combination_of_enhanced_stack(self, rng):
        q = torch.as_tensor(rng.normal(size=4))
        X_G = torch.as_tensor(rng.normal(size=(7, 4)))
        p = EnhanceParams.create(4)
        f_q, a = het_transfer(q, X_G, p, tau_het=0.2, k=3)
        a = a.detach().numpy().ravel()
        assert (a >= 0).all() and a.sum() == pytest.approx(1.0, abs=1e-9)
        V = enhance(torch.cat([q.reshape(1, -1), X_G]), p).detach().numpy()
        np.testing.assert_allclose(f_q.detach().numpy(), a @ V, atol=1e-12)


class TestHomTransfer:
    def test_k1_keeps_every_row(self, rng):
        X_G = torch.as_tensor(rng.normal(size=(5, 3)))
        p = EnhanceParams.create(3)
        F, A = hom_transfer(X_G, p, tau_hom=0.4, k=1)
        np.testing.assert_allclose(A.detach().numpy(), np.eye(5), atol=1e-12)
        np.testing.assert_allclose(F.detach().numpy(), enhance(X_G, p).detach().numpy(), atol=1e-12)

    def test_rows_are_convex_combinations(self, rng):
        X_G = torch.as_tensor(rng.normal(size=(6, 3)))
        p = EnhanceParams.create(3)
        F, A = hom_transfer(X_G, p, tau_hom=0.4, k=3)
        A = A.detach().numpy()
        assert (A >= 0).all()
        np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)
        V = enhance(X_G, p).detach().numpy()
        np.testing.assert_allclose(F.detach().numpy(), A @ V, atol=1e-12)

    def test_duplicate_rows_transfer_identically(self, rng):
        X = rng.normal(size=(5, 3))
        X[2] = X[0]
        p = EnhanceParams.create(3)
        F, _ = hom_transfer(torch.as_tensor(X), p, tau_hom=0.4, k=2)
        np.testing.assert_array_equal(F[0].detach().numpy(), F[2].detach().numpy())

    def test_gallery_isolated_from_query(self, rng):
        X_G = torch.as_tensor(rng.normal(size=(6, 4)))
        p = EnhanceParams.create(4)
        F_ref, A_ref = hom_transfer(X_G, p, tau_hom=0.4, k=3)
        for _ in range(3):  # het passes with different queries must not disturb the gallery path
            het_transfer(torch.as_tensor(rng.normal(size=4)), X_G, p, tau_het=0.2, k=3)
        F, A = hom_transfer(X_G, p, tau_hom=0.4, k=3)
        np.testing.assert_array_equal(F.detach().numpy(), F_ref.detach().numpy())
        np.testing.assert_array_equal(A.detach().numpy(), A_ref.detach().numpy())


class TestGftTransfer:
    def test_identical_vectors_transfer_equally(self):
        batch = _batch(num_identities=2, per=2, dim=4, P=2, K=2)
        for s in batch.samples:
            s.feature[:] = 1.5
        p = EnhanceParams.create(4)
        F, _ = gft_transfer(batch, p, tau=0.4, k=3)
        F = F.detach().numpy()
        np.testing.assert_allclose(F, np.broadcast_to(F[0], F.shape), atol=1e-12)

    def test_k1_reduces_to_enhancement(self, rng):
        batch = _batch()
        p = EnhanceParams.create(5)
        feats, _, _ = batch.arrays()
        F, _ = gft_transfer(batch, p, tau=0.4, k=1)
        np.testing.assert_allclose(
            F.detach().numpy(), enhance(feats, p).detach().numpy(), atol=1e-12
        )

    def test_matches_core_on_enhanced_features(self, rng):
        batch = _batch(seed=5)
        p = EnhanceParams.create(5)
        feats, _, _ = batch.arrays()
        expected, _ = gft_transfer_core(enhance(feats, p), 0.3, 4)
        F, _ = gft_transfer(batch, p, tau=0.3, k=4)
        np.testing.assert_array_equal(F.detach().numpy(), expected.detach().numpy())
