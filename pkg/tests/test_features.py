"""SIC-POVM construction and collective-measurement features."""
import numpy as np
import pytest

from ptqq import features, rng, states
from ptqq.features import (SUPPORTED_K, check_sic, cmw_config, cmw_features,
                           cmw_features_batch, sic_povm_d4)


@pytest.fixture(scope="module")
def povm():
    return sic_povm_d4()


class TestSicPovm:
    def test_invariants(self, povm):
        check_sic(povm, tol=1e-9)

    def test_overlaps_exactly(self, povm):
        v = povm.vectors
        gram2 = np.abs(v @ v.conj().T) ** 2
        off = gram2[~np.eye(16, dtype=bool)]
        assert off.shape == (240,)  # 120 unordered pairs, both orders
        assert np.max(np.abs(off - 0.2)) < 1e-9
        assert np.allclose(np.diag(gram2), 1.0)

    def test_resolution_of_identity(self, povm):
        frame = np.einsum("pi,pj->ij", povm.vectors, povm.vectors.conj()) / 4.0
        assert np.max(np.abs(frame - np.eye(4))) < 1e-9

    def test_deterministic(self, povm):
        sic_povm_d4.cache_clear()
        assert np.array_equal(sic_povm_d4().vectors, povm.vectors)

    def test_hash_stable(self, povm):
        assert povm.hash() == sic_povm_d4().hash()


class TestConfig:
    def test_supported_k_prefix_nesting(self):
        master = cmw_config(136).pairs
        assert len(set(master)) == 136
        for k in SUPPORTED_K:
            assert cmw_config(k).pairs == master[:k]

    def test_all_unordered_pairs_present(self):
        pairs = {tuple(sorted(p)) for p in cmw_config(136).pairs}
        assert len(pairs) == 136  # 16 diagonal + 120 off-diagonal

    def test_unsupported_k(self):
        with pytest.raises(ValueError):
            cmw_config(17)


class TestCmwFeatures:
    def test_range_and_mask(self, povm):
        spec = states.EnsembleSpec("hilbert_schmidt", seed=1)
        rhos = states.sample_states(spec, 100)
        feats, mask = cmw_features_batch(rhos, cmw_config(64), povm)
        assert feats.shape == (100, 64)
        assert np.all(feats >= 0.0) and np.all(feats <= 1.0)
        assert not mask.any()

    def test_maximally_mixed_is_quarter(self, povm):
        feats, mask = cmw_features(np.eye(8) / 8.0, cmw_config(136), povm)
        assert np.max(np.abs(feats - 0.25)) < 1e-12
        assert not mask.any()

    def test_prefix_consistency(self, povm):
        rho = states.hilbert_schmidt_random(g=rng.stream(2, 0))
        full, _ = cmw_features(rho, cmw_config(136), povm)
        for k in (8, 32, 64):
            sub, _ = cmw_features(rho, cmw_config(k), povm)
            assert np.allclose(sub, full[:k])

    def test_batch_matches_single(self, povm):
        g = rng.stream(3, 0)
        rhos = np.array([states.bures_random(g=g) for _ in range(5)])
        batch, _ = cmw_features_batch(rhos, cmw_config(16), povm)
        for rho, row in zip(rhos, batch):
            single, _ = cmw_features(rho, cmw_config(16), povm)
            assert np.allclose(single, row, atol=1e-12)

    def test_degenerate_denominator_masked(self, povm):
        # Bob marginal orthogonal to the y-side projector kills the
        # conditioning probability for pairs with that y
        config = cmw_config(136)
        y_vec = povm.vectors[5]
        w = np.linalg.svd(y_vec[None])[2][1:].T  # basis of y^perp
        g = rng.stream(4, 0)
        c = g.standard_normal(3) + 1j * g.standard_normal(3)
        phi = w @ (c / np.linalg.norm(c))
        psi = np.kron(np.array([1.0, 0.0]), phi)
        rho = np.outer(psi, psi.conj())
        feats, mask = cmw_features(rho, config, povm)
        hit = np.array([y == 5 for _, y in config.pairs])
        assert mask[hit].all()
        assert np.all(feats[hit] == 0.0)

    def test_swap_convention_matters(self, povm):
        rho = states.hilbert_schmidt_random(g=rng.stream(5, 0))
        a, _ = cmw_features(rho, cmw_config(16), povm, "virtual_swap")
        b, _ = cmw_features(rho, cmw_config(16), povm, "identity")
        assert not np.allclose(a, b)
        with pytest.raises(ValueError):
            cmw_features(rho, cmw_config(16), povm, "bogus")

    def test_rho_t_shape_guard(self):
        with pytest.raises(ValueError):
            features.rho_T(np.eye(4))


class TestFeatureFiles:
    def test_csv_roundtrip_with_mask(self, tmp_path, povm):
        g = rng.stream(6, 0)
        rhos = np.array([states.hilbert_schmidt_random(g=g) for _ in range(8)])
        labels = states.label_states(rhos)
        feats, mask = cmw_features_batch(rhos, cmw_config(16), povm)
        mask = mask.copy()
        mask[3, 7] = True
        path = tmp_path / "f.csv"
        features.save_features_csv(path, feats, labels, mask, {"k": 16})
        out_f, out_l, out_m = features.load_features_csv(path)
        assert np.array_equal(out_l, labels)
        assert np.array_equal(out_m, mask)
        assert np.array_equal(out_f, feats)
        assert (tmp_path / "f.csv.json").exists()
