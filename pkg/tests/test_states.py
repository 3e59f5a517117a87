"""Random ensembles, labeling, and dataset plumbing."""
import numpy as np
import pytest

from ptqq import rng, states
from ptqq.linalg import partial_trace
from ptqq.states import Dataset, EnsembleSpec, UnreachableClassError


def assert_valid_states(rhos):
    rhos = np.atleast_3d(rhos).reshape(-1, 8, 8)
    assert np.allclose(np.einsum("bii->b", rhos).real, 1.0)
    assert np.max(np.abs(rhos - rhos.conj().transpose(0, 2, 1))) < 1e-12
    assert np.min(np.linalg.eigvalsh(rhos)) > -1e-12


class TestSamplers:
    @pytest.mark.parametrize("kind", states.ENSEMBLES)
    def test_valid_density_matrices(self, kind):
        spec = EnsembleSpec(kind, seed=1, n_mix=3)
        assert_valid_states(states.sample_states(spec, 64))

    def test_haar_pure_rank_one(self):
        rho = states.haar_pure(g=rng.stream(2, 0))
        vals = np.linalg.eigvalsh(rho)
        assert np.isclose(vals[-1], 1.0) and np.all(vals[:-1] < 1e-12)

    def test_mixture_rank_bounded(self):
        rho = states.mixture_state(3, g=rng.stream(3, 0))
        assert np.sum(np.linalg.eigvalsh(rho) > 1e-10) <= 3

    def test_product_state_is_ppt(self):
        g = rng.stream(4, 0)
        for _ in range(20):
            assert states.pt_negative_count(states.product_random(g=g)) == 0

    def test_product_state_factors(self):
        rho = states.product_random(g=rng.stream(5, 0))
        ra = partial_trace(rho, keep="A")
        rb = partial_trace(rho, keep="B")
        assert np.allclose(np.kron(ra, rb), rho, atol=1e-12)

    def test_mixture_size_validation(self):
        with pytest.raises(ValueError):
            states.mixture_state(0)
        with pytest.raises(ValueError):
            EnsembleSpec("nonsense")


class TestLabeling:
    def test_count_matches_direct_spectrum(self):
        from ptqq.linalg import partial_transpose
        g = rng.stream(6, 0)
        for _ in range(50):
            rho = states.hilbert_schmidt_random(g=g)
            vals = np.linalg.eigvalsh(partial_transpose(rho))
            assert states.pt_negative_count(rho) == np.sum(vals < -1e-8)

    def test_cutoff_monotonicity(self):
        g = rng.stream(7, 0)
        rhos = np.array([states.hilbert_schmidt_random(g=g) for _ in range(200)])
        loose = states.label_states(rhos, cutoff=1e-6)
        tight = states.label_states(rhos, cutoff=1e-12)
        assert np.all(loose <= tight)

    def test_rana_bound_sample(self):
        for kind in states.ENSEMBLES:
            spec = EnsembleSpec(kind, seed=8, n_mix=5)
            labels = states.label_states(states.sample_states(spec, 2000))
            assert labels.max() <= states.MAX_XI


class TestStreamIndependence:
    def test_slice_equals_full_run(self):
        spec = EnsembleSpec("hilbert_schmidt", seed=9)
        full = states.sample_states(spec, 6000)
        part = states.sample_states(spec, 1000, start=4100)
        assert np.array_equal(full[4100:5100], part)

    def test_seed_changes_output(self):
        a = states.sample_states(EnsembleSpec("bures", seed=1), 8)
        b = states.sample_states(EnsembleSpec("bures", seed=2), 8)
        assert not np.allclose(a, b)


class TestEnsembleStats:
    def test_probabilities_and_determinism(self):
        spec = EnsembleSpec("hilbert_schmidt", seed=10)
        out1 = states.ensemble_stats(spec, 5000)
        out2 = states.ensemble_stats(spec, 5000, chunk=1234)
        assert np.isclose(out1["probs"].sum(), 1.0)
        assert np.array_equal(out1["probs"], out2["probs"])
        assert out1["bound_violations"] == 0

    def test_haar_pure_all_one(self):
        out = states.ensemble_stats(EnsembleSpec("haar_pure", seed=11), 3000)
        assert out["probs"][1] == 1.0


class TestTransition:
    def test_sweep_rows(self):
        rows = states.transition_sweep(np.linspace(0.5, 1.0, 5), 300, seed=12)
        assert len(rows) == 5
        for r in rows:
            assert np.isclose(r["probs"].sum(), 1.0)
            assert r["mean_second_neg"] <= 0.0
        # far from alpha = 1 the mixture is firmly two-negative
        assert rows[0]["probs"][2] > 0.95

    def test_alpha_validation(self):
        with pytest.raises(ValueError):
            states.transition_sample(1.5, rng.stream(0, 0))

    def test_second_eigenvalue_shrinks_toward_pure(self):
        rows = states.transition_sweep([0.9, 1.0 - 1e-7], 500, seed=13)
        assert abs(rows[1]["mean_second_neg"]) < abs(rows[0]["mean_second_neg"])


class TestBalanced:
    def test_counts_and_determinism(self):
        ds1 = states.balanced_dataset([0, 1, 2], 40, seed=14)
        ds2 = states.balanced_dataset([0, 1, 2], 40, seed=14)
        assert np.array_equal(ds1.labels, ds2.labels)
        assert np.array_equal(ds1.rhos, ds2.rhos)
        for c in (0, 1, 2):
            assert np.sum(ds1.labels == c) == 40
        assert_valid_states(ds1.rhos)

    def test_labels_are_correct(self):
        ds = states.balanced_dataset([0, 2], 30, seed=15)
        assert np.array_equal(states.label_states(ds.rhos), ds.labels)

    def test_unreachable_class_raises(self):
        with pytest.raises(UnreachableClassError):
            states.balanced_dataset([1], 10, policy="product", seed=16,
                                    attempt_budget=40_000)

    def test_mixture_uniform_policy(self):
        ds = states.balanced_dataset([1, 2], 25, policy="mixture_uniform", seed=17)
        assert len(ds) == 50
        assert_valid_states(ds.rhos)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            states.balanced_dataset([5], 10)
        with pytest.raises(ValueError):
            states.balanced_dataset([0], 0)


class TestDatasetFiles:
    def test_csv_roundtrip(self, tmp_path):
        ds = states.sample_dataset(EnsembleSpec("bures", seed=18), 20)
        path = tmp_path / "ds.csv"
        states.save_dataset_csv(path, ds)
        out = states.load_dataset_csv(path)
        assert np.array_equal(out.labels, ds.labels)
        assert np.array_equal(out.rhos, ds.rhos)

    def test_binary_roundtrip(self, tmp_path):
        ds = states.sample_dataset(EnsembleSpec("hilbert_schmidt", seed=19), 20)
        path = tmp_path / "ds.bin"
        states.save_dataset_binary(path, ds)
        out = states.load_dataset_binary(path)
        assert np.array_equal(out.labels, ds.labels)
        assert np.array_equal(out.rhos, ds.rhos)
        assert out.meta["ensemble"] == "hilbert_schmidt"

    def test_shuffle_preserves_pairs(self):
        ds = states.sample_dataset(EnsembleSpec("hilbert_schmidt", seed=20), 50)
        sh = states.shuffle_dataset(ds, seed=1)
        assert sorted(sh.labels) == sorted(ds.labels)
        assert np.array_equal(states.label_states(sh.rhos), sh.labels)
