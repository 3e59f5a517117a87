"""End-to-end acceptance gate.

Twelve numbered criteria covering ensemble statistics, the labeling bound,
mixture extremes, the mixing-parameter transition, the SIC construction,
gradient correctness, desk-scale classification, binary tasks, classical
baselines, always-on property checks, geometry analyses, and the rank-two
embedding result.  Each criterion prints one [PASS]/[FAIL] line on the
real stdout so the gate stays visible under pytest capture.

The shared 30000/7500 balanced corpus and the repeated training runs are
session-scoped fixtures; the full gate takes tens of minutes on one core.
"""
import sys

import numpy as np
import pytest

from ptqq import analysis, baselines, features, learn, linalg, rng, states
from ptqq.learn import ObservableSet, TrainConfig
from ptqq.states import EnsembleSpec

K_VALUES = (16, 32, 64)
REPEATS = 10


_CAPTURE_MANAGER = None


@pytest.fixture(autouse=True)
def _capture_bypass(request):
    global _CAPTURE_MANAGER
    _CAPTURE_MANAGER = request.config.pluginmanager.getplugin("capturemanager")
    yield


def _report(num, name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    line = f"[{tag}] criterion {num:2d}: {name}"
    if detail:
        line += f"  ({detail})"
    # print through pytest's fd-level capture so the line reaches the console
    if _CAPTURE_MANAGER is not None:
        with _CAPTURE_MANAGER.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, file=sys.__stdout__, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# shared corpora

@pytest.fixture(scope="session")
def train_ds():
    return states.balanced_dataset([0, 1, 2], 10_000, seed=101,
                                   attempt_budget=40_000_000)


@pytest.fixture(scope="session")
def test_ds():
    return states.balanced_dataset([0, 1, 2], 2_500, seed=202,
                                   attempt_budget=20_000_000)


@pytest.fixture(scope="session")
def cmw_train(train_ds):
    # pairs are prefix-nested, so the k=64 matrix contains every smaller k
    feats, _ = features.cmw_features_batch(train_ds.rhos, features.cmw_config(64))
    return feats


@pytest.fixture(scope="session")
def cmw_test(test_ds):
    feats, _ = features.cmw_features_batch(test_ds.rhos, features.cmw_config(64))
    return feats


@pytest.fixture(scope="session")
def classification_runs(train_ds, test_ds, cmw_train, cmw_test):
    """10 repeats of ann-learned and ann-cmw at each k in K_VALUES."""
    runs = {"learned": {}, "cmw": {}}
    for k in K_VALUES:
        for variant in ("learned", "cmw"):
            scores, per_class = [], []
            for r in range(REPEATS):
                config = TrainConfig(k=k, copies=1, seed=1000 + r)
                if variant == "learned":
                    result = learn.train_learned(train_ds.rhos, train_ds.labels,
                                                 config)
                    metrics = learn.evaluate(result, test_ds.labels,
                                             rhos=test_ds.rhos)
                else:
                    result = learn.train_fixed(cmw_train, train_ds.labels, config)
                    metrics = learn.evaluate(result, test_ds.labels,
                                             x=cmw_test[:, :k])
                scores.append(metrics["macro_f1"])
                per_class.append(metrics["per_class_f1"])
            runs[variant][k] = {"scores": np.array(scores), "per_class": per_class}
    return runs


# ---------------------------------------------------------------------------
# criteria

def test_criterion_01_ensemble_frequency_table():
    n = 100_000
    haar = states.ensemble_stats(EnsembleSpec("haar_pure", seed=11), n)
    hs = states.ensemble_stats(EnsembleSpec("hilbert_schmidt", seed=12), n)
    bures = states.ensemble_stats(EnsembleSpec("bures", seed=13), n)
    checks = [
        haar["probs"][1] == 1.0,
        abs(hs["probs"][1] - 0.648) <= 0.006,
        abs(hs["probs"][2] - 0.350) <= 0.006,
        abs(hs["probs"][0] - 0.00125) <= 0.0005,
        abs(bures["probs"][2] - 0.755) <= 0.006,
        abs(bures["probs"][1] - 0.245) <= 0.006,
    ]
    _report(1, "ensemble frequency table", all(checks),
            f"HS P={np.round(hs['probs'], 5)}, Bures P={np.round(bures['probs'], 5)}")


def test_criterion_02_labeling_bound():
    total, violations = 0, 0
    for kind in states.ENSEMBLES:
        spec = EnsembleSpec(kind, seed=21, n_mix=4)
        st = states.ensemble_stats(spec, 200_000)
        total += st["n"]
        violations += st["bound_violations"]
    _report(2, "no class beyond the PT bound", total >= 1_000_000 and violations == 0,
            f"{total} states, {violations} violations")


def test_criterion_03_mixture_extremes():
    n = 5000
    pure = states.sample_states(EnsembleSpec("mixture", seed=31, n_mix=1), n)
    two = states.sample_states(EnsembleSpec("mixture", seed=32, n_mix=2), n)
    ok = (np.all(states.label_states(pure) == 1)
          and np.all(states.label_states(two) == 2))
    _report(3, "mixture extremes n=1 and n=2", ok, f"{n} samples each")


def test_criterion_04_transition_crossing():
    alpha8 = states.transition_crossing(cutoff=1e-8, seed=41)
    alpha6 = states.transition_crossing(cutoff=1e-6, seed=41, lo=1e-8, hi=1e-3,
                                        points=40)
    in_window = 2e-8 <= 1.0 - alpha8 <= 3e-7
    shifted = alpha6 < alpha8
    _report(4, "mixing-parameter transition", in_window and shifted,
            f"1-alpha = {1 - alpha8:.3g} at cutoff 1e-8, {1 - alpha6:.3g} at 1e-6")


def test_criterion_05_sic_povm():
    povm = features.sic_povm_d4()
    v = povm.vectors
    gram2 = np.abs(v @ v.conj().T) ** 2
    off = np.max(np.abs(gram2[~np.eye(16, dtype=bool)] - 0.2))
    frame = np.max(np.abs(np.einsum("pi,pj->ij", v, v.conj()) / 4.0 - np.eye(4)))
    _report(5, "SIC overlaps and resolution of identity",
            off <= 1e-9 and frame <= 1e-9,
            f"overlap dev {off:.2e}, frame dev {frame:.2e}")


def test_criterion_06_gradient_suite():
    g = np.random.default_rng(61)
    eps, worst = 1e-6, 0.0
    ok = True
    # feature layer: 100 random (state, observable, entry) instances
    for i in range(100):
        rho = states.hilbert_schmidt_random(g=rng.stream(600 + i, 0))
        obs = learn.random_observables(2, copies=1, seed=600 + i)
        d_re, d_im = learn.feature_gradients(rho, obs)
        idx = g.integers(obs.k)
        r, c = g.integers(8, size=2)
        for part, grad in ((1.0, d_re), (1j, d_im)):
            bump = obs.raw.copy()
            bump[idx, r, c] += part * eps
            plus = learn.learned_features(rho, ObservableSet(bump, 1))[idx]
            bump[idx, r, c] -= 2 * part * eps
            minus = learn.learned_features(rho, ObservableSet(bump, 1))[idx]
            fd = (plus - minus) / (2 * eps)
            err = abs(grad[idx, r, c] - fd) / max(abs(fd), 1e-3)
            worst = max(worst, err)
            ok = ok and err <= 1e-5
    # network: 100 random parameter spot checks
    for i in range(100):
        x = g.standard_normal((8, 6))
        y = g.integers(3, size=8)
        model = learn.mlp_init((6, 9, 3), classes=(0, 1, 2), seed=700 + i)
        cache = {}
        probs = learn.mlp_forward(model, x, cache)
        _, gw, gb, _ = learn.mlp_backward(model, cache, probs, y)

        def loss_at():
            p = learn.mlp_forward(model, x)
            return -np.mean(np.log(p[np.arange(8), y]))

        layer = int(g.integers(2))
        arrs, grads = ((model.weights, gw), (model.biases, gb))[g.integers(2)]
        a = arrs[layer]
        idx = tuple(g.integers(s) for s in a.shape)
        orig = a[idx]
        a[idx] = orig + eps
        up = loss_at()
        a[idx] = orig - eps
        dn = loss_at()
        a[idx] = orig
        fd = (up - dn) / (2 * eps)
        err = abs(grads[layer][idx] - fd) / max(abs(fd), 1e-3)
        worst = max(worst, err)
        ok = ok and err <= 1e-5
    _report(6, "gradients match finite differences", ok, f"worst rel err {worst:.2e}")


def test_criterion_07_desk_scale_classification(classification_runs):
    learned = classification_runs["learned"]
    cmw = classification_runs["cmw"]
    means = {k: learned[k]["scores"].mean() for k in K_VALUES}
    stds = {k: learned[k]["scores"].std() for k in K_VALUES}
    a_ok = means[64] >= 0.60
    # the learned model must beat the fixed features at every k, with a
    # clear margin from k=32 up; at k=16 the reference results themselves
    # put the two within 0.01 of each other (16 linear functionals are a
    # representational ceiling), so only strict improvement is required there
    gaps = {k: means[k] - cmw[k]["scores"].mean() for k in K_VALUES}
    b_ok = gaps[16] > 0.0 and gaps[32] >= 0.03 and gaps[64] >= 0.03
    orderings = sum(1 for pc in learned[64]["per_class"]
                    if pc[0] > pc[2] > pc[1])
    c_ok = orderings >= 8
    d_ok = (means[32] >= means[16] - stds[16]
            and means[64] >= means[32] - stds[32])
    gap_txt = [round(gaps[k], 3) for k in K_VALUES]
    _report(7, "desk-scale 3-class classification",
            a_ok and b_ok and c_ok and d_ok,
            f"learned F1 {means[64]:.3f}, gaps {gap_txt}, ordering {orderings}/10")


def test_criterion_08_binary_tasks(train_ds, test_ds):
    # product vs NPT: trivially separable within 20 epochs
    products = states.sample_states(EnsembleSpec("product", seed=81), 2000)
    npt_idx = np.where(train_ds.labels >= 1)[0][:2000]
    rhos = np.vstack([products, train_ds.rhos[npt_idx]])
    y = np.array([0] * 2000 + [1] * 2000)
    order = rng.stream(82, 0).permutation(4000)
    rhos, y = rhos[order], y[order]
    config = TrainConfig(k=64, copies=1, epochs=20, patience=20, seed=83)
    result = learn.train_learned(rhos[:3000], y[:3000], config)
    easy = learn.evaluate(result, y[3000:], rhos=rhos[3000:])["accuracy"]
    # NPT1 vs NPT2: near chance even with learned observables
    tr_idx = np.concatenate([np.where(train_ds.labels == c)[0][:2250]
                             for c in (1, 2)])
    te_idx = np.concatenate([np.where(test_ds.labels == c)[0][:750]
                             for c in (1, 2)])
    config = TrainConfig(k=64, copies=1, seed=84)
    result = learn.train_learned(train_ds.rhos[tr_idx], train_ds.labels[tr_idx],
                                 config)
    hard = learn.evaluate(result, test_ds.labels[te_idx],
                          rhos=test_ds.rhos[te_idx])["accuracy"]
    ok = easy >= 0.90 and 0.45 <= hard <= 0.60
    _report(8, "binary tasks", ok,
            f"product-vs-NPT acc {easy:.3f}, NPT1-vs-NPT2 acc {hard:.3f}")


def test_criterion_09_baselines(train_ds, test_ds, cmw_train, cmw_test):
    tr_idx = np.concatenate([np.where(train_ds.labels == c)[0][:1500]
                             for c in (0, 1, 2)])
    te_idx = np.concatenate([np.where(test_ds.labels == c)[0][:500]
                             for c in (0, 1, 2)])
    x_tr, y_tr = cmw_train[tr_idx], train_ds.labels[tr_idx]
    x_te, y_te = cmw_test[te_idx], test_ds.labels[te_idx]
    scores = {}
    for name, trainer, grid in (
            ("svm", baselines.train_svm, baselines.SVM_GRID_DEFAULT),
            ("rf", baselines.train_rf, baselines.RF_GRID_DEFAULT)):
        best, _ = baselines.grid_search(trainer, x_tr, y_tr, grid, seed=91)
        model = trainer(x_tr, y_tr, **best)
        pred = model.predict(x_te)
        scores[name] = learn.macro_f1(y_te, pred, 3)
    ok = (0.51 <= scores["svm"] <= 0.65 and 0.44 <= scores["rf"] <= 0.58
          and scores["svm"] >= scores["rf"])
    _report(9, "grid-searched SVM and RF baselines", ok,
            f"SVM F1 {scores['svm']:.3f}, RF F1 {scores['rf']:.3f}")


def _charpoly_eigvals(h):
    """Independent 4x4 Hermitian eigenvalues via Faddeev-LeVerrier + roots."""
    n = h.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[0] = 1.0
    m = np.zeros_like(h)
    for k in range(1, n + 1):
        m = h @ m + coeffs[k - 1] * np.eye(n)
        coeffs[k] = -np.trace(h @ m).real / k
    return np.sort(np.roots(coeffs).real)


def test_criterion_10_property_suite():
    g = np.random.default_rng(105)
    spec = EnsembleSpec("hilbert_schmidt", seed=106)
    rhos = states.sample_states(spec, 200)
    checks = []
    # Bloch roundtrip
    worst = max(np.max(np.abs(analysis.bloch_reconstruct(analysis.bloch_decompose(r))
                              - r)) for r in rhos[:50])
    checks.append(worst <= 1e-12)
    # PT spectrum side-independence
    for rho in rhos[:50]:
        va = np.linalg.eigvalsh(linalg.partial_transpose(rho, side="A"))
        vb = np.linalg.eigvalsh(linalg.partial_transpose(rho, side="B"))
        checks.append(np.max(np.abs(va - vb)) <= 1e-10)
    # CMW range and maximally mixed value
    feats, _ = features.cmw_features_batch(rhos, features.cmw_config(64))
    checks.append(np.all(feats >= 0.0) and np.all(feats <= 1.0))
    mm = features.cmw_features(np.eye(8, dtype=complex) / 8.0,
                               features.cmw_config(16))[0]
    checks.append(np.max(np.abs(mm - 0.25)) <= 1e-12)
    # eigensolver vs characteristic-polynomial oracle on 4x4
    for _ in range(100):
        z = g.standard_normal((4, 4)) + 1j * g.standard_normal((4, 4))
        h = (z + z.conj().T) / 2.0
        checks.append(np.max(np.abs(np.linalg.eigvalsh(h) - _charpoly_eigvals(h)))
                      <= 1e-8)
    # sum of squared singular values equals the squared correlation norm
    tab = analysis.svd_scatter(rhos[:50], states.label_states(rhos[:50]))
    for rho, row in zip(rhos[:50], tab):
        t = analysis.bloch_decompose(rho).t
        checks.append(abs(np.sum(row[1:] ** 2) - np.sum(t ** 2)) <= 1e-10)
    _report(10, "always-on property suite", all(checks),
            f"{len(checks)} checks")


def test_criterion_11_geometry_analyses(train_ds):
    # correlation strength separates NPT2 from NPT0
    pair = states.balanced_dataset([0, 2], 2000, seed=111,
                                   attempt_budget=20_000_000)
    tab = analysis.svd_scatter(pair.rhos, pair.labels)
    s1_0 = tab[tab[:, 0] == 0][:, 1]
    s1_2 = tab[tab[:, 0] == 2][:, 1]
    sep = (s1_2.mean() - s1_0.mean()) / np.sqrt(
        s1_0.var() / len(s1_0) + s1_2.var() / len(s1_2))
    svd_ok = sep >= 5.0
    # pooled purity strictly decreasing with mixture size
    prof = analysis.mixture_profile(range(1, 16), 2000, seed=112)
    pooled = [np.average(prof[prof[:, 0] == n][:, 9],
                         weights=prof[prof[:, 0] == n][:, 2])
              for n in range(1, 16)]
    purity_ok = bool(np.all(np.diff(pooled) < 0.0))
    # t-SNE separates product states better than NPT1.  Embed all four
    # populations: judged against NPT1 alone, NPT1 would look artificially
    # cohesive; its poor silhouette comes from overlapping the other NPT
    # classes while the product cluster stays apart.
    products = states.sample_states(EnsembleSpec("product", seed=113), 1000)
    groups = [products] + [train_ds.rhos[np.where(train_ds.labels == c)[0][:1000]]
                           for c in (0, 1, 2)]
    feats = [features.cmw_features_batch(g, features.cmw_config(64))[0]
             for g in groups]
    emb = analysis.tsne(np.vstack(feats), perplexity=30,
                        iterations=400, seed=114)
    labels = np.repeat(np.arange(4), 1000)
    sil = analysis.silhouette_values(emb, labels)
    tsne_ok = sil[labels == 0].mean() > sil[labels == 2].mean()
    _report(11, "geometry analyses", svd_ok and purity_ok and tsne_ok,
            f"s1 sep {sep:.1f} sigma, silhouettes {sil[labels == 0].mean():.2f}"
            f" vs {sil[labels == 2].mean():.2f}")


def test_criterion_12_rank2_embedding(train_ds):
    rhos = train_ds.rhos[np.where(train_ds.labels == 1)[0][:1000]]
    embeddable = all(analysis.rank2_embedding_exists(rho)[0] for rho in rhos)
    # constructed embedded singlets project back to an NPT two-qubit state
    g = rng.stream(121, 0)
    projected_npt = True
    for _ in range(20):
        basis = np.linalg.qr(g.standard_normal((4, 2))
                             + 1j * g.standard_normal((4, 2)))[0]
        psi = (np.kron([1, 0], basis[:, 1]) - np.kron([0, 1], basis[:, 0]))
        psi = psi / np.sqrt(2.0)
        rho = np.outer(psi, psi.conj())
        ok, p_b = analysis.rank2_embedding_exists(rho)
        projected_npt = projected_npt and ok
        eff = analysis.project_rank2(rho, p_b)
        pt = eff.reshape(2, 2, 2, 2).transpose(2, 1, 0, 3).reshape(4, 4)
        projected_npt = projected_npt and np.min(np.linalg.eigvalsh(pt)) < -1e-8
    _report(12, "rank-two embedding of the negative eigenspace",
            embeddable and projected_npt, "1000 states + 20 singlets")
