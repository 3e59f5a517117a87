"""Geometric diagnostics for qubit-ququart states.

Generalized Bloch decomposition over sigma_i x Lambda_a generators,
correlation-matrix SVD scatter, Bloch statistics versus mixture size,
an exact t-SNE embedding, and the negative-eigenspace / rank-two
Bob-projection analysis.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import rng, states
from .linalg import (DIMS_2x4, eigh_full_batch, herm_eig, kron,
                     partial_transpose, svd_rect, svd_rect_batch)

RANK_THRESHOLD = 1e-10
PROJECTION_EPS = 1e-12


class ParameterError(ValueError):
    """An analysis parameter is out of its valid range."""


class DegenerateProjectionError(RuntimeError):
    """The rank-two projection annihilates the state."""


@dataclass(frozen=True)
class GellMannBasis:
    sigma: np.ndarray  # (3, 2, 2) Pauli matrices
    lam: np.ndarray    # (15, 4, 4), Tr(lam_a lam_b) = 2 delta_ab


@dataclass(frozen=True)
class BlochDecomposition:
    a: np.ndarray  # (3,) qubit Bloch vector
    b: np.ndarray  # (15,) ququart Bloch vector
    t: np.ndarray  # (3, 15) correlation matrix


@dataclass(frozen=True)
class NegativeEigenspace:
    eigenvalues: np.ndarray   # (xi,) ascending, all < -cutoff
    eigenvectors: np.ndarray  # (8, xi), orthonormal columns
    projector: np.ndarray     # (8, 8) sum of rank-1 projectors


# ---------------------------------------------------------------------------
# generators

@lru_cache(maxsize=1)
def gell_mann_su4():
    """Generalized Gell-Mann generators of su(4) plus the Paulis.

    Index table for lam (0-based): 0..5 symmetric off-diagonal for the
    pairs (0,1),(0,2),(0,3),(1,2),(1,3),(2,3); 6..11 antisymmetric for the
    same pairs; 12..14 diagonal diag(1,-1,0,0)/sqrt(1), diag(1,1,-2,0)/sqrt(3),
    diag(1,1,1,-3)/sqrt(6).
    """
    sigma = np.array([[[0, 1], [1, 0]],
                      [[0, -1j], [1j, 0]],
                      [[1, 0], [0, -1]]], dtype=np.complex128)
    pairs = [(j, k) for j in range(4) for k in range(j + 1, 4)]
    lam = []
    for j, k in pairs:
        m = np.zeros((4, 4), dtype=np.complex128)
        m[j, k] = m[k, j] = 1.0
        lam.append(m)
    for j, k in pairs:
        m = np.zeros((4, 4), dtype=np.complex128)
        m[j, k] = -1j
        m[k, j] = 1j
        lam.append(m)
    for l in range(1, 4):
        d = np.zeros(4)
        d[:l] = 1.0
        d[l] = -l
        lam.append(np.diag(d).astype(np.complex128) * np.sqrt(2.0 / (l * (l + 1))))
    return GellMannBasis(sigma, np.array(lam))


@lru_cache(maxsize=1)
def _product_generators():
    """Stacks sigma_i x I4 (3,8,8), I2 x lam_a (15,8,8), sigma_i x lam_a (45,8,8)."""
    basis = gell_mann_su4()
    eye2, eye4 = np.eye(2), np.eye(4)
    ga = np.array([kron(s, eye4) for s in basis.sigma])
    gb = np.array([kron(eye2, l) for l in basis.lam])
    gab = np.array([kron(s, l) for s in basis.sigma for l in basis.lam])
    return ga, gb, gab


# ---------------------------------------------------------------------------
# Bloch decomposition

def bloch_batch(rhos):
    """Hilbert-Schmidt projections for a (N, 8, 8) batch.

    Returns (a (N,3), b (N,15), t (N,3,15)) with a_i = Tr[rho sigma_i x I],
    b_a = Tr[rho I x lam_a], t_ia = Tr[rho sigma_i x lam_a].
    """
    rhos = np.asarray(rhos, dtype=np.complex128)
    ga, gb, gab = _product_generators()
    a = np.einsum("bij,aji->ba", rhos, ga).real
    b = np.einsum("bij,aji->ba", rhos, gb).real
    t = np.einsum("bij,aji->ba", rhos, gab).real.reshape(len(rhos), 3, 15)
    return a, b, t


def bloch_decompose(rho):
    a, b, t = bloch_batch(np.asarray(rho)[None])
    return BlochDecomposition(a[0], b[0], t[0])


def bloch_reconstruct(dec):
    """Invert the decomposition; exact for any Hermitian unit-trace input."""
    basis = gell_mann_su4()
    eye2, eye4 = np.eye(2), np.eye(4)
    rho = np.eye(8, dtype=np.complex128) / 8.0
    # HS norms: ||sigma x I||^2 = 8, ||I x lam||^2 = ||sigma x lam||^2 = 4
    rho += np.einsum("i,iuv->uv", dec.a, [kron(s, eye4) for s in basis.sigma]) / 8.0
    rho += np.einsum("a,auv->uv", dec.b, [kron(eye2, l) for l in basis.lam]) / 4.0
    sl = np.array([kron(s, l) for s in basis.sigma for l in basis.lam])
    rho += np.einsum("c,cuv->uv", dec.t.reshape(45), sl) / 4.0
    return rho


def frobenius_norm(t):
    return float(np.sqrt(np.sum(np.asarray(t, dtype=np.float64) ** 2)))


# ---------------------------------------------------------------------------
# ensemble-level tables

def svd_scatter(rhos, labels):
    """Per-state singular values of T; rows (xi, s1, s2, s3), s1 >= s2 >= s3."""
    _, _, t = bloch_batch(rhos)
    s = svd_rect_batch(t)
    return np.column_stack([np.asarray(labels, dtype=np.float64), s])


def save_table(path, header, rows):
    """CSV with a comma-separated header line and %.17g rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def mixture_profile(n_range=range(1, 16), samples_per_n=5000, seed=0,
                    cutoff=states.DEFAULT_CUTOFF):
    """Bloch statistics of mixtures of n pure states, split by NPT class.

    Returns rows (n, xi, count, mean |a|^2, std, mean |b|^2, std,
    mean ||T||_F^2, std, mean purity, std); classes with no occupancy at a
    given n are simply absent.
    """
    rows = []
    for n in n_range:
        if not 1 <= n <= 15:
            raise ParameterError("mixture size must lie in [1, 15]")
        g = rng.stream(seed, 1000 + n)
        rhos = np.array([states.mixture_state(n, g) for _ in range(samples_per_n)])
        labels = states.label_states(rhos, cutoff)
        a, b, t = bloch_batch(rhos)
        a2 = np.sum(a ** 2, axis=1)
        b2 = np.sum(b ** 2, axis=1)
        t2 = np.sum(t.reshape(len(rhos), 45) ** 2, axis=1)
        purity = np.einsum("bij,bji->b", rhos, rhos).real
        for xi in range(states.MAX_XI + 1):
            sel = labels == xi
            if not np.any(sel):
                continue
            row = [n, xi, int(sel.sum())]
            for stat in (a2, b2, t2, purity):
                row += [float(stat[sel].mean()), float(stat[sel].std())]
            rows.append(row)
    return np.array(rows)


# ---------------------------------------------------------------------------
# exact t-SNE

def _perplexity_probs(d2, perplexity, tol=1e-5, max_iter=64):
    """Row-stochastic Gaussian affinities with per-point entropy matched
    to log(perplexity) by bisection on the precision beta."""
    n = d2.shape[0]
    p = np.zeros((n, n))
    target = np.log(perplexity)
    for i in range(n):
        di = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-di * beta)
            sw = w.sum()
            if sw <= 0:
                entropy = 0.0
            else:
                pi = w / sw
                entropy = -np.sum(pi * np.log(np.maximum(pi, 1e-300)))
            if abs(entropy - target) < tol:
                break
            if entropy > target:
                lo = beta
                beta = beta * 2.0 if np.isinf(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        else:
            if not np.isfinite(entropy):
                raise ParameterError("perplexity search failed to bracket")
        w = np.exp(-di * beta)
        pi = w / max(w.sum(), 1e-300)
        p[i, np.arange(n) != i] = pi
    return p


def tsne(features, perplexity=30.0, iterations=1000, seed=0, learning_rate=200.0,
         early_exaggeration=12.0, exaggeration_iters=250, return_history=False):
    """Exact O(N^2) t-SNE embedding into two dimensions.

    Deterministic given (features, parameters, seed).  Gradient descent with
    momentum 0.5 switching to 0.8 after the early-exaggeration phase; steps
    that would raise the KL divergence after that phase are backtracked.
    With return_history=True also returns the post-exaggeration KL trace.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n > 10_000:
        raise ParameterError("exact variant limited to N <= 10^4")
    if not perplexity < n / 3:
        raise ParameterError("perplexity must be < N/3")
    # duplicate rows have identical affinities; embed the unique rows and
    # map back so duplicates land exactly on the same point
    uniq, inverse = np.unique(x, axis=0, return_inverse=True)
    if len(uniq) < n:
        out = tsne(uniq, perplexity, iterations, seed, learning_rate,
                   early_exaggeration, exaggeration_iters, return_history)
        if return_history:
            return out[0][inverse], out[1]
        return out[inverse]

    d2 = np.sum(x ** 2, axis=1)[:, None] + np.sum(x ** 2, axis=1)[None, :] - 2 * x @ x.T
    np.fill_diagonal(d2, 0.0)
    p_cond = _perplexity_probs(np.maximum(d2, 0.0), perplexity)
    p = (p_cond + p_cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    g = rng.stream(seed, 2000)
    y = g.standard_normal((n, 2)) * 1e-4
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    eta = learning_rate
    kl_prev = np.inf
    history = []
    for it in range(iterations):
        pe = p * early_exaggeration if it < exaggeration_iters else p
        yd2 = np.sum(y ** 2, axis=1)[:, None] + np.sum(y ** 2, axis=1)[None, :] \
            - 2 * y @ y.T
        num = 1.0 / (1.0 + yd2)
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        if it >= exaggeration_iters:
            kl = float(np.sum(p * np.log(p / q)))
            if kl > kl_prev + 1e-9:
                # backtrack: the overshoot came from momentum, restart it
                # with a damped rate so the recorded divergence stays monotone
                y = y_prev
                update[:] = 0.0
                eta *= 0.5
                num, q = num_prev, q_prev
            else:
                kl_prev = kl
            history.append(kl_prev)
            y_prev, num_prev, q_prev = y, num, q
        w = (pe - q) * num
        grad = 4.0 * ((np.diag(w.sum(axis=1)) - w) @ y)
        momentum = 0.5 if it < exaggeration_iters else 0.8
        gains = np.where(np.sign(grad) != np.sign(update), gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, 0.01)
        update = momentum * update - eta * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
    if return_history:
        return y, np.array(history)
    return y


def silhouette_values(points, labels):
    """Per-point silhouette coefficient (b - a) / max(a, b), O(N^2)."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(points)
    d = np.sqrt(np.maximum(
        np.sum(points ** 2, axis=1)[:, None] + np.sum(points ** 2, axis=1)[None, :]
        - 2 * points @ points.T, 0.0))
    classes = sorted(set(labels.tolist()))
    vals = np.zeros(n)
    for i in range(n):
        same = (labels == labels[i])
        same[i] = False
        if not np.any(same):
            continue
        a = d[i, same].mean()
        b = min(d[i, labels == c].mean() for c in classes if c != labels[i])
        vals[i] = (b - a) / max(a, b)
    return vals


# ---------------------------------------------------------------------------
# negative eigenspace and rank-two Bob projections

def negative_eigenspace(rho, cutoff=states.DEFAULT_CUTOFF, dims=DIMS_2x4):
    """Orthonormal eigenvectors of the partial transpose below -cutoff."""
    pt = partial_transpose(np.asarray(rho, dtype=np.complex128), dims)
    vals, vecs = eigh_full_batch(pt[None])
    vals, vecs = vals[0], vecs[0]
    neg = vals < -cutoff
    v = vecs[:, neg]
    proj = v @ v.conj().T
    return NegativeEigenspace(vals[neg], v, proj)


def bob_support_dim(vectors, dims=DIMS_2x4, threshold=RANK_THRESHOLD):
    """Dimension of the span of the Bob components of the given vectors.

    Each |psi> on C^2 x C^4 is split as |0>|u> + |1>|v>; the returned value
    is the numerical rank of the stack of all u, v.
    """
    vectors = np.asarray(vectors, dtype=np.complex128)
    if vectors.size == 0:
        return 0
    comps = vectors.T.reshape(-1, dims.m, dims.n).reshape(-1, dims.n)
    s = np.linalg.svd(comps, compute_uv=False)
    return int(np.sum(s > threshold * s[0])) if s[0] > 0 else 0


def rank2_embedding_exists(rho, cutoff=states.DEFAULT_CUTOFF, dims=DIMS_2x4):
    """Whether one rank-two Bob projector captures every negative eigenvector.

    Returns (exists, p_b) with p_b a rank-two 4x4 orthogonal projector onto
    a space containing U_B when it exists, else (False, None).
    """
    space = negative_eigenspace(rho, cutoff, dims)
    vectors = space.eigenvectors
    if vectors.size == 0:
        p_b = np.zeros((dims.n, dims.n), dtype=np.complex128)
        p_b[0, 0] = p_b[1, 1] = 1.0
        return True, p_b
    comps = vectors.T.reshape(-1, dims.m, dims.n).reshape(-1, dims.n)
    u, s, vh = np.linalg.svd(comps)
    dim = int(np.sum(s > RANK_THRESHOLD * s[0]))
    if dim > 2:
        return False, None
    basis = vh[:2].conj().T  # pad with the next right-singular vector if dim < 2
    return True, basis @ basis.conj().T


def project_rank2(rho, p_b, dims=DIMS_2x4):
    """Effective two-qubit state (I x P_B) rho (I x P_B), renormalized.

    Expressed on C^2 x C^2 in an orthonormal basis of range(P_B).
    """
    rho = np.asarray(rho, dtype=np.complex128)
    p_b = np.asarray(p_b, dtype=np.complex128)
    dec = herm_eig(p_b)
    basis = dec.eigenvectors[:, dec.eigenvalues > 0.5]  # (4, 2)
    if basis.shape[1] != 2:
        raise DegenerateProjectionError("projector is not rank two")
    iso = np.kron(np.eye(dims.m), basis)  # (8, 4)
    eff = iso.conj().T @ rho @ iso
    norm = np.trace(eff).real
    if norm <= PROJECTION_EPS:
        raise DegenerateProjectionError("projection probability vanishes")
    return eff / norm
