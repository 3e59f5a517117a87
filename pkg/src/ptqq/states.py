"""Random qubit-ququart ensembles and partial-transpose labeling.

All samplers are reproducible: sample index i draws from the Philox stream
of its fixed-size block (seed, i // BLOCK), so the stream content does not
depend on how the work is chunked across workers.
"""
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import matio, rng
from .linalg import DIMS_2x4, BipartiteDims, eigvalsh_batch, partial_transpose_batch

DEFAULT_CUTOFF = 1e-8
BLOCK = 4096
MAX_XI = 3  # (m-1)(n-1) for 2x4

ENSEMBLES = ("haar_pure", "mixture", "hilbert_schmidt", "bures", "product")


class UnreachableClassError(RuntimeError):
    """Rejection sampling exhausted its draw budget for a class."""


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    seed: int = 0
    cutoff: float = DEFAULT_CUTOFF
    n_mix: int = 1  # only used by kind="mixture"

    def __post_init__(self):
        if self.kind not in ENSEMBLES:
            raise ValueError(f"unknown ensemble {self.kind!r}; choose from {ENSEMBLES}")
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.n_mix < 1:
            raise ValueError("mixture size must be >= 1")


@dataclass
class Dataset:
    rhos: np.ndarray    # (N, 8, 8) complex
    labels: np.ndarray  # (N,) int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)


# ---------------------------------------------------------------------------
# single-state samplers (convenience API; batched versions below do the work)

def _haar_vectors(g, count, dim):
    z = g.standard_normal((count, dim)) + 1j * g.standard_normal((count, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def haar_pure(dims=DIMS_2x4, g=None):
    """Rank-1 projector onto a Haar-random pure state."""
    g = g or np.random.default_rng()
    psi = _haar_vectors(g, 1, dims.total)[0]
    return np.outer(psi, psi.conj())


def mixture_state(n, g=None, dims=DIMS_2x4):
    """Convex combination of n Haar-random pure states with uniform weights."""
    if n < 1:
        raise ValueError("mixture size must be >= 1")
    g = g or np.random.default_rng()
    psis = _haar_vectors(g, n, dims.total)
    p = g.uniform(0.0, 1.0, n)
    p /= p.sum()
    return np.einsum("b,bi,bj->ij", p, psis, psis.conj())


def hilbert_schmidt_random(g=None, dims=DIMS_2x4):
    """rho = A A^dag / Tr(A A^dag), A complex Ginibre."""
    g = g or np.random.default_rng()
    d = dims.total
    a = g.standard_normal((d, d)) + 1j * g.standard_normal((d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def _haar_unitary(g, d):
    z = g.standard_normal((d, d)) + 1j * g.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def bures_random(g=None, dims=DIMS_2x4):
    """rho = (I+U) G G^dag (I+U)^dag / Tr, G Ginibre, U Haar unitary."""
    g = g or np.random.default_rng()
    d = dims.total
    gin = g.standard_normal((d, d)) + 1j * g.standard_normal((d, d))
    u = _haar_unitary(g, d)
    w = (np.eye(d) + u) @ gin
    rho = w @ w.conj().T
    return rho / np.trace(rho).real


def product_random(g=None, dims=DIMS_2x4):
    """Kronecker product of independent Hilbert-Schmidt-random factors."""
    g = g or np.random.default_rng()
    ra = _hs_square(g, dims.m)
    rb = _hs_square(g, dims.n)
    return np.kron(ra, rb)


def _hs_square(g, d):
    a = g.standard_normal((d, d)) + 1j * g.standard_normal((d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def pt_negative_count(rho, cutoff=DEFAULT_CUTOFF, dims=DIMS_2x4):
    """Number of partial-transpose eigenvalues below -cutoff."""
    vals = eigvalsh_batch(partial_transpose_batch(np.asarray(rho)[None], dims))[0]
    return int(np.sum(vals < -cutoff))


# ---------------------------------------------------------------------------
# batched generation

def _block_generators(seed, start, count):
    """Yield (generator, block_start, block_count) covering [start, start+count)."""
    idx = start
    end = start + count
    while idx < end:
        block = idx // BLOCK
        hi = min(end, (block + 1) * BLOCK)
        g = rng.stream(seed, block)
        lo_in_block = idx - block * BLOCK
        yield g, lo_in_block, hi - idx
        idx = hi


def _draw_block(spec, g, total_in_block, dims):
    """Draw a full block's worth of states from one stream."""
    d = dims.total
    kind = spec.kind
    if kind == "haar_pure":
        psi = _haar_vectors(g, total_in_block, d)
        return np.einsum("bi,bj->bij", psi, psi.conj())
    if kind == "mixture":
        n = spec.n_mix
        psis = _haar_vectors(g, total_in_block * n, d).reshape(total_in_block, n, d)
        p = g.uniform(0.0, 1.0, (total_in_block, n))
        p /= p.sum(axis=1, keepdims=True)
        return np.einsum("bn,bni,bnj->bij", p, psis, psis.conj())
    if kind == "hilbert_schmidt":
        a = g.standard_normal((total_in_block, d, d)) + 1j * g.standard_normal((total_in_block, d, d))
        rho = a @ a.conj().transpose(0, 2, 1)
        return rho / np.trace(rho, axis1=1, axis2=2).real[:, None, None]
    if kind == "bures":
        gin = g.standard_normal((total_in_block, d, d)) + 1j * g.standard_normal((total_in_block, d, d))
        z = g.standard_normal((total_in_block, d, d)) + 1j * g.standard_normal((total_in_block, d, d))
        q, r = np.linalg.qr(z)
        diag = np.diagonal(r, axis1=1, axis2=2)
        u = q * (diag / np.abs(diag))[:, None, :]
        w = (np.eye(d) + u) @ gin
        rho = w @ w.conj().transpose(0, 2, 1)
        return rho / np.trace(rho, axis1=1, axis2=2).real[:, None, None]
    if kind == "product":
        m, n = dims.m, dims.n
        a = g.standard_normal((total_in_block, m, m)) + 1j * g.standard_normal((total_in_block, m, m))
        ra = a @ a.conj().transpose(0, 2, 1)
        ra /= np.trace(ra, axis1=1, axis2=2).real[:, None, None]
        b = g.standard_normal((total_in_block, n, n)) + 1j * g.standard_normal((total_in_block, n, n))
        rb = b @ b.conj().transpose(0, 2, 1)
        rb /= np.trace(rb, axis1=1, axis2=2).real[:, None, None]
        return np.einsum("bij,bkl->bikjl", ra, rb).reshape(total_in_block, d, d)
    raise ValueError(f"unknown ensemble {kind!r}")


def sample_states(spec, count, start=0, dims=DIMS_2x4):
    """Draw `count` states at sample indices start..start+count-1."""
    out = np.empty((count, dims.total, dims.total), dtype=np.complex128)
    pos = 0
    for g, lo, c in _block_generators(spec.seed, start, count):
        block = _draw_block(spec, g, BLOCK, dims)
        out[pos:pos + c] = block[lo:lo + c]
        pos += c
    return out


def label_states(rhos, cutoff=DEFAULT_CUTOFF, dims=DIMS_2x4):
    """Negative-eigenvalue counts of the partial transpose, batched."""
    vals = eigvalsh_batch(partial_transpose_batch(rhos, dims))
    return np.sum(vals < -cutoff, axis=1).astype(np.int64)


def sample_dataset(spec, count, start=0, dims=DIMS_2x4):
    rhos = sample_states(spec, count, start, dims)
    labels = label_states(rhos, spec.cutoff, dims)
    meta = {"ensemble": spec.kind, "seed": spec.seed, "cutoff": spec.cutoff,
            "count": count, "start": start}
    if spec.kind == "mixture":
        meta["n_mix"] = spec.n_mix
    return Dataset(rhos, labels, meta)


# ---------------------------------------------------------------------------
# ensemble statistics and the NPT1 <-> NPT2 transition

def ensemble_stats(spec, n_samples, chunk=20000):
    """Frequencies of xi = 0..3 with binomial standard errors."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    counts = np.zeros(MAX_XI + 2, dtype=np.int64)  # slot 4 catches bound violations
    done = 0
    while done < n_samples:
        c = min(chunk, n_samples - done)
        labels = label_states(sample_states(spec, c, start=done), spec.cutoff)
        counts += np.bincount(np.minimum(labels, MAX_XI + 1), minlength=MAX_XI + 2)
        done += c
    probs = counts[: MAX_XI + 1] / n_samples
    se = np.sqrt(probs * (1.0 - probs) / n_samples)
    return {"probs": probs, "stderr": se, "n": n_samples,
            "bound_violations": int(counts[MAX_XI + 1])}


def transition_sample(alpha, g, cutoff=DEFAULT_CUTOFF, dims=DIMS_2x4):
    """Label of a two-term Haar mixture plus its 2nd-smallest PT eigenvalue.

    The eigenvalue is returned only when negative (before the cutoff rule).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    psi, phi = _haar_vectors(g, 2, dims.total)
    rho = alpha * np.outer(psi, psi.conj()) + (1 - alpha) * np.outer(phi, phi.conj())
    vals = eigvalsh_batch(partial_transpose_batch(rho[None], dims))[0]
    xi = int(np.sum(vals < -cutoff))
    second = float(vals[1]) if vals[1] < 0 else None
    return xi, second


def _transition_batch(alpha, g, count, cutoff, dims):
    psis = _haar_vectors(g, count, dims.total)
    phis = _haar_vectors(g, count, dims.total)
    rhos = alpha * np.einsum("bi,bj->bij", psis, psis.conj()) \
        + (1 - alpha) * np.einsum("bi,bj->bij", phis, phis.conj())
    return eigvalsh_batch(partial_transpose_batch(rhos, dims))


def transition_sweep(alpha_grid, samples_per_point, cutoff=DEFAULT_CUTOFF,
                     seed=0, dims=DIMS_2x4):
    """Monte Carlo class probabilities along a grid of mixing parameters.

    Returns one row per alpha: class probabilities with binomial standard
    errors plus mean/std of the second negative PT eigenvalue.
    """
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if alpha_grid.size == 0 or samples_per_point < 1:
        raise ValueError("need a nonempty grid and at least one sample per point")
    rows = []
    for j, alpha in enumerate(alpha_grid):
        g = rng.stream(seed, j)
        vals = _transition_batch(alpha, g, samples_per_point, cutoff, dims)
        labels = np.sum(vals < -cutoff, axis=1)
        probs = np.bincount(labels, minlength=MAX_XI + 1)[: MAX_XI + 1] / samples_per_point
        second = vals[:, 1][vals[:, 1] < 0]
        rows.append({
            "alpha": float(alpha),
            "probs": probs,
            "stderr": np.sqrt(probs * (1 - probs) / samples_per_point),
            "mean_second_neg": float(second.mean()) if second.size else 0.0,
            "std_second_neg": float(second.std()) if second.size else 0.0,
        })
    return rows


def transition_crossing(cutoff=DEFAULT_CUTOFF, seed=0, samples_per_point=2000,
                        points=25, lo=1e-9, hi=1e-6):
    """Estimate alpha where P(xi=1) crosses 50% by log-spaced bisection scan.

    Scans 1-alpha over [lo, hi] and log-interpolates the crossing of
    P(xi=1) = 0.5.
    """
    eps_grid = np.geomspace(lo, hi, points)
    p1 = np.empty(points)
    for j, eps in enumerate(eps_grid):
        g = rng.stream(seed, j)
        vals = _transition_batch(1.0 - eps, g, samples_per_point, cutoff, DIMS_2x4)
        labels = np.sum(vals < -cutoff, axis=1)
        p1[j] = np.mean(labels == 1)
    # p1 decreases from ~1 (eps ~ 0) to ~0 (eps large); find the 0.5 crossing
    for j in range(points - 1):
        if p1[j] >= 0.5 > p1[j + 1]:
            x0, x1 = np.log(eps_grid[j]), np.log(eps_grid[j + 1])
            y0, y1 = p1[j], p1[j + 1]
            x = x0 + (0.5 - y0) * (x1 - x0) / (y1 - y0)
            return 1.0 - float(np.exp(x))
    raise RuntimeError("no 50% crossing found in the scanned range")


# ---------------------------------------------------------------------------
# balanced datasets

def balanced_dataset(classes, per_class, policy="hilbert_schmidt", seed=0,
                     cutoff=DEFAULT_CUTOFF, attempt_budget=10_000_000,
                     dims=DIMS_2x4, return_draws=False):
    """Rejection-sample exactly per_class states for each requested class.

    policy: "hilbert_schmidt", "product", or "mixture_uniform" (mixture with
    n drawn uniformly from 1..15).  Draws are counted per class; a class
    that stays unfilled past attempt_budget draws raises.
    """
    classes = sorted(set(int(c) for c in classes))
    if not classes or any(c < 0 or c > MAX_XI for c in classes):
        raise ValueError(f"classes must be within 0..{MAX_XI}")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")

    need = {c: per_class for c in classes}
    got = {c: [] for c in classes}
    total_draws = 0
    chunk = 20000
    d = dims.total
    while any(need[c] > 0 for c in classes):
        if total_draws >= attempt_budget:
            missing = [c for c in classes if need[c] > 0]
            raise UnreachableClassError(
                f"classes {missing} unfilled after {total_draws} draws "
                f"(budget {attempt_budget})")
        if policy == "mixture_uniform":
            g = rng.stream(seed, 1_000_000 + total_draws // chunk)
            ns = g.integers(1, 16, chunk)
            rhos = np.empty((chunk, d, d), dtype=np.complex128)
            for n in range(1, 16):
                idx = np.where(ns == n)[0]
                if idx.size:
                    psis = _haar_vectors(g, idx.size * n, d).reshape(idx.size, n, d)
                    p = g.uniform(0, 1, (idx.size, n))
                    p /= p.sum(axis=1, keepdims=True)
                    rhos[idx] = np.einsum("bn,bni,bnj->bij", p, psis, psis.conj())
        else:
            spec = EnsembleSpec(policy, seed=seed, cutoff=cutoff)
            rhos = sample_states(spec, chunk, start=total_draws, dims=dims)
        labels = label_states(rhos, cutoff, dims)
        total_draws += chunk
        for c in classes:
            if need[c] > 0:
                idx = np.where(labels == c)[0][: need[c]]
                if idx.size:
                    got[c].append(rhos[idx])
                    need[c] -= idx.size

    rhos = np.concatenate([np.concatenate(got[c]) for c in classes])
    labels = np.repeat(classes, per_class).astype(np.int64)
    meta = {"policy": policy, "seed": seed, "cutoff": cutoff,
            "classes": classes, "per_class": per_class, "draws": total_draws}
    ds = Dataset(rhos, labels, meta)
    if return_draws:
        return ds, total_draws
    return ds


def shuffle_dataset(ds, seed=0):
    g = rng.stream(seed, 0)
    perm = g.permutation(len(ds))
    return Dataset(ds.rhos[perm], ds.labels[perm], dict(ds.meta))


# ---------------------------------------------------------------------------
# dataset files

def save_dataset_csv(path, ds):
    """CSV: index, xi, then 128 re/im-interleaved entries, row-major 8x8."""
    d = ds.rhos.shape[1]
    cols = ["index", "xi"] + [f"{p}{i}{j}" for i in range(d) for j in range(d)
                              for p in ("re", "im")]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i, (rho, xi) in enumerate(zip(ds.rhos, ds.labels)):
            flat = np.empty(2 * d * d)
            flat[0::2] = rho.real.ravel()
            flat[1::2] = rho.imag.ravel()
            fh.write(f"{i},{xi}," + ",".join(f"{v:.17g}" for v in flat) + "\n")


def load_dataset_csv(path):
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    labels = raw[:, 1].astype(np.int64)
    flat = raw[:, 2:]
    d = int(round(np.sqrt(flat.shape[1] // 2)))
    rhos = (flat[:, 0::2] + 1j * flat[:, 1::2]).reshape(-1, d, d)
    return Dataset(rhos, labels, {})


def save_dataset_binary(path, ds):
    """Concatenated PTCM blocks plus a sidecar JSON manifest."""
    matio.write_matrices(path, ds.rhos)
    manifest = dict(ds.meta)
    manifest["count"] = len(ds)
    manifest["labels"] = [int(x) for x in ds.labels]
    with open(str(path) + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_dataset_binary(path):
    rhos = np.array(matio.read_matrices(path))
    with open(str(path) + ".json") as fh:
        manifest = json.load(fh)
    labels = np.array(manifest.pop("labels"), dtype=np.int64)
    return Dataset(rhos, labels, manifest)
