"""Fixed collective-measurement features for qubit-ququart states.

The 16 local ququart projectors come from a Weyl-Heisenberg orbit of a
numerically optimized fiducial (d=4 SIC).  Feature P_xy is the conditional
probability of a two-copy singlet projection given local projections x, y.
"""
import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

from .linalg import kron, permute_factors

SIC_D = 4
SUPPORTED_K = (1, 8, 16, 32, 64, 136)
SWAP_CONVENTIONS = ("virtual_swap", "identity")
DEGENERATE_DENOMINATOR = 1e-14


class SicConstructionError(RuntimeError):
    """Fiducial optimization failed to reach the SIC residual target."""


@dataclass(frozen=True)
class SicPovm16:
    vectors: np.ndarray  # (16, 4) unit vectors

    def projector(self, i):
        v = self.vectors[i]
        return np.outer(v, v.conj())

    def hash(self):
        return hashlib.sha256(np.round(self.vectors, 12).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class CmwConfig:
    pairs: tuple  # ((x, y), ...) 0-based indices into the POVM
    k: int


# ---------------------------------------------------------------------------
# Weyl-Heisenberg displacements and the SIC fiducial

def _displacements(d=SIC_D):
    omega = np.exp(2j * np.pi / d)
    shift = np.roll(np.eye(d), 1, axis=0)
    clock = np.diag(omega ** np.arange(d))
    ops = []
    for p in range(d):
        for q in range(d):
            ops.append(np.linalg.matrix_power(shift, p) @ np.linalg.matrix_power(clock, q))
    return np.array(ops)


def _orbit(fid, disps):
    vecs = disps @ fid
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def _fiducial_residuals(x, disps):
    # WH covariance: all pairwise orbit overlaps reduce to displaced
    # self-overlaps of the fiducial, so 15 residuals suffice.
    v = x[:SIC_D] + 1j * x[SIC_D:]
    nrm = np.linalg.norm(v)
    if nrm == 0:
        return np.full(len(disps) - 1, 1.0)
    v = v / nrm
    ov = np.einsum("i,pij,j->p", v.conj(), disps[1:], v)
    return np.abs(ov) ** 2 - 1.0 / (SIC_D + 1)


def _frame_potential(x, disps):
    r = _fiducial_residuals(x, disps)
    return float(np.sum(r ** 2))


@lru_cache(maxsize=4)
def sic_povm_d4(seed=12345, restarts=40, residual_target=1e-10):
    """Deterministic d=4 SIC: 16 unit vectors with |<i|j>|^2 = 1/5 off-diagonal.

    Minimizes the frame potential from seeded random starts, then polishes
    the overlap residuals with Gauss-Newton.  Raises SicConstructionError if
    no restart reaches the residual target.
    """
    disps = _displacements()
    g = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    for _ in range(restarts):
        x0 = g.standard_normal(2 * SIC_D)
        res = optimize.minimize(_frame_potential, x0, args=(disps,), method="L-BFGS-B",
                                options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-12})
        sol = optimize.least_squares(_fiducial_residuals, res.x, args=(disps,),
                                     method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if np.max(np.abs(sol.fun)) < residual_target:
            v = sol.x[:SIC_D] + 1j * sol.x[SIC_D:]
            v = v / np.linalg.norm(v)
            v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
            return SicPovm16(_orbit(v, disps))
    raise SicConstructionError(
        f"no fiducial reached residual {residual_target} in {restarts} restarts")


def check_sic(povm, tol=1e-9):
    """Fail fast if the cached construction violates the SIC invariants."""
    v = povm.vectors
    gram2 = np.abs(v @ v.conj().T) ** 2
    off = gram2[~np.eye(16, dtype=bool)]
    if np.max(np.abs(off - 0.2)) > tol:
        raise SicConstructionError("pairwise overlaps deviate from 1/5")
    frame = np.einsum("pi,pj->ij", v, v.conj()) / 4.0
    if np.max(np.abs(frame - np.eye(4))) > tol:
        raise SicConstructionError("frame operator deviates from identity")


# ---------------------------------------------------------------------------
# configuration table

def _master_pair_list():
    """All 136 unordered projector pairs, ordered so every supported k is a prefix."""
    pairs = [(i, i) for i in range(16)]
    pairs += [(i, i + 1) for i in range(15)]
    pairs.append((0, 15))
    for off in range(2, 15):
        pairs += [(i, i + off) for i in range(16 - off)]
    return tuple(pairs)


_MASTER_PAIRS = _master_pair_list()
assert len(_MASTER_PAIRS) == 136


def cmw_config(k):
    if k not in SUPPORTED_K:
        raise ValueError(f"unsupported k={k}; choose from {SUPPORTED_K}")
    return CmwConfig(_MASTER_PAIRS[:k], k)


# ---------------------------------------------------------------------------
# two-copy operator and features

def bell_singlet_projector():
    """Rank-1 projector onto (|01> - |10>)/sqrt(2)."""
    psi = np.zeros(4, dtype=np.complex128)
    psi[1] = 1 / np.sqrt(2)
    psi[2] = -1 / np.sqrt(2)
    return np.outer(psi, psi.conj())


def swap_operator(convention="virtual_swap"):
    """Unitary S on C^2 x C^4 entering the two-copy operator.

    virtual_swap views the ququart as two virtual qubits and swaps the qubit
    with the first of them; identity returns the 8x8 identity.
    """
    if convention == "identity":
        return np.eye(8, dtype=np.complex128)
    if convention != "virtual_swap":
        raise ValueError(f"unknown swap convention {convention!r}")
    s = np.zeros((8, 8), dtype=np.complex128)
    for a in range(2):
        for b1 in range(2):
            for b2 in range(2):
                src = a * 4 + b1 * 2 + b2
                dst = b1 * 4 + a * 2 + b2
                s[dst, src] = 1.0
    return s


def rho_T(rho, swap_convention="virtual_swap"):
    """Two-copy operator (S^T rho S) x rho, natural ordering (A1,B1,A2,B2)."""
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (8, 8):
        raise ValueError(f"expected an 8x8 state, got {rho.shape}")
    s = swap_operator(swap_convention)
    return kron(s.T @ rho @ s, rho)


def _measurement_operators(config, povm, numerator=True):
    """Stack of k operators in the natural two-copy ordering."""
    bell = bell_singlet_projector() if numerator else np.eye(4, dtype=np.complex128)
    ops = []
    for x, y in config.pairs:
        m = kron(kron(povm.projector(x), bell), povm.projector(y))
        # built in ordering (B1, A1A2, B2); bring back to (A1, B1, A2, B2)
        ops.append(permute_factors(m, (4, 2, 2, 4), (1, 0, 2, 3)))
    return np.array(ops)


@lru_cache(maxsize=16)
def _cached_measurements(k, swap_convention, povm_key):
    povm = sic_povm_d4()
    config = cmw_config(k)
    num = _measurement_operators(config, povm, numerator=True)
    den = _measurement_operators(config, povm, numerator=False)
    # flatten for trace-by-dot: Tr[(rho' x rho) M] pairs (rho' x rho)[jlik]
    # with M[(j,l),(i,k)]
    num4 = num.reshape(k, 4096)
    den4 = den.reshape(k, 4096)
    return num4, den4


def cmw_features(rho, config=None, povm=None, swap_convention="virtual_swap"):
    """P_xy features for a single state; returns (values, degenerate_mask)."""
    feats, mask = cmw_features_batch(np.asarray(rho)[None], config, povm, swap_convention)
    return feats[0], mask[0]


def cmw_features_batch(rhos, config=None, povm=None, swap_convention="virtual_swap",
                       chunk=512):
    """P_xy features for a batch of states.

    Returns (features (N, k) in [0, 1], mask (N, k) bool flagging entries
    zeroed by a degenerate denominator).
    """
    if config is None:
        config = cmw_config(136)
    if povm is None:
        povm = sic_povm_d4()
    if swap_convention not in SWAP_CONVENTIONS:
        raise ValueError(f"unknown swap convention {swap_convention!r}")
    rhos = np.asarray(rhos, dtype=np.complex128)
    k = config.k
    num4, den4 = _cached_measurements(k, swap_convention, povm.hash())
    s = swap_operator(swap_convention)

    n_states = rhos.shape[0]
    feats = np.empty((n_states, k))
    mask = np.zeros((n_states, k), dtype=bool)
    for lo in range(0, n_states, chunk):
        r = rhos[lo:lo + chunk]
        rp = np.einsum("ij,bjk,kl->bil", s.T, r, s)
        # X[b, (j,l,i,k)] = rho'[i,j] rho[k,l]
        x = np.einsum("bij,bkl->bjlik", rp, r).reshape(len(r), 4096)
        num = (x @ num4.T).real
        den = (x @ den4.T).real
        bad = den < DEGENERATE_DENOMINATOR
        den_safe = np.where(bad, 1.0, den)
        f = np.where(bad, 0.0, num / den_safe)
        feats[lo:lo + len(r)] = f
        mask[lo:lo + len(r)] = bad
    return feats, mask


# ---------------------------------------------------------------------------
# feature files

def save_features_csv(path, feats, labels, mask=None, sidecar=None):
    """CSV header: index,xi,f_0,...,f_{k-1},mask; mask is a hex bitmask."""
    feats = np.asarray(feats)
    n, k = feats.shape
    if mask is None:
        mask = np.zeros((n, k), dtype=bool)
    with open(path, "w") as fh:
        fh.write("index,xi," + ",".join(f"f_{i}" for i in range(k)) + ",mask\n")
        for i in range(n):
            bits = 0
            for j in np.where(mask[i])[0]:
                bits |= 1 << int(j)
            fh.write(f"{i},{labels[i]}," + ",".join(f"{v:.17g}" for v in feats[i])
                     + f",{bits:#x}\n")
    if sidecar is not None:
        with open(str(path) + ".json", "w") as fh:
            json.dump(sidecar, fh, indent=1)


def load_features_csv(path):
    labels, rows, masks = [], [], []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        k = len(header) - 3
        for line in fh:
            parts = line.strip().split(",")
            labels.append(int(parts[1]))
            rows.append([float(v) for v in parts[2:2 + k]])
            bits = int(parts[-1], 16)
            masks.append([(bits >> j) & 1 == 1 for j in range(k)])
    return np.array(rows), np.array(labels, dtype=np.int64), np.array(masks, dtype=bool)
