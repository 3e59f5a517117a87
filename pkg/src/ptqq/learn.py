"""Learnable-observable feature layer and a small dense classifier.

The observable layer holds k raw complex matrices; on use they are
hermitized as (A + A^dag)/2 and the features are the (real) traces against
the state, or against rho x rho in the two-copy variant.  Gradients flow
through the hermitization back to the raw matrix entries, so the observables
train jointly with the network.
"""
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import matio, rng

DEFAULT_HIDDEN = (128, 64)


class TrainingDivergedError(RuntimeError):
    """Loss or activations became non-finite during training."""


def hermitize(a):
    """(A + A^dag)/2; a projection, exact fixed point on Hermitian input."""
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"hermitize needs square matrices, got shape {a.shape}")
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


@dataclass
class ObservableSet:
    raw: np.ndarray  # (k, D, D) complex, D = 8 ** copies
    copies: int

    @property
    def k(self):
        return self.raw.shape[0]

    def hermitized(self):
        return hermitize(self.raw)


def random_observables(k, copies=1, seed=0):
    """Gaussian raw matrices scaled by 1/D to keep features O(1)."""
    d = 8 ** copies
    g = rng.stream(seed, 7)
    raw = (g.standard_normal((k, d, d)) + 1j * g.standard_normal((k, d, d))) / d
    return ObservableSet(raw, copies)


def replica_state(rho, copies):
    """rho^(l): l-fold Kronecker power."""
    out = np.asarray(rho, dtype=np.complex128)
    base = out
    for _ in range(copies - 1):
        out = np.kron(out, base)
    return out


def _replica_batch(rhos, copies):
    if copies == 1:
        return rhos
    if copies == 2:
        b = rhos.shape[0]
        return np.einsum("bij,bkl->bikjl", rhos, rhos).reshape(b, 64, 64)
    raise ValueError("copies capped at 2")


def learned_features(rhos, obs):
    """o_i = Tr[O_i rho^(l)] for one state (8x8) or a batch (B,8,8)."""
    rhos = np.asarray(rhos, dtype=np.complex128)
    single = rhos.ndim == 2
    if single:
        rhos = rhos[None]
    sigma = _replica_batch(rhos, obs.copies)
    d = sigma.shape[-1]
    if obs.raw.shape[-1] != d:
        raise ValueError(f"observable dim {obs.raw.shape[-1]} != replica dim {d}")
    herm = obs.hermitized().reshape(obs.k, d * d)
    vals = (sigma.conj().reshape(len(sigma), d * d) @ herm.T).real
    return vals[0] if single else vals


def feature_gradients(rho, obs):
    """d o_i / d(Re A_i) and d o_i / d(Im A_i) for a single state.

    Closed form from linearity and the hermitization adjoint:
    dRe = Re(rho^(l)), dIm = Im(rho^(l)), identical for every i.
    """
    sigma = replica_state(np.asarray(rho, dtype=np.complex128), obs.copies)
    sigma = hermitize(sigma)
    d_re = np.broadcast_to(sigma.real, (obs.k,) + sigma.shape)
    d_im = np.broadcast_to(sigma.imag, (obs.k,) + sigma.shape)
    return np.array(d_re), np.array(d_im)


# ---------------------------------------------------------------------------
# dense network with manual backprop

@dataclass
class MlpModel:
    weights: list
    biases: list
    classes: tuple  # original label values, in prediction-column order

    def copy(self):
        return MlpModel([w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.classes)


def mlp_init(sizes, classes, seed=0):
    g = rng.stream(seed, 11)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(g.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, tuple(classes))


def mlp_forward(model, x, cache=None):
    """Softmax class probabilities; fills `cache` with activations if given."""
    a = np.asarray(x, dtype=np.float64)
    acts = [a]
    depth = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        if i < depth - 1:
            a = np.maximum(a, 0.0)
        acts.append(a)
    if not np.all(np.isfinite(a)):
        raise TrainingDivergedError("non-finite activations in forward pass")
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    if cache is not None:
        cache["acts"] = acts
    return probs


def mlp_backward(model, cache, probs, y_idx):
    """Cross-entropy gradients; returns (loss, weight grads, bias grads, dX)."""
    acts = cache["acts"]
    n = len(y_idx)
    loss = -np.mean(np.log(probs[np.arange(n), y_idx] + 1e-300))
    delta = probs.copy()
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    gw, gb = [], []
    depth = len(model.weights)
    for i in range(depth - 1, -1, -1):
        gw.append(acts[i].T @ delta)
        gb.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
        else:
            delta = delta @ model.weights[i].T
    return loss, gw[::-1], gb[::-1], delta


class Adam:
    """Adaptive moment estimation over a flat list of real parameter arrays."""

    def __init__(self, shapes, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1t = 1 - self.b1 ** self.t
        b2t = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# metrics

def macro_f1(truth, pred, n_classes):
    """Unweighted mean of per-class F1; empty precision+recall counts as 0."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.size == 0 or truth.shape != pred.shape:
        raise ValueError("need equal-length nonempty label arrays")
    return float(np.mean(per_class_f1(truth, pred, n_classes)))


def per_class_f1(truth, pred, n_classes):
    f1 = np.zeros(n_classes)
    for c in range(n_classes):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        f1[c] = 2 * tp / denom if denom > 0 else 0.0
    return f1


def confusion_matrix(truth, pred, n_classes):
    """Rows are truth, columns prediction."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(truth, pred):
        cm[t, p] += 1
    return cm


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    k: int = 64
    copies: int = 1
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN
    val_fraction: float = 0.15

    def __post_init__(self):
        if self.copies not in (1, 2):
            raise ValueError("copies capped at 2")
        if min(self.k, self.lr, self.batch_size, self.epochs, self.patience) <= 0:
            raise ValueError("all training parameters must be positive")


@dataclass
class TrainResult:
    model: MlpModel
    observables: object  # ObservableSet or None for fixed features
    log: list = field(default_factory=list)
    best_epoch: int = -1


def _class_index(labels):
    classes = tuple(sorted(set(int(v) for v in labels)))
    lut = {c: i for i, c in enumerate(classes)}
    return classes, np.array([lut[int(v)] for v in labels])


def _split(n, val_fraction, seed):
    g = rng.stream(seed, 13)
    perm = g.permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    return perm[n_val:], perm[:n_val]


def train_fixed(features_mat, labels, config):
    """Variant (a): precomputed features (CMW or frozen observables) + MLP."""
    x = np.asarray(features_mat, dtype=np.float64)[:, : config.k]
    return _train_loop(x_full=x, rhos=None, labels=labels, config=config)


def train_learned(rhos, labels, config):
    """Variants (b)/(c): observables trained jointly with the network."""
    return _train_loop(x_full=None, rhos=np.asarray(rhos), labels=labels, config=config)


def _train_loop(x_full, rhos, labels, config):
    classes, y = _class_index(labels)
    n = len(y)
    tr_idx, va_idx = _split(n, config.val_fraction, config.seed)
    learn_obs = x_full is None

    obs = None
    sig_tr = sig_va = None
    if learn_obs:
        obs = random_observables(config.k, config.copies, config.seed)
        d = 8 * config.copies
        if config.copies == 1:
            sig_tr = rhos[tr_idx]
            sig_va = _replica_batch(rhos[va_idx], 1)
        else:
            sig_tr = rhos[tr_idx]  # replicas formed per mini-batch
            sig_va = _replica_batch(rhos[va_idx], 2)
    else:
        x_tr, x_va = x_full[tr_idx], x_full[va_idx]
    y_tr, y_va = y[tr_idx], y[va_idx]

    sizes = (config.k,) + tuple(config.hidden) + (len(classes),)
    model = mlp_init(sizes, classes, config.seed)

    shapes = [w.shape for w in model.weights] + [b.shape for b in model.biases]
    if learn_obs:
        shapes = [obs.raw.shape, obs.raw.shape] + shapes
    opt = Adam(shapes, lr=config.lr)

    best = {"f1": -1.0, "model": model.copy(),
            "obs": ObservableSet(obs.raw.copy(), obs.copies) if learn_obs else None,
            "epoch": -1}
    stale = 0
    log = []
    g_shuffle = rng.stream(config.seed, 17)
    n_tr = len(y_tr)

    for epoch in range(config.epochs):
        order = g_shuffle.permutation(n_tr)
        losses = []
        for lo in range(0, n_tr, config.batch_size):
            sel = order[lo:lo + config.batch_size]
            yb = y_tr[sel]
            if learn_obs:
                sig = _replica_batch(sig_tr[sel], config.copies)
                d = sig.shape[-1]
                herm = obs.hermitized().reshape(config.k, d * d)
                sig_flat = sig.conj().reshape(len(sig), d * d)
                xb = (sig_flat @ herm.T).real
            else:
                xb = x_tr[sel]
            cache = {}
            probs = mlp_forward(model, xb, cache)
            loss, gw, gb, dx = mlp_backward(model, cache, probs, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss diverged at epoch {epoch}")
            losses.append(loss)
            if learn_obs:
                # d o_i / dA through hermitization: complex grad sum_b dx[b,i] sigma_b
                gc = np.einsum("bi,bjk->ijk", dx, sig.reshape(len(sig), d, d))
                gc = hermitize(gc)
                grads = [gc.real, gc.imag] + gw + gb
                re, im = obs.raw.real.copy(), obs.raw.imag.copy()
                params = [re, im] + model.weights + model.biases
                opt.step(params, grads)
                obs.raw = re + 1j * im
            else:
                opt.step(model.weights + model.biases, gw + gb)

        # validation macro-F1 for early stopping
        if learn_obs:
            d = sig_va.shape[-1]
            herm = obs.hermitized().reshape(config.k, d * d)
            xv = (sig_va.conj().reshape(len(sig_va), d * d) @ herm.T).real
        else:
            xv = x_va
        val_pred = np.argmax(mlp_forward(model, xv), axis=1)
        val_f1 = macro_f1(y_va, val_pred, len(classes))
        log.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                    "val_macro_f1": val_f1})
        if val_f1 > best["f1"] + 1e-12:
            best = {"f1": val_f1, "model": model.copy(),
                    "obs": ObservableSet(obs.raw.copy(), obs.copies) if learn_obs else None,
                    "epoch": epoch}
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break

    return TrainResult(best["model"], best["obs"], log, best["epoch"])


def predict(result, x=None, rhos=None):
    """Class labels (original values) for features or raw states."""
    if x is None:
        x = learned_features(rhos, result.observables)
    model = result.model
    idx = np.argmax(mlp_forward(model, np.asarray(x)[:, : model.weights[0].shape[0]]),
                    axis=1)
    return np.array([model.classes[i] for i in idx])


def evaluate(result, labels, x=None, rhos=None):
    """Macro-F1, per-class F1, confusion matrix and accuracy on a test set."""
    classes = result.model.classes
    lut = {c: i for i, c in enumerate(classes)}
    truth = np.array([lut[int(v)] for v in labels])
    pred_labels = predict(result, x=x, rhos=rhos)
    pred = np.array([lut[int(v)] for v in pred_labels])
    return {
        "macro_f1": macro_f1(truth, pred, len(classes)),
        "per_class_f1": {c: f for c, f in
                         zip(classes, per_class_f1(truth, pred, len(classes)))},
        "confusion": confusion_matrix(truth, pred, len(classes)),
        "accuracy": float(np.mean(truth == pred)),
    }


# ---------------------------------------------------------------------------
# checkpoints and logs

def save_checkpoint(path, result, config=None):
    """JSON manifest plus PTCM blocks for weights and raw observables."""
    model = result.model
    manifest = {
        "classes": list(model.classes),
        "layer_sizes": [int(w.shape[0]) for w in model.weights]
        + [int(model.weights[-1].shape[1])],
        "has_observables": result.observables is not None,
        "best_epoch": result.best_epoch,
    }
    if result.observables is not None:
        manifest["observable_copies"] = result.observables.copies
        manifest["observable_k"] = result.observables.k
    if config is not None:
        manifest["config"] = {k: (list(v) if isinstance(v, tuple) else v)
                              for k, v in vars(config).items()}
    with open(str(path) + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    with open(path, "wb") as fh:
        for w, b in zip(model.weights, model.biases):
            matio.write_matrix(fh, w)
            matio.write_matrix(fh, b[None, :])
        if result.observables is not None:
            for a in result.observables.raw:
                matio.write_matrix(fh, a)


def load_checkpoint(path):
    with open(str(path) + ".json") as fh:
        manifest = json.load(fh)
    blocks = matio.read_matrices(path)
    n_layers = len(manifest["layer_sizes"]) - 1
    weights = [blocks[2 * i].real for i in range(n_layers)]
    biases = [blocks[2 * i + 1].real[0] for i in range(n_layers)]
    model = MlpModel(weights, biases, tuple(manifest["classes"]))
    obs = None
    if manifest["has_observables"]:
        raw = np.array(blocks[2 * n_layers:])
        obs = ObservableSet(raw, manifest["observable_copies"])
    return TrainResult(model, obs, [], manifest.get("best_epoch", -1))


def save_training_log(path, log):
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_macro_f1\n")
        for row in log:
            fh.write(f"{row['epoch']},{row['train_loss']:.10g},{row['val_macro_f1']:.10g}\n")
