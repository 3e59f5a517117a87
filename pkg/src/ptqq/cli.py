"""Command-line interface.

Subcommands cover dataset generation, featurization, training, evaluation,
ensemble statistics, the mixing-parameter transition scan, Bloch and
subspace analyses, t-SNE embedding, a backend benchmark, and manifest
replay.  Every command writes a manifest JSON so runs can be reproduced
bit-for-bit.

Exit codes: 0 success, 2 parameter error, 3 numerical failure,
4 unreachable class in balanced generation.
"""
import argparse
import json
import multiprocessing
import sys
import time

import numpy as np

from . import __version__, analysis, baselines, features, learn, states
from ._backend import BACKEND
from .linalg import DimensionError
from .states import EnsembleSpec, UnreachableClassError

EXIT_OK = 0
EXIT_PARAMETER = 2
EXIT_NUMERICAL = 3
EXIT_UNREACHABLE = 4

ENSEMBLE_ALIASES = {
    "haar-pure": "haar_pure", "haar_pure": "haar_pure",
    "hs": "hilbert_schmidt", "hilbert-schmidt": "hilbert_schmidt",
    "hilbert_schmidt": "hilbert_schmidt",
    "bures": "bures", "mixture": "mixture", "product": "product",
}

MODELS = ("ann-cmw", "ann-learned", "ann-learned-2copy", "svm", "rf")


class ParameterError(ValueError):
    pass


def _ensemble_kind(name):
    try:
        return ENSEMBLE_ALIASES[name]
    except KeyError:
        raise ParameterError(
            f"unknown ensemble {name!r}; choose from {sorted(set(ENSEMBLE_ALIASES))}")


def _write_manifest(out, command, args, outputs, t0):
    manifest = {
        "command": command,
        "argv": getattr(args, "_argv", sys.argv[1:]),
        "config": {k: v for k, v in vars(args).items()
                   if k not in ("func", "_argv")},
        "version": __version__,
        "backend": BACKEND,
        "outputs": outputs,
        "wall_clock_s": round(time.time() - t0, 3),
    }
    path = str(out) + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, default=str)
    return path


def _load_dataset(path):
    if str(path).endswith(".bin"):
        return states.load_dataset_binary(path)
    return states.load_dataset_csv(path)


# ---------------------------------------------------------------------------
# parallel generation helpers

def _gen_slice(payload):
    kind, seed, cutoff, n_mix, count, start = payload
    spec = EnsembleSpec(kind, seed=seed, cutoff=cutoff, n_mix=n_mix)
    ds = states.sample_dataset(spec, count, start=start)
    return ds.rhos, ds.labels


def _parallel_dataset(spec, count, workers):
    """Index-stable sampling split across processes at block boundaries."""
    if workers <= 1 or count < 2 * states.BLOCK:
        return states.sample_dataset(spec, count)
    bounds = np.linspace(0, count, workers + 1).astype(int)
    bounds = np.unique((bounds // states.BLOCK) * states.BLOCK)
    bounds = np.append(bounds, count) if bounds[-1] != count else bounds
    jobs = [(spec.kind, spec.seed, spec.cutoff, spec.n_mix,
             int(b - a), int(a)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with multiprocessing.get_context("fork").Pool(workers) as pool:
        parts = pool.map(_gen_slice, jobs)
    rhos = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    meta = {"ensemble": spec.kind, "seed": spec.seed, "cutoff": spec.cutoff,
            "count": count, "start": 0}
    return states.Dataset(rhos, labels, meta)


def _count_slice(payload):
    kind, seed, cutoff, n_mix, count, start = payload
    spec = EnsembleSpec(kind, seed=seed, cutoff=cutoff, n_mix=n_mix)
    labels = states.label_states(states.sample_states(spec, count, start=start),
                                 cutoff)
    return np.bincount(np.minimum(labels, states.MAX_XI + 1),
                       minlength=states.MAX_XI + 2)


def _parallel_stats(spec, n, workers):
    if workers <= 1:
        return states.ensemble_stats(spec, n)
    bounds = np.linspace(0, n, 4 * workers + 1).astype(int)
    bounds = np.unique((bounds // states.BLOCK) * states.BLOCK)
    bounds = np.append(bounds, n) if bounds[-1] != n else bounds
    jobs = [(spec.kind, spec.seed, spec.cutoff, spec.n_mix,
             int(b - a), int(a)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with multiprocessing.get_context("fork").Pool(workers) as pool:
        counts = sum(pool.map(_count_slice, jobs))
    probs = counts[: states.MAX_XI + 1] / n
    se = np.sqrt(probs * (1.0 - probs) / n)
    return {"probs": probs, "stderr": se, "n": n,
            "bound_violations": int(counts[states.MAX_XI + 1])}


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args):
    t0 = time.time()
    if args.balanced:
        classes = [int(c) for c in args.balanced.split(",")]
        ds = states.balanced_dataset(classes, args.per_class, policy=args.policy,
                                     seed=args.seed, cutoff=args.cutoff,
                                     attempt_budget=args.budget)
    else:
        if args.ensemble is None:
            raise ParameterError("either --ensemble or --balanced is required")
        kind = _ensemble_kind(args.ensemble)
        spec = EnsembleSpec(kind, seed=args.seed, cutoff=args.cutoff,
                            n_mix=args.n_mix)
        ds = _parallel_dataset(spec, args.count, args.workers)
    if str(args.out).endswith(".bin"):
        states.save_dataset_binary(args.out, ds)
    else:
        states.save_dataset_csv(args.out, ds)
    _write_manifest(args.out, "gen", args, [str(args.out)], t0)
    print(f"wrote {len(ds)} states to {args.out}")


def cmd_features(args):
    t0 = time.time()
    ds = _load_dataset(args.data)
    sidecar = {"set": args.set, "k": args.k, "swap_convention": args.swap_convention}
    if args.set == "cmw":
        config = features.cmw_config(args.k)
        povm = features.sic_povm_d4()
        feats, mask = features.cmw_features_batch(
            ds.rhos, config, povm, args.swap_convention)
        sidecar["povm_hash"] = povm.hash()
        sidecar["pairs"] = [list(p) for p in config.pairs]
    elif args.set == "learned-init":
        obs = learn.random_observables(args.k, args.copies, args.seed)
        feats = learn.learned_features(ds.rhos, obs)
        mask = None
        sidecar.update({"copies": args.copies, "seed": args.seed})
    else:
        raise ParameterError(f"unknown feature set {args.set!r}")
    features.save_features_csv(args.out, feats, ds.labels, mask, sidecar)
    _write_manifest(args.out, "features", args, [str(args.out)], t0)
    print(f"wrote {feats.shape[0]}x{feats.shape[1]} features to {args.out}")


def _feature_matrix(ds, k, swap_convention):
    feats, _ = features.cmw_features_batch(
        ds.rhos, features.cmw_config(k), swap_convention=swap_convention)
    return feats


def _train_ann(args, train_ds, test_ds):
    copies = 2 if args.model == "ann-learned-2copy" else 1
    fixed = args.model == "ann-cmw"
    x_train = _feature_matrix(train_ds, args.k, args.swap_convention) if fixed else None
    x_test = _feature_matrix(test_ds, args.k, args.swap_convention) if fixed else None
    runs = []
    for r in range(args.repeats):
        config = learn.TrainConfig(k=args.k, copies=copies, seed=args.seed + r,
                                   epochs=args.epochs)
        if fixed:
            result = learn.train_fixed(x_train, train_ds.labels, config)
            metrics = learn.evaluate(result, test_ds.labels, x=x_test)
        else:
            result = learn.train_learned(train_ds.rhos, train_ds.labels, config)
            metrics = learn.evaluate(result, test_ds.labels, rhos=test_ds.rhos)
        runs.append((result, config, metrics))
        print(f"repeat {r}: test macro-F1 {metrics['macro_f1']:.4f}")
    best = max(runs, key=lambda t: t[2]["macro_f1"])
    scores = [m["macro_f1"] for _, _, m in runs]
    report = {
        "model": args.model, "k": args.k, "repeats": args.repeats,
        "seeds": [c.seed for _, c, _ in runs],
        "macro_f1_mean": float(np.mean(scores)),
        "macro_f1_std": float(np.std(scores)),
        "macro_f1_runs": scores,
        "best": {"seed": best[1].seed, **best[2],
                 "confusion": best[2]["confusion"].tolist(),
                 "per_class_f1": {str(c): v for c, v
                                  in best[2]["per_class_f1"].items()}},
    }
    learn.save_checkpoint(args.out + ".ckpt", best[0], best[1])
    learn.save_training_log(args.out + ".log.csv", best[0].log)
    outputs = [args.out + ".ckpt", args.out + ".ckpt.json", args.out + ".log.csv"]
    return report, outputs


def _train_baseline(args, train_ds, test_ds):
    x_train = _feature_matrix(train_ds, args.k, args.swap_convention)
    x_test = _feature_matrix(test_ds, args.k, args.swap_convention)
    if args.model == "svm":
        trainer, grid = baselines.train_svm, baselines.SVM_GRID_DEFAULT
    else:
        trainer, grid = baselines.train_rf, baselines.RF_GRID_DEFAULT
    best_point, cv_table = baselines.grid_search(trainer, x_train, train_ds.labels,
                                                 grid, seed=args.seed)
    model = trainer(x_train, train_ds.labels, **best_point)
    pred = model.predict(x_test)
    classes = sorted(set(int(v) for v in train_ds.labels))
    lut = {c: i for i, c in enumerate(classes)}
    truth = np.array([lut[int(v)] for v in test_ds.labels])
    pred_idx = np.array([lut[int(v)] for v in pred])
    n_c = len(classes)
    report = {
        "model": args.model, "k": args.k, "grid_point": best_point,
        "macro_f1_mean": learn.macro_f1(truth, pred_idx, n_c),
        "macro_f1_std": 0.0,
        "per_class_f1": {str(c): f for c, f in
                         zip(classes, learn.per_class_f1(truth, pred_idx, n_c))},
        "confusion": learn.confusion_matrix(truth, pred_idx, n_c).tolist(),
        "accuracy": float(np.mean(truth == pred_idx)),
        "cv_table": cv_table,
    }
    return report, []


def cmd_train(args):
    t0 = time.time()
    train_ds = _load_dataset(args.train)
    test_ds = _load_dataset(args.test) if args.test else train_ds
    if args.model in ("ann-cmw", "ann-learned", "ann-learned-2copy"):
        report, outputs = _train_ann(args, train_ds, test_ds)
    elif args.model in ("svm", "rf"):
        report, outputs = _train_baseline(args, train_ds, test_ds)
    else:
        raise ParameterError(f"unknown model {args.model!r}")
    with open(args.out + ".metrics.json", "w") as fh:
        json.dump(report, fh, indent=1, default=str)
    outputs.append(args.out + ".metrics.json")
    _write_manifest(args.out, "train", args, outputs, t0)
    print(f"{args.model}: macro-F1 {report['macro_f1_mean']:.4f} "
          f"+- {report['macro_f1_std']:.4f}")


def cmd_eval(args):
    t0 = time.time()
    result = learn.load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    if result.observables is not None:
        metrics = learn.evaluate(result, ds.labels, rhos=ds.rhos)
    else:
        k = result.model.weights[0].shape[0]
        x = _feature_matrix(ds, k, args.swap_convention)
        metrics = learn.evaluate(result, ds.labels, x=x)
    metrics["confusion"] = metrics["confusion"].tolist()
    metrics["per_class_f1"] = {str(c): v for c, v in metrics["per_class_f1"].items()}
    with open(args.out, "w") as fh:
        json.dump(metrics, fh, indent=1)
    _write_manifest(args.out, "eval", args, [args.out], t0)
    print(f"macro-F1 {metrics['macro_f1']:.4f} accuracy {metrics['accuracy']:.4f}")


def cmd_stats(args):
    t0 = time.time()
    kind = _ensemble_kind(args.ensemble)
    spec = EnsembleSpec(kind, seed=args.seed, cutoff=args.cutoff, n_mix=args.n_mix)
    stats = _parallel_stats(spec, args.count, args.workers)
    header = (["ensemble", "n"] + [f"p{x}" for x in range(4)]
              + [f"se{x}" for x in range(4)] + ["bound_violations"])
    with open(args.out, "w") as fh:
        fh.write(",".join(header) + "\n")
        fh.write(",".join([kind, str(stats["n"])]
                          + [f"{v:.8g}" for v in stats["probs"]]
                          + [f"{v:.8g}" for v in stats["stderr"]]
                          + [str(stats["bound_violations"])]) + "\n")
    _write_manifest(args.out, "stats", args, [args.out], t0)
    print("P(xi) =", np.array2string(stats["probs"], precision=6))


def cmd_transition(args):
    t0 = time.time()
    grid = np.linspace(args.alpha_min, args.alpha_max, args.points)
    rows = states.transition_sweep(grid, args.samples, cutoff=args.cutoff,
                                   seed=args.seed)
    header = (["alpha"] + [f"p{x}" for x in range(4)] + [f"se{x}" for x in range(4)]
              + ["mean_second_neg", "std_second_neg"])
    table = [[r["alpha"], *r["probs"], *r["stderr"],
              r["mean_second_neg"], r["std_second_neg"]] for r in rows]
    analysis.save_table(args.out, header, table)
    outputs = [args.out]
    if args.crossing:
        alpha = states.transition_crossing(cutoff=args.cutoff, seed=args.seed)
        print(f"P(xi=1) = P(xi=2) crossing at alpha = {alpha:.10f}")
    _write_manifest(args.out, "transition", args, outputs, t0)
    print(f"wrote {len(table)} grid points to {args.out}")


def cmd_bloch(args):
    t0 = time.time()
    prof = analysis.mixture_profile(range(args.n_min, args.n_max + 1),
                                    args.samples, seed=args.seed,
                                    cutoff=args.cutoff)
    header = ["n", "xi", "count", "mean_a2", "std_a2", "mean_b2", "std_b2",
              "mean_t2", "std_t2", "mean_purity", "std_purity"]
    analysis.save_table(args.out, header, prof)
    _write_manifest(args.out, "bloch", args, [args.out], t0)
    print(f"wrote {len(prof)} (n, class) rows to {args.out}")


def cmd_tsne(args):
    t0 = time.time()
    feats, labels, _ = features.load_features_csv(args.features)
    emb = analysis.tsne(feats, perplexity=args.perplexity,
                        iterations=args.iterations, seed=args.seed)
    table = np.column_stack([np.arange(len(labels)), labels, emb])
    analysis.save_table(args.out, ["index", "xi", "x", "y"], table)
    _write_manifest(args.out, "tsne", args, [args.out], t0)
    print(f"embedded {len(labels)} points to {args.out}")


def cmd_subspace(args):
    t0 = time.time()
    ds = _load_dataset(args.data)
    rows = []
    for i, rho in enumerate(ds.rhos):
        space = analysis.negative_eigenspace(rho, args.cutoff)
        dim = analysis.bob_support_dim(space.eigenvectors)
        ok, _ = analysis.rank2_embedding_exists(rho, args.cutoff)
        rows.append([i, ds.labels[i], dim, int(ok)])
    analysis.save_table(args.out, ["index", "xi", "dim_ub", "embeddable"], rows)
    _write_manifest(args.out, "subspace", args, [args.out], t0)
    print(f"analysed {len(rows)} states to {args.out}")


def cmd_bench(args):
    from . import _backend, kernels_np
    g = np.random.default_rng(0)
    z = g.standard_normal((args.batch, args.size, args.size)) \
        + 1j * g.standard_normal((args.batch, args.size, args.size))
    mats = z + z.conj().transpose(0, 2, 1)
    rows = []
    for name, fn in [("numpy", kernels_np.eigh_batch),
                     (BACKEND, _backend.eigh_batch)]:
        fn(mats[:8], False)  # warm up
        times = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            fn(mats, False)
            times.append(time.perf_counter() - t0)
        rows.append((name, min(times)))
        print(f"{name:10s} {args.batch}x{args.size}x{args.size}: "
              f"{min(times) * 1e3:8.2f} ms")
    if rows[0][0] != rows[1][0]:
        print(f"speedup ({rows[1][0]} vs numpy): {rows[0][1] / rows[1][1]:.2f}x")


def cmd_replay(args):
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    print(f"replaying: ptqq {' '.join(manifest['argv'])}")
    return main(manifest["argv"])


# ---------------------------------------------------------------------------
# argument parsing

def _common_rng(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cutoff", type=float, default=states.DEFAULT_CUTOFF)


def build_parser():
    parser = argparse.ArgumentParser(prog="ptqq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample and label a dataset")
    p.add_argument("--ensemble")
    p.add_argument("--balanced", help="comma-separated classes, e.g. 0,1,2")
    p.add_argument("--per-class", type=int, default=1000)
    p.add_argument("--policy", default="hilbert_schmidt",
                   choices=("hilbert_schmidt", "product", "mixture_uniform"))
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--n-mix", type=int, default=1)
    p.add_argument("--budget", type=int, default=10_000_000,
                   help="max draws for balanced rejection sampling")
    p.add_argument("--workers", type=int, default=1)
    _common_rng(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("features", help="extract measurement features")
    p.add_argument("--data", required=True)
    p.add_argument("--set", default="cmw", choices=("cmw", "learned-init"))
    p.add_argument("--k", type=int, default=64, choices=features.SUPPORTED_K)
    p.add_argument("--copies", type=int, default=1, choices=(1, 2))
    p.add_argument("--swap-convention", default="virtual_swap",
                   choices=features.SWAP_CONVENTIONS)
    _common_rng(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a classifier, report test metrics")
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--k", type=int, default=64, choices=features.SUPPORTED_K)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--swap-convention", default="virtual_swap",
                   choices=features.SWAP_CONVENTIONS)
    _common_rng(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--swap-convention", default="virtual_swap",
                   choices=features.SWAP_CONVENTIONS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="ensemble class frequencies")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--n-mix", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    _common_rng(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("transition", help="two-pure-state mixing scan")
    p.add_argument("--alpha-min", type=float, default=0.5)
    p.add_argument("--alpha-max", type=float, default=1.0)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--crossing", action="store_true",
                   help="also locate the P(xi=1) = P(xi=2) crossing")
    _common_rng(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transition)

    p = sub.add_parser("bloch", help="Bloch statistics versus mixture size")
    p.add_argument("--n-min", type=int, default=1)
    p.add_argument("--n-max", type=int, default=15)
    p.add_argument("--samples", type=int, default=5000)
    _common_rng(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bloch)

    p = sub.add_parser("tsne", help="embed a feature file into 2D")
    p.add_argument("--features", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tsne)

    p = sub.add_parser("subspace", help="negative-eigenspace Bob-support table")
    p.add_argument("--data", required=True)
    _common_rng(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subspace)

    p = sub.add_parser("bench", help="time the eigensolver backends")
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--batch", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        ret = args.func(args)
        return EXIT_OK if ret is None else ret
    except UnreachableClassError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except (ParameterError, analysis.ParameterError, ValueError,
            DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except (learn.TrainingDivergedError, features.SicConstructionError,
            analysis.DegenerateProjectionError, FloatingPointError,
            np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
