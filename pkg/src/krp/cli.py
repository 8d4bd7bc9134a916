"""Command-line surface: synth, pool, gradcheck, classify, bench, nystrom-eval.

Exit codes: 0 success, 1 validation error, 2 numeric failure. Every command
honors --seed, and every report embeds the fully resolved run configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import classify, config, grassmann, pooling, seqio
from .errors import NumericError, ValidationError
from .kernels import gram, median_bandwidth


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; keep 1 for bad usage
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--scheme", choices=config.SCHEMES)
    sub.add_argument("--sigma", help="RBF bandwidth or 'median'")
    sub.add_argument("--eta", type=float, help="ordering margin")
    sub.add_argument("--lambda", dest="lambda_", type=float, help="hinge weight")
    sub.add_argument("--C", dest="slack_c", type=float, help="slack cost")
    sub.add_argument("--p", type=int, help="subspace count")
    sub.add_argument("--nu", type=float, help="sequence-kernel temperature")
    sub.add_argument("--C-svm", dest="c_svm", type=float, help="SVM regularization")
    sub.add_argument("--nystrom-fraction", type=float)
    sub.add_argument("--ma-window", type=int)
    sub.add_argument("--ssr", action="store_const", const="true")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--max-iters", type=int)
    sub.add_argument("--grad-tol", type=float)
    sub.add_argument("--jobs", type=int,
                     help="worker pool size (default: KRP_JOBS or 1)")


def _build_config(args) -> config.RunConfig:
    file_values = config.parse_config_file(args.config) if args.config else {}
    flag_values = {
        "scheme": args.scheme,
        "sigma": args.sigma,
        "eta": args.eta,
        "lambda": args.lambda_,
        "C": args.slack_c,
        "p": args.p,
        "nu": args.nu,
        "C_svm": args.c_svm,
        "nystrom_fraction": args.nystrom_fraction,
        "ma_window": args.ma_window,
        "ssr": args.ssr,
        "seed": args.seed,
        "max_iters": args.max_iters,
        "grad_tol": args.grad_tol,
        "jobs": args.jobs,
    }
    cfg, explicit = config.build_config(file_values, flag_values)
    if cfg.jobs == 1 and "jobs" not in explicit and os.environ.get("KRP_JOBS"):
        try:
            cfg = cfg.with_overrides(jobs=int(os.environ["KRP_JOBS"]))
        except ValueError as exc:
            raise ValidationError(f"bad KRP_JOBS value: {os.environ['KRP_JOBS']!r}") from exc
    config.validate_scheme_params(cfg, explicit)
    return cfg


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.mode == "order":
        if args.per_class is None:
            raise ValidationError("synth --mode order needs --per-class")
        kwargs = {}
        if args.smoothness is not None:
            kwargs["smoothness"] = args.smoothness
        if args.drift is not None:
            kwargs["drift"] = args.drift
        manifest, entries = seqio.synth_order_benchmark(
            args.per_class, args.n, args.d, args.seed, out, **kwargs)
        print(manifest)
        print(f"{len(entries)} sequences in {out}")
    else:
        if args.count is None or args.count < 1:
            raise ValidationError("synth --mode smooth needs --count >= 1")
        out.mkdir(parents=True, exist_ok=True)
        children = np.random.SeedSequence(args.seed).spawn(args.count)
        entries = []
        for i, child in enumerate(children):
            x = seqio.synth_smooth(args.n, args.d, child, args.smoothness or 0.1,
                                   args.drift or 0.0)
            path = out / f"smooth_{i:04d}.seqf"
            seqio.save_sequence(x, path)
            entries.append(seqio.ManifestEntry(path=path, label="smooth",
                                               split=(i % 2) + 1))
        manifest = out / "manifest.jsonl"
        seqio.save_manifest(entries, manifest)
        print(manifest)
        print(f"{len(entries)} sequences in {out}")
    return 0


# ---------------------------------------------------------------------------
# pool


def _descriptor_report(desc, x, cfg, sigma):
    rep = {}
    hp = cfg.hinge_params()
    if cfg.scheme == "avg":
        return rep
    if cfg.scheme == "rp":
        rep["objective"] = pooling.rp_objective(x, desc.z, hp)
    elif cfg.scheme == "bkrp":
        rep["objective"] = pooling.bkrp_objective(x, desc.z, sigma, hp)
    elif cfg.scheme == "ibkrp":
        rep["objective"] = pooling.ibkrp_objective(x, desc.z, sigma, hp)
    elif cfg.scheme == "grp":
        rep["objective"] = pooling.grp_objective(x, desc.u, hp)
    elif cfg.scheme == "krpfs":
        k = gram(x, desc.sigma)
        rep["objective"] = pooling.krpfs_objective(desc.a, k, hp)
        rep["feasibility"] = grassmann.feasibility_residual(desc.a, k)
    rep["violation_rate"] = pooling.order_violation_rate(desc, x)
    return rep


def _pool_one(task):
    path, cfg, sigma = task
    t0 = time.perf_counter()
    try:
        x = seqio.preprocess(seqio.load_sequence(path), cfg.ma_window, cfg.ssr)
        desc = pooling.pool_sequence(x, cfg.scheme, sigma=sigma,
                                     hp=cfg.hinge_params(), p=cfg.p,
                                     opts=cfg.rcg_options())
        rep = _descriptor_report(desc, x, cfg, sigma)
        rep.update({"path": str(path), "seconds": time.perf_counter() - t0})
        return desc, rep
    except (ValidationError, NumericError) as exc:
        return None, {"path": str(path), "error": str(exc),
                      "seconds": time.perf_counter() - t0}


def cmd_pool(args) -> int:
    cfg = _build_config(args)
    entries = seqio.load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sigma = cfg.rbf_params()
    if sigma is None and cfg.scheme in ("bkrp", "ibkrp", "krpfs"):
        sequences = [seqio.preprocess(seqio.load_sequence(e.path), cfg.ma_window, cfg.ssr)
                     for e in entries]
        sigma = classify.resolve_corpus_sigma(sequences, cfg)

    tasks = [(e.path, cfg, sigma) for e in entries]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_pool_one, tasks))
    else:
        results = [_pool_one(t) for t in tasks]

    reports = []
    failures = 0
    for entry, (desc, rep) in zip(entries, results):
        if desc is None:
            failures += 1
        else:
            dest = out / (Path(entry.path).stem + ".krpd")
            seqio.save_descriptor(desc, dest)
            rep["descriptor"] = str(dest)
        reports.append(rep)

    report_path = _write_json(out / "pool_report.json", {
        "config": cfg.resolved_dict(),
        "sigma_resolved": sigma.sigma if sigma is not None else None,
        "failures": failures,
        "results": reports,
    })
    print(report_path)
    if failures:
        print(f"{failures} sequence(s) failed", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _finite_difference_grad(a, k, hp, h=1e-6):
    g = np.zeros_like(a)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            ap = a.copy()
            ap[i, j] += h
            am = a.copy()
            am[i, j] -= h
            g[i, j] = (pooling.krpfs_objective(ap, k, hp)
                       - pooling.krpfs_objective(am, k, hp)) / (2.0 * h)
    return g


def _gradcheck_instance(child, eta, lam):
    rng = np.random.default_rng(child)
    n = int(rng.integers(10, 31))
    p = int(rng.integers(2, 6))
    d = int(rng.integers(3, 9))
    x = rng.standard_normal((n, d))
    k = gram(x, median_bandwidth(x))
    hp = pooling.HingeParams(eta=eta, lam=lam)
    # keep the active set locally constant around the probe point: with the
    # margins bounded away from zero, the +-h perturbations cannot flip a pair
    for _ in range(50):
        a = grassmann.k_orthonormalize(rng.standard_normal((n, p)), k)
        kp = k @ a
        s3 = a.T @ kp
        proj = np.einsum("ij,jk,ik->i", kp, s3, kp)
        iu, ju = np.triu_indices(n, 1)
        margins = eta + proj[iu] - proj[ju]
        if np.abs(margins).min() > 1e-4:
            break
    analytic = pooling.krpfs_euclidean_grad(a, k, hp)
    fd = _finite_difference_grad(a, k, hp)
    rel = float(np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-300))
    rgrad = grassmann.riemannian_grad(a, analytic, k)
    tangency = float(np.linalg.norm(a.T @ k @ rgrad))
    feasibility = grassmann.feasibility_residual(a, k)
    return {"n": n, "p": p, "d": d, "rel_err": rel,
            "tangency": tangency, "feasibility": feasibility}


def cmd_gradcheck(args) -> int:
    cfg = _build_config(args)
    if cfg.scheme != "krpfs":
        raise ValidationError("gradcheck only applies to the krpfs scheme")
    if args.instances < 1:
        raise ValidationError("--instances must be >= 1")
    eta = cfg.eta if cfg.eta is not None else 1e-2
    children = np.random.SeedSequence(cfg.seed).spawn(args.instances)
    t0 = time.perf_counter()
    instances = [_gradcheck_instance(child, eta, cfg.lam) for child in children]
    elapsed = time.perf_counter() - t0

    max_rel = max(r["rel_err"] for r in instances)
    max_tan = max(r["tangency"] for r in instances)
    max_feas = max(r["feasibility"] for r in instances)
    ok = max_rel < args.tol and max_tan < 1e-8 and max_feas < 1e-8
    payload = {
        "config": cfg.resolved_dict(),
        "instances": instances,
        "max_rel_err": max_rel,
        "max_tangency": max_tan,
        "max_feasibility": max_feas,
        "tolerance": args.tol,
        "seconds": elapsed,
        "pass": ok,
    }
    if args.out:
        print(_write_json(args.out, payload))
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# classify


def _load_dataset(args, cfg):
    entries = seqio.load_manifest(args.manifest)
    dataset = [(seqio.preprocess(seqio.load_sequence(e.path), cfg.ma_window, cfg.ssr),
                e.label, e.split) for e in entries]
    return entries, dataset


def _load_descriptors(args, entries):
    if not args.descriptors:
        return None
    desc_dir = Path(args.descriptors)
    descs = []
    for e in entries:
        path = desc_dir / (Path(e.path).stem + ".krpd")
        if not path.exists():
            raise ValidationError(f"missing pooled descriptor {path}")
        descs.append(seqio.load_descriptor(path))
    return descs


def _metrics_csv(path, metrics: classify.Metrics, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["scheme", "split", "accuracy"]
    extra = extra or {}
    fields += sorted(extra)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for split, acc in sorted(metrics.split_accuracies.items()):
            writer.writerow({"scheme": metrics.config["scheme"], "split": split,
                             "accuracy": acc, **extra})
        writer.writerow({"scheme": metrics.config["scheme"], "split": "mean",
                         "accuracy": metrics.mean_accuracy, **extra})
    return path


def cmd_classify(args) -> int:
    cfg = _build_config(args)
    entries, dataset = _load_dataset(args, cfg)
    descriptors = _load_descriptors(args, entries)
    metrics = classify.cross_validate(dataset, cfg, descriptors=descriptors)
    out = Path(args.out)
    json_path = _write_json(out / "metrics.json", metrics.to_dict())
    csv_path = _metrics_csv(out / "metrics.csv", metrics)
    print(json_path)
    print(csv_path)
    print(f"mean accuracy: {metrics.mean_accuracy:.4f}")
    return 0


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    cfg = _build_config(args)
    try:
        ns = [int(v) for v in args.n_list.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad --n-list {args.n_list!r}") from exc
    if not ns:
        raise ValidationError("--n-list is empty")
    hp = cfg.hinge_params()
    rows = []
    for n in ns:
        x = seqio.synth_smooth(n, args.d, cfg.seed)
        k = gram(x, median_bandwidth(x))
        a = grassmann.kpca_init(k, cfg.p)

        def one_iteration():
            value, egrad = pooling.krpfs_value_grad(a, k, hp)
            grassmann.riemannian_grad(a, egrad, k)
            return value

        one_iteration()  # warmup
        times = []
        for _ in range(args.reps):
            t0 = time.perf_counter()
            one_iteration()
            times.append(time.perf_counter() - t0)
        rows.append({"n": n, "p": cfg.p, "d": args.d, "reps": args.reps,
                     "seconds_per_iteration": float(np.median(times))})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "bench.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["n", "p", "d", "reps",
                                                "seconds_per_iteration"])
        writer.writeheader()
        writer.writerows(rows)

    payload = {"config": cfg.resolved_dict(), "timings": rows}
    if len(rows) >= 2:
        logn = np.log([r["n"] for r in rows])
        logt = np.log([r["seconds_per_iteration"] for r in rows])
        payload["loglog_slope"] = float(np.polyfit(logn, logt, 1)[0])
    json_path = _write_json(out / "bench.json", payload)
    print(csv_path)
    print(json_path)
    return 0


# ---------------------------------------------------------------------------
# nystrom-eval


def cmd_nystrom_eval(args) -> int:
    cfg = _build_config(args)
    try:
        fractions = [float(v) for v in args.fractions.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad --fractions {args.fractions!r}") from exc
    if not fractions:
        raise ValidationError("--fractions is empty")
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValidationError(f"fraction {f} outside (0, 1]")

    entries, dataset = _load_dataset(args, cfg)
    descriptors = _load_descriptors(args, entries)
    if descriptors is None:
        sequences = [x for x, _, _ in dataset]
        sigma = classify.resolve_corpus_sigma(sequences, cfg)
        descriptors = classify.pool_corpus(sequences, cfg, sigma)

    dense = classify.cross_validate(dataset, cfg.with_overrides(nystrom_fraction=None),
                                    descriptors=descriptors)
    results = []
    for f in sorted(fractions, reverse=True):
        m = classify.cross_validate(dataset, cfg.with_overrides(nystrom_fraction=f),
                                    descriptors=descriptors)
        results.append({"fraction": f, "mean_accuracy": m.mean_accuracy,
                        "delta_vs_dense": m.mean_accuracy - dense.mean_accuracy})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "nystrom_eval.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["fraction", "mean_accuracy",
                                                "delta_vs_dense"])
        writer.writeheader()
        writer.writerows(results)
    json_path = _write_json(out / "nystrom_eval.json", {
        "config": cfg.resolved_dict(),
        "dense_accuracy": dense.mean_accuracy,
        "results": results,
    })
    print(csv_path)
    print(json_path)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="krp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate synthetic sequence corpora")
    sp.add_argument("--mode", choices=("order", "smooth"), default="order")
    sp.add_argument("--per-class", type=int, help="instances per class (order mode)")
    sp.add_argument("--count", type=int, help="sequence count (smooth mode)")
    sp.add_argument("--n", type=int, default=40, help="frames per sequence")
    sp.add_argument("--d", type=int, default=5, help="feature dimension")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--smoothness", type=float, help="step noise scale")
    sp.add_argument("--drift", type=float, help="step mean along a random heading")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pool", help="pool a corpus into descriptor files")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_pool)

    sp = sub.add_parser("gradcheck", help="verify the subspace-pooling gradient")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.add_argument("--out", help="JSON report path (default: stdout)")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("classify", help="cross-validated sequence classification")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--descriptors", help="reuse descriptors pooled by `krp pool`")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("bench", help="time per-iteration objective+gradient cost")
    sp.add_argument("--n-list", default="100,200")
    sp.add_argument("--d", type=int, default=16)
    sp.add_argument("--reps", type=int, default=7)
    sp.add_argument("--out", required=True)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("nystrom-eval", help="sweep classifier-Gram Nystrom fractions")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--descriptors")
    sp.add_argument("--fractions", default="1,0.5,0.125")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_nystrom_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
