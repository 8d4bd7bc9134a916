"""Sequence-level kernels over descriptors, a one-vs-rest dual SVM, and
cross-validated evaluation.

Subspace descriptors compare through the exponential projection metric
kernel exp(nu * ||A1^T K12 A2||_F^2), computed via cross-sequence frame
kernels; vector descriptors through an RBF kernel on the pooled vectors.
The sequence Gram is spectrally clipped at zero before training since the
cross-RBF construction is not guaranteed PSD.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import pooling
from .config import RunConfig
from .errors import ValidationError
from .kernels import RbfParams, cross_gram, gram, median_bandwidth, nystrom, psd_project
from .pooling import GrpDescriptor, SubspaceDescriptor, VectorDescriptor


@dataclass(frozen=True)
class SequenceKernelParams:
    nu: float = 1.0
    sigma: RbfParams | None = None  # cross-sequence frame (or vector-space) bandwidth
    nystrom_fraction: float | None = None

    def __post_init__(self):
        if self.nu <= 0:
            raise ValidationError(f"nu must be positive, got {self.nu}")
        if self.nystrom_fraction is not None and not 0.0 < self.nystrom_fraction <= 1.0:
            raise ValidationError("nystrom_fraction must lie in (0, 1]")


def _krpfs_sigma(d1: SubspaceDescriptor, d2: SubspaceDescriptor,
                 params: SequenceKernelParams) -> RbfParams:
    if params.sigma is not None:
        return params.sigma
    if abs(d1.sigma.sigma - d2.sigma.sigma) > 1e-12 * max(d1.sigma.sigma, d2.sigma.sigma):
        raise ValidationError(
            "descriptors pooled with different bandwidths; supply params.sigma")
    return d1.sigma


def seq_kernel_krpfs(d1: SubspaceDescriptor, d2: SubspaceDescriptor,
                     params: SequenceKernelParams) -> float:
    """exp(nu * ||A1^T K12 A2||_F^2) with K12 the cross-sequence frame kernel."""
    if d1.source.shape[1] != d2.source.shape[1]:
        raise ValidationError("descriptors come from different feature dimensions")
    sigma = _krpfs_sigma(d1, d2, params)
    k12 = cross_gram(d1.source, d2.source, sigma)
    m = d1.a.T @ k12 @ d2.a
    return float(np.exp(params.nu * np.sum(m * m)))


def _seq_kernel_grp(d1: GrpDescriptor, d2: GrpDescriptor, nu: float) -> float:
    m = d1.u.T @ d2.u
    return float(np.exp(nu * np.sum(m * m)))


def _descriptor_family(descs):
    kinds = {type(d) for d in descs}
    if len(kinds) != 1:
        names = sorted(t.__name__ for t in kinds)
        raise ValidationError(f"mixed descriptor types in one Gram: {names}")
    if isinstance(descs[0], VectorDescriptor):
        schemes = {d.scheme for d in descs}
        if len(schemes) != 1:
            raise ValidationError(f"mixed vector schemes in one Gram: {sorted(schemes)}")
        return "vector"
    if isinstance(descs[0], SubspaceDescriptor):
        return "krpfs"
    if isinstance(descs[0], GrpDescriptor):
        return "grp"
    raise ValidationError(f"unsupported descriptor type {type(descs[0]).__name__}")


def _resolve_vector_sigma(descs, params) -> RbfParams:
    if params.sigma is not None:
        return params.sigma
    if len(descs) == 1:
        return RbfParams(1.0)  # self-kernel is 1 for any bandwidth
    z = np.vstack([d.z for d in descs])
    return median_bandwidth(z)


def gram_sequences(descs, params: SequenceKernelParams, seed: int = 0,
                   return_info: bool = False):
    """Pairwise sequence kernel matrix, symmetric and PSD after repair.

    With nystrom_fraction < 1 the dense Gram is replaced by its Nystrom
    reconstruction from a seeded column sample before the PSD repair.
    """
    if len(descs) < 1:
        raise ValidationError("no descriptors")
    family = _descriptor_family(descs)
    n = len(descs)
    if family == "vector":
        sigma = _resolve_vector_sigma(descs, params)
        z = np.vstack([d.z for d in descs])
        g = gram(z, sigma)
    else:
        g = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                if family == "krpfs":
                    g[i, j] = seq_kernel_krpfs(descs[i], descs[j], params)
                else:
                    g[i, j] = _seq_kernel_grp(descs[i], descs[j], params.nu)
        g = np.triu(g) + np.triu(g, 1).T

    if params.nystrom_fraction is not None and params.nystrom_fraction < 1.0:
        m = max(1, int(round(params.nystrom_fraction * n)))
        g = nystrom(g, m, seed=seed).reconstruct()

    min_eig = float(np.linalg.eigvalsh(g).min())
    repaired = psd_project(g, 0.0)
    if return_info:
        return repaired, {"min_eig_before_repair": min_eig,
                          "clipped": bool(min_eig < -1e-8)}
    return repaired


def kernel_rows(test_descs, train_descs, params: SequenceKernelParams) -> np.ndarray:
    """Exact test x train kernel block (no approximation on prediction rows)."""
    family = _descriptor_family(list(test_descs) + list(train_descs))
    if family == "vector":
        sigma = _resolve_vector_sigma(list(test_descs) + list(train_descs), params)
        zt = np.vstack([d.z for d in test_descs])
        zr = np.vstack([d.z for d in train_descs])
        return cross_gram(zt, zr, sigma)
    rows = np.zeros((len(test_descs), len(train_descs)))
    for i, dt in enumerate(test_descs):
        for j, dr in enumerate(train_descs):
            if family == "krpfs":
                rows[i, j] = seq_kernel_krpfs(dt, dr, params)
            else:
                rows[i, j] = _seq_kernel_grp(dt, dr, params.nu)
    return rows


# ---------------------------------------------------------------------------
# kernel SVM (dual SMO with maximal-violating-pair selection)


@dataclass
class SvmModel:
    classes: list
    coef: np.ndarray  # (n_classes, n_train) dual coefficients alpha_i * y_i
    bias: np.ndarray  # (n_classes,)
    support: np.ndarray  # indices with any nonzero alpha
    kkt_residuals: np.ndarray  # final per-class KKT gap
    c_svm: float
    alphas: np.ndarray = field(repr=False, default=None)  # (n_classes, n_train)


def _smo_binary(g, y, c, tol, max_iter):
    """Maximal-violating-pair SMO on the dual of a soft-margin kernel SVM."""
    n = len(y)
    alpha = np.zeros(n)
    yg = y.copy()  # equals y_i - sum_j alpha_j y_j G_ij throughout
    for _ in range(max_iter):
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        j = int(np.argmin(np.where(low, yg, np.inf)))
        gap = yg[i] - yg[j]
        if gap < tol:
            break
        # largest feasible step along the (i, j) pair
        step_max_i = c - alpha[i] if y[i] > 0 else alpha[i]
        step_max_j = alpha[j] if y[j] > 0 else c - alpha[j]
        denom = max(g[i, i] + g[j, j] - 2.0 * g[i, j], 1e-12)
        step = min(gap / denom, step_max_i, step_max_j)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        yg -= step * (g[:, i] - g[:, j])

    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    residual = float(np.where(up, yg, -np.inf).max() - np.where(low, yg, np.inf).min()) \
        if up.any() and low.any() else 0.0
    free = (alpha > 1e-12) & (alpha < c - 1e-12)
    if free.any():
        bias = float(yg[free].mean())
    else:
        hi = np.where(up, yg, -np.inf).max() if up.any() else 0.0
        lo = np.where(low, yg, np.inf).min() if low.any() else 0.0
        bias = float(0.5 * (hi + lo))
    return alpha, bias, max(residual, 0.0)


def svm_train(g, labels, c_svm: float = 10.0, tol: float = 1e-3,
              max_iter: int = 100000) -> SvmModel:
    """One-vs-rest dual SVM on a precomputed PSD Gram matrix."""
    g = np.asarray(g, dtype=float)
    labels = list(labels)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValidationError(f"Gram matrix must be square, got {g.shape}")
    if len(labels) != g.shape[0]:
        raise ValidationError(f"{len(labels)} labels for {g.shape[0]} Gram rows")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValidationError("training needs at least two classes")
    n = len(labels)
    coef = np.zeros((len(classes), n))
    alphas = np.zeros((len(classes), n))
    bias = np.zeros(len(classes))
    residuals = np.zeros(len(classes))
    for ci, cls in enumerate(classes):
        y = np.where(np.asarray(labels, dtype=object) == cls, 1.0, -1.0)
        alpha, b, res = _smo_binary(g, y, c_svm, tol, max_iter)
        coef[ci] = alpha * y
        alphas[ci] = alpha
        bias[ci] = b
        residuals[ci] = res
    support = np.flatnonzero(np.abs(coef).sum(axis=0) > 1e-12)
    return SvmModel(classes=classes, coef=coef, bias=bias, support=support,
                    kkt_residuals=residuals, c_svm=c_svm, alphas=alphas)


def svm_predict(model: SvmModel, rows):
    """Predicted labels plus per-class decision scores for test x train rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.coef.shape[1]:
        raise ValidationError(
            f"kernel rows have {rows.shape[1]} columns, model expects {model.coef.shape[1]}")
    scores = rows @ model.coef.T + model.bias
    idx = np.argmax(scores, axis=1)  # ties resolve to the lowest class index
    return [model.classes[i] for i in idx], scores


# ---------------------------------------------------------------------------
# cross-validated evaluation


@dataclass
class Metrics:
    mean_accuracy: float
    split_accuracies: dict
    per_class: dict
    confusion: dict
    timings: dict
    config: dict
    gram_info: dict

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "split_accuracies": self.split_accuracies,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "timings": self.timings,
            "config": self.config,
            "gram_info": self.gram_info,
        }


def resolve_corpus_sigma(sequences, cfg: RunConfig) -> RbfParams | None:
    """One bandwidth for the whole corpus: the median of per-sequence median
    pairwise distances (kernel schemes only)."""
    if cfg.scheme not in ("bkrp", "ibkrp", "krpfs"):
        return None
    if cfg.sigma is not None:
        return RbfParams(cfg.sigma)
    med = [median_bandwidth(x).sigma for x in sequences]
    return RbfParams(float(np.median(med)))


def pool_corpus(sequences, cfg: RunConfig, sigma: RbfParams | None = None):
    """Pool every sequence with the scheme and parameters of the run config."""
    if sigma is None:
        sigma = resolve_corpus_sigma(sequences, cfg)
    hp = cfg.hinge_params()
    opts = cfg.rcg_options()
    return [pooling.pool_sequence(x, cfg.scheme, sigma=sigma, hp=hp, p=cfg.p, opts=opts)
            for x in sequences]


def sequence_kernel_params(cfg: RunConfig, sigma: RbfParams | None,
                           nystrom_fraction=None) -> SequenceKernelParams:
    fraction = nystrom_fraction if nystrom_fraction is not None else cfg.nystrom_fraction
    return SequenceKernelParams(nu=cfg.resolved_nu, sigma=sigma,
                                nystrom_fraction=fraction)


def cross_validate(dataset, cfg: RunConfig, descriptors=None) -> Metrics:
    """Leave-one-split-out evaluation.

    dataset is a list of (sequence, label, split). Sequences are pooled once
    (pooling is label-free); each fold trains on the other splits' Gram and
    scores the held-out rows. Pass precomputed descriptors to reuse pooling.
    """
    if not dataset:
        raise ValidationError("empty dataset")
    sequences = [x for x, _, _ in dataset]
    labels = [lab for _, lab, _ in dataset]
    splits = np.asarray([s for _, _, s in dataset])
    fold_ids = sorted(set(splits.tolist()))
    if len(fold_ids) < 2:
        raise ValidationError("cross-validation needs at least two splits")

    timings = {"pool": 0.0, "gram": 0.0, "train": 0.0, "predict": 0.0}
    sigma = resolve_corpus_sigma(sequences, cfg)

    t0 = time.perf_counter()
    if descriptors is None:
        descriptors = pool_corpus(sequences, cfg, sigma)
    timings["pool"] = time.perf_counter() - t0

    params = sequence_kernel_params(cfg, sigma)
    classes = sorted(set(labels))
    split_acc = {}
    per_class_hits = {c: [0, 0] for c in classes}
    confusion = {c: {c2: 0 for c2 in classes} for c in classes}
    gram_info = {}

    for fold in fold_ids:
        test_idx = np.flatnonzero(splits == fold)
        train_idx = np.flatnonzero(splits != fold)
        if len(test_idx) == 0 or len(train_idx) == 0:
            raise ValidationError(f"split {fold} leaves an empty train or test set")
        train_labels = [labels[i] for i in train_idx]
        if len(set(train_labels)) < 2:
            raise ValidationError(f"split {fold}: training fold has a single class")
        train_descs = [descriptors[i] for i in train_idx]
        test_descs = [descriptors[i] for i in test_idx]

        t0 = time.perf_counter()
        g, info = gram_sequences(train_descs, params, seed=cfg.seed, return_info=True)
        rows = kernel_rows(test_descs, train_descs, params)
        timings["gram"] += time.perf_counter() - t0
        gram_info[str(fold)] = info

        t0 = time.perf_counter()
        model = svm_train(g, train_labels, c_svm=cfg.c_svm)
        timings["train"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        pred, _ = svm_predict(model, rows)
        timings["predict"] += time.perf_counter() - t0

        hits = 0
        for i, p_lab in zip(test_idx, pred):
            truth = labels[i]
            confusion[truth][p_lab] += 1
            per_class_hits[truth][1] += 1
            if p_lab == truth:
                per_class_hits[truth][0] += 1
                hits += 1
        split_acc[str(fold)] = hits / len(test_idx)

    per_class = {c: (h / t if t else float("nan")) for c, (h, t) in per_class_hits.items()}
    resolved = cfg.resolved_dict()
    if sigma is not None:
        resolved["sigma"] = sigma.sigma
    return Metrics(
        mean_accuracy=float(np.mean(list(split_acc.values()))),
        split_accuracies=split_acc,
        per_class=per_class,
        confusion=confusion,
        timings=timings,
        config=resolved,
        gram_info=gram_info,
    )
