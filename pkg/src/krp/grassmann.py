"""Optimization on the generalized Grassmann manifold {A : A^T K A = I_p}.

Points are plain n x p ndarrays; the owning kernel matrix K defines the
metric <u, v> = tr(u^T K v). Tangent vectors at A are the horizontal
directions A^T K xi = 0. The solver is a Riemannian conjugate gradient with
Armijo backtracking; the retraction re-orthonormalizes A + t*xi against K
via Cholesky.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import NumericError, ValidationError


@dataclass
class RcgOptions:
    max_iters: int = 300
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    beta_rule: str = "pr+"  # "pr+" (Polak-Ribiere-plus) or "fr" (Fletcher-Reeves)
    restart_period: int | None = None  # None -> p * n

    def __post_init__(self):
        if self.max_iters < 1 or self.grad_tol <= 0 or self.armijo_c <= 0:
            raise ValidationError("RCG options must be positive")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValidationError("backtrack_factor must lie in (0, 1)")
        if self.beta_rule not in ("pr+", "fr"):
            raise ValidationError(f"unknown beta rule {self.beta_rule!r}")
        if self.restart_period is not None and self.restart_period < 1:
            raise ValidationError("restart_period must be a positive count")


def k_inner(u, v, k) -> float:
    """Metric inner product tr(u^T K v)."""
    return float(np.sum(u * (k @ v)))


def k_norm(u, k) -> float:
    return float(np.sqrt(max(k_inner(u, u, k), 0.0)))


def feasibility_residual(a, k) -> float:
    """||A^T K A - I||_F, the distance of A from the manifold."""
    p = a.shape[1]
    return float(np.linalg.norm(a.T @ k @ a - np.eye(p)))


def k_orthonormalize(y, k) -> np.ndarray:
    """Return A = Y R^{-1} with R the Cholesky factor of Y^T K Y, so A^T K A = I."""
    y = np.asarray(y, dtype=float)
    k = np.asarray(k, dtype=float)
    m = y.T @ k @ y
    m = 0.5 * (m + m.T)
    if not np.all(np.isfinite(m)) or np.linalg.cond(m) > 1e12:
        raise NumericError("sequence kernel rank below p")
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError("sequence kernel rank below p") from exc
    return solve_triangular(low, y.T, lower=True).T


def project_tangent(a, z, k) -> np.ndarray:
    """Horizontal projection xi = Z - A (A^T K Z); satisfies A^T K xi = 0."""
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.shape != a.shape:
        raise ValidationError(f"shape mismatch: {z.shape} vs base {a.shape}")
    return z - a @ (a.T @ (k @ z))


def riemannian_grad(a, egrad, k) -> np.ndarray:
    """Convert a Euclidean gradient to the Riemannian one.

    grad = K^{-1} egrad - A sym(A^T egrad), computed by solving with
    K + tau*I (tau = 1e-8 tr(K)/n) since smooth-sequence kernels are
    near-singular; the result is projected onto the horizontal space.
    """
    a = np.asarray(a, dtype=float)
    egrad = np.asarray(egrad, dtype=float)
    k = np.asarray(k, dtype=float)
    if egrad.shape != a.shape:
        raise ValidationError(f"shape mismatch: {egrad.shape} vs base {a.shape}")
    n = k.shape[0]
    tau = 1e-8 * float(np.trace(k)) / n
    try:
        factor = cho_factor(k + tau * np.eye(n), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError("kernel matrix singular after regularization") from exc
    kinv_g = cho_solve(factor, egrad)
    s = a.T @ egrad
    out = kinv_g - a @ (0.5 * (s + s.T))
    return project_tangent(a, out, k)


def retract(a, xi, step, k) -> np.ndarray:
    """Map the tangent step back onto the manifold; step 0 returns the base."""
    if step == 0.0:
        return a
    return k_orthonormalize(a + step * xi, k)


def transport(a_from, a_to, xi, k) -> np.ndarray:
    """Projection transport of xi from a_from to a_to."""
    del a_from  # projection transport only needs the target base
    return project_tangent(a_to, xi, k)


def kpca_init(k, p: int) -> np.ndarray:
    """Top-p kernel-PCA directions, K-orthonormalized.

    These solve the reconstruction part of the subspace pooling objective
    exactly, giving the solver a feasible, meaningful start.
    """
    k = np.asarray(k, dtype=float)
    n = k.shape[0]
    if p < 1 or p > n:
        raise ValidationError(f"subspace count p={p} must satisfy 1 <= p <= n={n}")
    w, v = np.linalg.eigh(k)
    order = np.argsort(w)[::-1][:p]
    top = w[order]
    if top.min() <= 1e-12 * max(w.max(), 1.0):
        raise NumericError("sequence kernel rank below p")
    a0 = v[:, order] / np.sqrt(top)
    return k_orthonormalize(a0, k)


def rcg_minimize(objective, a0, k, opts: RcgOptions | None = None, callback=None):
    """Riemannian conjugate gradient descent for a pluggable objective.

    `objective` maps a feasible point A to (value, euclidean_gradient).
    Returns the final point and a trace of (iteration, value, gradient
    K-norm) for every accepted iterate, the start included. `callback`,
    when given, receives (iteration, A) at those same points.
    """
    opts = opts or RcgOptions()
    a = np.asarray(a0, dtype=float)
    k = np.asarray(k, dtype=float)
    n, p = a.shape
    period = opts.restart_period if opts.restart_period is not None else p * n

    value, egrad = objective(a)
    if not (np.isfinite(value) and np.all(np.isfinite(egrad))):
        raise NumericError("non-finite objective at iterate 0")
    grad = riemannian_grad(a, egrad, k)
    gnorm = k_norm(grad, k)
    trace = [(0, float(value), gnorm)]
    if callback is not None:
        callback(0, a)
    direction = -grad
    trial = 1.0  # warm-started between iterations; restarting at 1 every time
    # costs an order of magnitude more objective evaluations

    for it in range(1, opts.max_iters + 1):
        if gnorm < opts.grad_tol:
            break
        if it % period == 0:
            direction = -grad
        slope = k_inner(grad, direction, k)
        if slope >= 0.0:  # not a descent direction: restart on steepest descent
            direction = -grad
            slope = -gnorm**2

        step = trial
        accepted = False
        while step >= 1e-16:
            a_new = retract(a, direction, step, k)
            v_new, eg_new = objective(a_new)
            if not (np.isfinite(v_new) and np.all(np.isfinite(eg_new))):
                raise NumericError(f"non-finite objective at iterate {it}")
            if v_new <= value + opts.armijo_c * step * slope:
                accepted = True
                break
            step *= opts.backtrack_factor
        if not accepted:  # step underflow
            break
        trial = min(1.0, step / opts.backtrack_factor**2)

        g_new = riemannian_grad(a_new, eg_new, k)
        gn_new = k_norm(g_new, k)
        if opts.beta_rule == "fr":
            beta = gn_new**2 / gnorm**2
        else:
            g_old_t = transport(a, a_new, grad, k)
            beta = max(0.0, k_inner(g_new, g_new - g_old_t, k) / gnorm**2)
        direction = -g_new + beta * transport(a, a_new, direction, k)

        a, value, grad, gnorm = a_new, float(v_new), g_new, gn_new
        trace.append((it, value, gnorm))
        if callback is not None:
            callback(it, a)

    return a, trace
