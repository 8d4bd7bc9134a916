import numpy as np
import pytest
import scipy.linalg

from krp.errors import ValidationError
from krp.grassmann import (RcgOptions, feasibility_residual, k_norm, kpca_init,
                           riemannian_grad)
from krp.kernels import RbfParams, gram, median_bandwidth
from krp.pooling import (GrpDescriptor, HingeParams, SubspaceDescriptor,
                         VectorDescriptor, bkrp_objective, grp_objective,
                         grp_reconstruction_error, ibkrp_objective,
                         krpfs_euclidean_grad, krpfs_objective, krpfs_value_grad,
                         order_violation_rate, pool_average, pool_bkrp, pool_grp,
                         pool_ibkrp, pool_krpfs, pool_rp, pool_sequence,
                         projection_lengths, rp_objective)


def monotone_walk(n, d, seed, smoothness=0.1):
    """Smooth trajectory with a consistent drift direction."""
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((d, d)) / np.sqrt(d)
    steps = smoothness * np.abs(rng.standard_normal((n, d)))
    return np.tanh(np.cumsum(steps, axis=0) @ mix)


class TestHingeParams:
    def test_validation(self):
        with pytest.raises(ValidationError):
            HingeParams(eta=-0.1)
        with pytest.raises(ValidationError):
            HingeParams(lam=-1.0)
        with pytest.raises(ValidationError):
            HingeParams(slack=0.0)

    def test_effective_weight_folds_slack(self):
        assert HingeParams(lam=3.0, slack=1.0).lam_eff == 1.0
        assert HingeParams(lam=0.5, slack=1.0).lam_eff == 0.5


class TestPoolAverage:
    def test_single_frame(self):
        x = np.array([[3.0, -1.0]])
        assert np.array_equal(pool_average(x).z, x[0])

    def test_order_blind(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((9, 4))
        assert np.array_equal(pool_average(x).z, pool_average(x[::-1]).z)

    def test_simple_mean(self):
        x = np.array([[0.0], [1.0], [2.0]])
        assert np.array_equal(pool_average(x).z, [1.0])

    def test_empty(self):
        with pytest.raises(ValidationError):
            pool_average(np.zeros((0, 2)))


class TestPoolRp:
    def test_lambda_zero_gives_origin(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((8, 3))
        desc = pool_rp(x, HingeParams(eta=0.1, lam=0.0))
        assert np.array_equal(desc.z, np.zeros(3))

    def test_separable_sequence_has_zero_hinge(self):
        u = np.array([1.0, -0.5])
        x = np.outer(np.arange(10, dtype=float) * 5.0, u)  # big gaps along u
        hp = HingeParams(eta=1e-3, lam=1.0)
        desc = pool_rp(x, hp)
        scores = x @ desc.z
        iu, ju = np.triu_indices(10, 1)
        assert np.all(scores[iu] + hp.eta <= scores[ju])

    def test_descends_from_origin(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((12, 4))
        hp = HingeParams(eta=0.05, lam=2.0)
        desc = pool_rp(x, hp)
        start = hp.lam * hp.eta * 12 * 11 / 2
        assert rp_objective(x, desc.z, hp) <= start
        assert rp_objective(x, np.zeros(4), hp) == pytest.approx(start)


class TestPoolGrp:
    def test_lambda_zero_matches_pca(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((15, 6))
        desc = pool_grp(x, 2, HingeParams(eta=0.1, lam=0.0))
        _, s, _ = np.linalg.svd(x, full_matrices=False)
        best = 0.5 * float(np.sum(s[2:] ** 2))
        assert grp_reconstruction_error(x, desc.u) == pytest.approx(best, abs=1e-6)

    def test_zero_error_inside_subspace(self):
        rng = np.random.default_rng(4)
        basis = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        x = rng.standard_normal((10, 2)) @ basis.T
        desc = pool_grp(x, 2, HingeParams(eta=0.1, lam=0.0))
        assert grp_reconstruction_error(x, desc.u) == pytest.approx(0.0, abs=1e-12)

    def test_orthonormal_output(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((12, 5))
        desc = pool_grp(x, 3, HingeParams(eta=0.01, lam=1.0))
        assert np.linalg.norm(desc.u.T @ desc.u - np.eye(3)) < 1e-8

    def test_p_too_large(self):
        with pytest.raises(ValidationError):
            pool_grp(np.zeros((5, 3)) + np.eye(5, 3), 4, HingeParams())

    def test_descends_from_pca_start(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((14, 4))
        hp = HingeParams(eta=0.05, lam=1.0)
        desc = pool_grp(x, 2, hp)
        _, _, vt = np.linalg.svd(x, full_matrices=False)
        u0 = vt[:2].T
        assert grp_objective(x, desc.u, hp) <= grp_objective(x, u0, hp) + 1e-12


class TestPoolBkrp:
    def test_lambda_zero_gives_origin(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((8, 3))
        desc = pool_bkrp(x, RbfParams(1.0), HingeParams(eta=0.1, lam=0.0))
        assert np.array_equal(desc.z, np.zeros(3))

    def test_linear_mode_equals_rank_pooling_objective(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((10, 4))
        hp = HingeParams(eta=0.07, lam=1.3)
        sigma = RbfParams(2.0)
        for _ in range(20):
            z = rng.standard_normal(4)
            assert bkrp_objective(x, z, sigma, hp, linear=True) == \
                pytest.approx(rp_objective(x, z, hp), abs=1e-12)

    def test_violations_do_not_increase(self):
        x = monotone_walk(20, 4, seed=9)
        sigma = median_bandwidth(x)
        hp = HingeParams(eta=0.01, lam=1.0)
        desc = pool_bkrp(x, sigma, hp)

        def violation_count(z):
            s = np.exp(-np.sum((x - z) ** 2, axis=1) / (2 * sigma.sigma**2))
            iu, ju = np.triu_indices(len(s), 1)
            return int(np.sum(s[iu] + hp.eta > s[ju]))

        assert violation_count(desc.z) <= violation_count(x.mean(axis=0))


class TestPoolIbkrp:
    def test_single_frame_returns_it(self):
        x = np.array([[2.0, -3.0, 1.0]])
        desc = pool_ibkrp(x, RbfParams(1.0), HingeParams())
        assert np.array_equal(desc.z, x[0])

    def test_zero_weight_gives_mean(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((9, 3))
        desc = pool_ibkrp(x, RbfParams(1.0), HingeParams(eta=0.1, lam=0.0))
        assert np.allclose(desc.z, x.mean(axis=0), atol=1e-12)

    def test_descends_from_mean(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((10, 4))
        sigma = median_bandwidth(x)
        hp = HingeParams(eta=0.1, lam=1.0)
        desc = pool_ibkrp(x, sigma, hp)
        assert ibkrp_objective(x, desc.z, sigma, hp) <= \
            ibkrp_objective(x, x.mean(axis=0), sigma, hp)


def make_kernel(seed, n=15, d=4):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    return rng, x, gram(x, median_bandwidth(x))


class TestKrpfsObjective:
    def test_inverse_sqrt_closed_form(self):
        _, _, k = make_kernel(12, n=10)
        w, v = np.linalg.eigh(k)
        a = (v / np.sqrt(w)) @ v.T  # K^{-1/2}, p = n
        hp = HingeParams(eta=0.05, lam=2.0)
        expect = -10 / 2 + hp.lam * hp.eta * 10 * 9 / 2
        assert krpfs_objective(a, k, hp) == pytest.approx(expect, abs=1e-8)

    def test_zero_matrix_probe(self):
        _, _, k = make_kernel(13, n=8)
        hp = HingeParams(eta=0.2, lam=1.5)
        expect = hp.lam * hp.eta * 8 * 7 / 2
        assert krpfs_objective(np.zeros((8, 3)), k, hp) == pytest.approx(expect, abs=1e-12)

    def test_reconstruction_optimum_matches_eigensolver(self):
        _, _, k = make_kernel(14, n=12)
        hp = HingeParams(eta=0.1, lam=0.0)
        a0 = kpca_init(k, 3)
        oracle = -0.5 * np.sort(scipy.linalg.eigh(k @ k, k, eigvals_only=True))[::-1][:3].sum()
        assert krpfs_objective(a0, k, hp) == pytest.approx(oracle, abs=1e-9)

    def test_rotation_invariance(self):
        rng, _, k = make_kernel(15)
        a = rng.standard_normal((15, 3))
        r = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        hp = HingeParams(eta=0.05, lam=1.0)
        assert abs(krpfs_objective(a, k, hp) - krpfs_objective(a @ r, k, hp)) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            krpfs_objective(np.zeros((5, 2)), np.eye(4), HingeParams())


class TestKrpfsGradient:
    def test_zero_riemannian_grad_at_kpca_optimum(self):
        _, _, k = make_kernel(16, n=14)
        hp = HingeParams(eta=0.1, lam=0.0)
        a0 = kpca_init(k, 3)
        g = krpfs_euclidean_grad(a0, k, hp)
        assert k_norm(riemannian_grad(a0, g, k), k) < 1e-6

    def test_no_violations_gives_lambda_free_part(self):
        rng, _, k = make_kernel(17, n=10)
        a = rng.standard_normal((10, 2))
        # permuting frames so the projection lengths come out sorted removes
        # every ordering violation without touching the lambda-free terms
        kp = k @ a
        s3 = a.T @ kp
        proj = np.einsum("ij,jk,ik->i", kp, s3, kp)
        order = np.argsort(proj)
        k_sorted = k[np.ix_(order, order)]
        a_sorted = a[order]
        with_hinge = krpfs_euclidean_grad(a_sorted, k_sorted, HingeParams(eta=0.0, lam=3.0))
        kp_s = k_sorted @ a_sorted
        s3_s = a_sorted.T @ kp_s
        s1_s = k_sorted @ kp_s
        lam_free = s1_s @ (s3_s - 2 * np.eye(2)) + k_sorted @ (a_sorted @ (a_sorted.T @ s1_s))
        assert np.array_equal(with_hinge, lam_free)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(8, 31))
        p = int(rng.integers(2, 6))
        d = int(rng.integers(3, 7))
        x = rng.standard_normal((n, d))
        k = gram(x, median_bandwidth(x))
        hp = HingeParams(eta=1e-2, lam=1.0)
        iu, ju = np.triu_indices(n, 1)
        for _ in range(50):  # stay away from hinge kinks
            a = rng.standard_normal((n, p)) / np.sqrt(n)
            kp = k @ a
            s3 = a.T @ kp
            proj = np.einsum("ij,jk,ik->i", kp, s3, kp)
            if np.abs(hp.eta + proj[iu] - proj[ju]).min() > 1e-4:
                break
        analytic = krpfs_euclidean_grad(a, k, hp)
        h = 1e-6
        fd = np.zeros_like(a)
        for i in range(n):
            for j in range(p):
                ap = a.copy()
                ap[i, j] += h
                am = a.copy()
                am[i, j] -= h
                fd[i, j] = (krpfs_objective(ap, k, hp)
                            - krpfs_objective(am, k, hp)) / (2 * h)
        rel = np.linalg.norm(analytic - fd) / np.linalg.norm(fd)
        assert rel < 1e-5


class TestPoolKrpfs:
    def test_descriptor_feasible(self):
        x = monotone_walk(25, 4, seed=18)
        desc = pool_krpfs(x, 3, None, HingeParams(eta=1e-4, lam=1.0))
        k = gram(x, desc.sigma)
        assert feasibility_residual(desc.a, k) < 1e-8

    def test_order_satisfaction_on_monotone_sequence(self):
        x = monotone_walk(40, 5, seed=19)
        hp = HingeParams(eta=1e-4, lam=5.0)
        desc = pool_krpfs(x, 3, None, hp)
        lengths = projection_lengths(desc, x)
        iu, ju = np.triu_indices(40, 1)
        satisfied = np.mean(lengths[iu] + hp.eta <= lengths[ju])
        assert satisfied >= 0.95

    def test_objective_not_above_initialization(self):
        x = monotone_walk(20, 4, seed=20)
        hp = HingeParams(eta=1e-3, lam=2.0)
        sigma = median_bandwidth(x)
        desc = pool_krpfs(x, 3, sigma, hp)
        k = gram(x, sigma)
        a0 = kpca_init(k, 3)
        assert krpfs_objective(desc.a, k, hp) <= krpfs_objective(a0, k, hp)

    def test_p_exceeding_rank_rejected(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(Exception):
            pool_krpfs(x, 4, RbfParams(1.0), HingeParams())

    def test_deterministic(self):
        x = monotone_walk(18, 3, seed=21)
        hp = HingeParams(eta=1e-3, lam=1.0)
        d1 = pool_krpfs(x, 2, None, hp)
        d2 = pool_krpfs(x, 2, None, hp)
        assert np.array_equal(d1.a, d2.a)


class TestOrderViolationRate:
    def test_ordered_pair(self):
        x = np.array([[0.0], [10.0]])
        desc = VectorDescriptor(z=np.array([1.0]), scheme="rp", params={"eta": 0.5})
        assert order_violation_rate(desc, x) == 0.0

    def test_fully_reversed(self):
        x = np.array([[3.0], [2.0], [1.0]])
        desc = VectorDescriptor(z=np.array([1.0]), scheme="rp", params={"eta": 0.0})
        assert order_violation_rate(desc, x) == 1.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(22)
        x = rng.standard_normal((12, 3))
        z = rng.standard_normal(3)
        eta = 0.05
        desc = VectorDescriptor(z=z, scheme="rp", params={"eta": eta})
        scores = x @ z
        n = len(scores)
        count = sum(1 for i in range(n) for j in range(i + 1, n)
                    if scores[i] + eta > scores[j])
        assert order_violation_rate(desc, x) == count / (n * (n - 1) / 2)

    def test_average_has_no_ordering(self):
        desc = pool_average(np.eye(3))
        with pytest.raises(ValidationError):
            order_violation_rate(desc, np.eye(3))

    def test_krpfs_rate_uses_projection_lengths(self):
        x = monotone_walk(15, 3, seed=23)
        desc = pool_krpfs(x, 2, None, HingeParams(eta=1e-3, lam=1.0))
        lengths = projection_lengths(desc, x)
        iu, ju = np.triu_indices(15, 1)
        expect = np.mean(lengths[iu] + 1e-3 > lengths[ju])
        assert order_violation_rate(desc, x) == pytest.approx(expect)


class TestValueGradConsistency:
    def test_fused_evaluator_matches_parts_at_zero_smoothing(self):
        rng, _, k = make_kernel(24, n=12)
        a = rng.standard_normal((12, 3))
        hp = HingeParams(eta=0.05, lam=1.0)
        v, g = krpfs_value_grad(a, k, hp, delta=0.0)
        assert v == krpfs_objective(a, k, hp)
        assert np.array_equal(g, krpfs_euclidean_grad(a, k, hp))

    def test_smoothed_value_close_to_exact(self):
        rng, _, k = make_kernel(25, n=12)
        a = rng.standard_normal((12, 3))
        hp = HingeParams(eta=0.1, lam=1.0)
        v_smooth, _ = krpfs_value_grad(a, k, hp)
        n_pairs = 12 * 11 / 2
        assert abs(v_smooth - krpfs_objective(a, k, hp)) <= hp.lam * hp.delta * n_pairs


class TestPoolSequence:
    def test_dispatch(self):
        x = monotone_walk(10, 3, seed=26)
        assert pool_sequence(x, "avg").scheme == "avg"
        assert pool_sequence(x, "rp").scheme == "rp"
        assert isinstance(pool_sequence(x, "grp", p=2), GrpDescriptor)
        assert pool_sequence(x, "bkrp").scheme == "bkrp"
        assert pool_sequence(x, "ibkrp").scheme == "ibkrp"
        assert isinstance(pool_sequence(x, "krpfs", p=2), SubspaceDescriptor)

    def test_unknown_scheme(self):
        with pytest.raises(ValidationError):
            pool_sequence(np.eye(3), "maxpool")

    def test_vector_pooler_determinism(self):
        x = monotone_walk(14, 4, seed=27)
        hp = HingeParams(eta=0.05, lam=1.0)
        sigma = median_bandwidth(x)
        for scheme in ("rp", "bkrp", "ibkrp"):
            d1 = pool_sequence(x, scheme, sigma=sigma, hp=hp)
            d2 = pool_sequence(x, scheme, sigma=sigma, hp=hp)
            assert np.array_equal(d1.z, d2.z)
