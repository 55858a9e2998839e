import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from maxsem.likelihood import (PairWeighting, bivariate_loglik, exact_partition_posterior,
                               full_loglik, full_loglik_bruteforce, logistic_full_loglik_recursive,
                               mle_fit, pairwise_loglik, st_loglik)
from maxsem.models import BrownResnickModel, LogisticModel
from maxsem.partition import Partition, enumerate_partitions
from maxsem.simulate import random_sites, sample_brown_resnick, sample_logistic

SITES3 = np.array([[0.1, 0.2], [0.6, 0.3], [0.4, 0.9]])


def frechet_logpdf(z):
    return -1.0 / z - 2.0 * np.log(z)


class TestStephensonTawn:
    @pytest.mark.parametrize("theta", [0.3, 1.0])
    def test_univariate(self, theta):
        assert st_loglik(LogisticModel(1, theta), [1.7], Partition((0,))) == pytest.approx(frechet_logpdf(1.7))

    def test_independence(self):
        m = LogisticModel(2, 1.0)
        assert st_loglik(m, [1.0, 1.0], Partition((0, 1))) == pytest.approx(-2.0)
        assert st_loglik(m, [1.3, 0.4], Partition((0, 0))) == -np.inf

    def test_matches_explicit_sum(self):
        m = LogisticModel(3, 0.4)
        z = np.array([0.5, 1.5, 3.0])
        p = Partition((0, 1, 0))
        want = -m.exponent_V(z) + math.log(m.neg_V_partial(z, [0, 2])) + math.log(m.neg_V_partial(z, [1]))
        assert st_loglik(m, z, p) == pytest.approx(want, rel=1e-13)

    def test_errors(self):
        with pytest.raises(ValueError):
            st_loglik(LogisticModel(2, 0.5), [1.0, 0.0], Partition((0, 1)))
        with pytest.raises(ValueError):
            st_loglik(LogisticModel(2, 0.5), [1.0, 1.0], Partition((0, 1, 2)))


class TestFullLikelihood:
    def test_univariate(self):
        assert full_loglik_bruteforce(LogisticModel(1, 0.4), [0.8]) == pytest.approx(frechet_logpdf(0.8))

    def test_independence(self):
        z = np.array([0.4, 1.2, 3.3, 0.9])
        want = frechet_logpdf(z).sum()
        assert full_loglik_bruteforce(LogisticModel(4, 1.0), z) == pytest.approx(want, rel=1e-12)
        assert logistic_full_loglik_recursive(1.0, z) == pytest.approx(want, rel=1e-12)

    def test_bruteforce_is_sum_of_st_terms(self):
        m = BrownResnickModel(SITES3, 0.9, 1.1)
        z = np.array([0.7, 1.1, 2.5])
        terms = [st_loglik(m, z, p) for p in enumerate_partitions(3)]
        assert full_loglik_bruteforce(m, z) == pytest.approx(np.logaddexp.reduce(terms), rel=1e-12)

    def test_bivariate_closed_form(self):
        theta, z = 0.6, np.array([0.9, 2.2])
        m = LogisticModel(2, theta)
        V1, V2 = -m.neg_V_partial(z, [0]), -m.neg_V_partial(z, [1])
        V12 = -m.neg_V_partial(z, [0, 1])
        want = -m.exponent_V(z) + math.log(V1 * V2 - V12)
        assert logistic_full_loglik_recursive(theta, z) == pytest.approx(want, rel=1e-12)

    def test_recursion_matches_bruteforce_d5(self):
        rng = np.random.default_rng(0)
        z = np.exp(rng.normal(size=5))
        a = full_loglik_bruteforce(LogisticModel(5, 0.5), z)
        assert logistic_full_loglik_recursive(0.5, z) == pytest.approx(a, rel=1e-10)

    def test_recursion_matches_bruteforce_d8(self):
        rng = np.random.default_rng(1)
        z = np.exp(rng.normal(size=8))
        a = full_loglik_bruteforce(LogisticModel(8, 0.3), z)
        assert logistic_full_loglik_recursive(0.3, z) == pytest.approx(a, rel=1e-10)

    def test_recursion_high_dimension_is_finite(self):
        rng = np.random.default_rng(2)
        z = sample_logistic(100, 0.9, 3, rng).values
        vals = logistic_full_loglik_recursive(0.9, z)
        assert vals.shape == (3,) and np.all(np.isfinite(vals))
        # the largest series term must stay representable once exponentiated relative to the sum
        small = logistic_full_loglik_recursive(0.05, z[0])
        assert np.isfinite(small)

    def test_recursion_rejects_bad_theta(self):
        with pytest.raises(ValueError):
            logistic_full_loglik_recursive(0.0, [1.0, 1.0])
        with pytest.raises(ValueError):
            logistic_full_loglik_recursive(1.5, [1.0, 1.0])

    def test_bruteforce_guard(self):
        with pytest.raises(ValueError):
            full_loglik_bruteforce(LogisticModel(13, 0.5), np.ones(13))

    def test_dominates_each_partition(self):
        m = LogisticModel(4, 0.45)
        z = np.array([0.3, 0.9, 1.7, 4.0])
        full = full_loglik_bruteforce(m, z)
        assert all(st_loglik(m, z, p) <= full for p in enumerate_partitions(4))

    def test_partition_posterior_sums_to_one(self):
        parts, probs = exact_partition_posterior(LogisticModel(4, 0.5), np.array([1.0, 2.0, 0.5, 1.5]))
        assert len(parts) == 15 and probs.sum() == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("model", [LogisticModel(2, 0.3), LogisticModel(2, 0.9),
                                       BrownResnickModel(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0, 1.0)],
                             ids=["logistic-0.3", "logistic-0.9", "br-gamma1"])
    def test_bivariate_density_normalization(self, model):
        # integrate on log scale: z = exp(x), dz = z dx
        x = np.linspace(-4.0, 14.0, 1201)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        z = np.exp(np.column_stack([X1.ravel(), X2.ravel()]))
        if isinstance(model, LogisticModel):
            lg = logistic_full_loglik_recursive(model.theta, z)
        else:
            lg = bivariate_loglik(model, z)
        f = np.exp(lg + np.log(z).sum(axis=1)).reshape(X1.shape)
        total = trapezoid(trapezoid(f, x, axis=1), x)
        assert total == pytest.approx(1.0, abs=1e-3)


class TestPairwise:
    def test_single_pair_equals_full(self):
        m = BrownResnickModel(np.array([[0.0, 0.0], [0.5, 0.5]]), 0.7, 1.4)
        z = np.array([[0.5, 1.3], [2.0, 0.8], [1.0, 1.0]])
        want = sum(full_loglik_bruteforce(m, r) for r in z)
        assert pairwise_loglik(m, z) == pytest.approx(want, rel=1e-12)

    def test_all_pairs_count(self):
        w = PairWeighting.all_pairs(10)
        assert len(w.pairs) == 45

    def test_linear_in_weights(self):
        m = LogisticModel(4, 0.5)
        z = sample_logistic(4, 0.5, 5, np.random.default_rng(3)).values
        w = PairWeighting.all_pairs(4)
        assert pairwise_loglik(m, z, w.scaled(2.0)) == pytest.approx(2 * pairwise_loglik(m, z, w), rel=1e-14)

    def test_matches_explicit_pair_sum(self):
        m = BrownResnickModel(SITES3, 0.9, 1.1)
        z = np.array([[0.7, 1.1, 2.5], [1.5, 0.4, 0.9]])
        want = sum(full_loglik_bruteforce(m.subset([i, j]), r[[i, j]])
                   for r in z for i, j in [(0, 1), (0, 2), (1, 2)])
        assert pairwise_loglik(m, z) == pytest.approx(want, rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            PairWeighting((), ())
        with pytest.raises(ValueError):
            PairWeighting(((0, 1),), (-1.0,))
        with pytest.raises(ValueError):
            PairWeighting(((0, 1), (1, 2)), (0.0, 0.0))
        with pytest.raises(ValueError):
            pairwise_loglik(LogisticModel(1, 0.5), [[1.0]])


class TestMle:
    def test_logistic_sanity_band(self):
        ds = sample_logistic(10, 0.5, 20, np.random.default_rng(11))
        fit = mle_fit("full_recursive", LogisticModel(10, 0.6), ds)
        assert 0.4 <= fit.params[0] <= 0.6
        assert fit.converged

    def test_logistic_consistency(self):
        ds = sample_logistic(5, 0.6, 500, np.random.default_rng(12))
        fit = mle_fit("full", LogisticModel(5, 0.5), ds)
        assert abs(fit.params[0] - 0.6) < 0.02

    def test_maximizes(self):
        ds = sample_logistic(6, 0.4, 15, np.random.default_rng(13))
        fit = mle_fit("full_recursive", LogisticModel(6, 0.6), ds)
        grid = np.linspace(0.05, 1.0, 400)
        ll = [full_loglik(LogisticModel(6, t), ds) for t in grid]
        assert fit.loglik >= max(ll) - 1e-9
        assert abs(fit.params[0] - grid[int(np.argmax(ll))]) < 2 * (grid[1] - grid[0])

    def test_pairwise_brown_resnick_median(self):
        rng = np.random.default_rng(14)
        est = []
        for _ in range(16):
            sites = random_sites(10, rng)
            ds = sample_brown_resnick(sites, 1.5, 1.5, 10, rng)
            fit = mle_fit("pairwise", BrownResnickModel(sites.coords, 1.0, 1.0), ds)
            est.append(fit.params)
        med = np.median(est, axis=0)
        assert np.all(np.abs(med - 1.5) <= 0.3 * 1.5), med

    def test_errors(self):
        ds = sample_logistic(3, 0.5, 5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            mle_fit("triplewise", LogisticModel(3, 0.5), ds)
        with pytest.raises(ValueError):
            mle_fit("full_recursive", BrownResnickModel(SITES3, 1.0, 1.0), ds)
