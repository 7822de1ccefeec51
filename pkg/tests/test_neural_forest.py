import copy
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnfalign import neural_forest as nf


def make_forest(output_dim=2, trees=2, depth=3, input_dim=4, seed=0, init_range=0.3, sigma=1.0):
    stats = nf.LeafStats(np.zeros(output_dim), np.full(output_dim, sigma))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return nf.init_forest(stats, trees, depth, input_dim, seed=seed, init_range=init_range)


def brute_force_mu(tree, z):
    """Per-leaf probability via the explicit root-to-leaf product."""
    _, d = nf.soft_route(tree, z)
    depth = tree.depth
    mu = np.empty(2**depth)
    for leaf in range(2**depth):
        node = 0
        prob = 1.0
        for level in range(depth):
            bit = (leaf >> (depth - 1 - level)) & 1
            prob *= d[node] if bit else (1.0 - d[node])
            node = 2 * node + 1 + bit
        mu[leaf] = prob
    return mu


def brute_force_predict(forest, z):
    out = np.zeros(forest.output_dim)
    for g in range(forest.output_dim):
        acc = 0.0
        for t in range(forest.trees_per_dim):
            tree = forest.tree(g, t)
            mu = brute_force_mu(tree, z)
            acc += float(mu @ tree.leaves)
        out[g] = acc / forest.trees_per_dim
    return out


def greedy_walk(tree, z):
    """Reference hard routing; returns (leaf value, split evaluations)."""
    node = 0
    evals = 0
    n_splits = tree.n_splits
    while node < n_splits:
        evals += 1
        node = 2 * node + 2 if tree.beta[node] @ z - tree.theta[node] > 0 else 2 * node + 1
    return tree.leaves[node - n_splits], evals


class TestDepthLowerBound:
    def test_reference_sigmas_need_at_most_depth_8(self):
        for sigma in (0.1, 0.5, 1.0, 5.0, 10.0):
            bound = nf.depth_lower_bound(sigma, sigma / 10.0, 0.01)
            assert math.ceil(bound) <= 8

    def test_bounded_over_log_spaced_range(self):
        for sigma in np.logspace(np.log10(0.1), np.log10(10.0), 50):
            bound = nf.depth_lower_bound(float(sigma), float(sigma) / 10.0, 0.01)
            assert math.ceil(bound) <= 8

    def test_grows_like_log_resolution(self):
        # D0 ~ -ln(eps)/ln(2) as eps -> 0; at eps = 1e-6 sigma the additive
        # constant is small for sigma = 0.1, and the ratio tightens as eps
        # shrinks further.
        sigma = 0.1
        ratio = lambda eps: nf.depth_lower_bound(sigma, eps, 0.01) / (-math.log(eps) / math.log(2))
        r6 = ratio(1e-6 * sigma)
        assert 0.9 <= r6 <= 1.1
        r9 = ratio(1e-9 * sigma)
        r12 = ratio(1e-12 * sigma)
        assert abs(r9 - 1.0) < abs(r6 - 1.0)
        assert abs(r12 - 1.0) < abs(r9 - 1.0)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            nf.depth_lower_bound(-1.0, 0.1, 0.01)
        with pytest.raises(ValueError):
            nf.depth_lower_bound(1.0, 0.1, 1.5)
        with pytest.raises(nf.DepthBoundDomainError):
            # epsilon so large the inner log argument leaves (0, 1)
            nf.depth_lower_bound(1.0, 40.0, 0.01)

    def test_monte_carlo_coverage(self):
        sigma = 1.0
        eps = sigma / 10.0
        depth = math.ceil(nf.depth_lower_bound(sigma, eps, 0.01))
        freq = nf.leaf_coverage_frequency(
            0.0, sigma, eps, depth, trials=500, grid_points=200, seed=3
        )
        stderr = math.sqrt(0.01 * 0.99 / 500)
        assert freq >= 1.0 - 0.01 - 3 * stderr


class TestInitForest:
    def test_structure_and_parameter_count(self):
        forest = make_forest(output_dim=20, trees=25, depth=8, input_dim=4, seed=1)
        assert forest.n_trees == 500
        assert forest.n_splits == 255
        assert forest.beta.shape == (500, 255, 4)
        assert forest.beta.size == 20 * 25 * 255 * 4
        # at the reference input width the split weights count 63.75M
        assert 20 * 25 * 255 * 500 == 63_750_000

    def test_leaf_sample_mean_near_stats_mean(self):
        means = np.array([1.0, -2.0, 0.5])
        sigmas = np.array([0.5, 2.0, 1.0])
        stats = nf.LeafStats(means, sigmas)
        forest = nf.init_forest(stats, trees_per_dim=25, depth=8, input_dim=3, seed=9)
        per_group = forest.leaves.reshape(3, -1)
        n = per_group.shape[1]
        for g in range(3):
            assert abs(per_group[g].mean() - means[g]) < 4 * sigmas[g] / math.sqrt(n)

    def test_deterministic(self):
        a = make_forest(seed=123)
        b = make_forest(seed=123)
        assert np.array_equal(a.beta, b.beta)
        assert np.array_equal(a.theta, b.theta)
        assert np.array_equal(a.leaves, b.leaves)

    def test_shallow_depth_warns(self):
        stats = nf.LeafStats(np.zeros(1), np.ones(1))
        with pytest.warns(UserWarning, match="below the leaf-coverage bound"):
            nf.init_forest(stats, 1, 3, 4, seed=0)

    def test_bad_dimensions(self):
        stats = nf.LeafStats(np.zeros(1), np.ones(1))
        with pytest.raises(ValueError):
            nf.init_forest(stats, 0, 8, 4, seed=0)

    def test_sigma_floor(self):
        stats = nf.LeafStats(np.zeros(2), np.array([0.0, 1.0]))
        assert stats.sigma[0] == nf.SIGMA_FLOOR


class TestSoftRoute:
    def test_symmetric_routing(self):
        forest = make_forest(depth=4)
        tree = forest.tree(0, 0)
        tree.beta[:] = 0.0
        tree.theta[:] = 0.0
        mu, d = nf.soft_route(tree, np.ones(4))
        np.testing.assert_allclose(d, 0.5, atol=1e-15)
        np.testing.assert_allclose(mu, 2.0**-4, atol=1e-15)

    def test_saturated_right(self):
        forest = make_forest(depth=8)
        tree = forest.tree(0, 0)
        tree.beta[:] = 0.0
        tree.theta[:] = -100.0  # logit = +100 everywhere -> clamped, d ~ 1
        mu, _ = nf.soft_route(tree, np.zeros(4))
        assert mu[-1] > 0.99

    def test_matches_brute_force_products(self, rng):
        for seed in range(5):
            forest = make_forest(depth=4, seed=seed, init_range=0.8)
            tree = forest.tree(rng.integers(2), rng.integers(2))
            z = rng.normal(size=4)
            mu, _ = nf.soft_route(tree, z)
            np.testing.assert_allclose(mu, brute_force_mu(tree, z), atol=1e-14)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_normalization(self, seed):
        r = np.random.default_rng(seed)
        forest = make_forest(depth=int(r.integers(1, 6)), seed=seed, init_range=2.0)
        z = r.normal(size=4) * 10
        mu, _ = nf.soft_route(forest.tree(int(r.integers(2)), int(r.integers(2))), z)
        assert abs(mu.sum() - 1.0) < 1e-12
        assert np.all(mu >= 0.0) and np.all(mu <= 1.0)


class TestPredict:
    def test_constant_leaves(self):
        forest = make_forest(output_dim=1, trees=1)
        forest.leaves = np.full_like(forest.leaves, 3.25)
        for z in (np.zeros(4), np.ones(4), np.array([5.0, -3.0, 2.0, 0.1])):
            assert nf.nf_predict(forest, z)[0] == pytest.approx(3.25, abs=1e-12)

    def test_uniform_routing_gives_leaf_mean(self):
        forest = make_forest(output_dim=2, trees=3)
        forest.beta[:] = 0.0
        forest.theta[:] = 0.0
        pred = nf.nf_predict(forest, np.ones(4))
        expected = forest.leaves.reshape(2, -1).mean(axis=1)
        np.testing.assert_allclose(pred, expected, atol=1e-12)

    def test_matches_enumeration_oracle(self, rng):
        forest = make_forest(output_dim=3, trees=4, depth=4, seed=11, init_range=0.6)
        for _ in range(5):
            z = rng.normal(size=4)
            np.testing.assert_allclose(
                nf.nf_predict(forest, z), brute_force_predict(forest, z), atol=1e-12
            )

    def test_prediction_within_leaf_range(self, rng):
        forest = make_forest(output_dim=3, trees=4, depth=4, seed=2)
        per_group = forest.leaves.reshape(3, -1)
        for _ in range(10):
            pred = nf.nf_predict(forest, rng.normal(size=4))
            assert np.all(pred >= per_group.min(axis=1) - 1e-12)
            assert np.all(pred <= per_group.max(axis=1) + 1e-12)

    def test_input_length_checked(self):
        forest = make_forest()
        with pytest.raises(ValueError):
            nf.nf_predict(forest, np.zeros(5))


class TestGreedyPredict:
    def test_all_right_tree(self):
        forest = make_forest(output_dim=1, trees=1)
        tree = forest.tree(0, 0)
        tree.beta[:] = 0.0
        tree.theta[:] = -1.0  # logit = +1 at every node: always right
        assert nf.gnf_predict(forest, np.zeros(4))[0] == pytest.approx(
            tree.leaves[-1], abs=0.0
        )

    def test_matches_reference_walk(self, rng):
        forest = make_forest(output_dim=3, trees=3, depth=5, seed=4, init_range=0.5)
        for _ in range(5):
            z = rng.normal(size=4)
            pred = nf.gnf_predict(forest, z)
            manual = np.zeros(3)
            for g in range(3):
                vals = [greedy_walk(forest.tree(g, t), z)[0] for t in range(3)]
                manual[g] = np.mean(vals)
            np.testing.assert_allclose(pred, manual, atol=1e-15)

    def test_saturated_forest_matches_soft(self, rng):
        # drive every split far from the decision boundary
        forest = make_forest(output_dim=2, trees=3, depth=4, seed=5)
        forest.beta[:] = 0.0
        forest.theta[:] = rng.choice([-30.0, 30.0], size=forest.theta.shape)
        z = rng.normal(size=4)
        assert np.abs(nf.nf_predict(forest, z) - nf.gnf_predict(forest, z)).max() < 1e-6

    def test_split_evaluation_counters(self):
        forest = make_forest(output_dim=2, trees=3, depth=6)
        z = np.ones(4)
        nf.nf_predict(forest, z)
        assert forest.soft_split_evals == forest.n_trees * (2**6 - 1)
        nf.gnf_predict(forest, z)
        assert forest.greedy_split_evals == forest.n_trees * 6
        _, evals = greedy_walk(forest.tree(0, 0), z)
        assert evals == 6


class TestBackward:
    def test_equal_leaf_errors_change_nothing(self):
        forest = make_forest()
        tree = forest.tree(1, 0)
        beta0, theta0 = tree.beta.copy(), tree.theta.copy()
        grad = nf.backward(tree, np.ones(4), np.full(tree.leaves.shape, 2.5), lr=0.1)
        np.testing.assert_array_equal(tree.beta, beta0)
        np.testing.assert_array_equal(tree.theta, theta0)
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_parameter_gradients_match_finite_differences(self, rng):
        step = 1e-6
        for seed in range(10):
            forest = make_forest(depth=3, seed=seed, init_range=0.5)
            tree = forest.tree(0, 0)
            z = rng.normal(size=4)
            leaf_err = rng.uniform(0.0, 4.0, size=tree.leaves.shape[0])
            ref_beta, ref_theta = tree.beta.copy(), tree.theta.copy()

            lr = 1.0
            nf.backward(tree, z, leaf_err, lr)
            # update = -lr * dE/dphi
            grad_theta = -(tree.theta - ref_theta) / lr
            grad_beta = -(tree.beta - ref_beta) / lr

            probe = nf.Tree(ref_beta.copy(), ref_theta.copy(), tree.leaves)
            for s in range(tree.n_splits):
                probe.theta[s] += step
                ep = nf.tree_expected_error(probe, z, leaf_err)
                probe.theta[s] -= 2 * step
                em = nf.tree_expected_error(probe, z, leaf_err)
                probe.theta[s] += step
                fd = (ep - em) / (2 * step)
                if abs(fd) > 1e-9:
                    assert abs(grad_theta[s] - fd) / abs(fd) < 1e-4
                j = s % 4
                probe.beta[s, j] += step
                ep = nf.tree_expected_error(probe, z, leaf_err)
                probe.beta[s, j] -= 2 * step
                em = nf.tree_expected_error(probe, z, leaf_err)
                probe.beta[s, j] += step
                fd = (ep - em) / (2 * step)
                if abs(fd) > 1e-9:
                    assert abs(grad_beta[s, j] - fd) / abs(fd) < 1e-4

    def test_root_error_telescopes_to_expected_error(self, rng):
        forest = make_forest(depth=5, seed=8, init_range=0.7)
        tree = forest.tree(0, 1)
        z = rng.normal(size=4)
        leaf_err = rng.uniform(0.0, 3.0, size=tree.leaves.shape[0])
        d = nf._activations(tree.beta.reshape(-1, 4), tree.theta[None, :], z)
        eps_nodes, _, _ = nf._error_recursion(d, leaf_err[None, :], tree.depth)
        assert abs(eps_nodes[0, 0] - nf.tree_expected_error(tree, z, leaf_err)) < 1e-12

    def test_leaves_untouched(self, rng):
        forest = make_forest()
        tree = forest.tree(0, 0)
        before = tree.leaves.tobytes()
        nf.backward(tree, rng.normal(size=4), rng.uniform(0, 2, tree.leaves.shape[0]), 0.5)
        assert tree.leaves.tobytes() == before


class TestForestSgdStep:
    def test_zero_gradient_when_errors_symmetric(self):
        forest = make_forest(output_dim=2, trees=2)
        forest.leaves = np.zeros_like(forest.leaves)
        grad = nf.forest_sgd_step(forest, np.ones(4), np.zeros(2), lr_base=0.1)
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_input_gradient_matches_finite_differences(self, rng):
        step = 1e-6
        for seed in range(10):
            forest = make_forest(output_dim=2, trees=2, depth=3, seed=seed, init_range=0.5)
            z = rng.normal(size=4)
            target = rng.normal(size=2)

            def loss(forest, zz):
                total = 0.0
                for g in range(forest.output_dim):
                    for t in range(forest.trees_per_dim):
                        tree = forest.tree(g, t)
                        leaf_err = (tree.leaves - target[g]) ** 2
                        total += nf.tree_expected_error(tree, zz, leaf_err)
                return total / forest.n_trees

            grad = nf.forest_sgd_step(copy.deepcopy(forest), z, target, lr_base=0.0)
            for j in range(4):
                zp, zm = z.copy(), z.copy()
                zp[j] += step
                zm[j] -= step
                fd = (loss(forest, zp) - loss(forest, zm)) / (2 * step)
                if abs(fd) > 1e-9:
                    assert abs(grad[j] - fd) / abs(fd) < 1e-4

    def test_matches_per_tree_backward_bitwise(self, rng):
        forest = make_forest(output_dim=3, trees=2, depth=4, seed=21)
        clone = copy.deepcopy(forest)
        z = rng.normal(size=4)
        target = rng.normal(size=3)
        lr = 0.05
        grad = nf.forest_sgd_step(forest, z, target, lr)

        acc = np.zeros(4)
        for g in range(3):
            alpha = lr / clone.stats.sigma[g]
            for t in range(2):
                tree = clone.tree(g, t)
                acc += nf.backward(tree, z, (tree.leaves - target[g]) ** 2, alpha)
        np.testing.assert_array_equal(forest.beta, clone.beta)
        np.testing.assert_array_equal(forest.theta, clone.theta)
        np.testing.assert_allclose(grad, acc / clone.n_trees, atol=1e-15)

    def test_learning_rate_scaled_per_dimension(self, rng):
        # same parameters and leaf errors, doubled sigma: exactly half the step
        a = make_forest(output_dim=2, trees=1, seed=3)
        b = nf.Forest(
            a.beta.copy(), a.theta.copy(), a.leaves, a.output_dim, a.trees_per_dim,
            a.depth, nf.LeafStats(a.stats.mean, np.array([1.0, 2.0])),
        )
        before = a.theta.copy()
        z = rng.normal(size=4)
        target = rng.normal(size=2)
        nf.forest_sgd_step(a, z, target, lr_base=0.01)
        nf.forest_sgd_step(b, z, target, lr_base=0.01)
        delta_a = (a.theta - before).reshape(2, -1)
        delta_b = (b.theta - before).reshape(2, -1)
        np.testing.assert_array_equal(delta_b[0], delta_a[0])
        np.testing.assert_allclose(delta_b[1], delta_a[1] / 2.0, atol=1e-18)

    def test_frozen_forest_rejected(self):
        forest = nf.freeze(make_forest())
        with pytest.raises(ValueError, match="frozen"):
            nf.forest_sgd_step(forest, np.ones(4), np.zeros(2), 0.1)

    def test_toy_training_progress(self):
        # target = sign(z1): 2000 online steps should halve the MSE
        r = np.random.default_rng(7)
        stats = nf.LeafStats(np.zeros(1), np.ones(1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            forest = nf.init_forest(stats, trees_per_dim=3, depth=4, input_dim=3, seed=1,
                                    init_range=0.5)
        eval_z = r.normal(size=(200, 3))
        eval_y = np.sign(eval_z[:, 0])

        def mse():
            preds = np.array([nf.nf_predict(forest, z)[0] for z in eval_z])
            return float(((preds - eval_y) ** 2).mean())

        before = mse()
        for _ in range(2000):
            z = r.normal(size=3)
            nf.forest_sgd_step(forest, z, np.array([np.sign(z[0])]), lr_base=0.1)
        after = mse()
        assert after <= 0.5 * before

    def test_leaves_byte_identical_after_training(self, rng):
        forest = make_forest(output_dim=2, trees=2)
        before = forest.leaves.tobytes()
        for _ in range(50):
            nf.forest_sgd_step(forest, rng.normal(size=4), rng.normal(size=2), 0.05)
        assert forest.leaves.tobytes() == before


class TestFreeze:
    def test_freeze_switches_prediction_to_greedy(self, rng):
        forest = make_forest(seed=31)
        z = rng.normal(size=4)
        greedy = nf.gnf_predict(forest, z)
        nf.freeze(forest)
        np.testing.assert_array_equal(nf.predict(forest, z), greedy)

    def test_parameters_unchanged_by_freeze(self):
        forest = make_forest(seed=32)
        checksums = (forest.beta.tobytes(), forest.theta.tobytes(), forest.leaves.tobytes())
        nf.freeze(forest)
        assert (forest.beta.tobytes(), forest.theta.tobytes(), forest.leaves.tobytes()) == checksums

    def test_idempotent(self):
        forest = nf.freeze(make_forest())
        assert nf.freeze(forest).mode == nf.MODE_GREEDY

    def test_trained_forest_greedy_soft_gap(self):
        # after training, activations saturate and the greedy/soft gap is
        # small relative to the residual spread (tight figure is advisory)
        r = np.random.default_rng(5)
        stats = nf.LeafStats(np.zeros(1), np.ones(1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            forest = nf.init_forest(stats, 5, 4, 3, seed=2, init_range=0.5)
        for _ in range(3000):
            z = r.normal(size=3)
            nf.forest_sgd_step(forest, z, np.array([np.sign(z[0])]), lr_base=0.1)
        gaps = []
        for _ in range(100):
            z = r.normal(size=3)
            gaps.append(abs(nf.nf_predict(forest, z)[0] - nf.gnf_predict(forest, z)[0]))
        assert np.mean(gaps) < 0.25 * forest.stats.sigma[0]
