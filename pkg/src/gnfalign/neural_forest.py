"""Differentiable decision forests with greedy frozen evaluation.

A forest holds T complete oblique trees of depth D per output dimension.
Split node n computes d = sigmoid(beta . z - theta); in soft mode a leaf l
is reached with probability mu_l, the product of d (right turns) and 1 - d
(left turns) along its root path, and the tree predicts sum_l mu_l * y_l.
Leaf values are drawn once from a Gaussian fitted to the residual targets
and never trained; only split parameters learn, via a recursive
bottom-up error pass. Freezing switches evaluation to hard routing
(follow the more probable child), which costs D split evaluations per
tree instead of 2^D - 1.

Trees are stored stacked: beta (n_trees, n_splits, k), theta
(n_trees, n_splits), leaves (n_trees, n_leaves), with n_trees = output_dim
* trees_per_dim grouped dimension-major and nodes in heap order (children
of n at 2n+1 / 2n+2).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import greedy_descend, split_update

MODE_SOFT = "soft"
MODE_GREEDY = "greedy"

SIGMA_FLOOR = 1e-6
_LOGIT_CLAMP = 35.0
_D_CLAMP = 1e-12


class DepthBoundDomainError(ValueError):
    """An inner logarithm argument of the depth bound left (0, 1)."""


def depth_lower_bound(sigma: float, epsilon: float, epsilon_prime: float) -> float:
    """Sufficient tree depth for Gaussian leaf coverage.

    Returns the real-valued depth D0 above which 2^D leaf predictions drawn
    from N(mean, sigma) leave, with probability > 1 - epsilon_prime, no
    point of [mean - sigma, mean + sigma] farther than epsilon from every
    leaf. Callers take the ceiling.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0 < epsilon_prime < 1:
        raise ValueError(f"epsilon_prime must lie in (0, 1), got {epsilon_prime}")

    # 1 - (1 - eps')^(1/(2 sigma)), kept stable for extreme sigma.
    a_arg = -math.expm1(math.log1p(-epsilon_prime) / (2.0 * sigma))
    b_sub = (2.0 * epsilon / (math.sqrt(2.0 * math.pi) * sigma)) * math.exp(
        -((sigma + epsilon) ** 2) / (2.0 * sigma**2)
    )
    b_arg = 1.0 - b_sub
    if not 0.0 < a_arg <= 1.0:
        raise DepthBoundDomainError(
            f"1 - (1-eps')^(1/2sigma) = {a_arg} outside (0, 1]"
        )
    if not 0.0 < b_arg < 1.0:
        raise DepthBoundDomainError(
            f"1 - 2 eps exp(-(sigma+eps)^2/2 sigma^2) / (sqrt(2 pi) sigma) = {b_arg} "
            "outside (0, 1); epsilon too large for sigma"
        )
    log_a = math.log(a_arg)
    log_b = math.log(b_arg)
    if log_a == 0.0:
        return -math.inf
    return math.log(log_a / log_b) / math.log(2.0)


def leaf_coverage_frequency(
    mean: float,
    sigma: float,
    epsilon: float,
    depth: int,
    trials: int = 2000,
    grid_points: int = 200,
    seed: int = 0,
) -> float:
    """Monte-Carlo estimate of the coverage event bounded by the depth formula.

    Draws 2^depth leaf values from N(mean, sigma) per trial and reports the
    fraction of trials in which every point of a grid over
    [mean - sigma, mean + sigma] has a leaf within epsilon.
    """
    rng = np.random.default_rng(seed)
    n_leaves = 2**depth
    grid = np.linspace(mean - sigma, mean + sigma, grid_points)
    hits = 0
    for _ in range(trials):
        leaves = np.sort(rng.normal(mean, sigma, size=n_leaves))
        pos = np.searchsorted(leaves, grid)
        left = np.where(pos > 0, grid - leaves[np.maximum(pos - 1, 0)], np.inf)
        right = np.where(pos < n_leaves, leaves[np.minimum(pos, n_leaves - 1)] - grid, np.inf)
        if np.all(np.minimum(left, right) < epsilon):
            hits += 1
    return hits / trials


@dataclass(frozen=True)
class LeafStats:
    """Per-output-dimension mean and standard deviation of the residual targets."""

    mean: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        sigma = np.maximum(np.asarray(self.sigma, dtype=np.float64), SIGMA_FLOOR)
        if mean.shape != sigma.shape or mean.ndim != 1:
            raise ValueError("mean and sigma must be 1-D and of equal length")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sigma", sigma)
        self.mean.setflags(write=False)
        self.sigma.setflags(write=False)

    @classmethod
    def from_targets(cls, targets: np.ndarray) -> "LeafStats":
        """Stats of a (n_examples, output_dim) target matrix."""
        targets = np.asarray(targets, dtype=np.float64)
        return cls(targets.mean(axis=0), targets.std(axis=0))


@dataclass
class Tree:
    """A view of one tree's parameters inside a forest (shares memory)."""

    beta: np.ndarray
    theta: np.ndarray
    leaves: np.ndarray

    @property
    def depth(self) -> int:
        return int(round(math.log2(self.leaves.shape[0])))

    @property
    def n_splits(self) -> int:
        return self.theta.shape[0]


@dataclass
class Forest:
    """Stacked single-objective trees, trees_per_dim per output dimension."""

    beta: np.ndarray
    theta: np.ndarray
    leaves: np.ndarray
    output_dim: int
    trees_per_dim: int
    depth: int
    stats: LeafStats
    mode: str = MODE_SOFT
    soft_split_evals: int = field(default=0, compare=False)
    greedy_split_evals: int = field(default=0, compare=False)

    @property
    def n_trees(self) -> int:
        return self.output_dim * self.trees_per_dim

    @property
    def n_splits(self) -> int:
        return 2**self.depth - 1

    @property
    def n_leaves(self) -> int:
        return 2**self.depth

    @property
    def input_dim(self) -> int:
        return self.beta.shape[2]

    def tree(self, dim: int, t: int) -> Tree:
        idx = dim * self.trees_per_dim + t
        return Tree(self.beta[idx], self.theta[idx], self.leaves[idx])

    def _check_input(self, z: np.ndarray) -> np.ndarray:
        z = np.ascontiguousarray(z, dtype=np.float64)
        if z.shape != (self.input_dim,):
            raise ValueError(f"input length {z.shape} != ({self.input_dim},)")
        return z


def init_forest(
    stats: LeafStats,
    trees_per_dim: int,
    depth: int,
    input_dim: int,
    seed,
    init_range: float = 0.01,
) -> Forest:
    """Build a soft forest with Gaussian leaf values and uniform split weights.

    Leaf values for dimension k are drawn from N(stats.mean[k],
    stats.sigma[k]); split weights and thresholds from
    U[-init_range, init_range]. Warns if depth is below the coverage bound
    for some dimension. Deterministic given the seed (draw order: beta,
    theta, leaves).
    """
    if trees_per_dim < 1 or depth < 1 or input_dim < 1:
        raise ValueError("trees_per_dim, depth and input_dim must be positive")
    output_dim = stats.mean.shape[0]
    if output_dim < 1:
        raise ValueError("stats must cover at least one output dimension")

    needed = 0.0
    for sigma in stats.sigma:
        bound = depth_lower_bound(float(sigma), float(sigma) / 10.0, 0.01)
        needed = max(needed, bound)
    if depth < math.ceil(needed):
        warnings.warn(
            f"depth {depth} is below the leaf-coverage bound {math.ceil(needed)} "
            "for the given residual spread",
            stacklevel=2,
        )

    rng = np.random.default_rng(seed)
    n_trees = output_dim * trees_per_dim
    n_splits = 2**depth - 1
    n_leaves = 2**depth
    beta = rng.uniform(-init_range, init_range, size=(n_trees, n_splits, input_dim))
    theta = rng.uniform(-init_range, init_range, size=(n_trees, n_splits))
    leaves = rng.normal(
        np.repeat(stats.mean, trees_per_dim)[:, None],
        np.repeat(stats.sigma, trees_per_dim)[:, None],
        size=(n_trees, n_leaves),
    )
    leaves.setflags(write=False)
    return Forest(beta, theta, leaves, output_dim, trees_per_dim, depth, stats)


def _activations(beta2d: np.ndarray, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Split activations d = sigmoid(beta . z - theta) for stacked trees."""
    logits = beta2d @ z - theta.ravel()
    np.clip(logits, -_LOGIT_CLAMP, _LOGIT_CLAMP, out=logits)
    d = 1.0 / (1.0 + np.exp(-logits))
    np.clip(d, _D_CLAMP, 1.0 - _D_CLAMP, out=d)
    return d.reshape(theta.shape)


def _leaf_probabilities(d: np.ndarray, depth: int, with_nodes: bool = False):
    """Root-to-leaf products of d / (1 - d), level by level.

    d has shape (n_trees, 2^depth - 1) in heap order. Returns mu over leaves
    (n_trees, 2^depth); if with_nodes, also the reach probability mu_n of
    every split node (n_trees, 2^depth - 1).
    """
    n_trees = d.shape[0]
    mu_nodes = np.empty_like(d) if with_nodes else None
    mu = np.ones((n_trees, 1))
    for level in range(depth):
        lo = 2**level - 1
        dl = d[:, lo : lo + 2**level]
        if with_nodes:
            mu_nodes[:, lo : lo + 2**level] = mu
        mu = np.stack([mu * (1.0 - dl), mu * dl], axis=2).reshape(n_trees, -1)
    if with_nodes:
        return mu, mu_nodes
    return mu


def soft_route(tree: Tree, z: np.ndarray):
    """Leaf reach probabilities and split activations for one tree.

    Returns (mu, d): mu[l] is the product of activations along leaf l's
    path (sums to 1 across leaves), d[n] the sigmoid activation of split n.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (tree.beta.shape[1],):
        raise ValueError(f"input length {z.shape} != ({tree.beta.shape[1]},)")
    d = _activations(tree.beta.reshape(-1, tree.beta.shape[1]), tree.theta[None, :], z)
    mu = _leaf_probabilities(d, tree.depth)
    return mu[0], d[0]


def _group_means(per_tree: np.ndarray, output_dim: int, trees_per_dim: int) -> np.ndarray:
    return per_tree.reshape(output_dim, trees_per_dim).mean(axis=1)


def nf_predict(forest: Forest, z: np.ndarray) -> np.ndarray:
    """Soft prediction: per tree sum_l mu_l y_l, averaged over each group."""
    z = forest._check_input(z)
    d = _activations(forest.beta.reshape(-1, forest.input_dim), forest.theta, z)
    mu = _leaf_probabilities(d, forest.depth)
    per_tree = np.einsum("tl,tl->t", mu, forest.leaves)
    forest.soft_split_evals += forest.n_trees * forest.n_splits
    return _group_means(per_tree, forest.output_dim, forest.trees_per_dim)


def gnf_predict(forest: Forest, z: np.ndarray) -> np.ndarray:
    """Greedy prediction: hard-route each tree, average reached leaves per group."""
    z = forest._check_input(z)
    per_tree = np.empty(forest.n_trees)
    greedy_descend(forest.beta, forest.theta, forest.leaves, z, per_tree)
    forest.greedy_split_evals += forest.n_trees * forest.depth
    return _group_means(per_tree, forest.output_dim, forest.trees_per_dim)


def predict(forest: Forest, z: np.ndarray) -> np.ndarray:
    """Mode-dispatching prediction (soft before freezing, greedy after)."""
    if forest.mode == MODE_GREEDY:
        return gnf_predict(forest, z)
    return nf_predict(forest, z)


def _error_recursion(d: np.ndarray, leaf_error: np.ndarray, depth: int):
    """Bottom-up expected errors.

    Returns (eps_nodes, eps_minus, eps_plus) over split nodes in heap order,
    where eps_minus / eps_plus are the expected errors of the left / right
    subtrees and eps_nodes[n] = d eps_plus + (1 - d) eps_minus.
    """
    n_trees, n_splits = d.shape
    eps_nodes = np.empty((n_trees, n_splits))
    eps_minus = np.empty((n_trees, n_splits))
    eps_plus = np.empty((n_trees, n_splits))
    eps = leaf_error
    for level in range(depth - 1, -1, -1):
        lo = 2**level - 1
        sl = slice(lo, lo + 2**level)
        e_minus = eps[:, 0::2]
        e_plus = eps[:, 1::2]
        eps_minus[:, sl] = e_minus
        eps_plus[:, sl] = e_plus
        eps = d[:, sl] * e_plus + (1.0 - d[:, sl]) * e_minus
        eps_nodes[:, sl] = eps
    return eps_nodes, eps_minus, eps_plus


def backward(tree: Tree, z: np.ndarray, per_leaf_error: np.ndarray, lr: float) -> np.ndarray:
    """One SGD step on a single tree's split parameters.

    per_leaf_error[l] is the scalar error of leaf l against the target.
    Performs the recursive bottom-up error pass, updates every split by

        theta += lr * mu d (1-d) (eps_plus - eps_minus)
        beta  -= lr * mu d (1-d) (eps_plus - eps_minus) * z

    (the negative gradient direction), leaves leaf values untouched, and
    returns this tree's input-gradient contribution (before any
    forest-level averaging).
    """
    z = np.asarray(z, dtype=np.float64)
    per_leaf_error = np.asarray(per_leaf_error, dtype=np.float64)
    k = tree.beta.shape[1]
    d = _activations(tree.beta.reshape(-1, k), tree.theta[None, :], z)
    _, mu_nodes = _leaf_probabilities(d, tree.depth, with_nodes=True)
    _, eps_minus, eps_plus = _error_recursion(d, per_leaf_error[None, :], tree.depth)
    grad_factor = (mu_nodes * d * (1.0 - d) * (eps_plus - eps_minus))[0]
    input_grad = grad_factor @ tree.beta
    tree.theta += lr * grad_factor
    tree.beta -= np.outer(lr * grad_factor, z)
    return input_grad


def forest_sgd_step(
    forest: Forest, z: np.ndarray, target: np.ndarray, lr_base: float
) -> np.ndarray:
    """One online update of every tree, with per-dimension learning rates.

    Leaf errors are squared distances (y_l - target_k)^2 for the trees of
    dimension k, updated with lr_base / sigma_k. Returns the input gradient
    averaged over all trees (1 / (trees_per_dim * output_dim)) for chaining
    into the projection layer. Gradients are computed from pre-step
    parameters for every tree, then applied.
    """
    if forest.mode == MODE_GREEDY:
        raise ValueError("cannot train a frozen (greedy) forest")
    z = forest._check_input(z)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (forest.output_dim,):
        raise ValueError(f"target length {target.shape} != ({forest.output_dim},)")
    if not np.all(np.isfinite(target)):
        raise ValueError("target contains non-finite values")

    d = _activations(forest.beta.reshape(-1, forest.input_dim), forest.theta, z)
    _, mu_nodes = _leaf_probabilities(d, forest.depth, with_nodes=True)
    per_tree_target = np.repeat(target, forest.trees_per_dim)
    leaf_error = (forest.leaves - per_tree_target[:, None]) ** 2
    _, eps_minus, eps_plus = _error_recursion(d, leaf_error, forest.depth)
    grad_factor = mu_nodes * d * (1.0 - d) * (eps_plus - eps_minus)

    alpha = np.repeat(lr_base / forest.stats.sigma, forest.trees_per_dim)
    input_grad = np.zeros(forest.input_dim)
    split_update(forest.beta, forest.theta, grad_factor, alpha, z, input_grad)
    input_grad /= forest.n_trees
    return input_grad


def freeze(forest: Forest) -> Forest:
    """Switch to greedy evaluation; parameters are untouched. Idempotent."""
    forest.mode = MODE_GREEDY
    return forest


def tree_expected_error(tree: Tree, z: np.ndarray, per_leaf_error: np.ndarray) -> float:
    """Soft-routed expected leaf error sum_l mu_l eps_l (the trained objective)."""
    mu, _ = soft_route(tree, z)
    return float(mu @ np.asarray(per_leaf_error, dtype=np.float64))
