"""Compiled kernels for the evaluation and training hot paths.

Everything here is deliberately loop-structured: the greedy descent touches
only the split rows on the chosen path (the whole point of hard routing),
and the update kernels stream each weight row exactly once in a fixed order
so results are bit-reproducible.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def greedy_descend(beta, theta, leaves, z, out):
    """Hard-routed forest evaluation.

    For every tree, walk from the root taking the right child iff
    beta . z - theta > 0; exactly `depth` split evaluations per tree.
    Writes the reached leaf value of tree t into out[t].
    """
    n_trees, n_splits, k = beta.shape
    for t in range(n_trees):
        node = 0
        while node < n_splits:
            acc = 0.0
            row = beta[t, node]
            for j in range(k):
                acc += row[j] * z[j]
            if acc - theta[t, node] > 0.0:
                node = 2 * node + 2
            else:
                node = 2 * node + 1
        out[t] = leaves[t, node - n_splits]


@numba.njit(cache=True)
def split_update(beta, theta, grad_factor, alpha, z, input_grad):
    """Apply one SGD step to every split and accumulate the input gradient.

    grad_factor[t, s] = mu * d * (1 - d) * (eps_plus - eps_minus), computed
    by the caller from pre-step parameters. Per split:

        theta[t, s] += alpha[t] * grad_factor[t, s]
        beta[t, s, :] -= alpha[t] * grad_factor[t, s] * z

    input_grad accumulates sum_{t,s} grad_factor[t, s] * beta_old[t, s, :];
    each row is read before it is written, so the accumulated gradient uses
    pre-step weights. Summation order is fixed (t, then s, then j).
    """
    n_trees, n_splits, k = beta.shape
    for t in range(n_trees):
        a = alpha[t]
        for s in range(n_splits):
            gf = grad_factor[t, s]
            if gf == 0.0:
                continue
            row = beta[t, s]
            step = a * gf
            for j in range(k):
                input_grad[j] += gf * row[j]
                row[j] -= step * z[j]
            theta[t, s] += step


@numba.njit(cache=True)
def sparse_rows_matvec(indptr, indices, values, x, out):
    """out[r] = sum over the stored (index, value) pairs of row r of W @ x.

    Four accumulators per row keep the dependent-add chain off the critical
    path; the final combine order is fixed for reproducibility.
    """
    n_rows = out.shape[0]
    for r in range(n_rows):
        lo = indptr[r]
        hi = indptr[r + 1]
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        acc3 = 0.0
        i = lo
        while i + 4 <= hi:
            acc0 += values[i] * x[indices[i]]
            acc1 += values[i + 1] * x[indices[i + 1]]
            acc2 += values[i + 2] * x[indices[i + 2]]
            acc3 += values[i + 3] * x[indices[i + 3]]
            i += 4
        while i < hi:
            acc0 += values[i] * x[indices[i]]
            i += 1
        out[r] = (acc0 + acc1) + (acc2 + acc3)


@numba.njit(cache=True)
def truncated_weight_update(weights, grad_pre, x, lr, eta, trunc):
    """In-place truncated-gradient step on a dense weight matrix.

    w <- w - lr * grad_pre[r] * x[c] - lr * eta * sgn(w); any result with
    |w| < trunc is rounded to exactly zero. sgn uses the pre-step weight,
    so exact zeros receive no L1 pull and stay zero.
    """
    n_rows, n_cols = weights.shape
    le = lr * eta
    for r in range(n_rows):
        g = lr * grad_pre[r]
        row = weights[r]
        for c in range(n_cols):
            w0 = row[c]
            w = w0 - g * x[c]
            if w0 > 0.0:
                w -= le
            elif w0 < 0.0:
                w += le
            if -trunc < w < trunc:
                w = 0.0
            row[c] = w
