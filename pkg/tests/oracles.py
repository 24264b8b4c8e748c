"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np


def sample_lloyd_max(levels, n=10_000_000, seed=0, tol=1e-9, max_iter=2000):
    """Scalar Lloyd iteration on ``n`` sorted standard-normal samples.

    Cell sums come from prefix sums, so every iteration costs one
    ``searchsorted`` regardless of ``n``.
    """
    x = np.sort(np.random.default_rng(seed).standard_normal(n))
    csum = np.concatenate([[0.0], np.cumsum(x)])
    y = np.quantile(x, (np.arange(levels) + 0.5) / levels)
    for _ in range(max_iter):
        cuts = np.searchsorted(x, 0.5 * (y[1:] + y[:-1]))
        edges = np.concatenate([[0], cuts, [n]])
        new = (csum[edges[1:]] - csum[edges[:-1]]) / np.diff(edges)
        if np.max(np.abs(new - y)) < tol:
            return new
        y = new
    return y


def experiment2_cluster_sums(M=32, sigma=100.0):
    """Per-cluster AP counts of the Experiment 2 mixture by hand eigen-decomposition.

    Cluster 2 has covariance sigma^2 [[1, 2/3], [2/3, 2]] with eigenvalues
    sigma^2 (7/3, 2/3), so c_2 = sigma^2 sqrt(14)/3; the spherical clusters
    have c = sigma^2.
    """
    s2 = sigma * sigma
    c = np.array([s2, s2 * np.sqrt(14.0) / 3.0, s2])
    w = np.array([0.6, 0.2, 0.2])
    share = np.sqrt(w * c)
    return M * share / share.sum()


def finite_difference(f, x, h=1e-3):
    """Central differences of scalar ``f`` with respect to every entry of ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(approx, exact):
    """Per-component relative error, guarding components that are exactly zero."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    floor = 1e-12 * max(np.max(np.abs(exact)), 1e-300)
    return np.abs(approx - exact) / np.maximum(np.abs(exact), floor)
