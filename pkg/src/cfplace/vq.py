"""Standard VQ placement: the Lloyd algorithm under squared-error distortion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

# A placement is an (M, 2) float array of AP positions in meters.
Placement = np.ndarray


@dataclass
class PartitionResult:
    assignment: np.ndarray  # (n,) AP index per user
    dist2: np.ndarray  # (n,) squared distance to the assigned AP
    num_cells: int

    @property
    def mse(self) -> float:
        return float(self.dist2.mean())

    @property
    def cells(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == m) for m in range(self.num_cells)]


@dataclass
class LloydResult:
    placement: Placement
    mse_trace: list[float]
    iterations: int
    converged: bool
    partition: PartitionResult = field(repr=False)

    @property
    def mse(self) -> float:
        return self.mse_trace[-1]


def pairwise_sq_dist(a, b) -> np.ndarray:
    diff = np.asarray(a, dtype=float)[:, None, :] - np.asarray(b, dtype=float)[None, :, :]
    return np.einsum("nmi,nmi->nm", diff, diff)


def nearest_neighbor_partition(users, placement) -> PartitionResult:
    """Assign every user to its closest AP; ties go to the lowest AP index."""
    d2 = pairwise_sq_dist(users, placement)
    idx = np.argmin(d2, axis=1)
    return PartitionResult(idx, d2[np.arange(len(idx)), idx], len(placement))


def centroid_update(users, partition: PartitionResult, placement=None) -> Placement:
    """Move each AP to the mean of its cell.

    An empty cell's AP is re-seeded onto the training point with the largest
    current distortion (successively, if several cells are empty). Without
    ``placement`` an empty cell is an error.
    """
    users = np.asarray(users, dtype=float)
    M = partition.num_cells
    counts = np.bincount(partition.assignment, minlength=M)
    sums = np.zeros((M, 2))
    np.add.at(sums, partition.assignment, users)
    out = np.empty((M, 2))
    nonempty = counts > 0
    out[nonempty] = sums[nonempty] / counts[nonempty, None]
    empty = np.flatnonzero(~nonempty)
    if len(empty):
        if placement is None:
            raise ValueError("empty cell and no placement to re-seed from")
        order = np.argsort(-partition.dist2, kind="stable")
        taken = set()
        j = 0
        for m in empty:
            while j < len(order) and tuple(users[order[j]]) in taken:
                j += 1
            pick = order[min(j, len(order) - 1)]
            out[m] = users[pick]
            taken.add(tuple(users[pick]))
            j += 1
    return out


def kmeans_pp_init(users, M, rng) -> Placement:
    """k-means++ seeding: first center uniform, later ones by D^2 sampling."""
    users = np.asarray(users, dtype=float)
    centers = [users[rng.integers(len(users))]]
    d2 = np.sum((users - centers[0]) ** 2, axis=1)
    for _ in range(1, M):
        total = d2.sum()
        if total <= 0:
            raise ValueError("not enough distinct training points for k-means++")
        i = rng.choice(len(users), p=d2 / total)
        centers.append(users[i])
        d2 = np.minimum(d2, np.sum((users - users[i]) ** 2, axis=1))
    return np.array(centers)


def random_init(users, M, rng) -> Placement:
    """M distinct training points chosen uniformly."""
    uniq = np.unique(np.asarray(users, dtype=float), axis=0)
    return uniq[rng.choice(len(uniq), size=M, replace=False)]


def _num_distinct(users) -> int:
    return len(np.unique(np.asarray(users, dtype=float), axis=0))


def lloyd_run(users, M, init=None, *, rng=None, seed=None, init_method="kmeans++",
              max_iters=50, tol=1e-6) -> LloydResult:
    """One Lloyd run (NNC then CC, repeated).

    ``init`` may be an explicit (M, 2) placement; otherwise it is drawn with
    ``init_method`` from ``rng``/``seed``. Stops when the partition no longer
    changes, when the relative MSE improvement drops below ``tol``, or after
    ``max_iters`` centroid updates.
    """
    users = np.asarray(users, dtype=float)
    if M < 1:
        raise ValueError("M must be >= 1")
    if M > _num_distinct(users):
        raise ValueError(f"M={M} exceeds the number of distinct training users")
    if init is None:
        rng = rng if rng is not None else np.random.default_rng(seed)
        if init_method == "kmeans++":
            q = kmeans_pp_init(users, M, rng)
        elif init_method == "random":
            q = random_init(users, M, rng)
        else:
            raise ValueError(f"unknown init_method {init_method!r}")
    else:
        q = np.array(init, dtype=float)
        if q.shape != (M, 2):
            raise ValueError(f"init must have shape ({M}, 2), got {q.shape}")

    part = nearest_neighbor_partition(users, q)
    trace = [part.mse]
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        q = centroid_update(users, part, q)
        new = nearest_neighbor_partition(users, q)
        prev = trace[-1]
        trace.append(new.mse)
        same = np.array_equal(new.assignment, part.assignment)
        part = new
        if same or prev - new.mse <= tol * prev:
            converged = True
            break
    return LloydResult(q, trace, it, converged, part)


def lloyd(users, M, *, restarts=10, seed=None, init_method="kmeans++", max_iters=50,
          tol=1e-6) -> LloydResult:
    """Best-of-``restarts`` Lloyd runs by final MSE; restart streams are spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(max(1, restarts))
    best = None
    for child in children:
        res = lloyd_run(users, M, rng=np.random.default_rng(child), init_method=init_method,
                        max_iters=max_iters, tol=tol)
        if best is None or res.mse < best.mse:
            best = res
    return best


def high_res_ap_density(density, p, *, region=None, n_grid=801):
    """High-resolution AP density ``f^(1/2) / integral(f^(1/2))``.

    ``density`` is a :class:`~cfplace.scenario.UserDensity` or any callable
    mapping (n, 2) points to density values; the normalizer is a Simpson
    quadrature over ``region`` (defaults to the density's region).
    """
    from .scenario import UserDensity, pdf_eval

    if isinstance(density, UserDensity):
        f = lambda pts: pdf_eval(density, pts)  # noqa: E731
        region = region or density.region
    else:
        f = density
        if region is None:
            raise ValueError("region is required for a callable density")
    norm = _sqrt_mass(f, tuple(region), n_grid)
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    val = np.sqrt(np.asarray(f(pts), dtype=float)) / norm
    return float(val[0]) if np.ndim(p) == 1 else val


def _sqrt_mass(f, region, n_grid):
    xmin, xmax, ymin, ymax = region
    xs = np.linspace(xmin, xmax, n_grid)
    ys = np.linspace(ymin, ymax, n_grid)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = np.sqrt(np.asarray(f(np.column_stack([X.ravel(), Y.ravel()])), dtype=float))
    vals = vals.reshape(X.shape)
    return simpson(simpson(vals, x=ys, axis=1), x=xs)
