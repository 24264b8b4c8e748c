"""Tree-structured VQ placement by successive binary splitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vq import lloyd_run

SPLIT_FACTOR = 0.01


@dataclass(eq=False)
class TsvqNode:
    codepoint: np.ndarray
    user_set: np.ndarray  # indices into the training set
    stage: int = 0
    children: list["TsvqNode"] = field(default_factory=list)
    degenerate: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def distortion(self, users) -> float:
        if len(self.user_set) == 0:
            return 0.0
        d = users[self.user_set] - self.codepoint
        return float(np.sum(d * d))


@dataclass
class TsvqTree:
    root: TsvqNode
    leaves: list[TsvqNode]
    stage_mse: list[float]

    @property
    def placement(self) -> np.ndarray:
        return np.array([leaf.codepoint for leaf in self.leaves])

    def leaf_index(self, node: TsvqNode) -> int:
        for i, leaf in enumerate(self.leaves):
            if leaf is node:
                return i
        raise KeyError("node is not a leaf of this tree")


def split_codepoint(node: TsvqNode, users, factor=SPLIT_FACTOR):
    """Two perturbed copies ``c + d`` and ``c - d`` of the node's codepoint.

    ``d`` is ``factor`` times the per-coordinate sample standard deviation of
    the node's users. Returns ``(children, degenerate)``; a node with fewer
    than two distinct users yields two copies of the codepoint and
    ``degenerate=True``.
    """
    pts = np.asarray(users, dtype=float)[node.user_set]
    c = np.asarray(node.codepoint, dtype=float)
    if len(pts) < 2 or len(np.unique(pts, axis=0)) < 2:
        return np.array([c, c]), True
    d = factor * pts.std(axis=0, ddof=1)
    return np.array([c + d, c - d]), False


def _split(node: TsvqNode, users, max_iters, tol):
    init, degenerate = split_codepoint(node, users)
    sub = users[node.user_set]
    if degenerate:
        left = TsvqNode(init[0], node.user_set, node.stage + 1, degenerate=True)
        right = TsvqNode(init[1], node.user_set[:0], node.stage + 1, degenerate=True)
        node.degenerate = True
    else:
        res = lloyd_run(sub, 2, init=init, max_iters=max_iters, tol=tol)
        a = res.partition.assignment
        left = TsvqNode(res.placement[0], node.user_set[a == 0], node.stage + 1)
        right = TsvqNode(res.placement[1], node.user_set[a == 1], node.stage + 1)
    node.children = [left, right]
    return [left, right]


def _leaf_mse(users, leaves):
    total = sum(leaf.distortion(users) for leaf in leaves)
    return total / len(users)


def tsvq_build(users, M, *, max_iters=50, tol=1e-6) -> TsvqTree:
    """Grow the tree until it has ``M`` leaves.

    Every stage splits all leaves while the doubled count fits in ``M``; the
    last partial stage (non power-of-two ``M``) splits the leaves with the
    largest within-cell distortion first.
    """
    users = np.asarray(users, dtype=float)
    if M < 1:
        raise ValueError("M must be >= 1")
    if M > len(np.unique(users, axis=0)):
        raise ValueError(f"M={M} exceeds the number of distinct training users")
    root = TsvqNode(users.mean(axis=0), np.arange(len(users)), 0)
    leaves = [root]
    stage_mse = [_leaf_mse(users, leaves)]
    while len(leaves) < M:
        need = M - len(leaves)
        if need >= len(leaves):
            chosen = set(range(len(leaves)))
        else:
            dist = np.array([leaf.distortion(users) for leaf in leaves])
            order = np.argsort(-dist, kind="stable")
            chosen = set(order[:need].tolist())
        new_leaves = []
        for i, leaf in enumerate(leaves):
            if i in chosen:
                new_leaves.extend(_split(leaf, users, max_iters, tol))
            else:
                new_leaves.append(leaf)
        leaves = new_leaves
        stage_mse.append(_leaf_mse(users, leaves))
    return TsvqTree(root, leaves, stage_mse)


def tsvq_run(users, M, **kw) -> np.ndarray:
    """Leaf codepoints of a TSVQ tree with ``M`` leaves, as an (M, 2) placement."""
    return tsvq_build(users, M, **kw).placement


def tsvq_encode(tree: TsvqTree, p, *, return_count=False):
    """Greedy root-to-leaf descent; returns the leaf (AP) index.

    With ``return_count`` the number of distance evaluations is returned too
    (two per internal node visited).
    """
    p = np.asarray(p, dtype=float)
    node = tree.root
    count = 0
    while not node.is_leaf:
        a, b = node.children
        da = np.sum((p - a.codepoint) ** 2)
        db = np.sum((p - b.codepoint) ** 2)
        count += 2
        node = a if da <= db else b
    idx = tree.leaf_index(node)
    return (idx, count) if return_count else idx
