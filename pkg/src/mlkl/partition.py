"""Binary kd-tree over cell barycenters.

Each node splits its barycenters along the coordinate axis of largest
sample variance at the median of that coordinate.  Nodes with fewer than
``n0`` members (or whose barycenters all coincide) become leaves.  Nodes
are numbered breadth-first: ``(level, k)`` with ``k`` counting left to
right within a level, the root being ``(0, 0)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .geometry import SimplicialDomain

__all__ = ["SplitRule", "TreeNode", "PartitionTree", "choose_rule", "make_tree"]


@dataclass(frozen=True)
class SplitRule:
    axis: int
    threshold: float

    def goes_left(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points)[:, self.axis] <= self.threshold


@dataclass(eq=False)
class TreeNode:
    level: int
    member_ids: np.ndarray
    index: int = -1
    rule: SplitRule | None = None
    children: tuple["TreeNode", "TreeNode"] | None = None
    parent: "TreeNode | None" = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def size(self) -> int:
        return int(self.member_ids.size)

    @property
    def label(self) -> tuple[int, int]:
        return (self.level, self.index)


@dataclass(eq=False)
class PartitionTree:
    root: TreeNode
    leaf_capacity: int
    levels: list[list[TreeNode]]
    n_cells: int

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def nodes(self) -> list[TreeNode]:
        """All nodes, breadth-first."""
        return [node for level in self.levels for node in level]

    @property
    def leaves(self) -> list[TreeNode]:
        return [node for node in self.nodes if node.is_leaf]

    def node(self, level: int, index: int) -> TreeNode:
        return self.levels[level][index]

    def __len__(self):
        return sum(len(level) for level in self.levels)

    def covering_nodes(self, cell_id: int) -> list[TreeNode]:
        """Root-to-leaf path of nodes whose member set contains ``cell_id``."""
        path = []
        node = self.root
        while True:
            path.append(node)
            if node.is_leaf:
                return path
            left, right = node.children
            node = left if np.any(left.member_ids == cell_id) else right


def choose_rule(points) -> SplitRule:
    """Max-variance axis and the median threshold along it.

    Ties between axes go to the lowest index; the median of an even count is
    the mean of the two middle values.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[0] < 2:
        raise InvalidArgumentError("choose_rule needs at least 2 points")
    var = pts.var(axis=0, ddof=1)
    axis = int(np.argmax(var))
    return SplitRule(axis=axis, threshold=float(np.median(pts[:, axis])))


def _split(points: np.ndarray, ids: np.ndarray):
    """Return (rule, left_ids, right_ids) or None if the points all coincide."""
    if np.all(points == points[0]):
        return None
    rule = choose_rule(points)
    go_left = points[:, rule.axis] <= rule.threshold
    if go_left.all() or not go_left.any():
        # ties at the median emptied a side: split by rank, stable in id order
        order = np.argsort(points[:, rule.axis], kind="stable")
        go_left = np.zeros(ids.size, dtype=bool)
        go_left[order[: (ids.size + 1) // 2]] = True
    return rule, ids[go_left], ids[~go_left]


def make_tree(domain: SimplicialDomain, n0: int = 2) -> PartitionTree:
    """Build the kd-tree over ``domain`` barycenters with leaf capacity ``n0``."""
    if int(n0) < 2:
        raise InvalidArgumentError("leaf capacity n0 must be >= 2")
    n0 = int(n0)
    bary = domain.barycenters
    root = TreeNode(level=0, member_ids=np.arange(domain.n_cells))
    levels: list[list[TreeNode]] = []
    queue = deque([root])
    while queue:
        node = queue.popleft()
        if len(levels) <= node.level:
            levels.append([])
        node.index = len(levels[node.level])
        levels[node.level].append(node)
        node.member_ids.setflags(write=False)
        if node.size < n0:
            continue
        split = _split(bary[node.member_ids], node.member_ids)
        if split is None:
            continue
        rule, left_ids, right_ids = split
        node.rule = rule
        node.children = (
            TreeNode(level=node.level + 1, member_ids=left_ids, parent=node),
            TreeNode(level=node.level + 1, member_ids=right_ids, parent=node),
        )
        queue.extend(node.children)
    return PartitionTree(root=root, leaf_capacity=n0, levels=levels, n_cells=domain.n_cells)
