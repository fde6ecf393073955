from collections import deque

import numpy as np
import pytest

from services.tree_geometry import ORIGIN, TreeParams, Vertex, neighbours, predecessor


class BruteTree:
    """A ball of the tree materialised vertex by vertex, with BFS distances.

    ``transition`` is the dense walk matrix A on the ball; rows of vertices at
    least k steps from the boundary give exact A^k entries.
    """

    def __init__(self, tree: TreeParams, centre: Vertex = ORIGIN, radius: int = 6):
        self.tree = tree
        self.centre = centre
        self.radius = radius
        self.depth = {centre: 0}
        queue = deque([centre])
        while queue:
            v = queue.popleft()
            if self.depth[v] == radius:
                continue
            for u in neighbours(v, tree):
                if u not in self.depth:
                    self.depth[u] = self.depth[v] + 1
                    queue.append(u)
        self.vertices = sorted(self.depth)
        self.index = {v: i for i, v in enumerate(self.vertices)}

    def bfs_distance(self, x: Vertex, y: Vertex) -> int:
        seen = {x: 0}
        queue = deque([x])
        while queue:
            v = queue.popleft()
            if v == y:
                return seen[v]
            for u in neighbours(v, self.tree):
                if u in self.index and u not in seen:
                    seen[u] = seen[v] + 1
                    queue.append(u)
        raise KeyError(f"{y} not reachable from {x} inside the ball")

    def sphere(self, m: int):
        return [v for v, d in self.depth.items() if d == m]

    def transition(self) -> np.ndarray:
        q = self.tree.q
        A = np.zeros((len(self.vertices), len(self.vertices)))
        for v, i in self.index.items():
            p = predecessor(v)
            if p in self.index:
                A[i, self.index[p]] = 0.5
            for u in neighbours(v, self.tree)[1:]:
                if u in self.index:
                    A[i, self.index[u]] = 1.0 / (2 * q)
        return A

    def mu(self, v: Vertex) -> float:
        return float(self.tree.q) ** v.level


@pytest.fixture(params=[2, 3], ids=["q2", "q3"])
def tree(request) -> TreeParams:
    return TreeParams(request.param)


@pytest.fixture
def tree2() -> TreeParams:
    return TreeParams(2)


@pytest.fixture
def brute():
    def build(tree: TreeParams, centre: Vertex = ORIGIN, radius: int = 6) -> BruteTree:
        return BruteTree(tree, centre, radius)
    return build


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    """Each test runs in its own directory (log and cache files land there)."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("TREEFLOW_SEED", raising=False)
