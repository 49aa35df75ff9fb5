"""
Conforming triangular meshes of a rectangle with red refinement and
longest-edge bisection closure.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from models import InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_ANGLE_FLOOR = 20.0

# local edge j joins local vertices LOCAL_EDGES[j]
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))

EdgeKey = Tuple[int, int]


def _key(a: int, b: int) -> EdgeKey:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class MarkSet:
    """Set of triangle indices selected for refinement"""
    marked: frozenset = field(default_factory=frozenset)

    @classmethod
    def of(cls, indices: Iterable[int]) -> "MarkSet":
        return cls(frozenset(int(i) for i in indices))

    def validate(self, mesh: "Mesh"):
        for index in self.marked:
            if index < 0 or index >= mesh.n_triangles:
                raise InvalidArgumentError(
                    f"Marked triangle {index} outside 0..{mesh.n_triangles - 1}")

    def __len__(self):
        return len(self.marked)

    def __iter__(self):
        return iter(sorted(self.marked))

    def __contains__(self, index):
        return index in self.marked


class Mesh:
    """
    Immutable conforming triangulation.

    Besides the visible triangles the mesh keeps its refinement hierarchy:
    the red-refined leaf triangles, the midpoint vertex of every edge that
    was ever split and, per visible triangle, the leaf it was cut from.
    Triangles cut from a leaf by the closure are dissolved back into the
    leaf before the next refinement.
    """

    def __init__(self, vertices, triangles, domain: Tuple[float, float, float, float],
                 leaves=None, leaf_of=None, midpoints: Optional[Dict[EdgeKey, int]] = None,
                 parents=None):
        self.vertices = np.array(vertices, dtype=float)
        self.triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        self.domain = tuple(float(v) for v in domain)
        self.leaves = (np.array(leaves, dtype=np.int64).reshape(-1, 3)
                       if leaves is not None else self.triangles.copy())
        self.leaf_of = (np.array(leaf_of, dtype=np.int64)
                        if leaf_of is not None else np.arange(len(self.triangles)))
        self.midpoints = dict(midpoints or {})
        self.parents = (np.array(parents, dtype=np.int64)
                        if parents is not None else np.arange(len(self.triangles)))
        self._build_topology()
        for array in (self.vertices, self.triangles, self.leaves, self.leaf_of, self.parents,
                      self.edges, self.triangle_edges, self.edge_triangles):
            array.setflags(write=False)

    def __str__(self):
        return f"Triangular mesh with {self.n_vertices} vertices and {self.n_triangles} triangles."

    def __repr__(self):
        return self.__str__()

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def _build_topology(self):
        """Enumerate edges and their adjacent triangles"""
        edge_index: Dict[EdgeKey, int] = {}
        edges: List[EdgeKey] = []
        triangle_edges = np.empty((self.n_triangles, 3), dtype=np.int64)
        adjacency: List[List[int]] = []
        for t, tri in enumerate(self.triangles):
            for j, (a, b) in enumerate(LOCAL_EDGES):
                key = _key(int(tri[a]), int(tri[b]))
                e = edge_index.get(key)
                if e is None:
                    e = len(edges)
                    edge_index[key] = e
                    edges.append(key)
                    adjacency.append([])
                adjacency[e].append(t)
                triangle_edges[t, j] = e

        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.triangle_edges = triangle_edges
        self.edge_index = edge_index
        self.edge_triangles = -np.ones((len(edges), 2), dtype=np.int64)
        self.interior_edges: Dict[EdgeKey, Tuple[int, int]] = {}
        self.boundary_edges = set()
        for e, owners in enumerate(adjacency):
            if len(owners) > 2:
                raise InvalidArgumentError(f"Edge {edges[e]} shared by {len(owners)} triangles")
            self.edge_triangles[e, :len(owners)] = owners
            if len(owners) == 2:
                self.interior_edges[edges[e]] = (owners[0], owners[1])
            else:
                self.boundary_edges.add(edges[e])
        self.boundary_edge_mask = self.edge_triangles[:, 1] < 0

    # Geometry

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        u = p[:, 1] - p[:, 0]
        v = p[:, 2] - p[:, 0]
        return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def diameters(self) -> np.ndarray:
        """Longest edge length h_K of every triangle"""
        return self.edge_lengths()[self.triangle_edges].max(axis=1)

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees"""
        return float(np.min(self.angles()))

    def angles(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        result = np.empty((self.n_triangles, 3))
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cosine = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            result[:, i] = np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0)))
        return result

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edge_mask])

    def on_boundary(self, points: np.ndarray) -> np.ndarray:
        x0, x1, y0, y1 = self.domain
        points = np.atleast_2d(points)
        return ((points[:, 0] == x0) | (points[:, 0] == x1)
                | (points[:, 1] == y0) | (points[:, 1] == y1))

    def check_conformity(self) -> Dict[str, object]:
        """Invariant summary used by tests and the verify suite"""
        counts = np.sum(self.edge_triangles >= 0, axis=1)
        boundary_points = self.vertices[self.boundary_vertices()]
        return {
            'interior_edges_ok': bool(np.all(counts[~self.boundary_edge_mask] == 2)),
            'boundary_edges_ok': bool(np.all(counts[self.boundary_edge_mask] == 1)),
            'positive_areas': bool(np.all(self.signed_areas() > 0)),
            'boundary_on_domain': bool(np.all(self.on_boundary(boundary_points))),
            'hanging_nodes': self._count_hanging_nodes(),
            'min_angle': self.min_angle(),
        }

    def _count_hanging_nodes(self) -> int:
        """Vertices lying strictly inside some triangle edge"""
        count = 0
        used = np.unique(self.triangles)
        for (a, b), m in self.midpoints.items():
            if m in used and _key(a, b) in self.edge_index:
                count += 1
        return count

    def is_conforming(self) -> bool:
        summary = self.check_conformity()
        return (summary['interior_edges_ok'] and summary['boundary_edges_ok']
                and summary['positive_areas'] and summary['hanging_nodes'] == 0)


def build_rect_mesh(domain: Sequence[float], nx: int, ny: int) -> Mesh:
    """
    Structured mesh of [x0, x1] x [y0, y1] with every cell split along
    its bottom-left to top-right diagonal.
    """
    if nx < 1 or ny < 1:
        raise InvalidArgumentError(f"Mesh counts must be positive, got nx={nx}, ny={ny}")
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgumentError(f"Degenerate domain {tuple(domain)}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    # pin the outer coordinates so boundary vertices sit exactly on the boundary
    xs[0], xs[-1], ys[0], ys[-1] = x0, x1, y0, y1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    triangles = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            v10 = v00 + 1
            v01 = v00 + nx + 1
            v11 = v01 + 1
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))
    return Mesh(vertices, triangles, (x0, x1, y0, y1))


def element_diameter(mesh: Mesh, K: int) -> float:
    """Longest edge length of triangle K"""
    if K < 0 or K >= mesh.n_triangles:
        raise InvalidArgumentError(f"Triangle index {K} out of range")
    p = mesh.vertices[mesh.triangles[K]]
    return float(max(np.linalg.norm(p[b] - p[a]) for a, b in LOCAL_EDGES))


def edge_length(mesh: Mesh, E: Union[int, Tuple[int, int]]) -> float:
    """Euclidean length of an edge given by index or by its vertex pair"""
    if isinstance(E, (int, np.integer)):
        if E < 0 or E >= mesh.n_edges:
            raise InvalidArgumentError(f"Edge index {E} out of range")
        a, b = mesh.edges[E]
    else:
        a, b = (int(v) for v in E)
    if a == b:
        raise InvalidArgumentError(f"Degenerate edge ({a}, {b})")
    length = float(np.linalg.norm(mesh.vertices[b] - mesh.vertices[a]))
    if length == 0.0:
        raise InvalidArgumentError(f"Edge ({a}, {b}) has coincident endpoints")
    return length


class _Refiner:
    """Working state of one refine() call"""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.points: List[Tuple[float, float]] = [tuple(p) for p in mesh.vertices]
        self.midpoints = dict(mesh.midpoints)
        self.leaves: List[Tuple[int, int, int]] = [tuple(int(v) for v in t) for t in mesh.leaves]
        self.origin: List[int] = list(range(len(self.leaves)))
        self.alive: List[bool] = [True] * len(self.leaves)

    def midpoint(self, a: int, b: int) -> int:
        key = _key(a, b)
        m = self.midpoints.get(key)
        if m is None:
            pa, pb = self.points[a], self.points[b]
            self.points.append((0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])))
            m = len(self.points) - 1
            self.midpoints[key] = m
        return m

    def is_split(self, a: int, b: int) -> bool:
        return _key(a, b) in self.midpoints

    def is_over_split(self, a: int, b: int) -> bool:
        """True when a half of edge (a, b) is itself split"""
        m = self.midpoints.get(_key(a, b))
        return m is not None and (self.is_split(a, m) or self.is_split(m, b))

    def longest_edge(self, tri: Tuple[int, int, int]) -> int:
        lengths = []
        for a, b in LOCAL_EDGES:
            pa, pb = self.points[tri[a]], self.points[tri[b]]
            lengths.append((pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2)
        return int(np.argmax(lengths))

    def red(self, leaf: int):
        a, b, c = self.leaves[leaf]
        mab, mbc, mca = self.midpoint(a, b), self.midpoint(b, c), self.midpoint(c, a)
        self.alive[leaf] = False
        for child in ((a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)):
            self.leaves.append(child)
            self.origin.append(self.origin[leaf])
            self.alive.append(True)

    def close(self):
        """
        Refine until every leaf has either no split edge, or a split
        longest edge plus at most one more split edge, and no edge split
        twice.
        """
        while True:
            pending = []
            created = False
            for leaf, tri in enumerate(self.leaves):
                if not self.alive[leaf]:
                    continue
                split = [self.is_split(tri[a], tri[b]) for a, b in LOCAL_EDGES]
                if sum(split) == 3 or any(self.is_over_split(tri[a], tri[b]) for a, b in LOCAL_EDGES):
                    pending.append(leaf)
                    continue
                if any(split):
                    longest = self.longest_edge(tri)
                    if not split[longest]:
                        a, b = LOCAL_EDGES[longest]
                        self.midpoint(tri[a], tri[b])
                        created = True
            for leaf in pending:
                self.red(leaf)
            if not pending and not created:
                return

    def triangulate(self) -> Tuple[List[Tuple[int, int, int]], List[int]]:
        """Visible triangles of the alive leaves, with their leaf index"""
        triangles, leaf_of = [], []
        for leaf, tri in enumerate(self.leaves):
            if not self.alive[leaf]:
                continue
            pieces = self._closure_pieces(tri)
            triangles.extend(pieces)
            leaf_of.extend([leaf] * len(pieces))
        return triangles, leaf_of

    def _closure_pieces(self, tri):
        split = [self.is_split(tri[a], tri[b]) for a, b in LOCAL_EDGES]
        if not any(split):
            return [tri]
        longest = self.longest_edge(tri)
        # rotate so the longest edge is (p, q) with opposite vertex r
        p, q, r = tri[longest], tri[(longest + 1) % 3], tri[(longest + 2) % 3]
        m = self.midpoints[_key(p, q)]
        if self.is_split(q, r):
            n = self.midpoints[_key(q, r)]
            return [(p, m, r), (m, q, n), (m, n, r)]
        if self.is_split(r, p):
            n = self.midpoints[_key(r, p)]
            return [(m, q, r), (p, m, n), (n, m, r)]
        return [(p, m, r), (m, q, r)]


def refine(mesh: Mesh, marks: Union[MarkSet, Iterable[int]],
           angle_floor: float = DEFAULT_ANGLE_FLOOR) -> Mesh:
    """
    Red-refine every marked triangle and close the result conformingly.

    A marked closure triangle refines the leaf it was cut from. The
    returned mesh carries `parents`: for each new triangle the index of
    the old triangle containing it, or -1 if it straddles a dissolved
    closure cut.
    """
    if not isinstance(marks, MarkSet):
        marks = MarkSet.of(marks)
    marks.validate(mesh)
    if not marks.marked:
        return mesh

    refiner = _Refiner(mesh)
    for leaf in sorted({int(mesh.leaf_of[t]) for t in marks.marked}):
        refiner.red(leaf)
    refiner.close()
    triangles, leaf_of = refiner.triangulate()

    vertices = np.array(refiner.points)
    origin = [refiner.origin[leaf] for leaf in leaf_of]
    parents = _locate_parents(mesh, vertices, triangles, origin)
    refined = Mesh(vertices, triangles, mesh.domain, leaves=[refiner.leaves[i] for i in sorted(set(leaf_of))],
                   leaf_of=_renumber(leaf_of), midpoints=refiner.midpoints, parents=parents)

    smallest = refined.min_angle()
    if smallest < angle_floor:
        logger.warning(f"Refined mesh minimum angle {smallest:.2f} deg below floor {angle_floor:.1f} deg")
    logger.debug(f"Refined {len(marks)} marked of {mesh.n_triangles} triangles -> {refined.n_triangles}")
    return refined


def refine_uniform(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, MarkSet.of(range(mesh.n_triangles)))
    return mesh


def _renumber(leaf_of: List[int]) -> List[int]:
    mapping = {leaf: i for i, leaf in enumerate(sorted(set(leaf_of)))}
    return [mapping[leaf] for leaf in leaf_of]


def _locate_parents(mesh: Mesh, vertices: np.ndarray, triangles, origin) -> np.ndarray:
    """Index of the old visible triangle containing each new triangle"""
    pieces_of: Dict[int, List[int]] = {}
    for t, leaf in enumerate(mesh.leaf_of):
        pieces_of.setdefault(int(leaf), []).append(t)

    parents = -np.ones(len(triangles), dtype=np.int64)
    for i, (tri, leaf) in enumerate(zip(triangles, origin)):
        candidates = pieces_of[leaf]
        if len(candidates) == 1:
            parents[i] = candidates[0]
            continue
        corners = vertices[list(tri)]
        for t in candidates:
            if _contains(mesh.vertices[mesh.triangles[t]], corners):
                parents[i] = t
                break
    return parents


def _contains(triangle: np.ndarray, points: np.ndarray, tol: float = 1e-10) -> bool:
    a, b, c = triangle
    T = np.column_stack([b - a, c - a])
    local = np.linalg.solve(T, (points - a).T).T
    bary = np.column_stack([1.0 - local.sum(axis=1), local])
    return bool(np.all(bary >= -tol))
