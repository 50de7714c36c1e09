"""The ambiguity multigraph over markers and the lifted solver's starting points.

Every covisible marker pair ``i < j`` in image ``t`` contributes four labelled
edges, one per hypothesis combination ``ab`` (``a`` for marker ``i``, ``b``
for marker ``j``), each carrying the marker-to-marker rotation
``Rj_bᵀ Ri_a``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import networkx as nx
import numpy as np

from .exceptions import DisconnectedGraph
from .ppe import AmbiguousDetection

LABELS = ((0, 0), (0, 1), (1, 0), (1, 1))
LABEL_STR = ("00", "01", "10", "11")


class EdgeKey(NamedTuple):
    t: int
    i: int
    j: int
    ab: str

    @property
    def a(self) -> int:
        return int(self.ab[0])

    @property
    def b(self) -> int:
        return int(self.ab[1])


def m2m_relative(Ri_a: np.ndarray, Rj_b: np.ndarray) -> np.ndarray:
    """Marker-to-marker rotation from two marker-to-camera rotations in one image."""
    return np.asarray(Rj_b).T @ np.asarray(Ri_a)


@dataclass
class AmbiguityMultigraph:
    """Markers as vertices, four parallel edges per covisible pair per image.

    Besides the dictionary view (``edges``), the graph keeps flat arrays over
    pairs that the solvers consume directly:

    ``pair_t, pair_i, pair_j``
        image id and marker ids of each covisible pair (``i < j``).
    ``pair_rot``
        ``(P, 4, 3, 3)`` edge rotations in label order 00, 01, 10, 11.
    ``pair_di, pair_dj``
        indices into ``detection_keys`` for the two endpoints.
    """

    detections: dict[tuple[int, int], AmbiguousDetection]
    images: dict[int, tuple[int, ...]]
    markers: tuple[int, ...]
    edges: dict[EdgeKey, np.ndarray] = field(repr=False)
    detection_keys: tuple[tuple[int, int], ...] = field(repr=False)
    pair_t: np.ndarray = field(repr=False)
    pair_i: np.ndarray = field(repr=False)
    pair_j: np.ndarray = field(repr=False)
    pair_rot: np.ndarray = field(repr=False)
    pair_di: np.ndarray = field(repr=False)
    pair_dj: np.ndarray = field(repr=False)

    @property
    def n_markers(self) -> int:
        return len(self.markers)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_t)

    @property
    def marker_index(self) -> dict[int, int]:
        return {m: k for k, m in enumerate(self.markers)}

    @property
    def detection_index(self) -> dict[tuple[int, int], int]:
        return {k: n for n, k in enumerate(self.detection_keys)}

    def edge(self, t: int, i: int, j: int, ab: str) -> np.ndarray:
        """Rotation of ``<i,j>^(t,ab)``; reversed pairs follow ``<j,i>^(ab) = <i,j>^(ba)`` transposed."""
        if i < j:
            return self.edges[EdgeKey(t, i, j, ab)]
        return self.edges[EdgeKey(t, j, i, ab[::-1])].T

    def edges_of_image(self, t: int) -> list[EdgeKey]:
        return [k for k in self.edges if k.t == t]

    def components(self) -> list[set[int]]:
        g = nx.Graph()
        g.add_nodes_from(self.markers)
        g.add_edges_from(zip(self.pair_i.tolist(), self.pair_j.tolist()))
        return [set(c) for c in nx.connected_components(g)]

    def is_connected(self) -> bool:
        return len(self.components()) == 1


def build_multigraph(
    detections: Iterable[AmbiguousDetection], check_connected: bool = True
) -> AmbiguityMultigraph:
    dets: dict[tuple[int, int], AmbiguousDetection] = {}
    for d in detections:
        if d.key in dets:
            raise ValueError(f"duplicate detection for image {d.image_id}, marker {d.marker_id}")
        dets[d.key] = d
    dets = dict(sorted(dets.items()))
    images: dict[int, list[int]] = {}
    for t, i in dets:
        images.setdefault(t, []).append(i)
    images_t = {t: tuple(sorted(ms)) for t, ms in sorted(images.items())}
    markers = tuple(sorted({i for _, i in dets}))
    det_index = {k: n for n, k in enumerate(dets)}

    edges: dict[EdgeKey, np.ndarray] = {}
    pt, pi, pj, prot, pdi, pdj = [], [], [], [], [], []
    for t, ms in images_t.items():
        for i, j in itertools.combinations(ms, 2):
            di, dj = dets[(t, i)], dets[(t, j)]
            rots = []
            for (a, b), s in zip(LABELS, LABEL_STR):
                R = m2m_relative(di.rotation(a), dj.rotation(b))
                R.setflags(write=False)
                edges[EdgeKey(t, i, j, s)] = R
                rots.append(R)
            pt.append(t)
            pi.append(i)
            pj.append(j)
            prot.append(rots)
            pdi.append(det_index[(t, i)])
            pdj.append(det_index[(t, j)])

    g = AmbiguityMultigraph(
        detections=dets,
        images=images_t,
        markers=markers,
        edges=edges,
        detection_keys=tuple(dets),
        pair_t=np.asarray(pt, dtype=int),
        pair_i=np.asarray(pi, dtype=int),
        pair_j=np.asarray(pj, dtype=int),
        pair_rot=np.asarray(prot, dtype=float).reshape(-1, 4, 3, 3),
        pair_di=np.asarray(pdi, dtype=int),
        pair_dj=np.asarray(pdj, dtype=int),
    )
    if check_connected:
        comps = g.components()
        if len(comps) > 1:
            raise DisconnectedGraph(comps)
    return g


def clique_bits(g: AmbiguityMultigraph, t: int, edge_subset: Iterable[EdgeKey]) -> dict[int, int] | None:
    """Per-vertex bits inducing ``edge_subset``, or ``None`` if it is not a consistent clique."""
    verts = g.images.get(t)
    if verts is None:
        return None
    seen_pairs = set()
    bits: dict[int, int] = {}
    for e in edge_subset:
        if e.t != t:
            return None
        i, j, ab = e.i, e.j, e.ab
        if i > j:
            i, j, ab = j, i, ab[::-1]
        if (i, j) in seen_pairs or EdgeKey(t, i, j, ab) not in g.edges:
            return None
        seen_pairs.add((i, j))
        for v, bit in ((i, int(ab[0])), (j, int(ab[1]))):
            if bits.setdefault(v, bit) != bit:
                return None
    if seen_pairs != set(itertools.combinations(verts, 2)):
        return None
    if len(verts) == 1:
        return {verts[0]: 0}
    if set(bits) != set(verts):
        return None
    return bits


def is_consistent_clique(g: AmbiguityMultigraph, t: int, edge_subset: Iterable[EdgeKey]) -> bool:
    return clique_bits(g, t, edge_subset) is not None


def induced_clique(t: int, bits: Mapping[int, int]) -> list[EdgeKey]:
    """Edges selected by a per-marker bit assignment in image ``t``."""
    verts = sorted(bits)
    return [EdgeKey(t, i, j, f"{bits[i]}{bits[j]}") for i, j in itertools.combinations(verts, 2)]


@dataclass
class SpanningTreeInit:
    rotations: dict[int, np.ndarray]
    indicators: dict[tuple[int, int], float]
    tree_edges: list[EdgeKey]
    root: int


def spanning_tree_init(g: AmbiguityMultigraph, sigma0: float = 1.0) -> SpanningTreeInit:
    """Chain absolute rotations along a minimum spanning tree of combined reprojection errors.

    Parallel edges of each (image, pair) collapse to the label with the lowest
    ``err_a(i) + err_b(j)``. Absolute rotations follow ``R_j = R̃_ij R_i``
    from the root (lowest marker id, identity). Each detection's indicator is
    ``±sigma0`` according to the label of its cheapest incident collapsed
    edge (ties toward label 0).
    """
    comps = g.components()
    if len(comps) > 1:
        raise DisconnectedGraph(comps)

    collapsed: list[tuple[float, EdgeKey]] = []
    for t, ms in g.images.items():
        for i, j in itertools.combinations(ms, 2):
            di, dj = g.detections[(t, i)], g.detections[(t, j)]
            best = min(
                ((di.err(a) + dj.err(b), k) for k, (a, b) in enumerate(LABELS)),
                key=lambda wk: (wk[0], wk[1]),
            )
            collapsed.append((best[0], EdgeKey(t, i, j, LABEL_STR[best[1]])))

    simple = nx.Graph()
    simple.add_nodes_from(g.markers)
    for w, e in sorted(collapsed, key=lambda we: (we[0], we[1])):
        if not simple.has_edge(e.i, e.j):
            simple.add_edge(e.i, e.j, weight=w, key=e)
    rotations, tree_edges = _chain_tree(g, simple)

    best_label: dict[tuple[int, int], tuple[float, int]] = {}
    for w, e in collapsed:
        for key, bit in (((e.t, e.i), e.a), ((e.t, e.j), e.b)):
            cur = best_label.get(key)
            if cur is None or (w, bit) < cur:
                best_label[key] = (w, bit)
    indicators = {}
    for key in g.detection_keys:
        bit = best_label.get(key, (0.0, 0))[1]
        indicators[key] = sigma0 if bit else -sigma0
    return SpanningTreeInit(rotations, indicators, tree_edges, g.markers[0])


def _chain_tree(g: AmbiguityMultigraph, simple: nx.Graph) -> tuple[dict[int, np.ndarray], list[EdgeKey]]:
    """Absolute rotations chained from the root along the MST of ``simple``."""
    tree = nx.minimum_spanning_tree(simple, algorithm="kruskal")
    root = g.markers[0]
    rotations = {root: np.eye(3)}
    tree_edges = []
    for u, v in nx.bfs_edges(tree, root, sort_neighbors=sorted):
        e = tree.edges[u, v]["key"]
        tree_edges.append(e)
        R = g.edges[e]
        rotations[v] = R @ rotations[u] if u == e.i else R.T @ rotations[u]
    return rotations, tree_edges


def random_label_init(
    g: AmbiguityMultigraph,
    rng: np.random.Generator,
    sigma0: float = 1.0,
    p_one: Mapping[tuple[int, int], float] | None = None,
) -> SpanningTreeInit:
    """A hypothesis-consistent random start.

    Draws one label per detection (label 1 with probability ``p_one[key]``,
    default 0.5) and a random spanning tree, then chains rotations along the
    edges matching those labels. Unlike uniformly random rotations, the start
    lies in the basin of one discrete assignment.
    """
    comps = g.components()
    if len(comps) > 1:
        raise DisconnectedGraph(comps)
    p = np.array([0.5 if p_one is None else p_one[k] for k in g.detection_keys])
    bits = {k: int(b) for k, b in zip(g.detection_keys, rng.random(len(p)) < p)}
    simple = nx.Graph()
    simple.add_nodes_from(g.markers)
    for t, ms in g.images.items():
        for i, j in itertools.combinations(ms, 2):
            w = rng.random()
            if not simple.has_edge(i, j) or w < simple.edges[i, j]["weight"]:
                key = EdgeKey(t, i, j, f"{bits[(t, i)]}{bits[(t, j)]}")
                simple.add_edge(i, j, weight=w, key=key)
    rotations, tree_edges = _chain_tree(g, simple)
    indicators = {k: sigma0 if b else -sigma0 for k, b in bits.items()}
    return SpanningTreeInit(rotations, indicators, tree_edges, g.markers[0])
