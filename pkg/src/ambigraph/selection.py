"""Per-image maximum weighted consistent clique selection.

A consistent clique of image ``t`` is fixed by one hypothesis bit per
detected marker, so the maximum weighted clique is found by scoring all
``2^V`` bit assignments at once.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.special import expit

from .averaging import AveragingConfig, AveragingResult, solve_lifted
from .geometry import RigidPose
from .multigraph import LABEL_STR, AmbiguityMultigraph, EdgeKey, build_multigraph, induced_clique
from .ppe import AmbiguousDetection

log = logging.getLogger(__name__)

MAX_BRUTE_FORCE_V = 20


def weight_ratio(s: float) -> float:
    """``min(Phi, 1-Phi) / max(Phi, 1-Phi)`` of a relaxed indicator."""
    p, q = float(expit(s)), float(expit(-s))
    return min(p, q) / max(p, q)


@dataclass
class EdgeWeightTable:
    """Edge weights of one image; ``weights[(i, j)]`` holds labels 00, 01, 10, 11."""

    image_id: int
    markers: tuple[int, ...]
    weights: dict[tuple[int, int], np.ndarray]
    # per-marker Phi, present when the table comes from indicators
    vertex_prob: dict[int, float] | None = None

    def weight(self, i: int, j: int, ab: str) -> float:
        if i > j:
            i, j, ab = j, i, ab[::-1]
        return float(self.weights[(i, j)][LABEL_STR.index(ab)])


def edge_weights(S: Mapping[tuple[int, int], float], t: int, markers: Iterable[int]) -> EdgeWeightTable:
    """Product-of-sigmoids edge weights of image ``t``."""
    ms = tuple(sorted(markers))
    phi = {i: float(expit(S[(t, i)])) for i in ms}
    q = {i: float(expit(-S[(t, i)])) for i in ms}
    table = {}
    for i, j in itertools.combinations(ms, 2):
        table[(i, j)] = np.array([q[i] * q[j], q[i] * phi[j], phi[i] * q[j], phi[i] * phi[j]])
    return EdgeWeightTable(t, ms, table, vertex_prob=phi)


def _all_assignments(V: int) -> np.ndarray:
    return ((np.arange(2**V)[:, None] >> np.arange(V - 1, -1, -1)[None, :]) & 1).astype(np.int64)


@dataclass
class ImageSelection:
    image_id: int
    bits: dict[int, int]
    score: float
    clique: list[EdgeKey]


def solve_mwc(table: EdgeWeightTable) -> ImageSelection:
    """Exact maximum weighted consistent clique of one image.

    Exact ties go to the lexicographically smallest assignment (earlier
    markers prefer hypothesis 0). A lone marker takes hypothesis 1 only if
    its ``Phi`` exceeds 0.5.
    """
    ms = table.markers
    V = len(ms)
    if V == 0:
        raise ValueError("image has no detections")
    if V == 1:
        p = table.vertex_prob.get(ms[0], 0.5) if table.vertex_prob else 0.5
        bits = {ms[0]: 1 if p > 0.5 else 0}
        return ImageSelection(table.image_id, bits, 0.0, [])
    if V > MAX_BRUTE_FORCE_V:
        raise ValueError(f"{V} markers in one image exceed the exact search limit {MAX_BRUTE_FORCE_V}")
    A = _all_assignments(V)
    score = np.zeros(len(A))
    for (a, b) in itertools.combinations(range(V), 2):
        w = table.weights[(ms[a], ms[b])]
        score += w[2 * A[:, a] + A[:, b]]
    # assignments are enumerated in lexicographic order, so argmax picks the
    # lexicographically smallest among exact ties
    best = int(np.argmax(score))
    bits = {m: int(A[best, k]) for k, m in enumerate(ms)}
    return ImageSelection(table.image_id, bits, float(score[best]), induced_clique(table.image_id, bits))


def brute_force_mwc(table: EdgeWeightTable) -> tuple[dict[int, int], float]:
    """Reference maximizer by plain enumeration (no vectorization)."""
    ms = table.markers
    best_bits, best = None, -np.inf
    for assignment in itertools.product((0, 1), repeat=len(ms)):
        bits = dict(zip(ms, assignment))
        total = sum(
            table.weight(i, j, f"{bits[i]}{bits[j]}") for i, j in itertools.combinations(ms, 2)
        )
        if total > best:
            best_bits, best = bits, total
    return best_bits, best


@dataclass
class SelectionResult:
    labels: dict[tuple[int, int], int]
    images: dict[int, ImageSelection]
    poses: dict[tuple[int, int], RigidPose]
    graph: AmbiguityMultigraph | None = None
    averaging: AveragingResult | None = None
    weight_ratios: dict[tuple[int, int], float] = field(default_factory=dict)


def select_from_tables(
    g: AmbiguityMultigraph, tables: Mapping[int, EdgeWeightTable]
) -> tuple[dict[tuple[int, int], int], dict[int, ImageSelection]]:
    labels: dict[tuple[int, int], int] = {}
    images = {}
    for t, table in tables.items():
        sel = solve_mwc(table)
        images[t] = sel
        for i, a in sel.bits.items():
            labels[(t, i)] = a
    return labels, images


def disambiguate(
    detections: Iterable[AmbiguousDetection] | AmbiguityMultigraph,
    config: AveragingConfig | None = None,
) -> SelectionResult:
    """Resolve every detection to one hypothesis via lifted averaging and per-image MWC."""
    g = detections if isinstance(detections, AmbiguityMultigraph) else build_multigraph(detections)
    res = solve_lifted(g, config=config)
    tables = {t: edge_weights(res.indicators, t, ms) for t, ms in g.images.items()}
    labels, images = select_from_tables(g, tables)
    poses = {k: g.detections[k].pose(a) for k, a in labels.items()}
    ratios = {k: weight_ratio(v) for k, v in res.indicators.items()}
    return SelectionResult(labels, images, poses, g, res, ratios)
