"""Rotation averaging over the ambiguity multigraph.

Three formulations share one residual, ``‖R̃_ij − R_j R_iᵀ‖_F``:

* robust multigraph averaging over all four parallel edges (IRLS),
* the clique-constrained objective with binary per-detection indicators,
  solved by exhaustive enumeration for small instances,
* its sigmoid-lifted relaxation, solved jointly over rotations and
  indicators by alternating block descent (a Gauss-Newton step on the
  rotations, a capped gradient step on the indicators).

Absolute rotations ``R_i`` are indexed by marker in ``g.markers`` order; the
first marker is the gauge anchor (``R = I``). Indicators are indexed by
``g.detection_keys``; ``s > 0`` leans towards hypothesis 1.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.special import expit

from .exceptions import TooLarge
from .geometry import exp_so3, hat, vee_asym
from .multigraph import LABEL_STR, AmbiguityMultigraph, EdgeKey, random_label_init, spanning_tree_init

log = logging.getLogger(__name__)

SMOOTH_EPS = 1e-9
# label flip probability of the perturbed restarts
RESTART_FLIP = 0.25
# E[m] = hat(e_m)
_HAT_BASIS = hat(np.eye(3))


def sigmoid(s):
    """Logistic function ``1 / (1 + exp(-s))``."""
    return expit(s)


@dataclass
class AveragingConfig:
    robust_norm: str = "geman_mcclure"  # or "huber", "l1"
    scale: float = 0.1
    anneal_factor: float = 0.5
    anneal_every: int = 10
    scale_floor: float = 0.01
    max_iterations: int = 500
    irls_max_iterations: int = 100
    gradient_tolerance: float = 1e-8
    sigma0: float = 1.0
    max_indicator_step: float = 0.1
    # final iterations that only push indicators away from 0 (labels frozen)
    sharpen_iterations: int = 100
    sharpen_step: float = 2.0
    max_enumeration_bits: int = 14
    # extra random starts for the lifted solver (0 = spanning-tree start only)
    restarts: int = 0
    restart_seed: int = 0

    def __post_init__(self):
        if self.robust_norm not in ("geman_mcclure", "huber", "l1"):
            raise ValueError(f"unknown robust norm {self.robust_norm!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.max_iterations < 1 or self.irls_max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sharpen_iterations < 0 or not self.max_indicator_step > 0 or not self.sharpen_step > 0:
            raise ValueError("indicator step controls must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")


@dataclass
class AveragingResult:
    rotations: dict[int, np.ndarray]
    objective: float
    trace: list[float]
    iterations: int
    converged: bool
    indicators: Optional[dict[tuple[int, int], float]] = None
    edge_weights: Optional[dict[EdgeKey, float]] = None
    max_iterations_reached: bool = False
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# conversions


def rotations_array(g: AmbiguityMultigraph, rotations) -> np.ndarray:
    if isinstance(rotations, Mapping):
        return np.stack([np.asarray(rotations[m], dtype=float) for m in g.markers])
    R = np.asarray(rotations, dtype=float)
    if R.shape != (g.n_markers, 3, 3):
        raise ValueError(f"expected {(g.n_markers, 3, 3)} rotations, got {R.shape}")
    return R


def rotations_dict(g: AmbiguityMultigraph, R: np.ndarray) -> dict[int, np.ndarray]:
    return {m: R[k].copy() for k, m in enumerate(g.markers)}


def indicator_array(g: AmbiguityMultigraph, S) -> np.ndarray:
    if isinstance(S, Mapping):
        missing = set(g.detection_keys) - set(S)
        if missing:
            raise KeyError(f"indicators missing for detections {sorted(missing)[:5]}")
        return np.array([float(S[k]) for k in g.detection_keys])
    s = np.asarray(S, dtype=float)
    if s.shape != (len(g.detection_keys),):
        raise ValueError(f"expected {len(g.detection_keys)} indicators, got {s.shape}")
    return s


def indicator_dict(g: AmbiguityMultigraph, s: np.ndarray) -> dict[tuple[int, int], float]:
    return {k: float(v) for k, v in zip(g.detection_keys, s)}


# ---------------------------------------------------------------------------
# residuals


def _marker_idx(g: AmbiguityMultigraph) -> tuple[np.ndarray, np.ndarray]:
    markers = np.asarray(g.markers)
    return np.searchsorted(markers, g.pair_i), np.searchsorted(markers, g.pair_j)


def edge_residuals(g: AmbiguityMultigraph, rotations) -> np.ndarray:
    """``(P, 4)`` chordal residuals of every edge, labels in order 00, 01, 10, 11."""
    R = rotations_array(g, rotations)
    mi, mj = _marker_idx(g)
    M = R[mj] @ np.swapaxes(R[mi], -1, -2)
    D = g.pair_rot - M[:, None]
    return np.sqrt(np.einsum("pkab,pkab->pk", D, D))


def _phi_pair(g: AmbiguityMultigraph, s: np.ndarray):
    phi = expit(s)
    return phi[g.pair_di], phi[g.pair_dj]


def clique_constrained_objective(g: AmbiguityMultigraph, rotations, S_binary) -> float:
    """Sum over covisible pairs of the single residual selected by the two indicators."""
    s = indicator_array(g, S_binary)
    if not np.all((s == 0) | (s == 1)):
        raise ValueError("clique-constrained objective needs binary indicators")
    r = edge_residuals(g, rotations)
    k = 2 * s[g.pair_di].astype(int) + s[g.pair_dj].astype(int)
    return float(np.sum(r[np.arange(len(k)), k]))


def lifted_objective(g: AmbiguityMultigraph, rotations, S) -> float:
    s = indicator_array(g, S)
    r = edge_residuals(g, rotations)
    phi_i, phi_j = _phi_pair(g, s)
    # 1 - expit(s) computed as expit(-s) for accuracy in the tails
    qi, qj = expit(-s)[g.pair_di], expit(-s)[g.pair_dj]
    w = np.stack([qi * qj, qi * phi_j, phi_i * qj, phi_i * phi_j], axis=-1)
    return float(np.sum(w * r))


def _lifted_eval(g: AmbiguityMultigraph, R: np.ndarray, s: np.ndarray, mi, mj, with_grad=True):
    M = R[mj] @ np.swapaxes(R[mi], -1, -2)
    D = g.pair_rot - M[:, None]
    r2 = np.einsum("pkab,pkab->pk", D, D)
    r = np.sqrt(r2)
    phi = expit(s)
    q = expit(-s)
    phi_i, phi_j = phi[g.pair_di], phi[g.pair_dj]
    qi, qj = q[g.pair_di], q[g.pair_dj]
    w = np.stack([qi * qj, qi * phi_j, phi_i * qj, phi_i * phi_j], axis=-1)
    f = float(np.sum(w * r))
    if not with_grad:
        return f, None, None

    dphi = phi * q
    # d f / d phi_i and d f / d phi_j per pair
    dfi = -qj * r[:, 0] - phi_j * r[:, 1] + qj * r[:, 2] + phi_j * r[:, 3]
    dfj = -qi * r[:, 0] + qi * r[:, 1] - phi_i * r[:, 2] + phi_i * r[:, 3]
    gs = np.zeros_like(s)
    np.add.at(gs, g.pair_di, dfi)
    np.add.at(gs, g.pair_dj, dfj)
    gs *= dphi

    e = np.sqrt(r2 + SMOOTH_EPS**2)
    G = np.einsum("pk,pkab->pab", w / e, D)
    gi = vee_asym(np.swapaxes(M, -1, -2) @ G)
    gj = -vee_asym(G @ np.swapaxes(M, -1, -2))
    gR = np.zeros((len(R), 3))
    np.add.at(gR, mi, gi)
    np.add.at(gR, mj, gj)
    gR[0] = 0.0
    return f, gR, gs


def lifted_gradient(g: AmbiguityMultigraph, rotations, S) -> tuple[dict[int, np.ndarray], dict[tuple[int, int], float]]:
    """Gradient of the lifted objective.

    Rotation gradients are with respect to left increments
    ``R_i <- exp(w_i) R_i``; the anchor marker's gradient is zero.
    """
    R = rotations_array(g, rotations)
    s = indicator_array(g, S)
    mi, mj = _marker_idx(g)
    _, gR, gs = _lifted_eval(g, R, s, mi, mj)
    return {m: gR[k] for k, m in enumerate(g.markers)}, indicator_dict(g, gs)


# ---------------------------------------------------------------------------
# lifted solver


def _retract(R: np.ndarray, dw: np.ndarray) -> np.ndarray:
    return exp_so3(dw) @ R


def _dphi_coefficients(g: AmbiguityMultigraph, r: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Partial derivatives of the lifted objective with respect to each ``Phi(s)``."""
    phi, q = expit(s), expit(-s)
    phi_i, phi_j = phi[g.pair_di], phi[g.pair_dj]
    qi, qj = q[g.pair_di], q[g.pair_dj]
    dfi = -qj * r[:, 0] - phi_j * r[:, 1] + qj * r[:, 2] + phi_j * r[:, 3]
    dfj = -qi * r[:, 0] + qi * r[:, 1] - phi_i * r[:, 2] + phi_i * r[:, 3]
    B = np.zeros_like(s)
    np.add.at(B, g.pair_di, dfi)
    np.add.at(B, g.pair_dj, dfj)
    return B


def solve_lifted(
    g: AmbiguityMultigraph,
    init=None,
    config: AveragingConfig | None = None,
) -> AveragingResult:
    """Block-coordinate descent on the lifted objective.

    Each iteration takes two backtracked steps:

    * rotations: a Gauss-Newton step on the reweighted majorizer
      ``sum w r^2 / (2 r0)`` of the weighted unsquared residuals
      (Weiszfeld-style), with the indicator weights frozen;
    * indicators: a step along ``-df/dPhi(s)``, which is a descent direction
      for ``s`` and keeps moving when the sigmoid saturates. The step is
      scaled so that no coordinate moves by more than
      ``max_indicator_step``, so the labels cannot commit before the
      rotations have caught up.

    The last ``sharpen_iterations`` (or all iterations after the first stall)
    only move indicators away from 0, each clipped to ``sharpen_step``. This
    keeps every sign, hence the selection, and saturates the weights.

    Both steps must not increase the objective, so the trace is
    non-increasing. Stops when the gradient's infinity norm drops below
    ``gradient_tolerance``, when neither block can make progress while
    sharpening, or after ``max_iterations``.

    With ``config.restarts > 0`` the descent is repeated from that many
    random hypothesis-consistent starts (see ``random_label_init``): odd starts
    draw labels uniformly, even starts flip each label of the current best
    run with probability 0.25. The run
    with the lowest final objective is returned. ``info["start"]`` is 0 for
    the spanning-tree start.
    """
    config = config or AveragingConfig()
    if init is None:
        init = spanning_tree_init(g, config.sigma0)
    R = rotations_array(g, init.rotations)
    s = indicator_array(g, init.indicators).copy()
    best = _lifted_descent(g, R, s, config)
    best.info["start"] = 0
    if config.restarts and g.n_markers > 1:
        rng = np.random.default_rng(config.restart_seed)
        finals = [best.objective]
        for k in range(1, config.restarts + 1):
            # alternate fresh draws with perturbations of the incumbent labels
            p_one = None
            if k % 2 == 0:
                p_one = {key: 1.0 - RESTART_FLIP if v > 0 else RESTART_FLIP for key, v in best.indicators.items()}
            start = random_label_init(g, rng, config.sigma0, p_one)
            res = _lifted_descent(g, rotations_array(g, start.rotations), indicator_array(g, start.indicators), config)
            finals.append(res.objective)
            if res.objective < best.objective:
                best = res
                best.info["start"] = k
        best.info["start_objectives"] = finals
    return best


def _lifted_descent(g: AmbiguityMultigraph, R: np.ndarray, s: np.ndarray, config: AveragingConfig) -> AveragingResult:
    R = R @ R[0].T  # anchor gauge
    s = np.array(s, dtype=float)
    mi, mj = _marker_idx(g)
    n = len(R)

    def objective(R_, s_):
        return _lifted_eval(g, R_, s_, mi, mj, with_grad=False)[0]

    f = objective(R, s)
    trace = [f]
    converged = False
    alpha = 1.0
    it = 0
    gnorm = np.inf
    stalled = 0
    sharpening = False
    for it in range(1, config.max_iterations + 1):
        _, gR, gs = _lifted_eval(g, R, s, mi, mj)
        gnorm = max(np.max(np.abs(gR), initial=0.0), np.max(np.abs(gs), initial=0.0))
        if gnorm < config.gradient_tolerance:
            converged = True
            it -= 1
            break
        f_start = f

        if n > 1:
            r = edge_residuals(g, R)
            phi_i, phi_j = _phi_pair(g, s)
            q = expit(-s)
            w = np.stack(
                [q[g.pair_di] * q[g.pair_dj], q[g.pair_di] * phi_j, phi_i * q[g.pair_dj], phi_i * phi_j],
                axis=-1,
            )
            W = w / np.maximum(r, SMOOTH_EPS)
            delta = _weighted_gn_step(g, R, W, mi, mj, n)
            step = 1.0
            for _ in range(30):
                R_new = R.copy()
                R_new[1:] = _retract(R[1:], step * delta)
                f_new = objective(R_new, s)
                if f_new <= f:
                    R, f = R_new, f_new
                    break
                step *= 0.5

        r = edge_residuals(g, R)
        B = _dphi_coefficients(g, r, s)
        dphi = expit(s) * expit(-s)
        if sharpening:
            # move only coordinates whose step pushes s away from 0
            mask = (np.sign(B) == -np.sign(s)) & (s != 0)
            B = np.where(mask, B, 0.0)
            cap = config.sharpen_step
        else:
            cap = config.max_indicator_step
        if np.any(dphi * B != 0):
            alpha = min(alpha * 4.0, 1e12)
            for _ in range(60):
                d = -np.clip(alpha * B, -cap, cap) if sharpening else -min(alpha, cap / np.max(np.abs(B))) * B
                slope = float(np.sum(dphi * B * d))
                f_new = objective(R, s + d)
                if f_new <= f + 1e-4 * slope:
                    s, f = s + d, f_new
                    break
                alpha *= 0.5

        trace.append(f)
        if f >= f_start:
            stalled += 1
        else:
            stalled = 0
        if stalled >= 3:
            if sharpening:
                converged = True
                break
            sharpening, stalled = True, 0
        if not sharpening and it >= config.max_iterations - config.sharpen_iterations:
            sharpening, alpha = True, 1.0
    else:
        _, gR, gs = _lifted_eval(g, R, s, mi, mj)
        gnorm = max(np.max(np.abs(gR), initial=0.0), np.max(np.abs(gs), initial=0.0))
        converged = gnorm < config.gradient_tolerance
    if not converged:
        log.info("lifted solver stopped at max_iterations=%d (f=%.6g)", config.max_iterations, f)
    return AveragingResult(
        rotations=rotations_dict(g, R),
        objective=f,
        trace=trace,
        iterations=it,
        converged=converged,
        indicators=indicator_dict(g, s),
        max_iterations_reached=not converged,
        info={"gradient_inf_norm": float(gnorm)},
    )


# ---------------------------------------------------------------------------
# robust multigraph averaging (IRLS)


def _rho(r: np.ndarray, norm: str, c: float) -> np.ndarray:
    if norm == "geman_mcclure":
        return c * c * r * r / (c * c + r * r)
    if norm == "huber":
        return np.where(r <= c, r * r, 2.0 * c * r - c * c)
    return r


def _irls_weight(r: np.ndarray, norm: str, c: float) -> np.ndarray:
    """``rho'(r) / (2 r)``, the weight of the squared residual in the majorizer."""
    if norm == "geman_mcclure":
        return c**4 / (c * c + r * r) ** 2
    if norm == "huber":
        return np.where(r <= c, 1.0, c / np.maximum(r, 1e-300))
    return 0.5 / np.maximum(r, 1e-12)


def _weighted_gn_step(g, R, W, mi, mj, n):
    """Gauss-Newton increment for ``sum W_pk ‖R̃_pk − R_j R_iᵀ‖²`` (anchor excluded)."""
    M = R[mj] @ np.swapaxes(R[mi], -1, -2)
    D = g.pair_rot - M[:, None]
    # dD/dw_i = M hat(e_m), dD/dw_j = -hat(e_m) M, identical for all four labels
    Ai = np.einsum("pab,mbc->pacm", M, _HAT_BASIS).reshape(-1, 9, 3)
    Aj = -np.einsum("mab,pbc->pacm", _HAT_BASIS, M).reshape(-1, 9, 3)
    wsum = W.sum(axis=1)
    WD = np.einsum("pk,pkab->pab", W, D).reshape(-1, 9)
    Hb = np.zeros((n, n, 3, 3))
    b = np.zeros((n, 3))
    Hii = wsum[:, None, None] * np.einsum("pam,pan->pmn", Ai, Ai)
    Hjj = wsum[:, None, None] * np.einsum("pam,pan->pmn", Aj, Aj)
    Hij = wsum[:, None, None] * np.einsum("pam,pan->pmn", Ai, Aj)
    np.add.at(Hb, (mi, mi), Hii)
    np.add.at(Hb, (mj, mj), Hjj)
    np.add.at(Hb, (mi, mj), Hij)
    np.add.at(Hb, (mj, mi), np.swapaxes(Hij, 1, 2))
    np.add.at(b, mi, np.einsum("pam,pa->pm", Ai, WD))
    np.add.at(b, mj, np.einsum("pam,pa->pm", Aj, WD))
    H = Hb.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)[3:, 3:]
    b = b.reshape(-1)[3:]
    H += 1e-12 * np.eye(len(H))
    try:
        delta = -np.linalg.solve(H, b)
    except np.linalg.LinAlgError:
        delta = -np.linalg.lstsq(H, b, rcond=None)[0]
    return delta.reshape(-1, 3)


def irls_multigraph_averaging(
    g: AmbiguityMultigraph, config: AveragingConfig | None = None, init=None
) -> AveragingResult:
    """Robust averaging over all four parallel edges of every pair.

    Each sweep freezes the weights ``rho'(r)/(2r)`` and takes a backtracked
    Gauss-Newton step on the weighted chordal least-squares problem. The
    scale is annealed by ``anneal_factor`` every ``anneal_every`` sweeps down
    to ``scale_floor``; with the scaled Geman-McClure and Huber forms used
    here, shrinking the scale never raises the objective.
    """
    config = config or AveragingConfig()
    if init is None:
        init = spanning_tree_init(g, config.sigma0)
    R = rotations_array(g, init.rotations)
    R = R @ R[0].T
    mi, mj = _marker_idx(g)
    n = len(R)
    norm = config.robust_norm
    c = config.scale

    def objective(R_, c_):
        return float(np.sum(_rho(edge_residuals(g, R_), norm, c_)))

    f = objective(R, c)
    trace = [f]
    converged = False
    it = 0
    for it in range(1, config.irls_max_iterations + 1):
        r = edge_residuals(g, R)
        W = _irls_weight(r, norm, c)
        delta = _weighted_gn_step(g, R, W, mi, mj, n)
        step = 1.0
        moved = False
        for _ in range(30):
            R_new = R.copy()
            R_new[1:] = _retract(R[1:], step * delta)
            f_new = objective(R_new, c)
            if f_new <= f:
                moved = True
                break
            step *= 0.5
        small = not moved or step * np.max(np.abs(delta), initial=0.0) < 1e-10
        if moved:
            R, f = R_new, f_new
        at_floor = norm == "l1" or c <= config.scale_floor
        if norm != "l1" and it % config.anneal_every == 0 and c > config.scale_floor:
            c = max(c * config.anneal_factor, config.scale_floor)
            f = objective(R, c)
        trace.append(f)
        if small and at_floor:
            converged = True
            break
    r = edge_residuals(g, R)
    W = _irls_weight(r, norm, c)
    weights = {}
    for p in range(g.n_pairs):
        for k, lab in enumerate(LABEL_STR):
            weights[EdgeKey(int(g.pair_t[p]), int(g.pair_i[p]), int(g.pair_j[p]), lab)] = float(W[p, k])
    return AveragingResult(
        rotations=rotations_dict(g, R),
        objective=f,
        trace=trace,
        iterations=it,
        converged=converged,
        edge_weights=weights,
        max_iterations_reached=not converged,
        info={"final_scale": c},
    )


# ---------------------------------------------------------------------------
# exhaustive oracle


def _spectral_init(sel: np.ndarray, mi: np.ndarray, mj: np.ndarray, n: int) -> np.ndarray:
    """Batched chordal spectral relaxation: ``sel`` is ``(K, P, 3, 3)`` measured ``R_j R_iᵀ``."""
    K = sel.shape[0]
    A = np.zeros((K, n, 3, n, 3))
    for p in range(sel.shape[1]):
        i, j = mi[p], mj[p]
        A[:, i, :, j] += np.swapaxes(sel[:, p], -1, -2)
        A[:, j, :, i] += sel[:, p]
    A = A.reshape(K, 3 * n, 3 * n)
    _, V = np.linalg.eigh(A)
    V = V[:, :, -3:].reshape(K, n, 3, 3)
    dets = np.linalg.det(V)
    flip = np.sum(dets < 0, axis=1) > n / 2
    V[flip, :, :, 2] *= -1
    U, _, Vt = np.linalg.svd(V)
    d = np.sign(np.linalg.det(U @ Vt))
    d[d == 0] = 1.0
    Vt[..., 2, :] *= d[..., None]
    R = U @ Vt
    return R @ np.swapaxes(R[:, :1], -1, -2)


def _batched_l1_refine(sel, R, mi, mj, iterations):
    """Weiszfeld-style reweighting for the unsquared chordal sum, batched over instances."""
    K, n = R.shape[:2]

    def obj(R_):
        M = R_[:, mj] @ np.swapaxes(R_[:, mi], -1, -2)
        D = sel - M
        return np.sqrt(np.einsum("kpab,kpab->kp", D, D))

    r = obj(R)
    f = r.sum(axis=1)
    scale = np.ones(K)
    for _ in range(iterations):
        M = R[:, mj] @ np.swapaxes(R[:, mi], -1, -2)
        D = sel - M
        w = 1.0 / np.maximum(r, 1e-10)
        Ai = np.einsum("kpab,mbc->kpacm", M, _HAT_BASIS).reshape(K, -1, 9, 3)
        Aj = -np.einsum("mab,kpbc->kpacm", _HAT_BASIS, M).reshape(K, -1, 9, 3)
        WD = (w[..., None, None] * D).reshape(K, -1, 9)
        H = np.zeros((K, n, 3, n, 3))
        b = np.zeros((K, n, 3))
        Hii = w[..., None, None] * np.einsum("kpam,kpan->kpmn", Ai, Ai)
        Hjj = w[..., None, None] * np.einsum("kpam,kpan->kpmn", Aj, Aj)
        Hij = w[..., None, None] * np.einsum("kpam,kpan->kpmn", Ai, Aj)
        for p in range(len(mi)):
            i, j = mi[p], mj[p]
            H[:, i, :, i] += Hii[:, p]
            H[:, j, :, j] += Hjj[:, p]
            H[:, i, :, j] += Hij[:, p]
            H[:, j, :, i] += np.swapaxes(Hij[:, p], -1, -2)
            b[:, i] += np.einsum("kam,ka->km", Ai[:, p], WD[:, p])
            b[:, j] += np.einsum("kam,ka->km", Aj[:, p], WD[:, p])
        H = H.reshape(K, 3 * n, 3 * n)[:, 3:, 3:] + 1e-12 * np.eye(3 * n - 3)
        b = b.reshape(K, -1)[:, 3:]
        delta = -np.linalg.solve(H, b[..., None])[..., 0].reshape(K, n - 1, 3)
        R_new = R.copy()
        R_new[:, 1:] = exp_so3(scale[:, None, None] * delta) @ R[:, 1:]
        r_new = obj(R_new)
        f_new = r_new.sum(axis=1)
        ok = f_new <= f
        R[ok], r[ok], f[ok] = R_new[ok], r_new[ok], f_new[ok]
        scale = np.where(ok, np.minimum(scale * 2.0, 1.0), scale * 0.5)
    return R, f


def solve_selected_averaging(
    g: AmbiguityMultigraph, S_binary, iterations: int = 200
) -> tuple[dict[int, np.ndarray], float]:
    """Rotations minimizing the clique-constrained objective for fixed binary indicators."""
    s = indicator_array(g, S_binary).astype(int)
    mi, mj = _marker_idx(g)
    k = 2 * s[g.pair_di] + s[g.pair_dj]
    sel = g.pair_rot[np.arange(g.n_pairs), k][None]
    R = _spectral_init(sel, mi, mj, g.n_markers)
    R, f = _batched_l1_refine(sel, R, mi, mj, iterations)
    return rotations_dict(g, R[0]), float(f[0])


def exhaustive_solve(
    g: AmbiguityMultigraph,
    config: AveragingConfig | None = None,
    coarse_iterations: int = 40,
    fine_iterations: int = 300,
    refine_top: int = 8,
    batch: int = 512,
) -> tuple[dict[int, np.ndarray], dict[tuple[int, int], int], float]:
    """Global optimum of the clique-constrained objective by enumerating all indicators.

    Each instantiation's averaging problem is solved from a spectral start
    with reweighted Gauss-Newton; the best ``refine_top`` candidates get a
    longer refinement before the winner is chosen.
    """
    config = config or AveragingConfig()
    nd = len(g.detection_keys)
    if nd > config.max_enumeration_bits:
        raise TooLarge(f"{nd} indicators exceed the enumeration bound {config.max_enumeration_bits}")
    mi, mj = _marker_idx(g)
    n = g.n_markers
    all_bits = np.array(list(itertools.product((0, 1), repeat=nd)), dtype=int).reshape(-1, nd)
    # detections with no incident pair do not affect the objective; pin them to 0
    free = np.zeros(nd, dtype=bool)
    free[g.pair_di] = True
    free[g.pair_dj] = True
    all_bits = all_bits[np.all(all_bits[:, ~free] == 0, axis=1)]
    if g.n_pairs == 0:
        R = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        return rotations_dict(g, R), indicator_dict_int(g, all_bits[0]), 0.0

    objs = np.empty(len(all_bits))
    Rs = np.empty((len(all_bits), n, 3, 3))
    for lo in range(0, len(all_bits), batch):
        bits = all_bits[lo : lo + batch]
        k = 2 * bits[:, g.pair_di] + bits[:, g.pair_dj]
        sel = g.pair_rot[np.arange(g.n_pairs)[None, :], k]
        R = _spectral_init(sel, mi, mj, n)
        R, f = _batched_l1_refine(sel, R, mi, mj, coarse_iterations)
        objs[lo : lo + batch] = f
        Rs[lo : lo + batch] = R
    top = np.argsort(objs, kind="stable")[:refine_top]
    bits = all_bits[top]
    k = 2 * bits[:, g.pair_di] + bits[:, g.pair_dj]
    sel = g.pair_rot[np.arange(g.n_pairs)[None, :], k]
    R, f = _batched_l1_refine(sel, Rs[top].copy(), mi, mj, fine_iterations)
    best = int(np.argmin(f))
    return rotations_dict(g, R[best]), indicator_dict_int(g, bits[best]), float(f[best])


def indicator_dict_int(g: AmbiguityMultigraph, bits) -> dict[tuple[int, int], int]:
    return {k: int(b) for k, b in zip(g.detection_keys, bits)}
