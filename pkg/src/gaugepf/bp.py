"""BP gauges: stationary points of the gauge function and everything on top.

The solver runs damped Gauss-Seidel sweeps over edges.  For one edge, with
all other gauge values frozen, the numerator polynomial is a quadratic in
the edge's orientation pair and the stationary pair has a closed form; the
sweep applies it edge by edge until the gradient of ``log z`` vanishes.
Stationary points are saddles in each orientation pair, and the largest
converged value across random restarts is the variational estimate of the
partition function (exact on trees, a lower bound on bi-stable families).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import gauge as gauge_mod
from .gauge import GaugeVector, check_gauge, edge_belief, gauge_function
from .model import FactorTable, ModelError, MultiGM, contract_model, soften
from .multigraph import DirectedEdge, EdgeId, GraphError, NodeId
from .poly import FactoredGaugePoly, QuadCoeffs, exact_contract_poly


class DegenerateEdgeError(ModelError):
    """Closed-form edge update hit a zero linear coefficient.

    Happens only for hard (zero-containing) factors; soften the model
    (``soften(m, 1e-12)`` or the solver's ``soften_eps``) to proceed.
    """


class NonConvergenceError(ModelError):
    """An operation required a converged BP gauge but none was supplied."""


class PolySelfEdgeError(ModelError):
    """BP normal-edge contraction was asked to eliminate a self-edge."""


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for :func:`solve_bp`.

    ``damping`` is the weight kept on the old value at each edge update
    (0 means full steps).  Initial gauges are drawn log-uniformly from
    ``init_range`` per restart.
    """

    damping: float = 0.5
    tolerance: float = 1e-10
    max_sweeps: int = 10_000
    restarts: int = 16
    seed: int = 0
    soften_eps: float = 1e-12
    init_range: tuple[float, float] = (0.25, 4.0)

    def __post_init__(self) -> None:
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must lie in [0, 1)")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class BPGauge:
    """A solved gauge: values, diagnostics, and the restart survey."""

    x: dict[DirectedEdge, float]
    residual: float
    value: float
    sweeps: int
    converged: bool
    softened: bool = False
    stationary_values: tuple[float, ...] = ()


@dataclass(frozen=True)
class Beliefs:
    """Node beliefs (same bit layout as factor tables) and edge marginals."""

    node_beliefs: dict[NodeId, np.ndarray]
    edge_marginals: dict[EdgeId, float]

    def interior_margin(self) -> float:
        """Distance of the closest edge marginal to the polytope boundary."""
        if not self.edge_marginals:
            return 0.5
        return min(min(b, 1.0 - b) for b in self.edge_marginals.values())


# -- residuals ------------------------------------------------------------


def _slot_reduction(f: FactorTable, x: GaugeVector, d: DirectedEdge) -> np.ndarray:
    """Length-2 vector ``[h(x_d=0 part), dh/dx_d]`` for the slot ``d``."""
    arr = f.as_array()
    keep = f.variables.index(d)
    for i in reversed(range(len(f.variables))):
        if i == keep:
            continue
        w = np.array([1.0, x[f.variables[i]]])
        arr = np.tensordot(arr, w, axes=([i], [0]))
    return arr


def _residual_parts(
    m: MultiGM, x: GaugeVector
) -> tuple[dict[DirectedEdge, float], dict[DirectedEdge, float]]:
    """Gradient of ``log z`` and normalized single-colored residual per slot."""
    grad: dict[DirectedEdge, float] = {}
    coloring: dict[DirectedEdge, float] = {}
    for a in m.graph.nodes:
        f = m.factors[a]
        for d in f.variables:
            v = _slot_reduction(f, x, d)
            h = v[0] + x[d] * v[1]
            beta = edge_belief(x, d.edge)
            grad[d] = float(v[1] / h - x[d.sibling] / (1.0 + x[d] * x[d.sibling]))
            if beta > 0 and math.isfinite(beta):
                coloring[d] = float(abs(x[d] * v[1] / h - beta) / beta)
            else:
                coloring[d] = math.inf
    return grad, coloring


def bp_residual(m: MultiGM, x: GaugeVector) -> dict[DirectedEdge, float]:
    """Stationarity residual: the gradient of ``log z(x)``, one entry per slot.

    Vanishes exactly at BP gauges.  Requires a soft model so every node
    polynomial is positive.
    """
    if not m.is_soft:
        raise ModelError("residuals need a soft model; soften it first")
    check_gauge(m, x)
    grad, _ = _residual_parts(m, x)
    return grad


def residual_norm(m: MultiGM, x: GaugeVector) -> float:
    """Max of the gradient norm and the normalized coloring residual."""
    grad, coloring = _residual_parts(m, x)
    values = list(grad.values()) + list(coloring.values())
    return max((abs(v) for v in values), default=0.0)


# -- closed-form edge update ----------------------------------------------


def edge_pair_update(c: QuadCoeffs) -> tuple[float, float]:
    """Physical stationary pair of ``h/(1+x_p x_q)`` for one edge's quadratic."""
    if c.h10 <= 0 or c.h01 <= 0:
        raise DegenerateEdgeError(
            "linear coefficient vanished (h10 or h01 = 0); soften the model"
        )
    diff = c.h11 - c.h00
    root = math.sqrt(diff * diff + 4.0 * c.h01 * c.h10)
    if diff >= 0:
        num = diff + root
    else:
        # conjugate form: avoids cancellation when the cross product is
        # tiny relative to (h11 - h00)**2
        num = 4.0 * c.h01 * c.h10 / (root - diff)
    return num / (2.0 * c.h10), num / (2.0 * c.h01)


def bp_value(c: QuadCoeffs) -> float:
    """Value of ``h/(1+x_p x_q)`` at the physical pair.

    Equals ``h00 + h11`` when the quadratic factorizes (normal edge).
    """
    if c.h10 <= 0 or c.h01 <= 0:
        raise DegenerateEdgeError(
            "linear coefficient vanished (h10 or h01 = 0); soften the model"
        )
    root = math.sqrt((c.h11 - c.h00) ** 2 + 4.0 * c.h01 * c.h10)
    return 0.5 * (c.h11 + c.h00 + root)


def _edge_quad_local(m: MultiGM, x: GaugeVector, edge: EdgeId) -> QuadCoeffs:
    """Quadratic coefficients at one edge, omitting the other nodes' factor.

    The omitted factor is a positive constant for soft models, so the
    stationary pair is unchanged.
    """
    tail, head = m.graph.endpoints[edge]
    d_p, d_q = DirectedEdge(edge, True), DirectedEdge(edge, False)
    if tail == head:
        f = m.factors[tail]
        arr = f.as_array()
        ip, iq = f.variables.index(d_p), f.variables.index(d_q)
        for i in reversed(range(len(f.variables))):
            if i in (ip, iq):
                continue
            arr = np.tensordot(arr, np.array([1.0, x[f.variables[i]]]), axes=([i], [0]))
        if ip > iq:  # axes collapsed in original order; put d_p first
            arr = arr.T
        return QuadCoeffs(
            h00=float(arr[0, 0]), h10=float(arr[1, 0]),
            h01=float(arr[0, 1]), h11=float(arr[1, 1]),
        )
    lin = {}
    for node, d in ((tail, d_p), (head, d_q)):
        v = _slot_reduction(m.factors[node], x, d)
        lin[d] = (float(v[0]), float(v[1]))
    (a0, a1), (b0, b1) = lin[d_p], lin[d_q]
    return QuadCoeffs(h00=a0 * b0, h10=a1 * b0, h01=a0 * b1, h11=a1 * b1)


# -- solver ----------------------------------------------------------------


def solve_bp(m: MultiGM, cfg: SolverConfig = SolverConfig()) -> BPGauge:
    """Find a maximal BP gauge by damped Gauss-Seidel with restarts.

    Auto-softens hard models with ``cfg.soften_eps``.  Each restart starts
    from a fresh log-uniform gauge; among converged restarts the gauge with
    the largest ``z(x)`` wins (ties keep the first).  A result with
    ``converged=False`` reports the best residual reached - callers decide
    whether that is fatal.
    """
    softened = not m.is_soft
    if softened:
        m = soften(m, cfg.soften_eps)
    darts = sorted(m.graph.directed_edges(), key=str)
    edges = sorted(m.graph.edges)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = np.log(cfg.init_range[0]), np.log(cfg.init_range[1])

    if not edges:
        value = 1.0
        for a in m.graph.nodes:
            value *= float(m.factors[a].table[0])
        return BPGauge(
            x={}, residual=0.0, value=value, sweeps=0, converged=True,
            softened=softened, stationary_values=(value,),
        )

    best: BPGauge | None = None
    fallback: BPGauge | None = None
    values: list[float] = []
    for _ in range(max(1, cfg.restarts)):
        x = {d: float(np.exp(rng.uniform(lo, hi))) for d in darts}
        converged = False
        sweeps = 0
        res = math.inf
        for sweeps in range(1, cfg.max_sweeps + 1):
            for e in edges:
                xp, xq = edge_pair_update(_edge_quad_local(m, x, e))
                d_p, d_q = DirectedEdge(e, True), DirectedEdge(e, False)
                # wide clamp: keeps extreme near-hard iterates representable
                x[d_p] = min(max(cfg.damping * x[d_p] + (1.0 - cfg.damping) * xp,
                                 1e-18), 1e18)
                x[d_q] = min(max(cfg.damping * x[d_q] + (1.0 - cfg.damping) * xq,
                                 1e-18), 1e18)
            res = residual_norm(m, x)
            if res <= cfg.tolerance:
                converged = True
                break
        value = gauge_function(m, x)
        attempt = BPGauge(
            x=dict(x), residual=res, value=value, sweeps=sweeps,
            converged=converged, softened=softened,
        )
        if converged:
            values.append(value)
            if best is None or value > best.value:
                best = attempt
        elif fallback is None or res < fallback.residual:
            fallback = attempt

    distinct: list[float] = []
    for v in sorted(values, reverse=True):
        if not distinct or abs(distinct[-1] - v) > 1e-8 * max(abs(v), 1e-300):
            distinct.append(v)
    chosen = best if best is not None else fallback
    assert chosen is not None
    return BPGauge(
        x=chosen.x, residual=chosen.residual, value=chosen.value,
        sweeps=chosen.sweeps, converged=chosen.converged,
        softened=softened, stationary_values=tuple(distinct),
    )


# -- beliefs and free energy ------------------------------------------------


def marginals_from_gauge(m: MultiGM, x: GaugeVector) -> Beliefs:
    """Node beliefs ``b_a proportional to f_a prod x**s`` and edge marginals."""
    check_gauge(m, x)
    node_beliefs = {}
    for a in m.graph.nodes:
        f = m.factors[a]
        arr = f.as_array().copy()
        for i, d in enumerate(f.variables):
            shape = [1] * arr.ndim
            shape[i] = 2
            arr = arr * np.array([1.0, x[d]]).reshape(shape)
        flat = arr.reshape(-1, order="F")
        node_beliefs[a] = flat / flat.sum()
    marginals = {e: edge_belief(x, e) for e in m.graph.edges}
    return Beliefs(node_beliefs=node_beliefs, edge_marginals=marginals)


def _xlogx(v: np.ndarray | float) -> np.ndarray | float:
    return np.where(np.asarray(v) > 0, np.asarray(v) * np.log(np.maximum(v, 1e-300)), 0.0)


def check_polytope(m: MultiGM, bel: Beliefs, tol: float = 1e-9) -> None:
    """Verify normalization and node/edge marginal consistency."""
    for a in m.graph.nodes:
        b = bel.node_beliefs[a]
        f = m.factors[a]
        if b.shape != f.table.shape:
            raise ModelError(f"belief at node {a!r} has wrong length")
        if abs(float(b.sum()) - 1.0) > tol:
            raise ModelError(f"belief at node {a!r} does not sum to 1")
        arr = b.reshape((2,) * len(f.variables), order="F")
        for i, d in enumerate(f.variables):
            marg = float(np.take(arr, 1, axis=i).sum())
            if abs(marg - bel.edge_marginals[d.edge]) > tol:
                raise ModelError(
                    f"belief at node {a!r} violates edge consistency on {d}"
                )


def bethe_free_energy(m: MultiGM, bel: Beliefs) -> float:
    """Bethe free energy ``E - S`` at beliefs on the marginal polytope.

    ``E`` is minus the expected log-factor; ``S`` is the node entropy minus
    one edge entropy per undirected edge (0 log 0 := 0).  At the beliefs
    induced by a BP gauge this equals ``-log z(x)``.
    """
    if not m.is_soft:
        raise ModelError("Bethe free energy needs a soft model")
    check_polytope(m, bel)
    energy = 0.0
    node_neg_entropy = 0.0
    for a in m.graph.nodes:
        b = bel.node_beliefs[a]
        energy -= float(np.sum(b * np.log(m.factors[a].table)))
        node_neg_entropy += float(np.sum(_xlogx(b)))
    edge_neg_entropy = sum(
        float(_xlogx(beta) + _xlogx(1.0 - beta))
        for beta in bel.edge_marginals.values()
    )
    entropy = -node_neg_entropy + edge_neg_entropy
    return energy - entropy


def lagrangian_L(
    m: MultiGM, beta: Mapping[EdgeId, float], x: GaugeVector
) -> float:
    """Max-min Lagrangian of the variational representation.

    ``(prod_e beta**beta (1-beta)**(1-beta)) * prod_a h_a / prod_slots
    x**beta``; its sup-min over (beta, x) is the variational estimate, and
    at a BP gauge with its induced marginals it equals ``z(x)``.
    """
    check_gauge(m, x)
    log_val = 0.0
    for e in m.graph.edges:
        be = float(beta[e])
        if not 0.0 <= be <= 1.0:
            raise ModelError(f"edge marginal for {e!r} outside [0, 1]")
        log_val += float(_xlogx(be) + _xlogx(1.0 - be))
    for a in m.graph.nodes:
        log_val += math.log(gauge_mod.h_node(m, a, x))
        for d in m.factors[a].variables:
            log_val -= beta[d.edge] * math.log(x[d])
    return math.exp(log_val)


# -- saddle diagnostics ------------------------------------------------------


@dataclass(frozen=True)
class SaddleReport:
    """Finite-difference curvature of ``h/(1+x_p x_q)`` in one edge pair."""

    edge: EdgeId
    hessian: np.ndarray
    determinant: float
    mixed: float

    @property
    def det_negative(self) -> bool:
        return self.determinant < 0

    @property
    def mixed_negative(self) -> bool:
        return self.mixed < 0


def saddle_check(
    m: MultiGM, x_bp: GaugeVector, edge: EdgeId, step: float = 1e-5
) -> SaddleReport:
    """Central-difference 2x2 Hessian of the edge-pair profile at a gauge.

    At an interior BP gauge the pure second derivatives vanish (the profile
    is Moebius in each variable separately, so stationarity in one variable
    makes it flat in it) and the cross term is the whole story: the profile
    is an indefinite product form with negative determinant.  The cross
    term itself is ``(h11 - value)/(1 + x_p x_q)``, strictly negative for
    soft models: the profile falls along the symmetric direction and rises
    along the antisymmetric one.

    The reported signs are noise-limited when the true cross term is
    smaller than the profile's float resolution, which happens for nearly
    factorized edges at very large gauge values (the curvature shrinks
    like ``h01 h10 / (h11 (1 + x_p x_q))``).
    """
    if edge not in m.graph.endpoints:
        raise GraphError(f"unknown edge {edge!r}")
    c = _edge_quad_local(m, x_bp, edge)
    xp0 = x_bp[DirectedEdge(edge, True)]
    xq0 = x_bp[DirectedEdge(edge, False)]
    # steps scale with the coordinates: an absolute 1e-5 step drowns in
    # rounding once gauge values reach ~1e2
    hp = step * max(1.0, abs(xp0))
    hq = step * max(1.0, abs(xq0))

    def profile(xp: float, xq: float) -> float:
        h = c.h00 + c.h10 * xp + c.h01 * xq + c.h11 * xp * xq
        return h / (1.0 + xp * xq)

    f00 = profile(xp0, xq0)
    dpp = (profile(xp0 + hp, xq0) - 2 * f00 + profile(xp0 - hp, xq0)) / hp**2
    dqq = (profile(xp0, xq0 + hq) - 2 * f00 + profile(xp0, xq0 - hq)) / hq**2
    dpq = (
        profile(xp0 + hp, xq0 + hq)
        - profile(xp0 + hp, xq0 - hq)
        - profile(xp0 - hp, xq0 + hq)
        + profile(xp0 - hp, xq0 - hq)
    ) / (4 * hp * hq)
    hess = np.array([[dpp, dpq], [dpq, dqq]])
    return SaddleReport(
        edge=edge,
        hessian=hess,
        determinant=float(np.linalg.det(hess)),
        mixed=float(dpq),
    )


# -- contraction sequence ----------------------------------------------------


@dataclass(frozen=True)
class ContractionStage:
    """One entry of the BP-over-contraction table."""

    index: int
    eliminated: EdgeId | None
    n_edges: int
    z_vbp: float
    converged: bool
    gauge: BPGauge = field(repr=False)
    model: MultiGM = field(repr=False)


def bp_contract_sequence(
    m: MultiGM, order: Sequence[EdgeId], cfg: SolverConfig = SolverConfig()
) -> list[ContractionStage]:
    """Re-solve BP after each exact contraction along ``order``.

    The model is softened once up front if needed; every stage solves from
    scratch for reproducibility.  The final stage has no edges left, so its
    value is the exact partition function.  Decreases along the sequence
    are reported by :func:`sequence_decreases`, not raised.

    Every stage model is re-clamped to the ``soften_eps`` relative floor:
    a no-op for generic soft tables, but it stops near-hard entries from
    compounding toward underflow across repeated table merges.  Each
    re-clamp moves the stage partition function by at most
    ``(1 + eps)**nodes`` relative, far inside the monotonicity slack.
    """
    if sorted(order) != sorted(m.graph.edges):
        raise GraphError("order must list every edge exactly once")
    stages = []
    current = m
    for i in range(len(order) + 1):
        current = soften(current, cfg.soften_eps)
        g = solve_bp(current, cfg)
        stages.append(
            ContractionStage(
                index=i,
                eliminated=order[i - 1] if i else None,
                n_edges=len(current.graph.edges),
                z_vbp=g.value,
                converged=g.converged,
                gauge=g,
                model=current,
            )
        )
        if i < len(order):
            current = contract_model(current, order[i])
    return stages


def sequence_decreases(
    stages: Sequence[ContractionStage], rel_slack: float = 1e-9
) -> list[tuple[int, float, float]]:
    """Adjacent decreases beyond the slack: ``(index, z_before, z_after)``."""
    out = []
    for s0, s1 in zip(stages, stages[1:]):
        if s1.z_vbp < s0.z_vbp * (1.0 - rel_slack):
            out.append((s0.index, s0.z_vbp, s1.z_vbp))
    return out


def bp_normal_contract(h: FactoredGaugePoly, edge: EdgeId) -> FactoredGaugePoly:
    """BP elimination of a normal edge; identical to the exact operator.

    Exposed separately because for self-edges the BP reduction is a
    fractional, not polynomial, function and no such operator exists.
    """
    d_p, d_q = DirectedEdge(edge, True), DirectedEdge(edge, False)
    if h.factor_of(d_p) == h.factor_of(d_q):
        raise PolySelfEdgeError(
            f"edge {edge!r} is a self-edge: BP contraction of a self-edge "
            "is not polynomial"
        )
    return exact_contract_poly(h, edge)


# -- independent direct Bethe minimizer --------------------------------------


def _bit_matrix(k: int) -> np.ndarray:
    return (np.arange(1 << k)[:, None] >> np.arange(k)) & 1


def _node_inner_min(
    f: FactorTable,
    beta: np.ndarray,
    theta0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 80,
) -> tuple[float, np.ndarray]:
    """Minimize ``log h_a(x_a) - sum_d beta_d log x_d`` over positive ``x_a``.

    Convex in ``theta = log x``; Newton steps, since the gradient is the
    node's bit-marginal vector minus ``beta`` and the Hessian its bit
    covariance under the tilted distribution.
    """
    k = len(f.variables)
    if k == 0:
        return math.log(float(f.table[0])), np.zeros(0)
    bits = _bit_matrix(k)
    log_table = np.log(f.table)

    def split(theta):
        logw = log_table + bits @ theta
        top = logw.max()
        w = np.exp(logw - top)
        total = w.sum()
        value = top + math.log(total) - float(beta @ theta)
        return value, w / total

    theta = theta0.copy() if theta0 is not None else np.zeros(k)
    value, p = split(theta)
    eye = np.eye(k)
    lam = 1e-9
    for _ in range(max_iter):
        mu = bits.T @ p
        grad = mu - beta
        if np.abs(grad).max() <= tol:
            break
        cov = bits.T @ (p[:, None] * bits) - np.outer(mu, mu)
        # adaptively damped Newton: large damping degrades to small
        # gradient steps, which always descend on this convex objective
        accepted = False
        while lam < 1e18:
            step = np.linalg.solve(cov + lam * eye, grad)
            cand_value, cand_p = split(theta - step)
            if cand_value < value:
                theta, value, p = theta - step, cand_value, cand_p
                lam = max(lam * 0.25, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
    return value, theta


def minimize_bethe_direct(
    m: MultiGM,
    delta: float = 1e-6,
    grid: int = 13,
    sweeps: int = 12,
    restarts: int = 2,
    seed: int = 0,
) -> float:
    """Variational estimate by direct coordinate ascent on edge marginals.

    Cross-validation oracle for :func:`solve_bp`: maximizes the max-min
    Lagrangian over ``beta in [delta, 1-delta]`` per edge, with the inner
    gauge minimization solved per node (it separates across nodes).
    Intended for small models; per coordinate, a grid scan brackets the
    optimum and golden-section refines it.
    """
    if not m.is_soft:
        m = soften(m, 1e-12)
    edges = sorted(m.graph.edges)
    nodes = list(m.graph.nodes)
    rng = np.random.default_rng(seed)
    # per node: (beta key, inner value, inner argmin) for reuse when a
    # coordinate move leaves the node's marginals untouched
    cache: dict[NodeId, tuple[tuple[float, ...], float, np.ndarray]] = {}

    def objective(beta: dict[EdgeId, float]) -> float:
        total = 0.0
        for e in edges:
            total += float(_xlogx(beta[e]) + _xlogx(1.0 - beta[e]))
        for a in nodes:
            f = m.factors[a]
            key = tuple(beta[d.edge] for d in f.variables)
            hit = cache.get(a)
            if hit is not None and hit[0] == key:
                total += hit[1]
                continue
            theta0 = hit[2] if hit is not None else None
            value, theta = _node_inner_min(f, np.array(key), theta0)
            cache[a] = (key, value, theta)
            total += value
        return total

    def line_max(beta: dict[EdgeId, float], e: EdgeId) -> float:
        points = np.linspace(delta, 1.0 - delta, grid)
        scores = []
        for p in points:
            beta[e] = float(p)
            scores.append(objective(beta))
        k = int(np.argmax(scores))
        a = float(points[max(0, k - 1)])
        b = float(points[min(grid - 1, k + 1)])
        phi = (math.sqrt(5.0) - 1.0) / 2.0
        c, d = b - phi * (b - a), a + phi * (b - a)
        beta[e] = c
        fc = objective(beta)
        beta[e] = d
        fd = objective(beta)
        for _ in range(32):
            if fc >= fd:
                b, d, fd = d, c, fc
                c = b - phi * (b - a)
                beta[e] = c
                fc = objective(beta)
            else:
                a, c, fc = c, d, fd
                d = a + phi * (b - a)
                beta[e] = d
                fd = objective(beta)
        beta[e] = float((a + b) / 2)
        return objective(beta)

    best = -math.inf
    for r in range(max(1, restarts)):
        if r == 0:
            beta = {e: 0.5 for e in edges}
        else:
            beta = {e: float(rng.uniform(0.2, 0.8)) for e in edges}
        cache.clear()
        current = objective(beta)
        for _ in range(sweeps):
            previous = current
            for e in edges:
                current = line_max(beta, e)
            if abs(current - previous) < 1e-9:
                break
        best = max(best, current)
    return math.exp(best)
