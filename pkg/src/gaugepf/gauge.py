"""Gauge transformations in the positive x-representation.

Every undirected edge carries a pair of positive parameters, one per
orientation.  They induce a 2x2 matrix per directed edge whose product with
the sibling's transpose is the identity, which is exactly the condition
under which reshuffling factors leaves the partition function invariant.
The singled-out all-zeros term of the transformed series is the gauge
function ``z(x)``; general terms ``z(sigma|x)`` factor through the per-node
quantities computed by :func:`q_node`.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .model import FactorTable, ModelError, MultiGM
from .multigraph import DirectedEdge, NodeId

MIN_GAUGE_VALUE = 1e-12

GaugeVector = Mapping[DirectedEdge, float]


def _check_positive(value: float, what: str, floor: float = 0.0) -> None:
    ok = (value >= floor if floor else value > 0.0) and np.isfinite(value)
    if not ok:
        bound = f">= {floor:g}" if floor else "> 0"
        raise ValueError(f"{what} must be {bound} and finite, got {value!r}")


def check_gauge(m: MultiGM, x: GaugeVector) -> None:
    """Verify that ``x`` assigns a strictly positive value to every directed edge."""
    for d in m.graph.directed_edges():
        if d not in x:
            raise ValueError(f"gauge vector missing directed edge {d}")
        _check_positive(x[d], f"gauge value at {d}")


def gauge_matrix(x_p: float, x_q: float) -> np.ndarray:
    """2x2 gauge matrix for a directed edge with values ``(x_p, x_q)``.

    ``x_p`` is the edge's own value and ``x_q`` its sibling's; the sibling's
    matrix is the same formula with the arguments swapped, which makes
    ``G(x_p, x_q).T @ G(x_q, x_p)`` the identity.  Rows are the transformed
    bit, columns the original bit.  The identity is recovered in the
    ``x_p = x_q -> 0`` limit; values below ``MIN_GAUGE_VALUE`` are refused
    (take the limit with an explicit small value instead).
    """
    _check_positive(x_p, "x_p", floor=MIN_GAUGE_VALUE)
    _check_positive(x_q, "x_q", floor=MIN_GAUGE_VALUE)
    # Grouped by the ratio and product of the pair: keeps the sibling
    # orthogonality cancellation exact in floats across wide value ranges.
    r = (x_p / x_q) ** 0.25
    s = np.sqrt(x_p * x_q)
    n = np.sqrt(1.0 + x_p * x_q)
    return np.array(
        [
            [1.0 / (r * n), s * r / n],
            [-s / (r * n), r / n],
        ]
    )


def transform_factors(m: MultiGM, x: GaugeVector) -> MultiGM:
    """Apply the gauge transformation to every factor table.

    The result is a model over the same graph whose entries may be
    negative; summing its weights over all configurations returns the
    original partition function for any positive ``x``.
    """
    check_gauge(m, x)
    factors = {}
    for a in m.graph.nodes:
        f = m.factors[a]
        arr = f.as_array()
        for i, d in enumerate(f.variables):
            g = gauge_matrix(x[d], x[d.sibling])
            arr = np.moveaxis(np.tensordot(g, arr, axes=([1], [i])), 0, i)
        factors[a] = FactorTable.from_values(
            a, f.variables, arr.reshape(-1, order="F"), allow_negative=True
        )
    return MultiGM(graph=m.graph, factors=factors)


def _node_reduce(f: FactorTable, weights: Sequence[np.ndarray]) -> float:
    """Contract the factor table with one length-2 weight vector per slot."""
    arr = f.as_array()
    for w in reversed(weights):
        arr = np.tensordot(arr, w, axes=([arr.ndim - 1], [0]))
    return float(arr)


def h_node(m: MultiGM, a: NodeId, x: GaugeVector) -> float:
    """Node polynomial ``sum_s f_a(s) prod_d x_d**s_d`` at the node's gauge values."""
    f = m.factors[a]
    weights = []
    for d in f.variables:
        _check_positive(x[d], f"gauge value at {d}")
        weights.append(np.array([1.0, x[d]]))
    return _node_reduce(f, weights)


def h_node_partial(m: MultiGM, a: NodeId, d: DirectedEdge, x: GaugeVector) -> float:
    """Partial derivative of :func:`h_node` with respect to the slot ``d``."""
    f = m.factors[a]
    weights = [
        np.array([0.0, 1.0]) if v == d else np.array([1.0, x[v]])
        for v in f.variables
    ]
    return _node_reduce(f, weights)


def gauge_function(m: MultiGM, x: GaugeVector) -> float:
    """The all-zeros term of the transformed series.

    ``prod_a h_a(x_a) / prod_edges (1 + x_plus * x_minus)``; positive for
    soft models at any positive gauge.
    """
    check_gauge(m, x)
    num = 1.0
    for a in m.graph.nodes:
        num *= h_node(m, a, x)
    den = 1.0
    for e in m.graph.edges:
        den *= 1.0 + x[DirectedEdge(e, True)] * x[DirectedEdge(e, False)]
    return num / den


def edge_belief(x: GaugeVector, edge: str) -> float:
    """Edge marginal ``x_plus * x_minus / (1 + x_plus * x_minus)``."""
    prod = x[DirectedEdge(edge, True)] * x[DirectedEdge(edge, False)]
    return prod / (1.0 + prod)


def q_node(m: MultiGM, x: GaugeVector, a: NodeId, colored: Sequence[int]) -> float:
    """Per-node building block of the sigma-term series.

    ``colored`` has one bit per incident directed slot (a colored self-edge
    sets both of its slots).  Colored slots swap their monomial weight
    ``x**s`` for ``x**s * (s - beta)`` and contribute a ``1/beta``
    prefactor, with ``beta`` the edge belief of the slot's undirected edge.
    At sigma = 0 this reduces to :func:`h_node`.
    """
    f = m.factors[a]
    if len(colored) != len(f.variables):
        raise ModelError(
            f"colored vector for node {a!r}: expected {len(f.variables)} bits"
        )
    prefactor = 1.0
    weights = []
    for d, bit in zip(f.variables, colored):
        _check_positive(x[d], f"gauge value at {d}")
        if bit:
            beta = edge_belief(x, d.edge)
            prefactor /= beta
            weights.append(np.array([-beta, x[d] * (1.0 - beta)]))
        else:
            weights.append(np.array([1.0, x[d]]))
    return prefactor * _node_reduce(f, weights)


def z_sigma(m: MultiGM, x: GaugeVector, config: Sequence[int]) -> float:
    """Single term ``z(sigma|x)`` of the gauge-transformed series.

    Summing over all configurations recovers the partition function; at the
    all-zeros configuration this is :func:`gauge_function`.
    """
    check_gauge(m, x)
    if len(config) != len(m.graph.edges):
        raise ModelError(
            f"config length {len(config)} != edge count {len(m.graph.edges)}"
        )
    bit = {e: int(config[j]) for j, e in enumerate(m.graph.edges)}
    scale = 1.0
    for e in m.graph.edges:
        prod = x[DirectedEdge(e, True)] * x[DirectedEdge(e, False)]
        scale *= prod ** bit[e] / (1.0 + prod)
    term = scale
    for a in m.graph.nodes:
        colored = [bit[d.edge] for d in m.factors[a].variables]
        term *= q_node(m, x, a, colored)
    return term
