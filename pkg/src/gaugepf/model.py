"""Multi-graph graphical models: factor tables, brute-force oracles, contraction.

A model places one nonnegative factor table on each node, indexed by the
bit-configuration of the node's incident directed edges.  The global weight
of an edge configuration is the product of factor values, with each directed
slot reading the bit of its undirected edge (a self-edge reads its bit
twice).  ``partition_exact`` and ``map_energy_exact`` enumerate all
configurations and are the reference oracles for everything downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .multigraph import DirectedEdge, EdgeId, GraphError, MultiGraph, NodeId

DEFAULT_ENUMERATION_GUARD = 24

Config = tuple[int, ...]


class ModelError(ValueError):
    """Invalid factor data or operation on a model."""


class EnumerationGuardError(ModelError):
    """Refused brute-force enumeration beyond the configured edge guard."""


@dataclass(frozen=True)
class FactorTable:
    """Dense factor over a node's incident directed edges.

    ``table`` has length ``2**len(variables)``; entry ``i`` is the factor
    value at the bit-configuration where variable ``j`` carries bit
    ``(i >> j) & 1`` (variable 0 is the fastest-varying bit).
    """

    node: NodeId
    variables: tuple[DirectedEdge, ...]
    table: np.ndarray

    @classmethod
    def from_values(
        cls,
        node: NodeId,
        variables: Sequence[DirectedEdge],
        values: Iterable[float],
        allow_negative: bool = False,
    ) -> "FactorTable":
        variables = tuple(variables)
        table = np.asarray(list(values), dtype=float)
        if table.shape != (2 ** len(variables),):
            raise ModelError(
                f"factor at node {node!r}: table length {table.size} "
                f"!= 2**{len(variables)}"
            )
        if not np.all(np.isfinite(table)):
            raise ModelError(f"factor at node {node!r}: non-finite entry")
        if not allow_negative and np.any(table < 0):
            raise ModelError(f"factor at node {node!r}: negative entry")
        table.setflags(write=False)
        return cls(node=node, variables=variables, table=table)

    @property
    def is_soft(self) -> bool:
        return bool(np.all(self.table > 0))

    def as_array(self) -> np.ndarray:
        """Table reshaped to one binary axis per variable (axis i = variable i)."""
        return self.table.reshape((2,) * len(self.variables), order="F")

    def value(self, bits: Sequence[int]) -> float:
        if len(bits) != len(self.variables):
            raise ModelError(
                f"factor at node {self.node!r}: expected {len(self.variables)} bits"
            )
        idx = sum((1 << i) for i, b in enumerate(bits) if b)
        return float(self.table[idx])


@dataclass(frozen=True)
class MultiGM:
    """A multi-graph plus one factor table per node."""

    graph: MultiGraph
    factors: Mapping[NodeId, FactorTable]

    @classmethod
    def from_tables(
        cls, graph: MultiGraph, factors: Mapping[NodeId, FactorTable]
    ) -> "MultiGM":
        for a in graph.nodes:
            if a not in factors:
                raise ModelError(f"missing factor for node {a!r}")
            if factors[a].variables != graph.incidence[a]:
                raise ModelError(
                    f"factor at node {a!r}: variable order "
                    f"{[str(d) for d in factors[a].variables]} does not match "
                    f"incidence {[str(d) for d in graph.incidence[a]]}"
                )
        extra = set(factors) - set(graph.nodes)
        if extra:
            raise ModelError(f"factors for unknown nodes: {sorted(extra)}")
        return cls(graph=graph, factors=dict(factors))

    @property
    def is_soft(self) -> bool:
        return all(f.is_soft for f in self.factors.values())

    def n_edges(self) -> int:
        return len(self.graph.edges)


def _check_config(m: MultiGM, config: Sequence[int]) -> None:
    if len(config) != len(m.graph.edges):
        raise ModelError(
            f"config length {len(config)} != edge count {len(m.graph.edges)}"
        )


def evaluate_weight(m: MultiGM, config: Sequence[int]) -> float:
    """Product of factor values at one edge configuration."""
    _check_config(m, config)
    bit = {e: int(config[j]) for j, e in enumerate(m.graph.edges)}
    w = 1.0
    for a in m.graph.nodes:
        f = m.factors[a]
        w *= f.value([bit[d.edge] for d in f.variables])
    return w


def _check_guard(m: MultiGM, guard: int) -> None:
    if len(m.graph.edges) > guard:
        raise EnumerationGuardError(
            f"{len(m.graph.edges)} edges exceeds the enumeration guard {guard}"
        )


def _block_weights(m: MultiGM, idx: np.ndarray) -> np.ndarray:
    """Weights of the configurations whose global indices are ``idx``."""
    pos = {e: j for j, e in enumerate(m.graph.edges)}
    w = np.ones(idx.shape, dtype=float)
    for a in m.graph.nodes:
        f = m.factors[a]
        local = np.zeros(idx.shape, dtype=np.int64)
        for i, d in enumerate(f.variables):
            local |= ((idx >> pos[d.edge]) & 1) << i
        w *= f.table[local]
    return w


def partition_exact(m: MultiGM, guard: int = DEFAULT_ENUMERATION_GUARD) -> float:
    """Brute-force partition function: sum over all ``2**|E|`` configurations.

    Terms are enumerated in ascending configuration-index order (bit j of
    the index is edge j), so results are reproducible bit-for-bit.
    """
    _check_guard(m, guard)
    n = 1 << len(m.graph.edges)
    total = 0.0
    block = 1 << 16
    for lo in range(0, n, block):
        idx = np.arange(lo, min(lo + block, n), dtype=np.int64)
        total += float(_block_weights(m, idx).sum())
    return total


def map_energy_exact(
    m: MultiGM, guard: int = DEFAULT_ENUMERATION_GUARD
) -> tuple[float, Config]:
    """MAP energy ``-log max_sigma f(sigma)`` with its argmax configuration.

    Ties resolve to the smallest configuration index.  Raises if every
    configuration has zero weight.
    """
    _check_guard(m, guard)
    n = 1 << len(m.graph.edges)
    best = -math.inf
    best_idx = 0
    block = 1 << 16
    for lo in range(0, n, block):
        idx = np.arange(lo, min(lo + block, n), dtype=np.int64)
        w = _block_weights(m, idx)
        j = int(np.argmax(w))
        if w[j] > best:
            best = float(w[j])
            best_idx = int(idx[j])
    if best <= 0:
        raise ModelError("all configurations have zero weight")
    config = tuple((best_idx >> j) & 1 for j in range(len(m.graph.edges)))
    return -math.log(best), config


def soften(m: MultiGM, eps: float) -> MultiGM:
    """Clamp every table entry to at least ``eps`` times its table maximum."""
    if eps <= 0:
        raise ModelError("softening epsilon must be positive")
    factors = {}
    for a, f in m.factors.items():
        top = float(f.table.max())
        if top <= 0:
            raise ModelError(f"factor at node {a!r} is identically zero")
        factors[a] = FactorTable.from_values(
            a, f.variables, np.maximum(f.table, eps * top)
        )
    return MultiGM(graph=m.graph, factors=factors)


def contract_model(m: MultiGM, edge: EdgeId) -> MultiGM:
    """Sum the edge variable out of the model; the partition function is kept.

    For a normal edge the endpoint tables are merged into the surviving
    node's table over the union of their remaining variables (survivor's
    first); for a self-edge the diagonal of the two slots is summed.
    """
    if edge not in m.graph.endpoints:
        raise GraphError(f"unknown edge {edge!r}")
    g2 = m.graph.contract_edge(edge)
    tail, head = m.graph.endpoints[edge]
    factors = {a: f for a, f in m.factors.items() if a in g2.incidence}

    if tail == head:
        node = tail
        f = m.factors[node]
        arr = f.as_array()
        ip = f.variables.index(DirectedEdge(edge, True))
        iq = f.variables.index(DirectedEdge(edge, False))
        d0 = np.take(np.take(arr, 0, axis=max(ip, iq)), 0, axis=min(ip, iq))
        d1 = np.take(np.take(arr, 1, axis=max(ip, iq)), 1, axis=min(ip, iq))
        merged = d0 + d1
        new_vars = tuple(d for d in f.variables if d.edge != edge)
    else:
        node, absorbed = (tail, head) if tail <= head else (head, tail)
        fs, fa = m.factors[node], m.factors[absorbed]
        slot_s = next(i for i, d in enumerate(fs.variables) if d.edge == edge)
        slot_a = next(i for i, d in enumerate(fa.variables) if d.edge == edge)
        parts = []
        for v in (0, 1):
            s_part = np.take(fs.as_array(), v, axis=slot_s)
            a_part = np.take(fa.as_array(), v, axis=slot_a)
            parts.append(np.multiply.outer(s_part, a_part))
        merged = parts[0] + parts[1]
        new_vars = tuple(d for d in fs.variables if d.edge != edge) + tuple(
            d for d in fa.variables if d.edge != edge
        )

    factors[node] = FactorTable.from_values(
        node, new_vars, merged.reshape(-1, order="F")
    )
    return MultiGM.from_tables(g2, factors)
