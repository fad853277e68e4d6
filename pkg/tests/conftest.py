import numpy as np
import pytest

from gaugepf import FactorTable, MultiGM, MultiGraph


def make_model(nodes, edges, tables):
    """Model from node ids, (edge, tail, head) triples, and per-node tables."""
    g = MultiGraph.build(nodes, edges)
    factors = {
        a: FactorTable.from_values(a, g.incidence[a], tables[a]) for a in g.nodes
    }
    return MultiGM.from_tables(g, factors)


@pytest.fixture
def two_node_model():
    """One normal edge, f_a = (1, 2), f_b = (3, 4); Z = 1*3 + 2*4 = 11."""
    return make_model(["a", "b"], [("e1", "a", "b")], {"a": [1, 2], "b": [3, 4]})


@pytest.fixture
def self_edge_model():
    """Single node with one self-edge, table (2, 5, 5, 3); Z = 2 + 3 = 5."""
    return make_model(["s"], [("e", "s", "s")], {"s": [2, 5, 5, 3]})


@pytest.fixture
def triangle_model():
    """Triangle with all factor entries 1; Z = 2**3 = 8."""
    tables = {a: [1, 1, 1, 1] for a in "abc"}
    return make_model(
        ["a", "b", "c"],
        [("e1", "a", "b"), ("e2", "b", "c"), ("e3", "a", "c")],
        tables,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
