import math

import numpy as np
import pytest

from gaugepf import (
    enumerate_generalized_loops,
    gauge_function,
    loop_series_sum,
    loop_term,
    partition_exact,
    solve_bp,
    z_sigma,
)
from gaugepf.bp import NonConvergenceError, SolverConfig
from gaugepf.families import random_soft_model, random_tree_model
from gaugepf.model import EnumerationGuardError
from gaugepf.multigraph import MultiGraph

from conftest import make_model

FAST = SolverConfig(restarts=4)


class TestEnumeration:
    def test_tree_only_empty_loop(self, rng):
        for _ in range(10):
            m = random_tree_model(rng, int(rng.integers(1, 9)))
            loops = enumerate_generalized_loops(m.graph)
            assert loops == [(0,) * len(m.graph.edges)]

    def test_triangle(self, triangle_model):
        loops = enumerate_generalized_loops(triangle_model.graph)
        assert loops == [(0, 0, 0), (1, 1, 1)]

    def test_single_self_edge(self, self_edge_model):
        assert enumerate_generalized_loops(self_edge_model.graph) == [(0,), (1,)]

    def test_self_edge_counts_degree_two(self):
        # one normal edge plus one self-edge: coloring only the self-edge is
        # a loop (degree 2 at its node); coloring only the normal edge or
        # both leaves a degree-1 node
        g = MultiGraph.build(["a", "b"], [("e1", "a", "b"), ("e2", "b", "b")])
        loops = enumerate_generalized_loops(g)
        assert loops == [(0, 0), (0, 1)]

    def test_matches_exhaustive_filter(self, rng):
        for _ in range(10):
            m = random_soft_model(rng, 6)
            g = m.graph
            expected = []
            for idx in range(1 << 6):
                bits = tuple(idx >> j & 1 for j in range(6))
                degree = {a: 0 for a in g.nodes}
                for j, e in enumerate(g.edges):
                    if bits[j]:
                        tail, head = g.endpoints[e]
                        degree[tail] += 1
                        degree[head] += 1
                if all(d != 1 for d in degree.values()):
                    expected.append(bits)
            assert enumerate_generalized_loops(g) == expected

    def test_guard(self, rng):
        m = random_soft_model(rng, 5)
        with pytest.raises(EnumerationGuardError):
            enumerate_generalized_loops(m.graph, guard=4)


class TestLoopTerm:
    def test_empty_loop_is_gauge_function(self, rng):
        m = random_soft_model(rng, 4)
        g = solve_bp(m, FAST)
        zero = (0,) * 4
        assert loop_term(m, g.x, zero) == pytest.approx(
            gauge_function(m, g.x), rel=1e-12
        )

    def test_matches_z_sigma(self, rng):
        for _ in range(5):
            m = random_soft_model(rng, 5)
            g = solve_bp(m, FAST)
            assert g.converged
            z = partition_exact(m)
            for config in enumerate_generalized_loops(m.graph):
                term = loop_term(m, g.x, config)
                reference = z_sigma(m, g.x, config)
                assert term == pytest.approx(reference, rel=1e-9, abs=1e-9 * z)

    def test_tree_single_term_is_z(self, rng):
        m = random_tree_model(rng, 5)
        g = solve_bp(m, FAST)
        assert loop_term(m, g.x, (0,) * 5) == pytest.approx(
            partition_exact(m), rel=1e-6
        )

    def test_nonconverged_gauge_rejected(self, two_node_model):
        x = {d: 3.0 for d in two_node_model.graph.directed_edges()}
        with pytest.raises(NonConvergenceError):
            loop_term(two_node_model, x, (0,))


class TestLoopSeriesSum:
    def test_tree_exact(self, rng):
        m = random_tree_model(rng, 6)
        g = solve_bp(m, FAST)
        assert loop_series_sum(m, g.x) == pytest.approx(
            partition_exact(m), rel=1e-8
        )

    def test_triangle_random_factors(self, rng):
        tables = {
            a: np.exp(rng.uniform(np.log(0.1), np.log(10), 4)) for a in "abc"
        }
        m = make_model(
            ["a", "b", "c"],
            [("e1", "a", "b"), ("e2", "b", "c"), ("e3", "a", "c")],
            tables,
        )
        g = solve_bp(m, FAST)
        assert g.converged
        assert loop_series_sum(m, g.x) == pytest.approx(
            partition_exact(m), rel=1e-8
        )

    def test_self_edge_two_terms(self, self_edge_model):
        g = solve_bp(self_edge_model, FAST)
        z_bp = gauge_function(self_edge_model, g.x)
        assert z_bp == pytest.approx((5 + math.sqrt(101)) / 2, rel=1e-9)
        colored = loop_term(self_edge_model, g.x, (1,))
        assert colored < 0
        assert z_bp + colored == pytest.approx(5.0, rel=1e-9)
        assert loop_series_sum(self_edge_model, g.x) == pytest.approx(5.0, rel=1e-9)

    def test_random_models(self, rng):
        for _ in range(10):
            m = random_soft_model(rng, int(rng.integers(2, 8)))
            g = solve_bp(m, FAST)
            assert g.converged
            assert loop_series_sum(m, g.x) == pytest.approx(
                partition_exact(m), rel=1e-8
            )

    def test_excluded_subsets_vanish(self, rng):
        # single-colored-node subsets are exactly the ones the loop
        # condition drops; their series terms vanish at a BP gauge
        import itertools

        for _ in range(5):
            m = random_soft_model(rng, 5)
            g = solve_bp(m, FAST)
            assert g.converged
            z = partition_exact(m)
            loops = set(enumerate_generalized_loops(m.graph))
            for bits in itertools.product((0, 1), repeat=5):
                if bits in loops:
                    continue
                assert abs(z_sigma(m, g.x, bits)) <= 1e-8 * z
