import json
import math

import numpy as np
import pytest

import gaugepf.gauge
from gaugepf.cli import (
    EXIT_INPUT,
    EXIT_INVARIANT,
    EXIT_NONCONVERGENCE,
    EXIT_OK,
    ModelFileError,
    load_model,
    main,
    model_to_doc,
    parse_model,
    serialize_model,
)
from gaugepf.families import random_soft_model

from conftest import make_model


@pytest.fixture
def two_node_file(tmp_path, two_node_model):
    path = tmp_path / "two_node.json"
    path.write_text(serialize_model(two_node_model))
    return str(path)


@pytest.fixture
def self_edge_file(tmp_path, self_edge_model):
    path = tmp_path / "self_edge.json"
    path.write_text(serialize_model(self_edge_model))
    return str(path)


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    report = json.loads(captured.out) if captured.out else None
    return code, report, captured.out


class TestModelFormat:
    def test_round_trip_identity(self, rng):
        for _ in range(5):
            m = random_soft_model(rng, 5)
            m2 = parse_model(json.loads(serialize_model(m)))
            assert m2.graph.nodes == m.graph.nodes
            assert m2.graph.edges == m.graph.edges
            assert m2.graph.incidence == m.graph.incidence
            for a in m.graph.nodes:
                assert m2.factors[a].variables == m.factors[a].variables
                np.testing.assert_array_equal(
                    m2.factors[a].table, m.factors[a].table
                )

    def test_serialize_stable_bytes(self, two_node_model):
        assert serialize_model(two_node_model) == serialize_model(two_node_model)

    def test_sparse_table_needs_marker(self, two_node_model):
        doc = model_to_doc(two_node_model)
        del doc["factors"]["a"]["table"]["0"]
        doc["factors"]["a"]["soft"] = True
        with pytest.raises(ModelFileError, match='"soft": false'):
            parse_model(doc)
        doc["factors"]["a"]["soft"] = False
        m = parse_model(doc)
        assert m.factors["a"].table[0] == 0.0

    def test_malformed_bitstring_names_node(self, two_node_model):
        doc = model_to_doc(two_node_model)
        doc["factors"]["b"]["table"]["2"] = 1.0
        with pytest.raises(ModelFileError, match="'b'"):
            parse_model(doc)

    def test_wrong_order_names_node(self, two_node_model):
        doc = model_to_doc(two_node_model)
        doc["factors"]["a"]["order"] = ["e1-"]
        with pytest.raises(ModelFileError, match="'a'"):
            parse_model(doc)

    def test_negative_entry_rejected(self, two_node_model):
        doc = model_to_doc(two_node_model)
        doc["factors"]["a"]["table"]["0"] = -1.0
        with pytest.raises(ModelFileError, match="negative"):
            parse_model(doc)

    def test_load_missing_file(self):
        with pytest.raises(ModelFileError):
            load_model("/nonexistent/model.json")

    @pytest.mark.parametrize(
        "path,value",
        [
            ((), 17),
            (("nodes",), "ab"),
            (("nodes",), [1, 2]),
            (("edges",), {"e1": ["a", "b"]}),
            (("edges", 0), {"id": "e1"}),
            (("edges", 0, "tail"), "zz"),
            (("factors",), []),
            (("factors", "a"), 42),
            (("factors", "a"), {}),
            (("factors", "a", "order"), "e1+"),
            (("factors", "a", "order"), ["e1-"]),
            (("factors", "a", "table"), [1.0, 2.0]),
            (("factors", "a", "table"), {"00": 1.0}),
            (("factors", "a", "table"), {"0": "x", "1": 2.0}),
            (("factors", "a", "table"), {"0": float("nan"), "1": 2.0}),
            (("factors", "a", "table"), {"0": -1.0, "1": 2.0}),
            (("factors", "a", "table"), {"2": 1.0}),
        ],
    )
    def test_structural_mutations_rejected(self, two_node_model, path, value):
        import copy

        doc = json.loads(serialize_model(two_node_model))
        if not path:
            doc = value
        else:
            target = doc
            for key in path[:-1]:
                target = target[key]
            target[path[-1]] = value
        with pytest.raises(ModelFileError):
            parse_model(doc)

    def test_isolated_node_empty_bitstring(self):
        # a degree-0 node has a single-entry table keyed by the empty string
        m = make_model(
            ["a", "b", "lone"],
            [("e1", "a", "b")],
            {"a": [1, 2], "b": [3, 4], "lone": [7.0]},
        )
        doc = json.loads(serialize_model(m))
        assert doc["factors"]["lone"]["table"] == {"": 7.0}
        m2 = parse_model(doc)
        assert float(m2.factors["lone"].table[0]) == 7.0


class TestCmdExact:
    def test_two_node(self, capsys, two_node_file):
        code, report, _ = run(capsys, ["exact", two_node_file])
        assert code == EXIT_OK
        assert report["results"]["Z"] == 11.0
        assert report["results"]["map_energy"] == pytest.approx(-math.log(8.0))
        assert report["results"]["argmax"] == "1"

    def test_triangle_all_ones(self, capsys, tmp_path, triangle_model):
        path = tmp_path / "tri.json"
        path.write_text(serialize_model(triangle_model))
        code, report, _ = run(capsys, ["exact", str(path)])
        assert code == EXIT_OK
        assert report["results"]["Z"] == 8.0

    def test_parse_error_exit_code(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"nodes": "oops"}')
        code, report, _ = run(capsys, ["exact", str(bad)])
        assert code == EXIT_INPUT
        assert report is None

    def test_guard_exceeded(self, capsys, two_node_file):
        code, _, _ = run(capsys, ["exact", two_node_file, "--guard", "0"])
        assert code == EXIT_INPUT


class TestCmdBP:
    def test_tree_flagged_exact(self, capsys, two_node_file):
        code, report, _ = run(capsys, ["bp", two_node_file, "--restarts", "4"])
        assert code == EXIT_OK
        assert report["results"]["exact"] is True
        assert report["results"]["Z_vbp"] == pytest.approx(11.0, rel=1e-8)

    def test_bouquet_ratio(self, capsys, self_edge_file):
        code, report, _ = run(capsys, ["bp", self_edge_file, "--restarts", "4"])
        assert code == EXIT_OK
        r = report["results"]
        assert r["Z_vbp"] == pytest.approx((5 + math.sqrt(101)) / 2, rel=1e-9)
        assert r["Z"] == 5.0
        assert r["ratio"] == pytest.approx(r["Z_vbp"] / 5.0)
        assert r["exact"] is False

    def test_nonconvergence_exit_two(self, capsys, two_node_file):
        code, report, _ = run(
            capsys,
            ["bp", two_node_file, "--tol", "1e-30", "--max-sweeps", "3",
             "--restarts", "2"],
        )
        assert code == EXIT_NONCONVERGENCE
        assert report["results"]["converged"] is False

    def test_hard_model_softened_lower_bound(self, capsys, tmp_path):
        # all-ones 2x2 perfect-matching model: Z = 2, report says softened
        # and the variational value stays below Z
        from gaugepf.families import permanent_model

        path = tmp_path / "perm.json"
        path.write_text(serialize_model(permanent_model(np.ones((2, 2)))))
        code, report, _ = run(capsys, ["bp", str(path), "--restarts", "4"])
        assert code == EXIT_OK
        r = report["results"]
        assert r["softened"] is True
        assert r["Z"] == 2.0
        assert r["Z_vbp"] <= 2.0 * (1 + 1e-9)
        assert r["ratio"] <= 1.0 + 1e-9


class TestCmdContract:
    def test_exact_mode_constant(self, capsys, self_edge_file):
        code, report, _ = run(capsys, ["contract", self_edge_file])
        assert code == EXIT_OK
        assert report["results"]["z_constant"] is True
        assert all(s["Z"] == 5.0 for s in report["results"]["steps"])

    def test_bp_sequence_decrease_informative(self, capsys, self_edge_file):
        code, report, _ = run(
            capsys,
            ["contract", self_edge_file, "--mode", "bp-sequence",
             "--restarts", "4"],
        )
        assert code == EXIT_OK
        assert report["results"]["non_decreasing"] is False
        assert len(report["results"]["decreases"]) == 1
        assert report["results"]["final_Z"] == pytest.approx(5.0, rel=1e-9)

    def test_explicit_order(self, capsys, tmp_path, triangle_model):
        path = tmp_path / "tri.json"
        path.write_text(serialize_model(triangle_model))
        code, report, _ = run(
            capsys, ["contract", str(path), "--order", "e2,e1,e3"]
        )
        assert code == EXIT_OK
        assert report["results"]["order"] == ["e2", "e1", "e3"]

    def test_invalid_order_member(self, capsys, two_node_file):
        code, _, _ = run(capsys, ["contract", two_node_file, "--order", "zz"])
        assert code == EXIT_INPUT

    def test_id_order(self, capsys, tmp_path, triangle_model):
        path = tmp_path / "tri.json"
        path.write_text(serialize_model(triangle_model))
        code, report, _ = run(capsys, ["contract", str(path), "--order", "ids"])
        assert code == EXIT_OK
        assert report["results"]["order"] == ["e1", "e2", "e3"]
        assert report["results"]["z_constant"] is True


class TestCmdLoops:
    def test_tree_single_loop(self, capsys, two_node_file):
        code, report, _ = run(capsys, ["loops", two_node_file, "--restarts", "4"])
        assert code == EXIT_OK
        r = report["results"]
        assert r["loop_count"] == 1
        assert r["sum"] == pytest.approx(11.0, rel=1e-8)
        assert r["relative_error"] <= 1e-8

    def test_self_edge_two_loops_sorted(self, capsys, self_edge_file):
        code, report, _ = run(capsys, ["loops", self_edge_file, "--restarts", "4"])
        assert code == EXIT_OK
        r = report["results"]
        assert r["loop_count"] == 2
        terms = r["terms"]
        assert abs(terms[0]["term"]) >= abs(terms[1]["term"])
        assert r["sum"] == pytest.approx(5.0, rel=1e-8)

    def test_nonconvergence_exit_two(self, capsys, self_edge_file):
        code, _, _ = run(
            capsys,
            ["loops", self_edge_file, "--tol", "1e-30", "--max-sweeps", "3",
             "--restarts", "2"],
        )
        assert code == EXIT_NONCONVERGENCE


class TestDeterminism:
    def test_exact_byte_identical(self, capsys, two_node_file):
        _, _, out1 = run(capsys, ["exact", two_node_file])
        _, _, out2 = run(capsys, ["exact", two_node_file])
        assert out1 == out2

    def test_loops_byte_identical(self, capsys, self_edge_file):
        args = ["loops", self_edge_file, "--seed", "3", "--restarts", "4"]
        _, _, out1 = run(capsys, args)
        _, _, out2 = run(capsys, args)
        assert out1 == out2

    def test_contract_byte_identical(self, capsys, self_edge_file):
        args = ["contract", self_edge_file, "--mode", "bp-sequence",
                "--seed", "5", "--restarts", "4"]
        _, _, out1 = run(capsys, args)
        _, _, out2 = run(capsys, args)
        assert out1 == out2

    def test_json_flag_writes_same_bytes(self, capsys, tmp_path, two_node_file):
        out_path = tmp_path / "report.json"
        _, _, out = run(capsys, ["exact", two_node_file, "--json", str(out_path)])
        assert out_path.read_text() == out


class TestCmdVerify:
    def test_random_suite_passes(self, capsys):
        code, report, _ = run(
            capsys,
            ["verify", "--random", "3", "--edges", "5", "--seed", "7",
             "--restarts", "4"],
        )
        assert code == EXIT_OK
        assert report["all_passed"] is True
        names = {c["name"] for c in report["checks"]}
        assert {
            "orthogonality", "gauge_invariance", "contract_commutes",
            "algebraic_graphical", "diff_marg_recovery", "no_loose_coloring",
            "saddle", "loop_sum", "value_identity",
        } <= names

    def test_tree_corpus_exactness(self, capsys, tmp_path, rng):
        from gaugepf.families import random_tree_model
        from gaugepf.cli import serialize_model as ser

        path = tmp_path / "tree.json"
        path.write_text(ser(random_tree_model(rng, 5)))
        code, report, _ = run(capsys, ["verify", str(path), "--restarts", "4"])
        assert code == EXIT_OK
        checks = {c["name"]: c["passed"] for c in report["checks"]}
        assert checks["tree_exactness"] is True

    def test_corrupted_gauge_matrix_fails_exit_one(self, capsys, monkeypatch):
        true_matrix = gaugepf.gauge.gauge_matrix

        def corrupted(x_p, x_q):
            g = true_matrix(x_p, x_q).copy()
            g[1, 0] = -g[1, 0]  # break the sibling sign convention
            return g

        monkeypatch.setattr(gaugepf.gauge, "gauge_matrix", corrupted)
        code, report, _ = run(
            capsys,
            ["verify", "--random", "1", "--edges", "3", "--seed", "1",
             "--restarts", "2"],
        )
        assert code == EXIT_INVARIANT
        checks = {c["name"]: c["passed"] for c in report["checks"]}
        assert checks["orthogonality"] is False
