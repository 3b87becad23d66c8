import json
import random

import pytest

from iterflow.errors import (
    CycleDetectedError,
    DuplicateNameError,
    NoOutputsError,
    UnknownParentError,
    WorkflowSyntaxError,
)
from iterflow.workflow import (
    parse_workflow,
    prune_dead_operators,
    serialize_workflow,
    topological_order,
)

from conftest import chain_spec, random_spec, sim_node, sim_spec


def doc(nodes, outputs, version=1):
    return json.dumps({"version": version, "nodes": nodes, "outputs": outputs})


def node_doc(name, parents=(), sources=None, **extra):
    if sources is None:
        sources = [f"src/{name}.txt"] if not parents else []
    return {
        "name": name,
        "kind": "ml",
        "action": {"type": "simulated", "compute_seconds": 1.0, "output_bytes": 10},
        "parents": list(parents),
        "sources": sources,
        **extra,
    }


class TestParse:
    def test_minimal_single_source_workflow(self):
        spec = parse_workflow(doc([node_doc("raw")], ["raw"]))
        assert len(spec.nodes) == 1
        assert spec.node("raw").is_source
        assert sum(len(n.parents) for n in spec.nodes) == 0

    def test_two_node_cycle_reports_its_members(self):
        text = doc([node_doc("a", parents=["b"]), node_doc("b", parents=["a"])], ["a"])
        with pytest.raises(CycleDetectedError) as err:
            parse_workflow(text)
        assert set(err.value.cycle) == {"a", "b"}

    def test_dangling_parent(self):
        text = doc([node_doc("train", parents=["features"])], ["train"])
        with pytest.raises(UnknownParentError) as err:
            parse_workflow(text)
        assert err.value.parent == "features"

    def test_duplicate_name(self):
        with pytest.raises(DuplicateNameError):
            parse_workflow(doc([node_doc("x"), node_doc("x")], ["x"]))

    def test_no_outputs(self):
        with pytest.raises(NoOutputsError):
            parse_workflow(doc([node_doc("x")], []))

    def test_unknown_output_name(self):
        with pytest.raises(WorkflowSyntaxError):
            parse_workflow(doc([node_doc("x")], ["ghost"]))

    def test_malformed_json(self):
        with pytest.raises(WorkflowSyntaxError):
            parse_workflow("{nope")

    def test_unknown_key_rejected(self):
        nodes = [node_doc("x", retries=3)]
        with pytest.raises(WorkflowSyntaxError) as err:
            parse_workflow(doc(nodes, ["x"]))
        assert "retries" in str(err.value)

    def test_unknown_action_type(self):
        bad = node_doc("x")
        bad["action"] = {"type": "python", "callable": "f"}
        with pytest.raises(WorkflowSyntaxError):
            parse_workflow(doc([bad], ["x"]))

    def test_unsupported_version(self):
        with pytest.raises(WorkflowSyntaxError):
            parse_workflow(doc([node_doc("x")], ["x"], version=99))

    def test_root_without_sources_rejected(self):
        with pytest.raises(WorkflowSyntaxError):
            parse_workflow(doc([node_doc("x", sources=[])], ["x"]))

    def test_env_fingerprint_accepted(self):
        spec = parse_workflow(doc([node_doc("x", env_fingerprint="lib-2.1")], ["x"]))
        assert spec.node("x").env_fingerprint == "lib-2.1"


class TestSerializeRoundTrip:
    def test_round_trip_identity(self):
        rng = random.Random(42)
        for _ in range(25):
            spec = random_spec(rng)
            assert parse_workflow(serialize_workflow(spec)) == spec

    def test_command_action_round_trip(self):
        text = doc(
            [
                node_doc("raw"),
                {
                    "name": "upper",
                    "kind": "data-preprocessing",
                    "action": {
                        "type": "command",
                        "argv": ["sh", "-c", "tr a-z A-Z < {parent:raw} > {output}"],
                        "inputs": [],
                        "output": "out/upper.txt",
                    },
                    "parents": ["raw"],
                    "sources": [],
                },
            ],
            ["upper"],
        )
        spec = parse_workflow(text)
        assert parse_workflow(serialize_workflow(spec)) == spec


class TestTopologicalOrder:
    def test_chain(self):
        assert topological_order(chain_spec("a", "b", "c")) == ["a", "b", "c"]

    def test_diamond_breaks_ties_lexicographically(self):
        spec = sim_spec(
            [
                sim_node("a"),
                sim_node("b", parents=("a",)),
                sim_node("c", parents=("a",)),
                sim_node("d", parents=("b", "c")),
            ],
            outputs=("d",),
        )
        assert topological_order(spec) == ["a", "b", "c", "d"]

    def test_single_node(self):
        assert topological_order(chain_spec("only")) == ["only"]

    def test_parents_always_precede_children(self):
        rng = random.Random(7)
        for _ in range(20):
            spec = random_spec(rng)
            order = topological_order(spec)
            position = {name: i for i, name in enumerate(order)}
            for node in spec.nodes:
                assert all(position[p] < position[node.name] for p in node.parents)


class TestPruneDeadOperators:
    def test_isolated_node_removed(self):
        spec = sim_spec(
            [sim_node("a"), sim_node("b", parents=("a",)), sim_node("x")],
            outputs=("b",),
        )
        pruned, removed = prune_dead_operators(spec)
        assert removed == {"x"}
        assert pruned.names() == ("a", "b")

    def test_everything_reachable_is_identity(self):
        spec = chain_spec("a", "b", "c")
        pruned, removed = prune_dead_operators(spec)
        assert removed == set()
        assert pruned == spec

    def test_dead_branch_removed(self):
        spec = sim_spec(
            [
                sim_node("a"),
                sim_node("b", parents=("a",)),
                sim_node("c", parents=("b",)),
                sim_node("d", parents=("a",)),
            ],
            outputs=("c",),
        )
        _, removed = prune_dead_operators(spec)
        assert removed == {"d"}

    def test_idempotent(self):
        rng = random.Random(3)
        for _ in range(20):
            spec = random_spec(rng)
            once, removed = prune_dead_operators(spec)
            twice, removed_again = prune_dead_operators(once)
            assert twice == once
            assert removed_again == set()

    def test_kept_nodes_reach_an_output(self):
        rng = random.Random(4)
        for _ in range(20):
            spec = random_spec(rng)
            pruned, _ = prune_dead_operators(spec)
            # walk forward from each kept node; must reach some output
            for node in pruned.nodes:
                frontier, seen = [node.name], set()
                reached = False
                while frontier:
                    cur = frontier.pop()
                    if cur in pruned.outputs:
                        reached = True
                        break
                    seen.add(cur)
                    frontier.extend(k for k in pruned.child_map[cur] if k not in seen)
                assert reached, f"{node.name} cannot reach any output"
