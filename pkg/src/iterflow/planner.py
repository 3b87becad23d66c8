"""Minimum-cost execution planning over per-node compute/load/prune states.

Given per-node compute and load costs, cache availability, the set of nodes
that must be recomputed, and the declared output nodes, the planner assigns
one of three states to every node:

* ``compute`` - run the operator (every parent must be loaded or computed),
* ``load``    - restore the node's output from the cache,
* ``prune``   - skip the node entirely.

A plan is legal when no computed node has a pruned parent, no uncached node
is loaded, mandatory nodes are computed, and output nodes are not pruned.
The objective is the plain sum of compute times over computed nodes plus
load times over loaded nodes (pruned nodes are free).

``assign_states_optimal`` finds the exact optimum through a reduction to
minimum s-t cut (a project-selection style construction, solved with
Dinic's algorithm).  ``assign_states_bruteforce`` enumerates every legal
assignment and exists purely as an independent oracle; the two must agree
on every instance small enough to enumerate.

Costs are handled as integer microseconds throughout so that oracle
comparisons are exact.  Ties are broken deterministically: fewest computed
nodes first, then the lexicographically smallest state vector in node-name
order with prune < load < compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InfiniteCostError, TooLargeError


class NodeState(str, Enum):
    COMPUTE = "compute"
    LOAD = "load"
    PRUNE = "prune"


_MICROS = 10**6

Dag = Mapping[str, Sequence[str]]


@dataclass(frozen=True)
class CostRecord:
    """Per-node cost facts; ``load_seconds`` is +inf when nothing is cached."""

    compute_seconds: float
    load_seconds: float = math.inf
    output_bytes: int = 0

    @property
    def cached(self) -> bool:
        return math.isfinite(self.load_seconds)


@dataclass(frozen=True)
class ExecutionPlan:
    """A total state assignment plus its objective value."""

    states: Mapping[str, NodeState]
    total_cost_seconds: float
    total_cost_micros: int

    def nodes_in(self, state: NodeState) -> list[str]:
        return sorted(n for n, s in self.states.items() if s is state)

    def to_json(self) -> dict:
        return {
            "states": {name: state.value for name, state in sorted(self.states.items())},
            "total_cost_seconds": self.total_cost_seconds,
            "total_cost_micros": self.total_cost_micros,
        }


def _micros(seconds: float) -> int:
    if not math.isfinite(seconds) or seconds < 0:
        raise ValueError(f"cost must be finite and nonnegative, got {seconds}")
    return round(seconds * _MICROS)


def plan_cost(states: Mapping[str, NodeState], costs: Mapping[str, CostRecord]) -> float:
    """Objective value of an assignment: compute + load times, prune free.

    Raises InfiniteCostError if a loaded node has no cached copy.
    """
    total = 0
    for name, state in states.items():
        record = costs[name]
        if state is NodeState.COMPUTE:
            total += _micros(record.compute_seconds)
        elif state is NodeState.LOAD:
            if not record.cached:
                raise InfiniteCostError(name)
            total += _micros(record.load_seconds)
    return total / _MICROS


def check_plan_legality(
    dag: Dag,
    costs: Mapping[str, CostRecord],
    mandatory: Iterable[str],
    sinks: Iterable[str],
    states: Mapping[str, NodeState],
) -> list[str]:
    """Return a list of violated rules (empty when the plan is legal)."""
    violations = []
    for name in dag:
        if name not in states:
            violations.append(f"{name}: no state assigned")
    for name, parents in dag.items():
        if states.get(name) is NodeState.COMPUTE:
            for parent in parents:
                if states.get(parent) is NodeState.PRUNE:
                    violations.append(f"{name}: computed but parent {parent} is pruned")
    for name, state in states.items():
        if state is NodeState.LOAD and not costs[name].cached:
            violations.append(f"{name}: loaded but not cached")
    for name in mandatory:
        if states.get(name) is not NodeState.COMPUTE:
            violations.append(f"{name}: mandatory recompute but not computed")
    for name in sinks:
        if states.get(name) is NodeState.PRUNE:
            violations.append(f"{name}: output node pruned")
    return violations


class _FlowNetwork:
    """Dinic max-flow on adjacency lists; capacities are arbitrary ints."""

    def __init__(self, n_vertices: int):
        self.adj: list[list[list[int]]] = [[] for _ in range(n_vertices)]

    def add_edge(self, u: int, v: int, capacity: int) -> None:
        # Edge entries are [target, residual capacity, index of reverse edge].
        self.adj[u].append([v, capacity, len(self.adj[v])])
        self.adj[v].append([u, 0, len(self.adj[u]) - 1])

    def _levels(self, source: int, sink: int) -> list[int] | None:
        level = [-1] * len(self.adj)
        level[source] = 0
        queue = [source]
        for u in queue:
            for edge in self.adj[u]:
                v, cap, _ = edge
                if cap > 0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level if level[sink] >= 0 else None

    def _augment(self, source: int, sink: int, level: list[int],
                 it: list[int]) -> int:
        # Iterative DFS for one augmenting path in the level graph.
        path: list[tuple[int, list[int]]] = []
        u = source
        while True:
            if u == sink:
                bottleneck = min(edge[1] for _, edge in path)
                for _, edge in path:
                    edge[1] -= bottleneck
                    self.adj[edge[0]][edge[2]][1] += bottleneck
                return bottleneck
            advanced = False
            while it[u] < len(self.adj[u]):
                edge = self.adj[u][it[u]]
                v, cap, _ = edge
                if cap > 0 and level[v] == level[u] + 1:
                    path.append((u, edge))
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if not path:
                    return 0
                level[u] = -1  # dead end, drop from the level graph
                u, _ = path.pop()
                it[u] += 1

    def max_flow(self, source: int, sink: int) -> int:
        flow = 0
        while True:
            level = self._levels(source, sink)
            if level is None:
                return flow
            it = [0] * len(self.adj)
            while True:
                pushed = self._augment(source, sink, level, it)
                if pushed == 0:
                    break
                flow += pushed

    def reachable_in_residual(self, source: int) -> list[bool]:
        seen = [False] * len(self.adj)
        seen[source] = True
        queue = [source]
        for u in queue:
            for v, cap, _ in self.adj[u]:
                if cap > 0 and not seen[v]:
                    seen[v] = True
                    queue.append(v)
        return seen


def _normalize(
    dag: Dag,
    costs: Mapping[str, CostRecord],
    mandatory: Iterable[str],
    sinks: Iterable[str],
) -> tuple[list[str], set[str], set[str]]:
    names = sorted(dag)
    mandatory = set(mandatory)
    sinks = set(sinks)
    for group, label in ((mandatory, "mandatory"), (sinks, "sinks")):
        unknown = group - set(names)
        if unknown:
            raise ValueError(f"{label} names not in dag: {sorted(unknown)}")
    missing = set(names) - set(costs)
    if missing:
        raise ValueError(f"costs missing for nodes: {sorted(missing)}")
    return names, mandatory, sinks


def _finish_plan(
    dag: Dag,
    costs: Mapping[str, CostRecord],
    mandatory: set[str],
    sinks: set[str],
    states: dict[str, NodeState],
) -> ExecutionPlan:
    violations = check_plan_legality(dag, costs, mandatory, sinks, states)
    if violations:
        raise AssertionError("planner produced an illegal plan: " + "; ".join(violations))
    total = 0
    for name, state in states.items():
        if state is NodeState.COMPUTE:
            total += _micros(costs[name].compute_seconds)
        elif state is NodeState.LOAD:
            total += _micros(costs[name].load_seconds)
    ordered = {name: states[name] for name in sorted(states)}
    return ExecutionPlan(states=ordered, total_cost_seconds=total / _MICROS,
                         total_cost_micros=total)


def assign_states_optimal(
    dag: Dag,
    costs: Mapping[str, CostRecord],
    mandatory: Iterable[str] = (),
    sinks: Iterable[str] = (),
) -> ExecutionPlan:
    """Exact minimum-cost legal assignment via minimum s-t cut.

    Construction: besides source S and sink T, every node i gets two
    vertices: v_i ("i is computed" when v_i lands on the S side) and a_i
    ("i's output is needed" when a_i lands on the S side).

    * v_i -> T with capacity c_i: computing i pays c_i.
    * a_i -> v_i with capacity l_i: needed but not computed means loaded,
      paying l_i; an uncached node gets an uncuttable capacity instead, so
      "needed" forces "computed".
    * v_j -> a_i uncuttable for every parent i of j: a computed child drags
      every parent into the needed set, which is exactly the rule that a
      computed node may not have pruned parents.
    * S -> a_i uncuttable for sinks (their output is always needed) and
      S -> v_i uncuttable for mandatory nodes (forced compute).

    A finite cut therefore corresponds one-to-one with a legal plan of equal
    cost, and the minimum cut is the optimum.  To make the answer unique,
    capacities carry two low-order tie-break terms (compute count, then a
    per-node base-3 digit), so that exactly one legal plan minimizes the
    perturbed objective; Python integers keep the arithmetic exact.
    """
    names, mandatory_set, sink_set = _normalize(dag, costs, mandatory, sinks)
    n = len(names)
    index = {name: i for i, name in enumerate(names)}

    lex_weight = [3 ** (n - 1 - i) for i in range(n)]
    count_weight = 3**n  # larger than any lex term sum
    cost_weight = count_weight * (n + 1)  # larger than any tie-break sum

    compute_cap = []
    load_cap: list[int | None] = []
    for i, name in enumerate(names):
        record = costs[name]
        compute_cap.append(_micros(record.compute_seconds) * cost_weight
                           + count_weight + 2 * lex_weight[i])
        load_cap.append(_micros(record.load_seconds) * cost_weight + lex_weight[i]
                        if record.cached else None)
    uncuttable = sum(compute_cap) + sum(c for c in load_cap if c is not None) + 1

    source, sink = 2 * n, 2 * n + 1
    net = _FlowNetwork(2 * n + 2)
    for i, name in enumerate(names):
        v_i, a_i = i, n + i
        net.add_edge(v_i, sink, compute_cap[i])
        net.add_edge(a_i, v_i, load_cap[i] if load_cap[i] is not None else uncuttable)
        for parent in dag[name]:
            net.add_edge(v_i, n + index[parent], uncuttable)
        if name in sink_set:
            net.add_edge(source, a_i, uncuttable)
        if name in mandatory_set:
            net.add_edge(source, v_i, uncuttable)

    net.max_flow(source, sink)
    on_compute_side = net.reachable_in_residual(source)

    states: dict[str, NodeState] = {}
    for i, name in enumerate(names):
        if on_compute_side[i]:
            states[name] = NodeState.COMPUTE
        elif on_compute_side[n + i]:
            states[name] = NodeState.LOAD
        else:
            states[name] = NodeState.PRUNE
    return _finish_plan(dag, costs, mandatory_set, sink_set, states)


_BRUTEFORCE_LIMIT = 15
_CHUNK_ASSIGNMENTS = 1 << 19


def assign_states_bruteforce(
    dag: Dag,
    costs: Mapping[str, CostRecord],
    mandatory: Iterable[str] = (),
    sinks: Iterable[str] = (),
) -> ExecutionPlan:
    """Oracle: enumerate all 3^n assignments and keep the best legal one.

    Assignments are scanned as base-3 numbers whose digits follow node-name
    order with prune=0 < load=1 < compute=2, so "first minimal index" is
    exactly the planner's tie-break.  Vectorized with numpy and chunked to
    bound memory; refuses more than 15 nodes.
    """
    names, mandatory_set, sink_set = _normalize(dag, costs, mandatory, sinks)
    n = len(names)
    if n > _BRUTEFORCE_LIMIT:
        raise TooLargeError(n, _BRUTEFORCE_LIMIT)

    compute_micros = np.array([_micros(costs[m].compute_seconds) for m in names],
                              dtype=np.int64)
    cached = np.array([costs[m].cached for m in names], dtype=bool)
    load_micros = np.array(
        [_micros(costs[m].load_seconds) if costs[m].cached else 0 for m in names],
        dtype=np.int64,
    )
    parent_idx = [[names.index(p) for p in dag[name]] for name in names]
    mandatory_idx = [i for i, m in enumerate(names) if m in mandatory_set]
    sink_idx = [i for i, m in enumerate(names) if m in sink_set]
    powers = (3 ** (n - 1 - np.arange(n))).astype(np.int64)

    best: tuple[int, int, int] | None = None  # (cost, n_compute, index)
    total = 3**n
    for start in range(0, total, _CHUNK_ASSIGNMENTS):
        idx = np.arange(start, min(start + _CHUNK_ASSIGNMENTS, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % 3  # 0=prune 1=load 2=compute
        is_load = digits == 1
        is_compute = digits == 2
        legal = ~(is_load & ~cached[None, :]).any(axis=1)
        for i, parents in enumerate(parent_idx):
            if parents:
                has_pruned_parent = (digits[:, parents] == 0).any(axis=1)
                legal &= ~(is_compute[:, i] & has_pruned_parent)
        for i in mandatory_idx:
            legal &= is_compute[:, i]
        for i in sink_idx:
            legal &= digits[:, i] != 0
        if not legal.any():
            continue
        cost = is_compute @ compute_micros + is_load @ load_micros
        n_compute = is_compute.sum(axis=1)
        cost = np.where(legal, cost, np.iinfo(np.int64).max)
        chunk_min = cost.min()
        tie = cost == chunk_min
        count_min = n_compute[tie].min()
        tie &= n_compute == count_min
        first = int(idx[tie][0])
        candidate = (int(chunk_min), int(count_min), first)
        if best is None or candidate < best:
            best = candidate
    assert best is not None  # all-compute over everything is always legal

    digits = [(best[2] // 3**(n - 1 - i)) % 3 for i in range(n)]
    lookup = {0: NodeState.PRUNE, 1: NodeState.LOAD, 2: NodeState.COMPUTE}
    states = {name: lookup[d] for name, d in zip(names, digits)}
    return _finish_plan(dag, costs, mandatory_set, sink_set, states)
