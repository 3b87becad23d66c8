"""Online materialization: decide right after an operator finishes whether
to persist its output for future runs.

The decision weighs the full recompute chain of a node (its own compute
time plus every ancestor's) against twice its load time, one write now plus
one read later.  Call that balance the node's r-value.  The published rule
and the sign that actually pays off disagree, so both directions are
implemented and selectable; see PolicyDirection.

Decisions are strictly online: a node's decision may look at the node
itself, its ancestors, and the running storage budget, never at anything
downstream or still unexecuted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from .errors import UnknownCostError
from .planner import CostRecord, Dag


class PolicyDirection(str, Enum):
    # Persist when the recompute chain exceeds twice the load cost: caching
    # expensive-to-rebuild nodes. Empirically the profitable reading.
    SAVINGS_POSITIVE = "savings-positive"
    # The predicate exactly as published: persist when the balance is
    # negative, i.e. cheap-to-rebuild nodes.  Kept runnable for comparison.
    PAPER_LITERAL = "paper-literal"


@dataclass
class StorageBudget:
    """Bytes available for new materializations; None means unlimited."""

    capacity_bytes: int | None
    used_bytes: int = 0

    def fits(self, nbytes: int) -> bool:
        if self.capacity_bytes is None:
            return True
        return nbytes <= self.capacity_bytes - self.used_bytes

    def charge(self, nbytes: int) -> None:
        self.used_bytes += nbytes


@dataclass(frozen=True)
class MaterializationDecision:
    node: str
    r_value: float
    materialize: bool
    bytes_charged: int


def _ancestors(dag: Dag, name: str) -> set[str]:
    found: set[str] = set()
    frontier = list(dag[name])
    while frontier:
        cur = frontier.pop()
        if cur not in found:
            found.add(cur)
            frontier.extend(dag[cur])
    return found


def recompute_chain_seconds(node: str, costs: Mapping[str, CostRecord], dag: Dag) -> float:
    """Compute time of ``node`` plus all of its ancestors."""
    total = 0.0
    for name in (node, *_ancestors(dag, node)):
        if name not in costs:
            raise UnknownCostError(name)
        total += costs[name].compute_seconds
    return total


def r_value(node: str, costs: Mapping[str, CostRecord], dag: Dag) -> float:
    """Recompute chain minus twice the (estimated) load time of ``node``.

    Positive means a future iteration that reuses the node saves more time
    than one write plus one read costs.  ``costs[node].load_seconds`` must
    be the finite load estimate for the freshly produced output.
    """
    load = costs[node].load_seconds if node in costs else None
    if load is None or not math.isfinite(load):
        raise UnknownCostError(node)
    return recompute_chain_seconds(node, costs, dag) - 2.0 * load


def decide(
    node: str,
    costs: Mapping[str, CostRecord],
    dag: Dag,
    budget: StorageBudget,
    direction: PolicyDirection = PolicyDirection.SAVINGS_POSITIVE,
) -> MaterializationDecision:
    """Decide materialization for a node that just finished computing.

    Never errors on a full budget; the node simply is not persisted.
    Charges the budget when it does decide to persist.
    """
    r = r_value(node, costs, dag)
    wants = r > 0 if direction is PolicyDirection.SAVINGS_POSITIVE else r < 0
    nbytes = costs[node].output_bytes
    materialize = wants and budget.fits(nbytes)
    if materialize:
        budget.charge(nbytes)
    return MaterializationDecision(
        node=node,
        r_value=r,
        materialize=materialize,
        bytes_charged=nbytes if materialize else 0,
    )


class EnginePolicy:
    """The r-value policy in the configured direction."""

    name = "engine"

    def __init__(self, direction: PolicyDirection = PolicyDirection.SAVINGS_POSITIVE):
        self.direction = direction

    def decide(self, node, costs, dag, budget) -> MaterializationDecision:
        return decide(node, costs, dag, budget, self.direction)

    def write_cost_seconds(self, node: str, costs: Mapping[str, CostRecord]) -> float:
        return 0.0


class MaterializeAllPolicy:
    """Baseline: persist every computed node that fits the budget.

    Each materialization is charged a modeled write cost equal to the
    node's load time; an indiscriminate writer has to pay for its writes or
    the comparison against selective policies says nothing.
    """

    name = "materialize-all"

    def decide(self, node, costs, dag, budget) -> MaterializationDecision:
        r = r_value(node, costs, dag)
        nbytes = costs[node].output_bytes
        materialize = budget.fits(nbytes)
        if materialize:
            budget.charge(nbytes)
        return MaterializationDecision(node, r, materialize,
                                       nbytes if materialize else 0)

    def write_cost_seconds(self, node: str, costs: Mapping[str, CostRecord]) -> float:
        return costs[node].load_seconds


class MaterializeNonePolicy:
    """Baseline: never persist anything."""

    name = "materialize-none"

    def decide(self, node, costs, dag, budget) -> MaterializationDecision:
        return MaterializationDecision(node, r_value(node, costs, dag), False, 0)

    def write_cost_seconds(self, node: str, costs: Mapping[str, CostRecord]) -> float:
        return 0.0


POLICY_NAMES = ("engine", "materialize-all", "materialize-none")


def make_policy(name: str, direction: PolicyDirection = PolicyDirection.SAVINGS_POSITIVE):
    if name == "engine":
        return EnginePolicy(direction)
    if name == "materialize-all":
        return MaterializeAllPolicy()
    if name == "materialize-none":
        return MaterializeNonePolicy()
    raise ValueError(f"unknown policy {name!r} (choose from {', '.join(POLICY_NAMES)})")
