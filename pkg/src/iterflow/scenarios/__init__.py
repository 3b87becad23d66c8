"""Bundled demonstration workflows with synthetic costs.

Two workflows ship with the package, both simulated so results are
deterministic on any machine:

* ``ie`` - an information-extraction style pipeline with a heavy
  pre-processing subgraph and large intermediates (loads cost almost as
  much as computes, which is what makes indiscriminate materialization
  expensive).
* ``classification`` - a classification pipeline with smaller
  intermediates, where reloading cached results is nearly free.

Cold-run time splits roughly 70/20/10 across the pre-processing, ML and
evaluation subgraphs in both.
"""

from __future__ import annotations

from importlib import resources

from ..workflow import WorkflowSpec, parse_workflow

SCENARIO_FILES = {
    "ie": "information_extraction.json",
    "classification": "classification.json",
}

SCENARIO_NAMES = tuple(sorted(SCENARIO_FILES))


def scenario_text(name: str) -> str:
    try:
        filename = SCENARIO_FILES[name]
    except KeyError:
        raise ValueError(
            f"unknown scenario {name!r} (choose from {', '.join(SCENARIO_NAMES)})"
        ) from None
    return (resources.files("iterflow.scenarios") / filename).read_text("utf-8")


def load_scenario(name: str) -> WorkflowSpec:
    return parse_workflow(scenario_text(name))
