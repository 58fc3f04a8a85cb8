"""Exploration plans: one session's task, seed, and ordered branches.

Plan files are JSON:

    {
      "task": "...",
      "seed": 1234,
      "branches": [
        {"branch_point": "root" | <int> | "rng", "cells": ["...", ...]},
        {"branch_point": "rng", "agent_steps": 5}
      ]
    }

An integer branch point indexes the session's commit list, where index 0
is the empty root commit and index i is the commit produced by the i-th
executed cell. "rng" draws uniformly over all commits created so far,
from the plan's seeded generator.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .backend import CellSource
from .errors import PlanValidationError
from .hashing import digest_bytes


@dataclass
class BranchSpec:
    branch_point: str | int  # "root" | "rng" | commit index
    cells: list[CellSource] | None = None
    agent_steps: int | None = None

    @property
    def agent_driven(self) -> bool:
        return self.agent_steps is not None

    def to_json(self) -> dict:
        obj: dict = {"branch_point": self.branch_point}
        if self.cells is not None:
            obj["cells"] = [
                c.source if c.step_label is None else {"source": c.source, "step_label": c.step_label}
                for c in self.cells
            ]
        if self.agent_steps is not None:
            obj["agent_steps"] = self.agent_steps
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "BranchSpec":
        cells = None
        if "cells" in obj:
            cells = []
            for c in obj["cells"]:
                if isinstance(c, str):
                    cells.append(CellSource(c))
                else:
                    cells.append(CellSource(c["source"], c.get("step_label")))
        return cls(
            branch_point=obj["branch_point"],
            cells=cells,
            agent_steps=obj.get("agent_steps"),
        )


@dataclass
class ExplorationPlan:
    task: str
    seed: int
    branches: list[BranchSpec] = field(default_factory=list)

    def validate(self) -> None:
        if not self.branches:
            raise PlanValidationError("a plan needs at least one branch", "branches")
        if self.branches[0].branch_point != "root":
            raise PlanValidationError("the first branch must start at the root", "branches[0].branch_point")
        max_commits = 1  # the root
        for i, spec in enumerate(self.branches):
            where = f"branches[{i}]"
            if (spec.cells is None) == (spec.agent_steps is None):
                raise PlanValidationError(
                    f"{where}: exactly one of cells or agent_steps is required", where
                )
            if spec.agent_steps is not None and spec.agent_steps < 1:
                raise PlanValidationError(f"{where}: agent_steps must be >= 1", where)
            if spec.cells is not None and not spec.cells:
                raise PlanValidationError(f"{where}: cells must be non-empty", where)
            bp = spec.branch_point
            if isinstance(bp, bool) or not isinstance(bp, (int, str)):
                raise PlanValidationError(f"{where}: bad branch_point {bp!r}", where)
            if isinstance(bp, str) and bp not in ("root", "rng"):
                raise PlanValidationError(f"{where}: bad branch_point {bp!r}", where)
            if isinstance(bp, int):
                if bp < 0 or bp >= max_commits:
                    raise PlanValidationError(
                        f"{where}: branch_point {bp} out of range; only {max_commits} "
                        f"commits can exist at this point",
                        where,
                    )
            max_commits += spec.agent_steps if spec.agent_steps else len(spec.cells or [])

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "seed": self.seed,
            "branches": [b.to_json() for b in self.branches],
        }

    def digest(self) -> str:
        return digest_bytes(json.dumps(self.to_json(), sort_keys=True).encode("utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", "utf-8")

    @classmethod
    def from_json(cls, obj: dict) -> "ExplorationPlan":
        try:
            plan = cls(
                task=obj["task"],
                seed=int(obj["seed"]),
                branches=[BranchSpec.from_json(b) for b in obj["branches"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanValidationError(f"malformed plan document: {exc}") from exc
        plan.validate()
        return plan

    @classmethod
    def load(cls, path: str | Path) -> "ExplorationPlan":
        try:
            obj = json.loads(Path(path).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise PlanValidationError(f"plan is not valid JSON: {exc}") from exc
        return cls.from_json(obj)


def make_random_plan(
    seed: int,
    n_branches: int = 10,
    max_cells: int = 10,
    min_cells: int = 1,
    task: str = "My data is in data.csv. The columns and their meanings are col_a, col_b. "
    "I want to build a model to predict col_b.",
) -> ExplorationPlan:
    """Agent-driven plan: first branch from the root, later branches from
    seeded random revisit points. Stable for a given seed."""
    rng = random.Random(seed)
    branches = [
        BranchSpec(
            branch_point="root" if i == 0 else "rng",
            agent_steps=rng.randint(min_cells, max_cells),
        )
        for i in range(n_branches)
    ]
    return ExplorationPlan(task=task, seed=seed, branches=branches)


def make_prefix_fork_plan(
    seed: int,
    prefix_cells: list[str],
    branch_cells: list[list[str]],
    task: str = "prefix-fork benchmark plan",
) -> ExplorationPlan:
    """First branch runs the prefix; every later branch forks at the prefix end."""
    fork_at = len(prefix_cells)
    branches = [BranchSpec(branch_point="root", cells=[CellSource(c) for c in prefix_cells])]
    for cells in branch_cells:
        branches.append(BranchSpec(branch_point=fork_at, cells=[CellSource(c) for c in cells]))
    return ExplorationPlan(task=task, seed=seed, branches=branches)


def two_branch_revisit_plan(seed: int = 0) -> ExplorationPlan:
    """The two-branch drop-rows/impute pattern in toy form: branch one
    transforms df destructively, branch two revisits the pre-transform
    state and reads df."""
    return ExplorationPlan(
        task="two-branch revisit with a destructive transform on the first branch",
        seed=seed,
        branches=[
            BranchSpec(
                branch_point="root",
                cells=[
                    CellSource("df = 10", "Step 1"),
                    CellSource("x = df", "Step 2"),
                    CellSource("df = df - 3", "Step 3"),
                    CellSource("y = df", "Step 4"),
                ],
            ),
            BranchSpec(
                branch_point=2,  # the commit produced by "x = df"
                cells=[
                    CellSource("z = df + 5", "Step 3'"),
                    CellSource("w = x", "Step 4'"),
                ],
            ),
        ],
    )
