"""Cell generators and the prompt protocol that drives them.

A session talks to one generator through three calls: plan the task,
generate the next cell from the previous output, and propose a fix after
a failed cell (at most two fix attempts per step). Histories are plain
message lists; each user/assistant pair that produced a commit carries
that commit id as its anchor so a checkout can truncate the conversation
to the matching point.

Three implementations: `llm` (chat-completions endpoint from environment
config), `replay` (a recorded corpus), and `synthetic` (seeded toy-cell
grammar for offline, interference-rich workloads).
"""

from __future__ import annotations

import abc
import json
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path

from . import toylang
from .backend import CellSource
from .errors import (
    AnchorMissingError,
    ContractViolationError,
    GenerationError,
    PlanParseError,
    TransportError,
)
from .hashing import digest_bytes

PLAN_PROMPT_SUFFIX = (
    "\n\nIt will be an interactive data science process using notebook."
    "Tell me the steps to do this (without code). The steps should include some "
    "computation intensive ones such as hyperparameter tuning, model selection, "
    "neural network training, etc.\n\nThe step should be listed as:\n"
    "There are XXX steps in total.\n1. XXX\n2. XXX"
)

NEXT_PROMPT_TEMPLATE = (
    "The output for this code cell is: {output}. "
    "Please generate the code for next step {step}."
)

DEBUG_PROMPT_TEMPLATE = (
    "The output of the given code is: {output}, "
    "please help me debug it by generating the correct cell code."
)


def build_plan_prompt(task: str) -> str:
    """Task sentence plus the fixed planning instructions."""
    return task + PLAN_PROMPT_SUFFIX


def build_next_prompt(output: str, step_no: int) -> str:
    return NEXT_PROMPT_TEMPLATE.format(output=output, step=step_no)


def build_debug_prompt(output: str) -> str:
    return DEBUG_PROMPT_TEMPLATE.format(output=output)


@dataclass(frozen=True)
class AgentMessage:
    role: str  # "user" | "assistant"
    content: str
    commit_anchor: str | None = None


History = list[AgentMessage]


@dataclass
class StepPlan:
    steps: list[str]
    declared_count: int | None
    raw_text: str
    parse_warning: str | None = None


_DECLARED_RE = re.compile(r"There are\s+(\d+)\s+steps in total", re.IGNORECASE)
_STEP_LINE_RE = re.compile(r"^\s*(\d+)\.\s*(.+?)\s*$", re.MULTILINE)


def parse_step_plan(text: str) -> StepPlan:
    matches = _STEP_LINE_RE.findall(text)
    if not matches:
        raise PlanParseError(text)
    steps = [body for _num, body in matches]
    declared = None
    m = _DECLARED_RE.search(text)
    if m:
        declared = int(m.group(1))
    warning = None
    if declared is not None and declared != len(steps):
        warning = f"plan declares {declared} steps but lists {len(steps)}"
    return StepPlan(steps=steps, declared_count=declared, raw_text=text, parse_warning=warning)


def extract_code(response: str) -> str:
    """First fenced code block wins; without fences the whole response is the cell."""
    m = re.search(r"```[A-Za-z0-9_+-]*\n(.*?)```", response, re.DOTALL)
    code = m.group(1) if m else response
    code = code.strip("\n")
    if not code.strip():
        raise GenerationError("model returned an empty cell")
    return code


def _check_attempt(attempt: int) -> None:
    if attempt not in (1, 2):
        raise ContractViolationError(
            f"debug attempt {attempt} requested; only attempts 1 and 2 are allowed"
        )


def truncate_history(history: History, commit_id: str, ancestry_ids: list[str]) -> History:
    """Checkout for the conversation: keep the initial task/plan exchange and
    every message pair anchored on the ancestry of the target commit."""
    root_id = ancestry_ids[0] if ancestry_ids else None
    anchors = {m.commit_anchor for m in history if m.commit_anchor is not None}
    if commit_id not in anchors and commit_id != root_id:
        raise AnchorMissingError(commit_id)
    on_path = set(ancestry_ids)
    kept: History = []
    in_preamble = True
    for message in history:
        if message.commit_anchor is None:
            if in_preamble:
                kept.append(message)
            continue
        in_preamble = False
        if message.commit_anchor in on_path:
            kept.append(message)
    return kept


class CellGenerator(abc.ABC):
    """Behavioral contract every generator implements."""

    kind: str = "abstract"
    # Generators without a meaningful fix step (replay corpora) opt out;
    # the session then records failures and moves on instead of retrying.
    supports_debug: bool = True

    @abc.abstractmethod
    def plan(self, task: str) -> StepPlan: ...

    @abc.abstractmethod
    def next_cell(self, history: History, step_no: int, last_output: str) -> CellSource: ...

    @abc.abstractmethod
    def debug_cell(self, history: History, failed_output: str, attempt: int) -> CellSource: ...


# --- replay ---

class ReplayAgent(CellGenerator):
    """Replays a recorded corpus: a stored plan plus numbered cells."""

    kind = "replay"
    supports_debug = False

    def __init__(self, plan_text: str, cells: list[str], step_labels: list[str | None] | None = None):
        self.plan_text = plan_text
        self.cells = list(cells)
        self.step_labels = step_labels or [None] * len(cells)

    @classmethod
    def from_path(cls, path: str | Path) -> "ReplayAgent":
        """Load a corpus from a JSON document or a directory of
        plan.txt + cell_NNN.txt files."""
        path = Path(path)
        if path.is_dir():
            plan_text = (path / "plan.txt").read_text("utf-8")
            cells = [
                p.read_text("utf-8")
                for p in sorted(path.glob("cell_*.txt"))
            ]
            return cls(plan_text, cells)
        doc = json.loads(path.read_text("utf-8"))
        return cls(doc["plan"], list(doc["cells"]))

    def plan(self, task: str) -> StepPlan:
        return parse_step_plan(self.plan_text)

    def next_cell(self, history: History, step_no: int, last_output: str) -> CellSource:
        if not 1 <= step_no <= len(self.cells):
            raise GenerationError(f"corpus has {len(self.cells)} cells, step {step_no} requested")
        return CellSource(self.cells[step_no - 1], self.step_labels[step_no - 1])

    def debug_cell(self, history: History, failed_output: str, attempt: int) -> CellSource:
        _check_attempt(attempt)
        raise GenerationError("replay corpus has no debug cells")


# --- synthetic ---

class SyntheticAgent(CellGenerator):
    """Seeded toy-cell grammar: assignment-heavy, with tunable chances of
    reading or deleting a variable created earlier on the same path.

    Generation depends only on the seed, the step number, and the cells
    already on the branch path (recovered from the history), never on
    live execution state, so every strategy sees identical cells.
    """

    kind = "synthetic"

    def __init__(
        self,
        seed: int,
        read_prob: float = 0.2,
        delete_prob: float = 0.05,
        list_prob: float = 0.1,
        sleep_prob: float = 0.0,
        max_statements: int = 2,
    ):
        self.seed = seed
        self.read_prob = read_prob
        self.delete_prob = delete_prob
        self.list_prob = list_prob
        self.sleep_prob = sleep_prob
        self.max_statements = max_statements

    def plan(self, task: str) -> StepPlan:
        steps = ["Load data", "Transform variables", "Derive features", "Fit", "Report"]
        lines = [f"There are {len(steps)} steps in total."]
        lines += [f"{i + 1}. {s}" for i, s in enumerate(steps)]
        return parse_step_plan("\n".join(lines))

    def _path_names(self, history: History) -> dict[str, str]:
        """Names alive on the current path (creation order), mapped to their
        kind as the generator believes it: "int" or "list"."""
        alive: dict[str, str] = {}
        for message in history:
            if message.role != "assistant" or message.commit_anchor is None:
                continue
            try:
                statements = toylang.parse_cell(message.content)
            except toylang.ToyCellError:
                continue
            for stmt in statements:
                if isinstance(stmt, toylang.Assign):
                    is_list = isinstance(stmt.expr, toylang.Concat)
                    alive[stmt.name] = "list" if is_list else "int"
                elif isinstance(stmt, toylang.ListDecl):
                    alive[stmt.name] = "list"
                elif isinstance(stmt, toylang.Del):
                    alive.pop(stmt.name, None)
        return alive

    def _rng(self, history: History, *salt: object):
        import random

        path_cells = [m.content for m in history if m.role == "assistant" and m.commit_anchor]
        material = json.dumps([self.seed, list(salt), path_cells])
        return random.Random(digest_bytes(material.encode("utf-8")))

    def next_cell(self, history: History, step_no: int, last_output: str) -> CellSource:
        rng = self._rng(history, "next", step_no)
        names = self._path_names(history)
        counter = len(names)
        lines = []
        for _ in range(rng.randint(1, self.max_statements)):
            roll = rng.random()
            fresh = f"v{counter}"
            int_names = sorted(n for n, kind in names.items() if kind == "int")
            list_names = sorted(n for n, kind in names.items() if kind == "list")
            if roll < self.delete_prob and names:
                victim = rng.choice(sorted(names))
                lines.append(f"del {victim}")
                del names[victim]
            elif roll < self.delete_prob + self.list_prob:
                if list_names and rng.random() < self.read_prob:
                    lines.append(f"{fresh} = concat({rng.choice(list_names)}, {rng.choice(list_names)})")
                else:
                    lines.append(f"list {fresh} {rng.randint(1, 16)}")
                names[fresh] = "list"
                counter += 1
            elif roll < self.delete_prob + self.list_prob + self.sleep_prob:
                lines.append(f"sleep {rng.randint(1, 4)}")
            else:
                if int_names and rng.random() < self.read_prob:
                    source = rng.choice(int_names)
                    lines.append(f"{fresh} = {source} + {rng.randint(1, 9)}")
                else:
                    lines.append(f"{fresh} = {rng.randint(0, 99)}")
                names[fresh] = "int"
                counter += 1
        if not lines:
            lines.append(f"v{counter} = {rng.randint(0, 99)}")
        return CellSource("\n".join(lines), f"Step {step_no}")

    def debug_cell(self, history: History, failed_output: str, attempt: int) -> CellSource:
        _check_attempt(attempt)
        rng = self._rng(history, "debug", attempt)
        names = self._path_names(history)
        return CellSource(f"v{len(names)} = {rng.randint(0, 99)}", None)


# --- llm ---

class LlmAgent(CellGenerator):
    """Generic chat-completions client; endpoint, key, and model come from
    AGENT_API_URL / AGENT_API_KEY / AGENT_MODEL."""

    kind = "llm"

    def __init__(
        self,
        api_url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        transport_retries: int = 3,
        timeout_s: float = 120.0,
    ):
        self.api_url = api_url or os.environ.get("AGENT_API_URL", "")
        self.api_key = api_key or os.environ.get("AGENT_API_KEY", "")
        self.model = model or os.environ.get("AGENT_MODEL", "")
        self.transport_retries = transport_retries
        self.timeout_s = timeout_s
        if not self.api_url or not self.model:
            raise GenerationError(
                "llm agent requires AGENT_API_URL and AGENT_MODEL (env or arguments)"
            )

    def _post(self, messages: list[dict]) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "messages": messages}
        last_error: Exception | None = None
        for attempt in range(self.transport_retries):
            try:
                response = requests.post(
                    self.api_url, json=body, headers=headers, timeout=self.timeout_s
                )
                response.raise_for_status()
                data = response.json()
                return data["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - every transport fault retries
                last_error = exc
                time.sleep(min(2.0**attempt, 8.0))
        raise TransportError(f"model endpoint failed after {self.transport_retries} tries: {last_error}")

    def _messages(self, history: History, prompt: str) -> list[dict]:
        messages = [{"role": m.role, "content": m.content} for m in history]
        messages.append({"role": "user", "content": prompt})
        return messages

    def plan(self, task: str) -> StepPlan:
        text = self._post([{"role": "user", "content": build_plan_prompt(task)}])
        return parse_step_plan(text)

    def next_cell(self, history: History, step_no: int, last_output: str) -> CellSource:
        prompt = build_next_prompt(last_output, step_no)
        response = self._post(self._messages(history, prompt))
        return CellSource(extract_code(response), f"Step {step_no}")

    def debug_cell(self, history: History, failed_output: str, attempt: int) -> CellSource:
        _check_attempt(attempt)
        prompt = build_debug_prompt(failed_output)
        response = self._post(self._messages(history, prompt))
        return CellSource(extract_code(response))


def make_agent(kind: str, seed: int = 0, corpus: str | Path | None = None, **kwargs) -> CellGenerator:
    if kind == "synthetic":
        return SyntheticAgent(seed, **kwargs)
    if kind == "replay":
        if corpus is None:
            raise GenerationError("replay agent requires a corpus path")
        return ReplayAgent.from_path(corpus)
    if kind == "llm":
        return LlmAgent(**kwargs)
    raise ValueError(f"unknown agent kind {kind!r}")
